#pragma once

#include "ddmor/types.hpp"

#include <vector>

namespace ddmor {

/// Ohmic contact at a boundary node of the 1D domain.
struct Contact {
    Index node = 0;     ///< mesh node index (equals the flux dof index in 1D)
    double normal = 0;  ///< outward normal, -1 at x=0, +1 at x=1
};

/// 1D mesh of the scaled device domain [0,1].
///
/// Both endpoints are Ohmic contacts, so every node carries a flux degree of
/// freedom: the flux space has dimension M = N+1 for N elements.
struct Mesh1D {
    Vector nodes;                   ///< strictly increasing, nodes[0]=0, nodes[N]=1
    std::vector<Contact> contacts;  ///< left and right boundary contacts

    Index num_elements() const { return nodes.size() - 1; }
    Index num_flux_dofs() const { return nodes.size(); }
    double element_length(Index k) const { return nodes[k + 1] - nodes[k]; }
};

/// Uniform mesh with `num_elements` elements on [0,1].
Mesh1D build_mesh(Index num_elements);

/// Assembled mixed finite element operators on a Mesh1D.
///
/// Cell space: piecewise constants per element (dimension N). Flux space:
/// continuous piecewise linears with nodal (hat) basis (dimension M = N+1),
/// which is the 1D degeneration of the lowest-order Raviart-Thomas space.
struct FemOperators {
    Mesh1D mesh;

    Vector mass_cell;       ///< diagonal of the cell mass matrix (element lengths)
    SparseMatrix mass_flux; ///< M x M flux mass matrix, symmetric tridiagonal
    SparseMatrix div;       ///< N x M divergence matrix, one -1 and one +1 per row
    std::vector<Contact> traces; ///< boundary trace functionals, one per contact

    Index num_cells() const { return mass_cell.size(); }
    Index num_flux_dofs() const { return mesh.num_flux_dofs(); }

    /// Row vector of the trace functional for contact c applied to the flux
    /// basis: the only nonzero is the outward normal at the contact node.
    Vector trace_row(std::size_t c) const;

    /// Gram matrix of the discrete H(div) inner product,
    /// mass_flux + div^T diag(mass_cell)^{-1} div.
    SparseMatrix hdiv_gram() const;
};

FemOperators assemble_operators(const Mesh1D& mesh);

} // namespace ddmor
