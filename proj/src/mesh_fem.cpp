#include "ddmor/mesh_fem.hpp"

namespace ddmor {

Mesh1D build_mesh(Index num_elements)
{
    if (num_elements < 2)
        throw ConfigError("build_mesh: need at least 2 elements, got " +
                          std::to_string(num_elements));
    Mesh1D mesh;
    mesh.nodes = Vector::LinSpaced(num_elements + 1, 0.0, 1.0);
    mesh.contacts = {{0, -1.0}, {num_elements, +1.0}};
    return mesh;
}

FemOperators assemble_operators(const Mesh1D& mesh)
{
    const Index n = mesh.num_elements();
    const Index m = mesh.num_flux_dofs();
    if (n < 1 || mesh.nodes[0] != 0.0 || mesh.nodes[n] != 1.0)
        throw ConfigError("assemble_operators: invalid mesh");
    for (Index k = 0; k < n; ++k)
        if (mesh.element_length(k) <= 0.0)
            throw ConfigError("assemble_operators: non-positive element length");

    FemOperators fem;
    fem.mesh = mesh;
    fem.traces = mesh.contacts;

    fem.mass_cell.resize(n);
    for (Index k = 0; k < n; ++k)
        fem.mass_cell[k] = mesh.element_length(k);

    // Hat-function slopes are +-1/h, so each element integrates to -1 and +1.
    std::vector<Triplet> dts;
    dts.reserve(2 * n);
    for (Index k = 0; k < n; ++k) {
        dts.emplace_back(k, k, -1.0);
        dts.emplace_back(k, k + 1, +1.0);
    }
    fem.div.resize(n, m);
    fem.div.setFromTriplets(dts.begin(), dts.end());

    // Element mass of two hats on [x_k, x_{k+1}]: (h/6) [[2,1],[1,2]].
    std::vector<Triplet> mts;
    mts.reserve(4 * n);
    for (Index k = 0; k < n; ++k) {
        const double h = mesh.element_length(k);
        mts.emplace_back(k, k, h / 3.0);
        mts.emplace_back(k, k + 1, h / 6.0);
        mts.emplace_back(k + 1, k, h / 6.0);
        mts.emplace_back(k + 1, k + 1, h / 3.0);
    }
    fem.mass_flux.resize(m, m);
    fem.mass_flux.setFromTriplets(mts.begin(), mts.end());

    return fem;
}

Vector FemOperators::trace_row(std::size_t c) const
{
    Vector row = Vector::Zero(num_flux_dofs());
    row[traces.at(c).node] = traces.at(c).normal;
    return row;
}

SparseMatrix FemOperators::hdiv_gram() const
{
    const Vector inv_mass = mass_cell.cwiseInverse();
    SparseMatrix gram = mass_flux;
    gram += SparseMatrix(div.transpose() * inv_mass.asDiagonal() * div);
    gram.makeCompressed();
    return gram;
}

} // namespace ddmor
