#pragma once

#include "ddmor/mesh_fem.hpp"
#include "ddmor/types.hpp"

#include <array>
#include <vector>

namespace ddmor {

/// One segment of a piecewise-constant doping profile. `upto` is the right
/// end of the segment as a fraction of the device length.
struct DopingSegment {
    double upto = 1.0;
    double value = 0.0;
};

/// Semiconductor parameters in physical units (cm, s, V, F, 1/cm^3).
struct PhysicalDevice {
    double length = 1e-4;              ///< cm
    double area = 1e-5;                ///< contact area, cm^2
    double permittivity = 1.03545e-12; ///< F/cm
    double thermal_voltage = 0.0259;   ///< V
    double mobility_n = 1350.0;        ///< cm^2/(V s)
    double mobility_p = 480.0;         ///< cm^2/(V s)
    double tau_n = 330e-9;             ///< s
    double tau_p = 33e-9;              ///< s
    double intrinsic = 1.4e10;         ///< 1/cm^3
    std::vector<DopingSegment> doping = {{0.5, -9.94e15}, {1.0, 4.06e18}}; ///< 1/cm^3

    static constexpr double elementary_charge = 1.602176634e-19; ///< C
};

/// Dimensionless device obtained from the unit scaling of a PhysicalDevice.
///
/// Potentials divide by the thermal voltage, concentrations by the doping
/// sup-norm, lengths by L; time keeps physical seconds. current_scale_* and
/// displacement_scale convert scaled contact fluxes back to Amperes.
struct ScaledDevice {
    double lambda = 0;          ///< scaled Poisson constant
    double nu_n = 0, nu_p = 0;  ///< 1/s
    double eta = 0;             ///< scaled intrinsic level, in (0,1)
    double tau_n = 0, tau_p = 0;            ///< s, unscaled
    double thermal_voltage = 0;             ///< V
    double current_scale_n = 0;             ///< A per unit scaled electron flux
    double current_scale_p = 0;             ///< A per unit scaled hole flux
    double displacement_scale = 0;          ///< A*s per unit scaled d(grad_psi)/dt
    std::vector<DopingSegment> doping;      ///< scaled, max |value| = 1

    /// Scaled doping at position x in [0,1].
    double doping_at(double x) const;

    /// Per-element doping values; every segment breakpoint must coincide with
    /// a mesh node (the mesh must resolve the doping jumps).
    Vector element_doping(const Mesh1D& mesh) const;
};

ScaledDevice scale_device(const PhysicalDevice& dev);

/// Scaled boundary values at an Ohmic contact.
struct BoundaryValues {
    double psi = 0; ///< built-in potential plus applied bias, in units of U_T
    double n = 0;
    double p = 0;
};

/// Equilibrium Dirichlet values for a contact with local scaled doping
/// `doping`, applied node potential in Volts and thermal voltage in Volts.
BoundaryValues equilibrium_boundary(double doping, double applied_volts,
                                    double thermal_voltage, double eta);

/// Shockley-Read-Hall rate for scaled concentrations. The denominator is
/// clamped from below so Newton iterates with negative concentrations cannot
/// divide by zero.
double srh_rate(double n, double p, double eta, double tau_n, double tau_p);
double srh_rate_dn(double n, double p, double eta, double tau_n, double tau_p);
double srh_rate_dp(double n, double p, double eta, double tau_n, double tau_p);

/// Block sizes of one device's variables: (psi, n, p, grad_psi, j_n, j_p)
/// with sizes (N, N, N, M, M, M).
struct DeviceBlocks {
    Index cells = 0;
    Index flux = 0;
    Index total() const { return 3 * cells + 3 * flux; }
    /// Offsets of the six blocks in order (psi, n, p, grad_psi, j_n, j_p).
    std::array<Index, 6> offsets() const
    {
        return {0, cells, 2 * cells, 3 * cells, 3 * cells + flux, 3 * cells + 2 * flux};
    }
};

/// Nonlinear functional of the mixed drift-diffusion system: recombination
/// loads in the continuity blocks and the drift integrals in the current
/// blocks. Returns a vector of length 3N+3M.
Vector assemble_nonlinearity(const Vector& n, const Vector& p, const Vector& grad_psi,
                             const FemOperators& fem, const ScaledDevice& dev);

/// Jacobian triplets of assemble_nonlinearity with respect to the device
/// variables, offset by (row0, col0) into a global matrix.
void nonlinearity_jacobian(const Vector& n, const Vector& p, const Vector& grad_psi,
                           const FemOperators& fem, const ScaledDevice& dev,
                           Index row0, Index col0, std::vector<Triplet>& out);

/// Right-hand side b of the device block: doping load in the Poisson block
/// and contact traces of (psi, n, p) boundary values. `applied_volts` holds
/// the node potential seen by each contact, ordered like fem.traces.
Vector assemble_rhs(const std::vector<double>& applied_volts, const ScaledDevice& dev,
                    const FemOperators& fem, const Vector& element_doping);

/// Contact current in Amperes: conduction plus displacement flux through the
/// contact, signed with the outward normal.
double coupling_current(const Vector& j_n, const Vector& j_p, const Vector& dgrad_psi_dt,
                        const ScaledDevice& dev, const FemOperators& fem, std::size_t contact);

/// Sparse row extractors of coupling_current: one nonzero each in 1D.
struct CouplingRows {
    Index flux_dof = 0;
    double c_jn = 0;   ///< coefficient multiplying j_n at the contact dof
    double c_jp = 0;   ///< coefficient multiplying j_p at the contact dof
    double c_dgdt = 0; ///< coefficient multiplying d(grad_psi)/dt at the contact dof
};
CouplingRows coupling_rows(const ScaledDevice& dev, const FemOperators& fem, std::size_t contact);

} // namespace ddmor
