#include "ddmor/semiconductor.hpp"

#include <algorithm>
#include <cmath>

namespace ddmor {

namespace {

double doping_sup_norm(const std::vector<DopingSegment>& segments)
{
    double sup = 0.0;
    for (const auto& s : segments)
        sup = std::max(sup, std::abs(s.value));
    return sup;
}

void validate_segments(const std::vector<DopingSegment>& segments)
{
    if (segments.empty())
        throw ConfigError("device: doping profile is empty");
    double prev = 0.0;
    for (const auto& s : segments) {
        if (!(s.upto > prev))
            throw ConfigError("device: doping segment ends must be strictly increasing");
        prev = s.upto;
    }
    if (std::abs(prev - 1.0) > 1e-12)
        throw ConfigError("device: doping profile must cover the whole device");
}

} // namespace

ScaledDevice scale_device(const PhysicalDevice& dev)
{
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw ConfigError(std::string("device: parameter must be positive: ") + name);
    };
    positive(dev.length, "length");
    positive(dev.area, "area");
    positive(dev.permittivity, "permittivity");
    positive(dev.thermal_voltage, "thermal_voltage");
    positive(dev.mobility_n, "mobility_n");
    positive(dev.mobility_p, "mobility_p");
    positive(dev.tau_n, "tau_n");
    positive(dev.tau_p, "tau_p");
    positive(dev.intrinsic, "intrinsic");
    validate_segments(dev.doping);

    const double sup = doping_sup_norm(dev.doping);
    if (!(sup > 0.0))
        throw ConfigError("device: doping profile is identically zero");

    const double q = PhysicalDevice::elementary_charge;
    const double l2 = dev.length * dev.length;

    ScaledDevice s;
    s.lambda = dev.permittivity * dev.thermal_voltage / (l2 * q * sup);
    s.nu_n = dev.thermal_voltage * dev.mobility_n / l2;
    s.nu_p = dev.thermal_voltage * dev.mobility_p / l2;
    s.eta = dev.intrinsic / sup;
    if (!(s.eta > 0.0 && s.eta < 1.0))
        throw ConfigError("device: intrinsic level must be below the doping sup-norm");
    s.tau_n = dev.tau_n;
    s.tau_p = dev.tau_p;
    s.thermal_voltage = dev.thermal_voltage;
    s.current_scale_n = dev.area * q * dev.thermal_voltage * sup * dev.mobility_n / dev.length;
    s.current_scale_p = dev.area * q * dev.thermal_voltage * sup * dev.mobility_p / dev.length;
    s.displacement_scale = dev.area * dev.permittivity * dev.thermal_voltage / dev.length;
    s.doping = dev.doping;
    for (auto& seg : s.doping)
        seg.value /= sup;
    return s;
}

double ScaledDevice::doping_at(double x) const
{
    for (const auto& seg : doping)
        if (x < seg.upto)
            return seg.value;
    return doping.back().value;
}

Vector ScaledDevice::element_doping(const Mesh1D& mesh) const
{
    for (std::size_t i = 0; i + 1 < doping.size(); ++i) {
        const double breakpoint = doping[i].upto;
        bool on_node = false;
        for (Index k = 0; k < mesh.nodes.size(); ++k)
            if (std::abs(mesh.nodes[k] - breakpoint) <= 1e-12) {
                on_node = true;
                break;
            }
        if (!on_node)
            throw ConfigError("device: doping jump does not coincide with a mesh node; "
                              "choose a mesh resolving the profile (even element count "
                              "for a jump at L/2)");
    }
    Vector values(mesh.num_elements());
    for (Index k = 0; k < mesh.num_elements(); ++k)
        values[k] = doping_at(0.5 * (mesh.nodes[k] + mesh.nodes[k + 1]));
    return values;
}

BoundaryValues equilibrium_boundary(double doping, double applied_volts,
                                    double thermal_voltage, double eta)
{
    const double root = std::sqrt(doping * doping + 4.0 * eta * eta);
    BoundaryValues bv;
    // Evaluate the larger carrier first and recover the other from n*p = eta^2
    // so the equilibrium product holds to rounding.
    if (doping >= 0.0) {
        bv.n = 0.5 * (root + doping);
        bv.p = eta * eta / bv.n;
    } else {
        bv.p = 0.5 * (root - doping);
        bv.n = eta * eta / bv.p;
    }
    bv.psi = std::log(bv.n / eta) + applied_volts / thermal_voltage;
    return bv;
}

namespace {

inline double srh_denominator(double n, double p, double eta, double tau_n, double tau_p,
                              bool& clamped)
{
    const double den = tau_p * (n + eta) + tau_n * (p + eta);
    const double floor = 1e-30 * (tau_n + tau_p);
    clamped = den < floor;
    return clamped ? floor : den;
}

} // namespace

double srh_rate(double n, double p, double eta, double tau_n, double tau_p)
{
    bool clamped = false;
    const double den = srh_denominator(n, p, eta, tau_n, tau_p, clamped);
    return (n * p - eta * eta) / den;
}

double srh_rate_dn(double n, double p, double eta, double tau_n, double tau_p)
{
    bool clamped = false;
    const double den = srh_denominator(n, p, eta, tau_n, tau_p, clamped);
    if (clamped)
        return p / den;
    return (p * den - (n * p - eta * eta) * tau_p) / (den * den);
}

double srh_rate_dp(double n, double p, double eta, double tau_n, double tau_p)
{
    bool clamped = false;
    const double den = srh_denominator(n, p, eta, tau_n, tau_p, clamped);
    if (clamped)
        return n / den;
    return (n * den - (n * p - eta * eta) * tau_n) / (den * den);
}

Vector assemble_nonlinearity(const Vector& n, const Vector& p, const Vector& grad_psi,
                             const FemOperators& fem, const ScaledDevice& dev)
{
    const Index nc = fem.num_cells();
    const Index mf = fem.num_flux_dofs();
    if (n.size() != nc || p.size() != nc || grad_psi.size() != mf)
        throw ConfigError("assemble_nonlinearity: coefficient sizes do not match the mesh");

    const DeviceBlocks blocks{nc, mf};
    const auto off = blocks.offsets();
    Vector f = Vector::Zero(blocks.total());

    for (Index k = 0; k < nc; ++k) {
        const double h = fem.mass_cell[k];
        const double r = h * srh_rate(n[k], p[k], dev.eta, dev.tau_n, dev.tau_p);
        f[off[1] + k] -= r;
        f[off[2] + k] += r;

        // Drift integrals: constant concentration times affine flux times hat,
        // integrated exactly (element mass action weighted by the cell value).
        const double gl = grad_psi[k];
        const double gr = grad_psi[k + 1];
        const double wl = h * (gl / 3.0 + gr / 6.0);
        const double wr = h * (gl / 6.0 + gr / 3.0);
        f[off[4] + k] += n[k] * wl;
        f[off[4] + k + 1] += n[k] * wr;
        f[off[5] + k] += p[k] * wl;
        f[off[5] + k + 1] += p[k] * wr;
    }
    return f;
}

void nonlinearity_jacobian(const Vector& n, const Vector& p, const Vector& grad_psi,
                           const FemOperators& fem, const ScaledDevice& dev,
                           Index row0, Index col0, std::vector<Triplet>& out)
{
    const Index nc = fem.num_cells();
    const Index mf = fem.num_flux_dofs();
    const DeviceBlocks blocks{nc, mf};
    const auto off = blocks.offsets();

    for (Index k = 0; k < nc; ++k) {
        const double h = fem.mass_cell[k];
        const double drdn = h * srh_rate_dn(n[k], p[k], dev.eta, dev.tau_n, dev.tau_p);
        const double drdp = h * srh_rate_dp(n[k], p[k], dev.eta, dev.tau_n, dev.tau_p);
        out.emplace_back(row0 + off[1] + k, col0 + off[1] + k, -drdn);
        out.emplace_back(row0 + off[1] + k, col0 + off[2] + k, -drdp);
        out.emplace_back(row0 + off[2] + k, col0 + off[1] + k, +drdn);
        out.emplace_back(row0 + off[2] + k, col0 + off[2] + k, +drdp);

        const double gl = grad_psi[k];
        const double gr = grad_psi[k + 1];
        const double wl = h * (gl / 3.0 + gr / 6.0);
        const double wr = h * (gl / 6.0 + gr / 3.0);
        // d(drift)/d(concentration)
        out.emplace_back(row0 + off[4] + k, col0 + off[1] + k, wl);
        out.emplace_back(row0 + off[4] + k + 1, col0 + off[1] + k, wr);
        out.emplace_back(row0 + off[5] + k, col0 + off[2] + k, wl);
        out.emplace_back(row0 + off[5] + k + 1, col0 + off[2] + k, wr);
        // d(drift)/d(grad_psi): concentration-weighted element mass
        const double m11 = h / 3.0, m12 = h / 6.0;
        out.emplace_back(row0 + off[4] + k, col0 + off[3] + k, n[k] * m11);
        out.emplace_back(row0 + off[4] + k, col0 + off[3] + k + 1, n[k] * m12);
        out.emplace_back(row0 + off[4] + k + 1, col0 + off[3] + k, n[k] * m12);
        out.emplace_back(row0 + off[4] + k + 1, col0 + off[3] + k + 1, n[k] * m11);
        out.emplace_back(row0 + off[5] + k, col0 + off[3] + k, p[k] * m11);
        out.emplace_back(row0 + off[5] + k, col0 + off[3] + k + 1, p[k] * m12);
        out.emplace_back(row0 + off[5] + k + 1, col0 + off[3] + k, p[k] * m12);
        out.emplace_back(row0 + off[5] + k + 1, col0 + off[3] + k + 1, p[k] * m11);
    }
}

Vector assemble_rhs(const std::vector<double>& applied_volts, const ScaledDevice& dev,
                    const FemOperators& fem, const Vector& element_doping)
{
    const Index nc = fem.num_cells();
    const Index mf = fem.num_flux_dofs();
    if (element_doping.size() != nc)
        throw ConfigError("assemble_rhs: doping size mismatch");
    if (applied_volts.size() != fem.traces.size())
        throw ConfigError("assemble_rhs: one applied potential per contact required");

    const DeviceBlocks blocks{nc, mf};
    const auto off = blocks.offsets();
    Vector b = Vector::Zero(blocks.total());

    for (Index k = 0; k < nc; ++k)
        b[off[0] + k] = -element_doping[k] * fem.mass_cell[k];

    for (std::size_t c = 0; c < fem.traces.size(); ++c) {
        const Contact& contact = fem.traces[c];
        const Index cell = contact.node == 0 ? 0 : contact.node - 1;
        const BoundaryValues bv = equilibrium_boundary(element_doping[cell], applied_volts[c],
                                                       dev.thermal_voltage, dev.eta);
        b[off[3] + contact.node] += contact.normal * bv.psi;
        b[off[4] + contact.node] += contact.normal * bv.n;
        b[off[5] + contact.node] -= contact.normal * bv.p;
    }
    return b;
}

CouplingRows coupling_rows(const ScaledDevice& dev, const FemOperators& fem, std::size_t contact)
{
    const Contact& c = fem.traces.at(contact);
    CouplingRows rows;
    rows.flux_dof = c.node;
    rows.c_jn = c.normal * dev.current_scale_n;
    rows.c_jp = c.normal * dev.current_scale_p;
    rows.c_dgdt = -c.normal * dev.displacement_scale;
    return rows;
}

double coupling_current(const Vector& j_n, const Vector& j_p, const Vector& dgrad_psi_dt,
                        const ScaledDevice& dev, const FemOperators& fem, std::size_t contact)
{
    const CouplingRows rows = coupling_rows(dev, fem, contact);
    return rows.c_jn * j_n[rows.flux_dof] + rows.c_jp * j_p[rows.flux_dof] +
           rows.c_dgdt * dgrad_psi_dt[rows.flux_dof];
}

} // namespace ddmor
