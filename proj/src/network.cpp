#include "ddmor/network.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <numbers>
#include <set>

namespace ddmor {

namespace {
// Contact used for the branch coupling equation. At any exact solution the
// discrete conservation identity makes both contacts equivalent; the x=L
// contact (outward normal +1) fixes signs consistently with the basic test
// circuit.
constexpr std::size_t kCouplingContact = 1;
} // namespace

double source_eval(double t, const SourceSpec& source)
{
    if (source.waveform == SourceSpec::Waveform::Dc)
        return source.amplitude;
    return source.amplitude * std::sin(2.0 * std::numbers::pi * source.frequency * t) +
           source.offset;
}

std::vector<Index> Netlist::branches_of(BranchType type) const
{
    std::vector<Index> idx;
    for (std::size_t b = 0; b < branches.size(); ++b)
        if (branches[b].type == type)
            idx.push_back(static_cast<Index>(b));
    return idx;
}

Matrix Netlist::incidence(BranchType type) const
{
    const auto idx = branches_of(type);
    Matrix a = Matrix::Zero(node_count(), static_cast<Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const Branch& br = branches[static_cast<std::size_t>(idx[j])];
        if (br.node_plus >= 0)
            a(br.node_plus, static_cast<Index>(j)) = +1.0;
        if (br.node_minus >= 0)
            a(br.node_minus, static_cast<Index>(j)) = -1.0;
    }
    return a;
}

void Netlist::validate() const
{
    std::set<std::string> names;
    std::vector<bool> touched(node_names.size(), false);
    for (const Branch& br : branches) {
        if (!names.insert(br.name).second)
            throw ConfigError("netlist: duplicate branch name '" + br.name + "'");
        if (br.node_plus < -1 || br.node_plus >= node_count() || br.node_minus < -1 ||
            br.node_minus >= node_count())
            throw ConfigError("netlist: branch '" + br.name + "' references an unknown node");
        if (br.node_plus == br.node_minus)
            throw ConfigError("netlist: branch '" + br.name + "' connects a node to itself");
        if (br.node_plus >= 0)
            touched[static_cast<std::size_t>(br.node_plus)] = true;
        if (br.node_minus >= 0)
            touched[static_cast<std::size_t>(br.node_minus)] = true;
        switch (br.type) {
        case BranchType::Resistor:
        case BranchType::Capacitor:
        case BranchType::Inductor:
            if (!(br.value > 0.0))
                throw ConfigError("netlist: branch '" + br.name + "' needs a positive value");
            break;
        case BranchType::Semiconductor:
            if (br.device < 0 || br.device >= static_cast<int>(devices.size()))
                throw ConfigError("netlist: branch '" + br.name + "' references a missing device");
            break;
        default:
            break;
        }
    }
    for (std::size_t i = 0; i < touched.size(); ++i)
        if (!touched[i])
            throw ConfigError("netlist: dangling node '" + node_names[i] + "'");
}

void Netlist::set_frequency(double hz)
{
    for (Branch& br : branches)
        if ((br.type == BranchType::VoltageSource || br.type == BranchType::CurrentSource) &&
            br.source.waveform == SourceSpec::Waveform::Sine)
            br.source.frequency = hz;
}

FullModel::FullModel(Netlist netlist, const FullModelOptions& options) : netlist_(std::move(netlist))
{
    netlist_.validate();

    layout_.nodes = netlist_.node_count();
    layout_.vsrc = static_cast<Index>(netlist_.branches_of(BranchType::VoltageSource).size());
    layout_.inductors = static_cast<Index>(netlist_.branches_of(BranchType::Inductor).size());
    layout_.sbranches = static_cast<Index>(netlist_.branches_of(BranchType::Semiconductor).size());

    Index offset = layout_.nodes + layout_.vsrc + layout_.inductors + layout_.sbranches;
    const Mesh1D mesh = build_mesh(options.mesh_elements);
    auto fem = std::make_shared<const FemOperators>(assemble_operators(mesh));
    for (const Index b : netlist_.branches_of(BranchType::Semiconductor)) {
        const Branch& br = netlist_.branches[static_cast<std::size_t>(b)];
        devices_.push_back(scale_device(netlist_.devices[static_cast<std::size_t>(br.device)]));
        fems_.push_back(fem);
        dopings_.push_back(devices_.back().element_doping(mesh));

        StateLayout::DeviceRange r;
        r.cells = fem->num_cells();
        r.flux = fem->num_flux_dofs();
        r.psi = offset;
        r.n = r.psi + r.cells;
        r.p = r.n + r.cells;
        r.grad_psi = r.p + r.cells;
        r.j_n = r.grad_psi + r.flux;
        r.j_p = r.j_n + r.flux;
        offset = r.j_p + r.flux;
        layout_.device.push_back(r);
    }
    layout_.total = offset;

    atol_.resize(layout_.total);
    atol_.segment(layout_.e_offset(), layout_.nodes).setConstant(DefaultTolerances::node_potential);
    atol_.segment(layout_.jv_offset(), layout_.vsrc).setConstant(DefaultTolerances::branch_current);
    atol_.segment(layout_.jl_offset(), layout_.inductors)
        .setConstant(DefaultTolerances::branch_current);
    atol_.segment(layout_.js_offset(), layout_.sbranches)
        .setConstant(DefaultTolerances::branch_current);
    for (std::size_t d = 0; d < layout_.device.size(); ++d) {
        const auto& r = layout_.device[d];
        const double psi_atol = DefaultTolerances::node_potential / devices_[d].thermal_voltage;
        atol_.segment(r.psi, r.cells).setConstant(psi_atol);
        atol_.segment(r.n, r.cells).setConstant(DefaultTolerances::concentration);
        atol_.segment(r.p, r.cells).setConstant(DefaultTolerances::concentration);
        atol_.segment(r.grad_psi, r.flux).setConstant(psi_atol);
        atol_.segment(r.j_n, r.flux).setConstant(DefaultTolerances::flux_current);
        atol_.segment(r.j_p, r.flux).setConstant(DefaultTolerances::flux_current);
    }
}

std::vector<double> FullModel::applied_potentials(std::size_t d, const Vector& e) const
{
    const auto sb = netlist_.branches_of(BranchType::Semiconductor);
    const Branch& br = netlist_.branches[static_cast<std::size_t>(sb.at(d))];
    auto potential = [&](int node) { return node < 0 ? 0.0 : e[node]; };
    return {potential(br.node_plus), potential(br.node_minus)};
}

void FullModel::device_residual(std::size_t d, const Vector& z, const Vector& zdot,
                                Vector& out) const
{
    const auto& r = layout_.device[d];
    const FemOperators& fem = *fems_[d];
    const ScaledDevice& dev = devices_[d];
    const Index nc = r.cells;
    const Index mf = r.flux;

    const auto psi = z.segment(r.psi, nc);
    const auto n = z.segment(r.n, nc);
    const auto p = z.segment(r.p, nc);
    const auto g = z.segment(r.grad_psi, mf);
    const auto jn = z.segment(r.j_n, mf);
    const auto jp = z.segment(r.j_p, mf);

    const Vector f = assemble_nonlinearity(n, p, g, fem, dev);
    const Vector b = assemble_rhs(applied_potentials(d, z.head(layout_.nodes)), dev, fem,
                                  dopings_[d]);
    const DeviceBlocks blocks{nc, mf};
    const auto off = blocks.offsets();

    out.segment(r.psi, nc) = dev.lambda * (fem.div * g) -
                             fem.mass_cell.cwiseProduct(n - p) - b.segment(off[0], nc);
    out.segment(r.n, nc) = -fem.mass_cell.cwiseProduct(zdot.segment(r.n, nc)) +
                           dev.nu_n * (fem.div * jn) + f.segment(off[1], nc);
    out.segment(r.p, nc) = fem.mass_cell.cwiseProduct(zdot.segment(r.p, nc)) +
                           dev.nu_p * (fem.div * jp) + f.segment(off[2], nc);
    out.segment(r.grad_psi, mf) =
        fem.mass_flux * g + fem.div.transpose() * psi - b.segment(off[3], mf);
    out.segment(r.j_n, mf) = fem.mass_flux * jn + fem.div.transpose() * n +
                             f.segment(off[4], mf) - b.segment(off[4], mf);
    out.segment(r.j_p, mf) = fem.mass_flux * jp - fem.div.transpose() * p +
                             f.segment(off[5], mf) - b.segment(off[5], mf);
}

void FullModel::residual(double t, const Vector& z, const Vector& zdot, Vector& out) const
{
    if (z.size() != layout_.total || zdot.size() != layout_.total)
        throw ConfigError("full_residual: state dimension mismatch");
    out.setZero(layout_.total);

    auto potential = [&](int node) { return node < 0 ? 0.0 : z[node]; };
    auto dpotential = [&](int node) { return node < 0 ? 0.0 : zdot[node]; };
    auto kcl = [&](int node, double current) {
        if (node >= 0)
            out[node] += current;
    };

    Index jv = layout_.jv_offset();
    Index jl = layout_.jl_offset();
    Index js = layout_.js_offset();
    std::size_t dev_index = 0;
    for (const Branch& br : netlist_.branches) {
        const double v = potential(br.node_plus) - potential(br.node_minus);
        switch (br.type) {
        case BranchType::Resistor: {
            const double g = v / br.value;
            kcl(br.node_plus, +g);
            kcl(br.node_minus, -g);
            break;
        }
        case BranchType::Capacitor: {
            const double dq = br.value * (dpotential(br.node_plus) - dpotential(br.node_minus));
            kcl(br.node_plus, +dq);
            kcl(br.node_minus, -dq);
            break;
        }
        case BranchType::Inductor: {
            const double current = z[jl];
            kcl(br.node_plus, +current);
            kcl(br.node_minus, -current);
            out[jl] = br.value * zdot[jl] - v;
            ++jl;
            break;
        }
        case BranchType::VoltageSource: {
            const double current = z[jv];
            kcl(br.node_plus, +current);
            kcl(br.node_minus, -current);
            out[jv] = v - source_scale_ * source_eval(t, br.source);
            ++jv;
            break;
        }
        case BranchType::CurrentSource: {
            const double current = source_scale_ * source_eval(t, br.source);
            kcl(br.node_plus, +current);
            kcl(br.node_minus, -current);
            break;
        }
        case BranchType::Semiconductor: {
            const double current = z[js];
            kcl(br.node_plus, +current);
            kcl(br.node_minus, -current);
            const auto& r = layout_.device[dev_index];
            const CouplingRows rows =
                coupling_rows(devices_[dev_index], *fems_[dev_index], kCouplingContact);
            out[js] = current - rows.c_jn * z[r.j_n + rows.flux_dof] -
                      rows.c_jp * z[r.j_p + rows.flux_dof] -
                      rows.c_dgdt * zdot[r.grad_psi + rows.flux_dof];
            ++js;
            ++dev_index;
            break;
        }
        }
    }

    for (std::size_t d = 0; d < layout_.device.size(); ++d)
        device_residual(d, z, zdot, out);

    if (!out.allFinite()) {
        auto bad = [&](Index off, Index len) {
            return !out.segment(off, len).allFinite();
        };
        std::string where = "network";
        for (std::size_t d = 0; d < layout_.device.size(); ++d) {
            const auto& r = layout_.device[d];
            if (bad(r.psi, 3 * r.cells + 3 * r.flux))
                where = "device " + std::to_string(d);
        }
        throw SolverError("full_residual: non-finite values in partition " + where);
    }
}

void FullModel::assemble_triplets(double t, const Vector& z, const Vector& zdot, double alpha,
                                  std::vector<Triplet>& out) const
{
    (void)t;
    (void)zdot;
    out.clear();
    auto stamp2 = [&](int a, int b, double val) {
        // KCL stamp of a conductance-like two-terminal element
        if (a >= 0)
            out.emplace_back(a, a, val);
        if (b >= 0)
            out.emplace_back(b, b, val);
        if (a >= 0 && b >= 0) {
            out.emplace_back(a, b, -val);
            out.emplace_back(b, a, -val);
        }
    };
    auto stamp_branch = [&](int a, int b, Index col) {
        if (a >= 0) {
            out.emplace_back(a, col, +1.0);
            out.emplace_back(col, a, +1.0);
        }
        if (b >= 0) {
            out.emplace_back(b, col, -1.0);
            out.emplace_back(col, b, -1.0);
        }
    };

    Index jv = layout_.jv_offset();
    Index jl = layout_.jl_offset();
    Index js = layout_.js_offset();
    std::size_t dev_index = 0;
    for (const Branch& br : netlist_.branches) {
        switch (br.type) {
        case BranchType::Resistor:
            stamp2(br.node_plus, br.node_minus, 1.0 / br.value);
            break;
        case BranchType::Capacitor:
            stamp2(br.node_plus, br.node_minus, alpha * br.value);
            break;
        case BranchType::Inductor:
            // KCL columns and flux row -A_L^T e; the sign flip of the row
            // entries relative to stamp_branch is applied below.
            if (br.node_plus >= 0) {
                out.emplace_back(br.node_plus, jl, +1.0);
                out.emplace_back(jl, br.node_plus, -1.0);
            }
            if (br.node_minus >= 0) {
                out.emplace_back(br.node_minus, jl, -1.0);
                out.emplace_back(jl, br.node_minus, +1.0);
            }
            out.emplace_back(jl, jl, alpha * br.value);
            ++jl;
            break;
        case BranchType::VoltageSource:
            stamp_branch(br.node_plus, br.node_minus, jv);
            ++jv;
            break;
        case BranchType::CurrentSource:
            break;
        case BranchType::Semiconductor: {
            if (br.node_plus >= 0)
                out.emplace_back(br.node_plus, js, +1.0);
            if (br.node_minus >= 0)
                out.emplace_back(br.node_minus, js, -1.0);
            const auto& r = layout_.device[dev_index];
            const CouplingRows rows =
                coupling_rows(devices_[dev_index], *fems_[dev_index], kCouplingContact);
            out.emplace_back(js, js, 1.0);
            out.emplace_back(js, r.j_n + rows.flux_dof, -rows.c_jn);
            out.emplace_back(js, r.j_p + rows.flux_dof, -rows.c_jp);
            out.emplace_back(js, r.grad_psi + rows.flux_dof, -alpha * rows.c_dgdt);
            ++js;
            ++dev_index;
            break;
        }
        }
    }

    const auto sb = netlist_.branches_of(BranchType::Semiconductor);
    for (std::size_t d = 0; d < layout_.device.size(); ++d) {
        const auto& r = layout_.device[d];
        const FemOperators& fem = *fems_[d];
        const ScaledDevice& dev = devices_[d];

        // Linear blocks of the device system.
        for (int kk = 0; kk < fem.div.outerSize(); ++kk)
            for (SparseMatrix::InnerIterator it(fem.div, kk); it; ++it) {
                const Index cell = it.row();
                const Index dof = it.col();
                const double v = it.value();
                out.emplace_back(r.psi + cell, r.grad_psi + dof, dev.lambda * v);
                out.emplace_back(r.n + cell, r.j_n + dof, dev.nu_n * v);
                out.emplace_back(r.p + cell, r.j_p + dof, dev.nu_p * v);
                // transposed blocks
                out.emplace_back(r.grad_psi + dof, r.psi + cell, v);
                out.emplace_back(r.j_n + dof, r.n + cell, v);
                out.emplace_back(r.j_p + dof, r.p + cell, -v);
            }
        for (Index k = 0; k < r.cells; ++k) {
            const double m = fem.mass_cell[k];
            out.emplace_back(r.psi + k, r.n + k, -m);
            out.emplace_back(r.psi + k, r.p + k, +m);
            out.emplace_back(r.n + k, r.n + k, -alpha * m);
            out.emplace_back(r.p + k, r.p + k, +alpha * m);
        }
        for (int kk = 0; kk < fem.mass_flux.outerSize(); ++kk)
            for (SparseMatrix::InnerIterator it(fem.mass_flux, kk); it; ++it) {
                out.emplace_back(r.grad_psi + it.row(), r.grad_psi + it.col(), it.value());
                out.emplace_back(r.j_n + it.row(), r.j_n + it.col(), it.value());
                out.emplace_back(r.j_p + it.row(), r.j_p + it.col(), it.value());
            }

        // Nonlinear blocks.
        nonlinearity_jacobian(z.segment(r.n, r.cells), z.segment(r.p, r.cells),
                              z.segment(r.grad_psi, r.flux), fem, dev, r.psi, r.psi, out);

        // Boundary coupling of the potential trace to the terminal nodes.
        const Branch& br = netlist_.branches[static_cast<std::size_t>(sb[d])];
        const std::array<int, 2> nodes = {br.node_plus, br.node_minus};
        for (std::size_t c = 0; c < fem.traces.size(); ++c) {
            const int node = nodes[c];
            if (node >= 0)
                out.emplace_back(r.grad_psi + fem.traces[c].node, node,
                                 -fem.traces[c].normal / dev.thermal_voltage);
        }
    }
}

SparseMatrix FullModel::jacobian(double t, const Vector& z, const Vector& zdot,
                                 double alpha) const
{
    std::vector<Triplet> trips;
    assemble_triplets(t, z, zdot, alpha, trips);
    SparseMatrix j(layout_.total, layout_.total);
    j.setFromTriplets(trips.begin(), trips.end());
    return j;
}

bool FullModel::factor(double t, const Vector& z, const Vector& zdot, double alpha)
{
    std::vector<Triplet> trips;
    assemble_triplets(t, z, zdot, alpha, trips);
    if (!pattern_analyzed_) {
        jac_.resize(layout_.total, layout_.total);
        jac_.setFromTriplets(trips.begin(), trips.end());
        lu_.analyzePattern(jac_);
        pattern_analyzed_ = true;
    } else {
        jac_.setFromTriplets(trips.begin(), trips.end());
    }
    lu_.factorize(jac_);
    return lu_.info() == Eigen::Success;
}

void FullModel::solve_factored(Vector& rhs) const
{
    rhs = lu_.solve(rhs);
}

Vector FullModel::device_equilibrium(std::size_t d) const
{
    const auto& r = layout_.device[d];
    const FemOperators& fem = *fems_[d];
    const ScaledDevice& dev = devices_[d];
    const Index nc = r.cells;
    const Index mf = r.flux;
    const Vector& doping = dopings_[d];
    const DeviceBlocks blocks{nc, mf};
    const auto off = blocks.offsets();
    const Vector b0 = assemble_rhs({0.0, 0.0}, dev, fem, doping);

    // Mixed nonlinear Poisson for (psi, grad_psi) with the equilibrium
    // substitution n = eta*exp(psi), p = eta*exp(-psi).
    Vector psi(nc), g = Vector::Zero(mf);
    for (Index k = 0; k < nc; ++k)
        psi[k] = std::asinh(doping[k] / (2.0 * dev.eta));

    auto poisson_residual = [&](const Vector& ps, const Vector& gg) {
        Vector res(nc + mf);
        const Vector n = dev.eta * ps.array().exp().matrix();
        const Vector p = dev.eta * (-ps).array().exp().matrix();
        res.head(nc) = dev.lambda * (fem.div * gg) -
                       fem.mass_cell.cwiseProduct(n - p) - b0.segment(off[0], nc);
        res.tail(mf) = fem.mass_flux * gg + fem.div.transpose() * ps - b0.segment(off[3], mf);
        return res;
    };

    Vector res = poisson_residual(psi, g);
    for (int iter = 0; iter < 200 && res.lpNorm<Eigen::Infinity>() > 1e-13; ++iter) {
        std::vector<Triplet> trips;
        for (Index k = 0; k < nc; ++k) {
            const double carriers = dev.eta * (std::exp(psi[k]) + std::exp(-psi[k]));
            trips.emplace_back(k, k, -fem.mass_cell[k] * carriers);
        }
        for (int kk = 0; kk < fem.div.outerSize(); ++kk)
            for (SparseMatrix::InnerIterator it(fem.div, kk); it; ++it) {
                trips.emplace_back(it.row(), nc + it.col(), dev.lambda * it.value());
                trips.emplace_back(nc + it.col(), it.row(), it.value());
            }
        for (int kk = 0; kk < fem.mass_flux.outerSize(); ++kk)
            for (SparseMatrix::InnerIterator it(fem.mass_flux, kk); it; ++it)
                trips.emplace_back(nc + it.row(), nc + it.col(), it.value());
        SparseMatrix jac(nc + mf, nc + mf);
        jac.setFromTriplets(trips.begin(), trips.end());
        Eigen::SparseLU<SparseMatrix> lu(jac);
        if (lu.info() != Eigen::Success)
            throw SolverError("device equilibrium: singular Poisson Jacobian");
        const Vector step = lu.solve(res);

        double damping = 1.0;
        const double res_norm = res.lpNorm<Eigen::Infinity>();
        for (int halving = 0; halving <= 10; ++halving) {
            const Vector psi_try = psi - damping * step.head(nc);
            const Vector g_try = g - damping * step.tail(mf);
            const Vector res_try = poisson_residual(psi_try, g_try);
            if (res_try.lpNorm<Eigen::Infinity>() < res_norm || halving == 10) {
                psi = psi_try;
                g = g_try;
                res = res_try;
                break;
            }
            damping *= 0.5;
        }
    }

    // Carriers from the equilibrium substitution; fluxes start at zero. The
    // flux-law rows then carry the whole discretization mismatch, which is
    // O(h) on meshes resolving the junction (cell Peclet h*|grad psi| < 2),
    // and the coupled Newton converges quadratically from here. Coarser
    // meshes have sign-oscillating discrete carrier profiles and no usable
    // Newton basin; build_mesh defaults are chosen accordingly.
    const Vector n = dev.eta * psi.array().exp().matrix();
    const Vector p = dev.eta * (-psi).array().exp().matrix();
    const Vector jn = Vector::Zero(mf);
    const Vector jp = Vector::Zero(mf);

    Vector y(blocks.total());
    y.segment(off[0], nc) = psi;
    y.segment(off[1], nc) = n;
    y.segment(off[2], nc) = p;
    y.segment(off[3], mf) = g;
    y.segment(off[4], mf) = jn;
    y.segment(off[5], mf) = jp;
    return y;
}

Vector FullModel::equilibrium_guess()
{
    Vector z = Vector::Zero(layout_.total);
    for (std::size_t d = 0; d < layout_.device.size(); ++d) {
        const auto& r = layout_.device[d];
        z.segment(r.psi, 3 * r.cells + 3 * r.flux) = device_equilibrium(d);
    }
    return z;
}

Vector FullModel::residual_row_scales(double t, const Vector& z, const Vector& zdot)
{
    std::vector<Triplet> trips;
    assemble_triplets(t, z, zdot, 0.0, trips);
    Vector scales = Vector::Zero(layout_.total);
    for (const Triplet& tr : trips)
        scales[tr.row()] = std::max(scales[tr.row()], std::abs(tr.value()));
    for (Index i = 0; i < scales.size(); ++i)
        scales[i] = std::max(scales[i], 1e-20);
    return scales;
}

} // namespace ddmor
