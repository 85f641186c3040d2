#include "ddmor/pod.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <cmath>
#include <functional>

namespace ddmor {

namespace {
constexpr double kRankCutoff = 1e-13; // sigma_i below cutoff*sigma_1 count as zero
}

const char* device_var_name(DeviceVar v)
{
    switch (v) {
    case DeviceVar::Psi: return "psi";
    case DeviceVar::N: return "n";
    case DeviceVar::P: return "p";
    case DeviceVar::GradPsi: return "grad_psi";
    case DeviceVar::Jn: return "j_n";
    case DeviceVar::Jp: return "j_p";
    }
    return "?";
}

namespace {

Index numerical_rank(const Vector& sigma)
{
    if (sigma.size() == 0 || !(sigma[0] > 0.0))
        throw ConfigError("information_gap: all singular values vanish");
    Index m = 0;
    while (m < sigma.size() && sigma[m] >= kRankCutoff * sigma[0])
        ++m;
    return m;
}

PodBasis pod_from_weighted(const Matrix& weighted, double delta_target, DeviceVar tag,
                           const std::function<Matrix(const Matrix&)>& unweight)
{
    Eigen::BDCSVD<Matrix> svd(weighted, Eigen::ComputeThinU);
    const Vector sigma = svd.singularValues();
    const Index m = numerical_rank(sigma);

    Index s = m;
    if (delta_target > 0.0)
        for (Index cand = 1; cand <= m; ++cand)
            if (information_gap(sigma, cand) <= delta_target) {
                s = cand;
                break;
            }

    PodBasis basis;
    basis.tag = tag;
    basis.mass = mass_tag_of(tag);
    basis.singular_values = sigma;
    basis.basis = unweight(svd.matrixU().leftCols(s));
    return basis;
}

} // namespace

double information_gap(const Vector& sigma, Index s)
{
    const Index m = numerical_rank(sigma);
    if (s < 0)
        throw ConfigError("information_gap: negative dimension");
    if (s >= m)
        return 0.0;
    double tail = 0.0, total = 0.0;
    for (Index i = 0; i < m; ++i) {
        const double sq = sigma[i] * sigma[i];
        total += sq;
        if (i >= s)
            tail += sq;
    }
    return std::sqrt(tail / total);
}

PodBasis compute_pod(const Matrix& snapshots, const Vector& diag_mass, double delta_target,
                     DeviceVar tag)
{
    if (snapshots.cols() < 1)
        throw ConfigError("compute_pod: need at least one snapshot");
    if (diag_mass.size() != snapshots.rows())
        throw ConfigError("compute_pod: mass dimension mismatch");
    if (!(diag_mass.minCoeff() > 0.0))
        throw ConfigError("compute_pod: mass matrix not positive definite");
    const Vector root = diag_mass.cwiseSqrt();
    const Matrix weighted = root.asDiagonal() * snapshots;
    return pod_from_weighted(weighted, delta_target, tag, [&](const Matrix& u) {
        return Matrix(root.cwiseInverse().asDiagonal() * u);
    });
}

PodBasis compute_pod(const Matrix& snapshots, const SparseMatrix& mass, double delta_target,
                     DeviceVar tag)
{
    if (snapshots.cols() < 1)
        throw ConfigError("compute_pod: need at least one snapshot");
    if (mass.rows() != snapshots.rows())
        throw ConfigError("compute_pod: mass dimension mismatch");
    const Matrix dense_mass = Matrix(mass);
    Eigen::LLT<Matrix> llt(dense_mass);
    if (llt.info() != Eigen::Success)
        throw ConfigError("compute_pod: mass matrix not positive definite");
    const Matrix l = llt.matrixL();
    const Matrix weighted = l.transpose() * snapshots;
    return pod_from_weighted(weighted, delta_target, tag, [&](const Matrix& u) {
        return Matrix(l.transpose().triangularView<Eigen::Upper>().solve(u));
    });
}

PodBasis complete_basis(const PodBasis& basis, const FemOperators& fem)
{
    const Index n = basis.basis.rows();
    auto dot = [&](const Vector& a, const Vector& b) {
        if (basis.mass == MassTag::Cell)
            return a.dot(fem.mass_cell.cwiseProduct(b));
        return a.dot(Vector(fem.mass_flux * b));
    };

    Matrix full(n, n);
    Index cols = basis.basis.cols();
    full.leftCols(cols) = basis.basis;
    for (Index cand = 0; cand < n && cols < n; ++cand) {
        Vector v = Vector::Unit(n, cand);
        for (int pass = 0; pass < 2; ++pass)
            for (Index j = 0; j < cols; ++j)
                v -= dot(full.col(j), v) * full.col(j);
        const double norm = std::sqrt(dot(v, v));
        if (norm > 1e-8)
            full.col(cols++) = v / norm;
    }
    if (cols != n)
        throw SolverError("complete_basis: failed to span the full space");

    PodBasis completed = basis;
    completed.basis = full;
    return completed;
}

Matrix extract_snapshots(const Trajectory& traj, const StateLayout& layout, std::size_t device,
                         DeviceVar var)
{
    if (traj.empty())
        throw ConfigError("extract_snapshots: empty trajectory");
    const auto& r = layout.device.at(device);
    const std::array<Index, 6> offsets = {r.psi, r.n, r.p, r.grad_psi, r.j_n, r.j_p};
    const Index dim = mass_tag_of(var) == MassTag::Cell ? r.cells : r.flux;
    const Index off = offsets[static_cast<std::size_t>(var)];

    Matrix y(dim, static_cast<Index>(traj.size()));
    for (std::size_t k = 0; k < traj.size(); ++k)
        y.col(static_cast<Index>(k)) = traj.states[k].segment(off, dim);
    return y;
}

void SnapshotStore::add_trajectory(const StateLayout& layout, const Trajectory& traj)
{
    if (per_device_.empty())
        per_device_.resize(layout.device.size());
    if (per_device_.size() != layout.device.size())
        throw ConfigError("snapshot store: device count changed between runs");
    for (std::size_t d = 0; d < layout.device.size(); ++d)
        for (const DeviceVar var : kDeviceVars)
            per_device_[d][static_cast<std::size_t>(var)].push_back(
                extract_snapshots(traj, layout, d, var));
    ++runs_;
}

Matrix SnapshotStore::concatenated(std::size_t device, DeviceVar var) const
{
    const auto& list = per_device_.at(device)[static_cast<std::size_t>(var)];
    if (list.empty())
        throw ConfigError("snapshot store: no snapshots recorded");
    Index cols = 0;
    for (const Matrix& m : list)
        cols += m.cols();
    Matrix out(list.front().rows(), cols);
    Index at = 0;
    for (const Matrix& m : list) {
        out.middleCols(at, m.cols()) = m;
        at += m.cols();
    }
    return out;
}

const Matrix& SnapshotStore::run_matrix(std::size_t run, std::size_t device, DeviceVar var) const
{
    return per_device_.at(device)[static_cast<std::size_t>(var)].at(run);
}

std::vector<DeviceBases> merge_bases(const SnapshotStore& store, const FullModel& full,
                                     MergeStrategy strategy, double delta_target,
                                     const std::vector<DeviceBases>* previous)
{
    if (store.runs() == 0)
        throw ConfigError("merge_bases: empty snapshot store");

    std::vector<DeviceBases> out(store.devices());
    for (std::size_t d = 0; d < store.devices(); ++d) {
        const FemOperators& fem = full.fem(d);
        for (const DeviceVar var : kDeviceVars) {
            const std::size_t v = static_cast<std::size_t>(var);
            auto pod_of = [&](const Matrix& y) {
                return mass_tag_of(var) == MassTag::Cell
                           ? compute_pod(y, fem.mass_cell, delta_target, var)
                           : compute_pod(y, fem.mass_flux, delta_target, var);
            };
            if (strategy == MergeStrategy::ResvdAll || previous == nullptr ||
                store.runs() == 1) {
                out[d][v] = pod_of(store.concatenated(d, var));
            } else {
                const PodBasis newest = pod_of(store.run_matrix(store.runs() - 1, d, var));
                const Matrix& prev = (*previous)[d][v].basis;
                Matrix joined(prev.rows(), prev.cols() + newest.basis.cols());
                joined << prev, newest.basis;
                out[d][v] = pod_of(joined);
            }
        }
    }
    return out;
}

ReducedModel::ReducedModel(const FullModel& full, std::vector<DeviceBases> bases)
    : netlist_(full.netlist()), full_layout_(full.layout()), bases_(std::move(bases))
{
    if (bases_.size() != full.device_count())
        throw ConfigError("reduced model: need one basis set per device");

    layout_.nodes = full_layout_.nodes;
    layout_.vsrc = full_layout_.vsrc;
    layout_.inductors = full_layout_.inductors;
    layout_.sbranches = full_layout_.sbranches;

    Index offset = layout_.nodes + layout_.vsrc + layout_.inductors + layout_.sbranches;
    for (std::size_t d = 0; d < bases_.size(); ++d) {
        const FemOperators& fem = full.fem(d);
        fems_.push_back(full.fem_ptr(d));
        devices_.push_back(full.device(d));
        dopings_.push_back(full.doping(d));

        ReducedLayout::DeviceRange range;
        for (const DeviceVar var : kDeviceVars) {
            const std::size_t v = static_cast<std::size_t>(var);
            const PodBasis& b = bases_[d][v];
            if (b.tag != var || b.mass != mass_tag_of(var))
                throw ConfigError("reduced model: basis tag/mass mismatch for " +
                                  std::string(device_var_name(var)));
            const Index expected =
                mass_tag_of(var) == MassTag::Cell ? fem.num_cells() : fem.num_flux_dofs();
            if (b.basis.rows() != expected)
                throw ConfigError("reduced model: basis dimension mismatch for " +
                                  std::string(device_var_name(var)));
            range.dim[v] = b.basis.cols();
            range.offset[v] = offset;
            offset += range.dim[v];
        }
        layout_.device.push_back(range);
    }
    layout_.total = offset;

    // offline phase: projected system matrix and coupling rows per device
    for (std::size_t d = 0; d < bases_.size(); ++d) {
        const FemOperators& fem = *fems_[d];
        const ScaledDevice& dev = devices_[d];
        const auto& range = layout_.device[d];
        const Index s_total = range.offset[5] + range.dim[5] - range.offset[0];

        const Matrix& u_psi = bases_[d][0].basis;
        const Matrix& u_n = bases_[d][1].basis;
        const Matrix& u_p = bases_[d][2].basis;
        const Matrix& u_g = bases_[d][3].basis;
        const Matrix& u_jn = bases_[d][4].basis;
        const Matrix& u_jp = bases_[d][5].basis;

        std::array<Index, 6> local{};
        for (std::size_t v = 0; v < 6; ++v)
            local[v] = range.offset[v] - range.offset[0];

        Matrix a = Matrix::Zero(s_total, s_total);
        auto put = [&](std::size_t br, std::size_t bc, const Matrix& m) {
            a.block(local[br], local[bc], m.rows(), m.cols()) = m;
        };
        put(0, 1, Matrix(-u_psi.transpose() * fem.mass_cell.asDiagonal() * u_n));
        put(0, 2, Matrix(u_psi.transpose() * fem.mass_cell.asDiagonal() * u_p));
        put(0, 3, Matrix(dev.lambda * (u_psi.transpose() * (fem.div * u_g))));
        put(1, 4, Matrix(dev.nu_n * (u_n.transpose() * (fem.div * u_jn))));
        put(2, 5, Matrix(dev.nu_p * (u_p.transpose() * (fem.div * u_jp))));
        put(3, 0, Matrix(u_g.transpose() * (fem.div.transpose() * u_psi)));
        put(3, 3, Matrix(u_g.transpose() * (fem.mass_flux * u_g)));
        put(4, 1, Matrix(u_jn.transpose() * (fem.div.transpose() * u_n)));
        put(4, 4, Matrix(u_jn.transpose() * (fem.mass_flux * u_jn)));
        put(5, 2, Matrix(-(u_jp.transpose() * (fem.div.transpose() * u_p))));
        put(5, 5, Matrix(u_jp.transpose() * (fem.mass_flux * u_jp)));
        a_pod_.push_back(std::move(a));

        const CouplingRows rows = coupling_rows(dev, fem, 1);
        std::array<Vector, 6> coup;
        coup[3] = rows.c_dgdt * u_g.row(rows.flux_dof).transpose();
        coup[4] = rows.c_jn * u_jn.row(rows.flux_dof).transpose();
        coup[5] = rows.c_jp * u_jp.row(rows.flux_dof).transpose();
        coupling_.push_back(std::move(coup));
    }

    atol_.resize(layout_.total);
    atol_.segment(0, layout_.nodes).setConstant(DefaultTolerances::node_potential);
    atol_.segment(layout_.jv_offset(), layout_.vsrc + layout_.inductors + layout_.sbranches)
        .setConstant(DefaultTolerances::branch_current);
    for (std::size_t d = 0; d < bases_.size(); ++d) {
        const auto& range = layout_.device[d];
        const double psi_atol = DefaultTolerances::node_potential / devices_[d].thermal_voltage;
        const std::array<double, 6> per_var = {
            psi_atol, DefaultTolerances::concentration, DefaultTolerances::concentration,
            psi_atol, DefaultTolerances::flux_current, DefaultTolerances::flux_current};
        for (std::size_t v = 0; v < 6; ++v)
            atol_.segment(range.offset[v], range.dim[v]).setConstant(per_var[v]);
    }
}

Vector ReducedModel::lift_state(const Vector& z) const
{
    Vector full = Vector::Zero(full_layout_.total);
    const Index head = layout_.nodes + layout_.vsrc + layout_.inductors + layout_.sbranches;
    full.head(head) = z.head(head);
    for (std::size_t d = 0; d < bases_.size(); ++d) {
        const auto& r = layout_.device[d];
        const auto& fr = full_layout_.device[d];
        const std::array<Index, 6> full_off = {fr.psi, fr.n, fr.p, fr.grad_psi, fr.j_n, fr.j_p};
        for (std::size_t v = 0; v < 6; ++v)
            full.segment(full_off[v], bases_[d][v].basis.rows()) =
                bases_[d][v].basis * z.segment(r.offset[v], r.dim[v]);
    }
    return full;
}

Vector ReducedModel::project_full_state(const Vector& z_full) const
{
    Vector z = Vector::Zero(layout_.total);
    const Index head = layout_.nodes + layout_.vsrc + layout_.inductors + layout_.sbranches;
    z.head(head) = z_full.head(head);
    for (std::size_t d = 0; d < bases_.size(); ++d) {
        const auto& r = layout_.device[d];
        const auto& fr = full_layout_.device[d];
        const std::array<Index, 6> full_off = {fr.psi, fr.n, fr.p, fr.grad_psi, fr.j_n, fr.j_p};
        const FemOperators& fem = *fems_[d];
        for (std::size_t v = 0; v < 6; ++v) {
            const Matrix& u = bases_[d][v].basis;
            const Vector y = z_full.segment(full_off[v], u.rows());
            const Vector my = bases_[d][v].mass == MassTag::Cell
                                  ? Vector(fem.mass_cell.cwiseProduct(y))
                                  : Vector(fem.mass_flux * y);
            z.segment(r.offset[v], r.dim[v]) = u.transpose() * my;
        }
    }
    return z;
}

Vector ReducedModel::project_residual(const Vector& full_residual) const
{
    Vector out = Vector::Zero(layout_.total);
    const Index head = layout_.nodes + layout_.vsrc + layout_.inductors + layout_.sbranches;
    out.head(head) = full_residual.head(head);
    for (std::size_t d = 0; d < bases_.size(); ++d) {
        const auto& r = layout_.device[d];
        const auto& fr = full_layout_.device[d];
        const std::array<Index, 6> full_off = {fr.psi, fr.n, fr.p, fr.grad_psi, fr.j_n, fr.j_p};
        for (std::size_t v = 0; v < 6; ++v)
            out.segment(r.offset[v], r.dim[v]) =
                bases_[d][v].basis.transpose() *
                full_residual.segment(full_off[v], bases_[d][v].basis.rows());
    }
    return out;
}

void ReducedModel::device_residual(std::size_t d, double t, const Vector& z, const Vector& zdot,
                                   Vector& out) const
{
    (void)t;
    const auto& r = layout_.device[d];
    const FemOperators& fem = *fems_[d];
    const ScaledDevice& dev = devices_[d];
    const Index nc = fem.num_cells();
    const Index mf = fem.num_flux_dofs();
    const DeviceBlocks blocks{nc, mf};
    const auto boff = blocks.offsets();

    const Index dev_offset = r.offset[0];
    const Index s_total = r.offset[5] + r.dim[5] - dev_offset;

    out.segment(dev_offset, s_total) += a_pod_[d] * z.segment(dev_offset, s_total);
    out.segment(r.offset[1], r.dim[1]) -= zdot.segment(r.offset[1], r.dim[1]);
    out.segment(r.offset[2], r.dim[2]) += zdot.segment(r.offset[2], r.dim[2]);

    // nonlinear functional: lift, evaluate, project
    const Vector n = bases_[d][1].basis * z.segment(r.offset[1], r.dim[1]);
    const Vector p = bases_[d][2].basis * z.segment(r.offset[2], r.dim[2]);
    const Vector g = bases_[d][3].basis * z.segment(r.offset[3], r.dim[3]);
    const Vector f = assemble_nonlinearity(n, p, g, fem, dev);
    out.segment(r.offset[1], r.dim[1]) += bases_[d][1].basis.transpose() * f.segment(boff[1], nc);
    out.segment(r.offset[2], r.dim[2]) += bases_[d][2].basis.transpose() * f.segment(boff[2], nc);
    out.segment(r.offset[4], r.dim[4]) += bases_[d][4].basis.transpose() * f.segment(boff[4], mf);
    out.segment(r.offset[5], r.dim[5]) += bases_[d][5].basis.transpose() * f.segment(boff[5], mf);

    // boundary data: assemble, project, subtract
    const auto sb = netlist_.branches_of(BranchType::Semiconductor);
    const Branch& br = netlist_.branches[static_cast<std::size_t>(sb[d])];
    auto potential = [&](int node) { return node < 0 ? 0.0 : z[node]; };
    const std::vector<double> applied = {potential(br.node_plus), potential(br.node_minus)};
    const Vector b = assemble_rhs(applied, dev, fem, dopings_[d]);
    out.segment(r.offset[0], r.dim[0]) -= bases_[d][0].basis.transpose() * b.segment(boff[0], nc);
    out.segment(r.offset[3], r.dim[3]) -= bases_[d][3].basis.transpose() * b.segment(boff[3], mf);
    out.segment(r.offset[4], r.dim[4]) -= bases_[d][4].basis.transpose() * b.segment(boff[4], mf);
    out.segment(r.offset[5], r.dim[5]) -= bases_[d][5].basis.transpose() * b.segment(boff[5], mf);
}

void ReducedModel::residual(double t, const Vector& z, const Vector& zdot, Vector& out) const
{
    if (z.size() != layout_.total || zdot.size() != layout_.total)
        throw ConfigError("reduced_residual: state dimension mismatch");
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
            kcl(br.node_plus, +z[jl]);
            kcl(br.node_minus, -z[jl]);
            out[jl] = br.value * zdot[jl] - v;
            ++jl;
            break;
        }
        case BranchType::VoltageSource: {
            kcl(br.node_plus, +z[jv]);
            kcl(br.node_minus, -z[jv]);
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
            kcl(br.node_plus, +z[js]);
            kcl(br.node_minus, -z[js]);
            const auto& r = layout_.device[dev_index];
            const auto& coup = coupling_[dev_index];
            out[js] = z[js] - coup[4].dot(z.segment(r.offset[4], r.dim[4])) -
                      coup[5].dot(z.segment(r.offset[5], r.dim[5])) -
                      coup[3].dot(zdot.segment(r.offset[3], r.dim[3]));
            ++js;
            ++dev_index;
            break;
        }
        }
    }

    for (std::size_t d = 0; d < bases_.size(); ++d)
        device_residual(d, t, z, zdot, out);

    if (!out.allFinite())
        throw SolverError("reduced_residual: non-finite values");
}

Matrix ReducedModel::jacobian(double t, const Vector& z, const Vector& zdot, double alpha) const
{
    (void)t;
    (void)zdot;
    Matrix jac = Matrix::Zero(layout_.total, layout_.total);

    auto stamp2 = [&](int a, int b, double val) {
        if (a >= 0)
            jac(a, a) += val;
        if (b >= 0)
            jac(b, b) += val;
        if (a >= 0 && b >= 0) {
            jac(a, b) -= val;
            jac(b, a) -= val;
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
            if (br.node_plus >= 0) {
                jac(br.node_plus, jl) += 1.0;
                jac(jl, br.node_plus) -= 1.0;
            }
            if (br.node_minus >= 0) {
                jac(br.node_minus, jl) -= 1.0;
                jac(jl, br.node_minus) += 1.0;
            }
            jac(jl, jl) += alpha * br.value;
            ++jl;
            break;
        case BranchType::VoltageSource:
            if (br.node_plus >= 0) {
                jac(br.node_plus, jv) += 1.0;
                jac(jv, br.node_plus) += 1.0;
            }
            if (br.node_minus >= 0) {
                jac(br.node_minus, jv) -= 1.0;
                jac(jv, br.node_minus) -= 1.0;
            }
            ++jv;
            break;
        case BranchType::CurrentSource:
            break;
        case BranchType::Semiconductor: {
            if (br.node_plus >= 0)
                jac(br.node_plus, js) += 1.0;
            if (br.node_minus >= 0)
                jac(br.node_minus, js) -= 1.0;
            const auto& r = layout_.device[dev_index];
            const auto& coup = coupling_[dev_index];
            jac(js, js) += 1.0;
            jac.row(js).segment(r.offset[4], r.dim[4]) -= coup[4].transpose();
            jac.row(js).segment(r.offset[5], r.dim[5]) -= coup[5].transpose();
            jac.row(js).segment(r.offset[3], r.dim[3]) -= alpha * coup[3].transpose();
            ++js;
            ++dev_index;
            break;
        }
        }
    }

    const auto sb = netlist_.branches_of(BranchType::Semiconductor);
    for (std::size_t d = 0; d < bases_.size(); ++d) {
        const auto& r = layout_.device[d];
        const FemOperators& fem = *fems_[d];
        const ScaledDevice& dev = devices_[d];
        const Index nc = fem.num_cells();
        const Index mf = fem.num_flux_dofs();
        const DeviceBlocks blocks{nc, mf};
        const auto boff = blocks.offsets();
        const Index dev_offset = r.offset[0];
        const Index s_total = r.offset[5] + r.dim[5] - dev_offset;

        jac.block(dev_offset, dev_offset, s_total, s_total) += a_pod_[d];
        // identity mass on the reduced carrier blocks
        for (Index i = 0; i < r.dim[1]; ++i)
            jac(r.offset[1] + i, r.offset[1] + i) -= alpha;
        for (Index i = 0; i < r.dim[2]; ++i)
            jac(r.offset[2] + i, r.offset[2] + i) += alpha;

        // nonlinearity derivative blocks sandwiched between the bases
        const Vector n = bases_[d][1].basis * z.segment(r.offset[1], r.dim[1]);
        const Vector p = bases_[d][2].basis * z.segment(r.offset[2], r.dim[2]);
        const Vector g = bases_[d][3].basis * z.segment(r.offset[3], r.dim[3]);
        std::vector<Triplet> trips;
        nonlinearity_jacobian(n, p, g, fem, dev, 0, 0, trips);
        SparseMatrix jf(blocks.total(), blocks.total());
        jf.setFromTriplets(trips.begin(), trips.end());

        const std::array<std::pair<int, int>, 8> pairs = {
            std::pair<int, int>{1, 1}, {1, 2}, {2, 1}, {2, 2},
            {4, 1}, {4, 3}, {5, 2}, {5, 3}};
        for (const auto& [er, vc] : pairs) {
            const std::size_t eb = static_cast<std::size_t>(er);
            const std::size_t vb = static_cast<std::size_t>(vc);
            const Index rows = er < 3 ? nc : mf;
            const Index cols = vc < 3 ? nc : mf;
            const Matrix block = Matrix(jf.block(boff[eb], boff[vb], rows, cols));
            jac.block(r.offset[eb], r.offset[vb], r.dim[eb], r.dim[vb]) +=
                bases_[d][eb].basis.transpose() * (block * bases_[d][vb].basis);
        }

        // boundary trace of the potential couples the reduced grad_psi block
        // to the terminal node potentials
        const Branch& br = netlist_.branches[static_cast<std::size_t>(sb[d])];
        const std::array<int, 2> nodes = {br.node_plus, br.node_minus};
        for (std::size_t c = 0; c < fem.traces.size(); ++c) {
            const int node = nodes[c];
            if (node < 0)
                continue;
            jac.col(node).segment(r.offset[3], r.dim[3]) +=
                bases_[d][3].basis.row(fem.traces[c].node).transpose() *
                (-fem.traces[c].normal / dev.thermal_voltage);
        }
    }
    return jac;
}

bool ReducedModel::factor(double t, const Vector& z, const Vector& zdot, double alpha)
{
    Matrix jac = jacobian(t, z, zdot, alpha);
    // Row equilibration: the iteration matrix mixes O(1e-5) projected Poisson
    // rows with O(alpha) mass rows; unscaled dense LU loses the small rows'
    // accuracy once alpha is large and the error test then chases noise.
    row_scale_.resize(jac.rows());
    for (Index i = 0; i < jac.rows(); ++i) {
        const double s = jac.row(i).cwiseAbs().maxCoeff();
        row_scale_[i] = s > 0.0 ? 1.0 / s : 1.0;
        jac.row(i) *= row_scale_[i];
    }
    lu_.compute(jac);
    factored_ = true;
    // PartialPivLU has no rank signal; non-finite solves are caught downstream
    return true;
}

void ReducedModel::solve_factored(Vector& rhs) const
{
    if (!factored_)
        throw SolverError("reduced model: solve before factorization");
    rhs = lu_.solve(Vector(row_scale_.cwiseProduct(rhs)));
}

Vector ReducedModel::equilibrium_guess()
{
    return project_full_state(equilibrium_full_);
}

Vector ReducedModel::residual_row_scales(double t, const Vector& z, const Vector& zdot)
{
    const Matrix jac = jacobian(t, z, zdot, 0.0);
    Vector scales(layout_.total);
    for (Index i = 0; i < layout_.total; ++i)
        scales[i] = std::max(jac.row(i).cwiseAbs().maxCoeff(), 1e-20);
    return scales;
}

ReducedModel build_reduced_model(FullModel& full, std::vector<DeviceBases> bases,
                                 const Vector* initial_reference)
{
    ReducedModel rom(full, std::move(bases));
    rom.set_equilibrium_reference(initial_reference ? *initial_reference
                                                    : full.equilibrium_guess());
    return rom;
}

Trajectory lift_trajectory(const ReducedModel& rom, const Trajectory& reduced)
{
    Trajectory full;
    full.times = reduced.times;
    full.parameter_hz = reduced.parameter_hz;
    full.rtol = reduced.rtol;
    full.stats = reduced.stats;
    full.states.reserve(reduced.states.size());
    full.derivatives.reserve(reduced.derivatives.size());
    for (const Vector& z : reduced.states)
        full.states.push_back(rom.lift_state(z));
    for (const Vector& zdot : reduced.derivatives)
        full.derivatives.push_back(rom.lift_state(zdot));
    return full;
}

} // namespace ddmor
