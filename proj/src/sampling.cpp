#include "ddmor/sampling.hpp"

#include "ddmor/integrator.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

namespace ddmor {

namespace {

/// Trapezoidal time integral of per-instant squared space norms.
double time_l2(const std::vector<double>& times, const std::vector<double>& squared)
{
    double acc = 0.0;
    for (std::size_t k = 1; k < times.size(); ++k)
        acc += 0.5 * (squared[k] + squared[k - 1]) * (times[k] - times[k - 1]);
    return std::sqrt(std::max(acc, 0.0));
}

double cell_norm_sq(const Vector& y, const FemOperators& fem)
{
    return y.dot(fem.mass_cell.cwiseProduct(y));
}

double hdiv_norm_sq(const Vector& y, const FemOperators& fem)
{
    const Vector div = fem.div * y;
    return y.dot(fem.mass_flux * y) + div.dot(fem.mass_cell.cwiseInverse().cwiseProduct(div));
}

} // namespace

double ComponentNorms::aggregate() const
{
    double acc = e * e + j_v * j_v + j_l * j_l;
    for (const auto& dev : device)
        for (double v : dev)
            acc += v * v;
    return std::sqrt(acc);
}

ComponentNorms trajectory_norms(const Trajectory& traj, const FullModel& model)
{
    if (traj.empty())
        throw ConfigError("trajectory_norms: empty trajectory");
    const StateLayout& layout = model.layout();
    ComponentNorms norms;
    norms.device.resize(layout.device.size());

    double e_sq = 0, jv_sq = 0, jl_sq = 0;
    std::vector<std::array<std::vector<double>, 6>> series(layout.device.size());
    for (auto& dev : series)
        for (auto& s : dev)
            s.resize(traj.size());

    for (std::size_t k = 0; k < traj.size(); ++k) {
        const Vector& z = traj.states[k];
        e_sq += z.head(layout.nodes).squaredNorm();
        jv_sq += z.segment(layout.jv_offset(), layout.vsrc).squaredNorm();
        jl_sq += z.segment(layout.jl_offset(), layout.inductors).squaredNorm();
        for (std::size_t d = 0; d < layout.device.size(); ++d) {
            const auto& r = layout.device[d];
            const FemOperators& fem = model.fem(d);
            series[d][0][k] = cell_norm_sq(z.segment(r.psi, r.cells), fem);
            series[d][1][k] = cell_norm_sq(z.segment(r.n, r.cells), fem);
            series[d][2][k] = cell_norm_sq(z.segment(r.p, r.cells), fem);
            series[d][3][k] = hdiv_norm_sq(z.segment(r.grad_psi, r.flux), fem);
            series[d][4][k] = hdiv_norm_sq(z.segment(r.j_n, r.flux), fem);
            series[d][5][k] = hdiv_norm_sq(z.segment(r.j_p, r.flux), fem);
        }
    }
    norms.e = std::sqrt(e_sq);
    norms.j_v = std::sqrt(jv_sq);
    norms.j_l = std::sqrt(jl_sq);
    for (std::size_t d = 0; d < layout.device.size(); ++d)
        for (std::size_t v = 0; v < 6; ++v)
            norms.device[d][v] = time_l2(traj.times, series[d][v]);
    return norms;
}

RelativeError relative_error(const Trajectory& full, const Trajectory& reduced_lifted,
                             const FullModel& model)
{
    if (full.empty() || reduced_lifted.empty())
        throw ConfigError("relative_error: empty trajectory");
    const double t_end = full.times.back();
    if (std::abs(reduced_lifted.times.back() - t_end) > 1e-12 * t_end)
        throw ConfigError("relative_error: horizon mismatch");

    Trajectory diff;
    diff.times = full.times;
    diff.states.reserve(full.size());
    for (std::size_t k = 0; k < full.size(); ++k)
        diff.states.push_back(full.states[k] -
                              reduced_lifted.interpolate_state(full.times[k]));

    RelativeError rel;
    rel.absolute = trajectory_norms(diff, model);
    rel.reference = trajectory_norms(full, model);

    const std::size_t devices = rel.reference.device.size();
    rel.device.resize(devices);
    rel.flagged.resize(devices);
    double acc = 0.0;

    rel.network = {rel.absolute.e, rel.absolute.j_v, rel.absolute.j_l};
    rel.network_flagged = {!(rel.reference.e > 0.0), !(rel.reference.j_v > 0.0),
                           !(rel.reference.j_l > 0.0)};
    const std::array<double, 3> refs = {rel.reference.e, rel.reference.j_v, rel.reference.j_l};
    const std::array<bool, 3> present = {model.layout().nodes > 0, model.layout().vsrc > 0,
                                         model.layout().inductors > 0};
    for (std::size_t i = 0; i < 3; ++i) {
        if (!present[i]) {
            rel.network[i] = 0.0;
            continue;
        }
        if (!rel.network_flagged[i]) {
            rel.network[i] /= refs[i];
            acc += rel.network[i] * rel.network[i];
        }
    }

    for (std::size_t d = 0; d < devices; ++d)
        for (std::size_t v = 0; v < 6; ++v) {
            const double ref = rel.reference.device[d][v];
            const double abs = rel.absolute.device[d][v];
            rel.flagged[d][v] = !(ref > 0.0);
            rel.device[d][v] = rel.flagged[d][v] ? abs : abs / ref;
            if (!rel.flagged[d][v])
                acc += rel.device[d][v] * rel.device[d][v];
        }
    rel.aggregate = std::sqrt(acc);
    return rel;
}

ResidualNormContext::ResidualNormContext(const FullModel& model)
{
    for (std::size_t d = 0; d < model.device_count(); ++d) {
        const FemOperators& fem = model.fem(d);
        inv_mass_cell_.push_back(fem.mass_cell.cwiseInverse());
        auto llt = std::make_shared<Eigen::SimplicialLLT<SparseMatrix>>();
        llt->compute(fem.hdiv_gram());
        if (llt->info() != Eigen::Success)
            throw SolverError("unreduced_residual: H(div) Gram factorization failed");
        hdiv_llt_.push_back(std::move(llt));
    }
}

std::vector<std::array<double, 6>> ResidualNormContext::evaluate(
    const Trajectory& reduced_lifted, const FullModel& model) const
{
    if (reduced_lifted.empty())
        throw ConfigError("unreduced_residual: empty trajectory");
    if (reduced_lifted.derivatives.size() != reduced_lifted.states.size())
        throw ConfigError("unreduced_residual: missing derivatives");

    const StateLayout& layout = model.layout();
    const std::size_t devices = layout.device.size();
    std::vector<std::array<std::vector<double>, 6>> series(devices);
    for (auto& dev : series)
        for (auto& s : dev)
            s.resize(reduced_lifted.size());

    Vector res(layout.total);
    for (std::size_t k = 0; k < reduced_lifted.size(); ++k) {
        res.setZero();
        for (std::size_t d = 0; d < devices; ++d)
            model.device_residual(d, reduced_lifted.states[k], reduced_lifted.derivatives[k],
                                  res);
        for (std::size_t d = 0; d < devices; ++d) {
            const auto& r = layout.device[d];
            auto dual_cell = [&](Index off) {
                const Vector seg = res.segment(off, r.cells);
                return seg.dot(inv_mass_cell_[d].cwiseProduct(seg));
            };
            auto dual_flux = [&](Index off) {
                const Vector seg = res.segment(off, r.flux);
                return seg.dot(hdiv_llt_[d]->solve(seg));
            };
            series[d][0][k] = dual_cell(r.psi);
            series[d][1][k] = dual_cell(r.n);
            series[d][2][k] = dual_cell(r.p);
            series[d][3][k] = dual_flux(r.grad_psi);
            series[d][4][k] = dual_flux(r.j_n);
            series[d][5][k] = dual_flux(r.j_p);
        }
    }

    std::vector<std::array<double, 6>> norms(devices);
    for (std::size_t d = 0; d < devices; ++d)
        for (std::size_t v = 0; v < 6; ++v)
            norms[d][v] = time_l2(reduced_lifted.times, series[d][v]);
    return norms;
}

std::vector<std::array<double, 6>> unreduced_residual(const Trajectory& reduced_lifted,
                                                      const FullModel& model)
{
    return ResidualNormContext(model).evaluate(reduced_lifted, model);
}

void WeightTable::insert(double omega, std::vector<std::array<double, 6>> weights)
{
    const auto it = std::lower_bound(omegas_.begin(), omegas_.end(), omega);
    const auto pos = it - omegas_.begin();
    omegas_.insert(it, omega);
    weights_.insert(weights_.begin() + pos, std::move(weights));
}

std::vector<std::array<double, 6>> WeightTable::at(double omega) const
{
    if (omegas_.empty())
        throw ConfigError("weight table: empty");
    if (omega <= omegas_.front())
        return weights_.front();
    if (omega >= omegas_.back())
        return weights_.back();
    const auto hi = std::upper_bound(omegas_.begin(), omegas_.end(), omega) - omegas_.begin();
    const auto lo = hi - 1;
    const double w = (omega - omegas_[lo]) / (omegas_[hi] - omegas_[lo]);
    std::vector<std::array<double, 6>> out = weights_[static_cast<std::size_t>(lo)];
    for (std::size_t d = 0; d < out.size(); ++d)
        for (std::size_t v = 0; v < 6; ++v)
            out[d][v] = (1.0 - w) * weights_[static_cast<std::size_t>(lo)][d][v] +
                        w * weights_[static_cast<std::size_t>(hi)][d][v];
    return out;
}

std::vector<std::array<double, 6>> calibrate_weights(
    const RelativeError& error, const std::vector<std::array<double, 6>>& residual_norms)
{
    std::vector<std::array<double, 6>> weights(residual_norms.size());
    for (std::size_t d = 0; d < residual_norms.size(); ++d)
        for (std::size_t v = 0; v < 6; ++v) {
            const double res = residual_norms[d][v];
            if (!(res > 0.0)) {
                weights[d][v] = 1.0;
                continue;
            }
            weights[d][v] =
                std::max(error.device[d][v] / res, std::numeric_limits<double>::min());
        }
    return weights;
}

double subspace_distance(const Matrix& a, const Matrix& b)
{
    if (a.rows() != b.rows())
        throw ConfigError("subspace_distance: ambient dimensions differ");
    if (a.cols() < 1 || b.cols() < 1)
        throw ConfigError("subspace_distance: empty basis");

    auto orthonormal = [](const Matrix& m) {
        Eigen::HouseholderQR<Matrix> qr(m);
        return Matrix(Matrix(qr.householderQ()).leftCols(m.cols()));
    };
    const Matrix q1 = orthonormal(a);
    const Matrix q2 = orthonormal(b);
    const Matrix s = q1.transpose() * q2;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s * s.transpose());
    const double lambda = std::clamp(eig.eigenvalues().minCoeff(), 0.0, 1.0);
    return std::sqrt(std::max(0.0, 2.0 - 2.0 * std::sqrt(lambda)));
}

double subspace_distance(const PodBasis& a, const PodBasis& b)
{
    return subspace_distance(a.basis, b.basis);
}

std::vector<double> log_spaced(double lo, double hi, int count)
{
    if (!(lo > 0) || !(hi > lo) || count < 2)
        throw ConfigError("log_spaced: need 0 < lo < hi and count >= 2");
    std::vector<double> pts(static_cast<std::size_t>(count));
    const double llo = std::log10(lo), lhi = std::log10(hi);
    for (int i = 0; i < count; ++i)
        pts[static_cast<std::size_t>(i)] = std::pow(10.0, llo + (lhi - llo) * i / (count - 1));
    return pts;
}

Trajectory simulate_full(FullModel& model, double omega, double periods, double rtol,
                         Vector* initial_state_out)
{
    model.set_frequency(omega);
    const InitResult init = consistent_initialize(model, 0.0);
    if (initial_state_out)
        *initial_state_out = init.z;
    IntegratorOptions opts;
    opts.rtol = rtol;
    opts.t_end = periods / omega;
    Trajectory traj = integrate(model, init.z, init.zdot, opts);
    traj.parameter_hz = omega;
    return traj;
}

Trajectory simulate_reduced(ReducedModel& rom, double omega, double periods, double rtol)
{
    rom.set_frequency(omega);
    const InitResult init = consistent_initialize(rom, 0.0);
    IntegratorOptions opts;
    opts.rtol = rtol;
    opts.t_end = periods / omega;
    Trajectory traj = integrate(rom, init.z, init.zdot, opts);
    traj.parameter_hz = omega;
    return traj;
}

namespace {

int worker_count(int requested)
{
    int cap = requested > 0 ? requested : 1;
    if (const char* env = std::getenv("DDMOR_THREADS")) {
        const int limit = std::atoi(env);
        if (limit > 0)
            cap = std::min(cap, limit);
    }
    return std::max(1, cap);
}

} // namespace

SamplingState greedy_sample(const Netlist& netlist, const GreedyOptions& options)
{
    if (options.test_points.empty())
        throw ConfigError("greedy_sample: empty test grid");

    std::vector<double> test = options.test_points;
    std::sort(test.begin(), test.end());

    FullModelOptions fmo;
    fmo.mesh_elements = options.mesh_elements;
    fmo.rtol = options.rtol;
    FullModel full(netlist, fmo);
    const ResidualNormContext norm_ctx(full);

    SamplingState state;
    state.references.push_back(options.omega1);
    {
        Trajectory traj = simulate_full(full, options.omega1, options.periods, options.rtol,
                                        &state.initial_state);
        state.store.add_trajectory(full.layout(), traj);
        state.full_runs.emplace(options.omega1, std::move(traj));
    }

    double prev_max = std::numeric_limits<double>::infinity();
    for (int step = 1; step <= options.max_iterations; ++step) {
        state.bases = merge_bases(state.store, full, options.strategy, options.delta_target,
                                  step > 1 ? &state.bases : nullptr);
        ReducedModel rom = build_reduced_model(full, state.bases, &state.initial_state);

        // weights calibrated at the references
        WeightTable table;
        state.calibration.clear();
        for (const double omega : state.references) {
            ReducedModel rom_ref = rom;
            const Trajectory reduced =
                simulate_reduced(rom_ref, omega, options.periods, options.rtol);
            const Trajectory lifted = lift_trajectory(rom_ref, reduced);
            const RelativeError err = relative_error(state.full_runs.at(omega), lifted, full);
            const auto res = norm_ctx.evaluate(lifted, full);
            auto weights = calibrate_weights(err, res);
            CalibrationRecord rec;
            rec.relative_error = err.device;
            rec.residual_norms = res;
            rec.weights = weights;
            state.calibration.emplace(omega, std::move(rec));
            table.insert(omega, std::move(weights));
        }
        state.weights = table;

        // residual sweep over the test grid
        std::vector<SweepPoint> sweep(test.size());
        const int workers = worker_count(options.workers);
        auto run_point = [&](std::size_t i) {
            SweepPoint& pt = sweep[i];
            pt.omega = test[i];
            try {
                ReducedModel rom_local = rom;
                const Trajectory reduced =
                    simulate_reduced(rom_local, pt.omega, options.periods, options.rtol);
                const Trajectory lifted = lift_trajectory(rom_local, reduced);
                const auto res = norm_ctx.evaluate(lifted, full);
                const auto weights = table.at(pt.omega);
                pt.weighted.resize(res.size());
                double acc = 0.0;
                for (std::size_t d = 0; d < res.size(); ++d)
                    for (std::size_t v = 0; v < 6; ++v) {
                        pt.weighted[d][v] = weights[d][v] * res[d][v];
                        acc += pt.weighted[d][v] * pt.weighted[d][v];
                    }
                pt.aggregate = std::sqrt(acc);
            } catch (const SolverError&) {
                pt.failed = true;
                pt.aggregate = std::numeric_limits<double>::infinity();
            }
        };
        if (workers <= 1) {
            for (std::size_t i = 0; i < test.size(); ++i)
                run_point(i);
        } else {
            std::vector<std::thread> pool;
            std::atomic<std::size_t> next{0};
            for (int w = 0; w < workers; ++w)
                pool.emplace_back([&]() {
                    for (std::size_t i = next.fetch_add(1); i < test.size();
                         i = next.fetch_add(1))
                        run_point(i);
                });
            for (auto& th : pool)
                th.join();
        }

        IterationRecord record;
        record.step = step;
        record.references = state.references;
        record.sweep = sweep;
        record.max_weighted_residual = -1.0;
        for (const SweepPoint& pt : sweep)
            if (pt.aggregate > record.max_weighted_residual) {
                record.max_weighted_residual = pt.aggregate;
                record.argmax_omega = pt.omega;
            }

        if (options.track_true_error) {
            record.has_true_error = true;
            record.max_relative_error = -1.0;
            for (const double omega : test) {
                FullModel full_pt(netlist, fmo);
                const Trajectory ft =
                    simulate_full(full_pt, omega, options.periods, options.rtol);
                try {
                    ReducedModel rom_local = rom;
                    const Trajectory reduced =
                        simulate_reduced(rom_local, omega, options.periods, options.rtol);
                    const RelativeError err =
                        relative_error(ft, lift_trajectory(rom_local, reduced), full);
                    if (err.aggregate > record.max_relative_error) {
                        record.max_relative_error = err.aggregate;
                        record.argmax_error_omega = omega;
                    }
                } catch (const SolverError&) {
                    record.max_relative_error = std::numeric_limits<double>::infinity();
                    record.argmax_error_omega = omega;
                }
            }
        }
        state.history.push_back(record);

        // termination per the sampling algorithm
        if (options.tol > 0.0 && record.max_weighted_residual < options.tol) {
            state.termination = "tolerance reached";
            return state;
        }
        if (step >= 2 && record.max_weighted_residual >= prev_max) {
            state.termination = "no progress in weighted residual";
            return state;
        }
        if (std::find(state.references.begin(), state.references.end(),
                      record.argmax_omega) != state.references.end()) {
            state.termination = "argmax already sampled";
            return state;
        }
        if (step == options.max_iterations)
            break;
        prev_max = record.max_weighted_residual;

        const double next_omega = record.argmax_omega;
        state.references.push_back(next_omega);
        Trajectory traj = simulate_full(full, next_omega, options.periods, options.rtol);
        state.store.add_trajectory(full.layout(), traj);
        state.full_runs.emplace(next_omega, std::move(traj));
    }
    state.termination = "iteration budget exhausted";
    return state;
}

} // namespace ddmor
