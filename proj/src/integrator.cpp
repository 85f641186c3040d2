#include "ddmor/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace ddmor {

double wrms_norm(const Vector& v, const Vector& weights)
{
    const Index n = v.size();
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) {
        const double r = v[i] / weights[i];
        acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(n));
}

Vector Trajectory::interpolate_state(double t) const
{
    if (times.empty())
        throw ConfigError("trajectory: empty");
    if (t <= times.front())
        return states.front();
    if (t >= times.back())
        return states.back();
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t hi = static_cast<std::size_t>(it - times.begin());
    const std::size_t lo = hi - 1;
    const double w = (t - times[lo]) / (times[hi] - times[lo]);
    return (1.0 - w) * states[lo] + w * states[hi];
}

namespace {

/// Damped Newton for the stationary system f(t0, z, 0) = 0. The line search
/// works on the row-scaled residual norm; convergence is tested on the raw
/// infinity norm the initialization contract promises.
int stationary_newton(DaeModel& model, double t0, Vector& z, const InitOptions& options)
{
    const Index n = model.size();
    Vector zero = Vector::Zero(n);
    Vector f(n), z_try(n), f_try(n);
    const Vector scales = model.residual_row_scales(t0, z, zero);
    auto merit = [&](const Vector& r) { return (r.cwiseQuotient(scales)).lpNorm<Eigen::Infinity>(); };

    model.residual(t0, z, zero, f);
    double fnorm = f.lpNorm<Eigen::Infinity>();
    double fmerit = merit(f);

    int iterations = 0;
    int stalls = 0;
    while (fnorm > options.tolerance) {
        if (iterations++ >= options.max_newton)
            throw SolverError("consistent_initialize: Newton exhausted, residual " +
                              std::to_string(fnorm));
        if (!model.factor(t0, z, zero, 0.0))
            throw SolverError("consistent_initialize: singular stationary Jacobian");
        Vector step = f;
        model.solve_factored(step);
        if (!step.allFinite())
            throw SolverError("consistent_initialize: non-finite Newton step");

        double damping = 1.0;
        bool moved = false;
        for (int halving = 0; halving <= options.max_halvings; ++halving) {
            z_try = z - damping * step;
            bool finite = true;
            try {
                model.residual(t0, z_try, zero, f_try);
            } catch (const SolverError&) {
                finite = false;
            }
            if (finite && merit(f_try) < fmerit) {
                z = z_try;
                f = f_try;
                moved = true;
                break;
            }
            damping *= 0.5;
        }
        if (moved) {
            const double new_merit = merit(f);
            if (new_merit > fmerit * (1.0 - 1e-4))
                ++stalls;
            else
                stalls = 0;
            fnorm = f.lpNorm<Eigen::Infinity>();
            fmerit = new_merit;
        } else {
            ++stalls;
        }
        if (stalls >= 3)
            throw SolverError("consistent_initialize: Newton stalled, residual " +
                              std::to_string(fnorm));
    }
    return iterations;
}

/// Delegating model that pins the source time, so pseudo-transient
/// relaxation runs in artificial time with frozen drive.
class FrozenTimeModel final : public DaeModel {
public:
    FrozenTimeModel(DaeModel& inner, double frozen_time) : inner_(inner), time_(frozen_time) {}

    Index size() const override { return inner_.size(); }
    void residual(double, const Vector& z, const Vector& zdot, Vector& out) const override
    {
        inner_.residual(time_, z, zdot, out);
    }
    bool factor(double, const Vector& z, const Vector& zdot, double alpha) override
    {
        return inner_.factor(time_, z, zdot, alpha);
    }
    void solve_factored(Vector& rhs) const override { inner_.solve_factored(rhs); }
    const Vector& absolute_tolerances() const override { return inner_.absolute_tolerances(); }
    void set_source_scale(double s) override { inner_.set_source_scale(s); }
    double source_scale() const override { return inner_.source_scale(); }
    Vector equilibrium_guess() override { return inner_.equilibrium_guess(); }
    Vector residual_row_scales(double t, const Vector& z, const Vector& zdot) override
    {
        (void)t;
        return inner_.residual_row_scales(time_, z, zdot);
    }

private:
    DaeModel& inner_;
    double time_;
};

/// Relax toward the stationary state by integrating the frozen-drive DAE
/// over an artificial horizon; differential variables decay to steady state
/// while algebraic ones follow consistently.
void pseudo_transient_relax(DaeModel& model, double t0, Vector& z, double horizon)
{
    FrozenTimeModel frozen(model, t0);
    IntegratorOptions opts;
    opts.rtol = 1e-3;
    opts.t_end = horizon;
    opts.max_steps = 20000;
    opts.keep_partial_on_failure = true;
    const Trajectory relax = integrate(frozen, z, Vector::Zero(model.size()), opts);
    if (!relax.states.empty())
        z = relax.states.back();
}

int robust_stationary_solve(DaeModel& model, double t0, Vector& z, const InitOptions& options)
{
    const Vector saved = z;
    try {
        return stationary_newton(model, t0, z, options);
    } catch (const SolverError&) {
        z = saved;
        pseudo_transient_relax(model, t0, z, options.relax_horizon);
        return stationary_newton(model, t0, z, options);
    }
}

} // namespace

InitResult consistent_initialize(DaeModel& model, double t0, const InitOptions& options)
{
    const double saved_scale = model.source_scale();
    InitResult result;
    try {
        model.set_source_scale(0.0);
        result.z = model.equilibrium_guess();
        result.newton_iterations += robust_stationary_solve(model, t0, result.z, options);

        // Homotopy in the source strength up to full drive.
        double scale = 0.0;
        double ds = 1.0;
        while (scale < 1.0) {
            const double target = std::min(1.0, scale + ds);
            Vector saved = result.z;
            try {
                model.set_source_scale(target);
                result.newton_iterations += robust_stationary_solve(model, t0, result.z, options);
                scale = target;
                ds = std::min(1.0, 2.0 * ds);
            } catch (const SolverError&) {
                result.z = saved;
                ds *= 0.5;
                if (ds < 1e-3)
                    throw SolverError("consistent_initialize: source homotopy stalled at scale " +
                                      std::to_string(scale));
            }
        }
    } catch (...) {
        model.set_source_scale(saved_scale);
        throw;
    }
    model.set_source_scale(saved_scale);

    result.zdot = Vector::Zero(model.size());
    Vector f(model.size());
    model.residual(t0, result.z, result.zdot, f);
    result.residual_norm = f.lpNorm<Eigen::Infinity>();
    return result;
}

namespace {

struct NewtonOutcome {
    bool converged = false;
    int iterations = 0;
};

} // namespace

namespace {

void integrate_impl(DaeModel& model, const Vector& z0, const Vector& zdot0,
                    const IntegratorOptions& options, Trajectory& traj);

} // namespace

Trajectory integrate(DaeModel& model, const Vector& z0, const Vector& zdot0,
                     const IntegratorOptions& options)
{
    Trajectory traj;
    try {
        integrate_impl(model, z0, zdot0, options, traj);
    } catch (const SolverError&) {
        if (!options.keep_partial_on_failure)
            throw;
    }
    return traj;
}

namespace {

void integrate_impl(DaeModel& model, const Vector& z0, const Vector& zdot0,
                    const IntegratorOptions& options, Trajectory& traj)
{
    const Index n = model.size();
    if (z0.size() != n || zdot0.size() != n)
        throw ConfigError("integrate: initial state dimension mismatch");
    if (!(options.t_end > 0))
        throw ConfigError("integrate: t_end must be positive");

    traj.rtol = options.rtol;
    traj.times.push_back(0.0);
    traj.states.push_back(z0);
    traj.derivatives.push_back(zdot0);

    const double h_max = options.h_max > 0 ? options.h_max : options.t_end / 64.0;
    double h = options.fixed_step ? options.fixed_h
                                  : (options.h_init > 0 ? options.h_init
                                                        : std::max(options.t_end * 1e-6,
                                                                   8.0 * options.h_min));
    h = std::min(h, h_max);
    if (options.fixed_step && !(options.fixed_h > 0))
        throw ConfigError("integrate: fixed_step requires fixed_h > 0");

    // Most recent accepted points, newest first.
    std::vector<double> t_hist = {0.0};
    std::vector<Vector> z_hist = {z0};

    const Vector& atol = model.absolute_tolerances();
    Vector weights(n), f(n), z_new(n), zdot_new(n), rpart(n), predictor(n), est(n);

    double alpha_factored = 0.0;
    bool have_factor = false;
    int last_newton_iters = 0;
    int consecutive_rejects = 0;
    double t = 0.0;
    bool first_step = true;

    while (t < options.t_end * (1.0 - 1e-14)) {
        if (traj.stats.accepted + traj.stats.rejected > options.max_steps)
            throw SolverError("integrate: exceeded maximum number of steps");

        // Order 2 needs three accepted points for both the quadratic
        // predictor and the third-difference error estimate.
        int order = z_hist.size() >= 3 ? 2 : 1;
        if (options.fixed_step)
            order = std::min(order, options.fixed_order);
        if (consecutive_rejects >= 3)
            order = 1;

        // Hit the end point exactly, avoiding a tiny trailing step.
        if (options.fixed_step)
            h = std::min(options.fixed_h, options.t_end - t);
        else if (t + 1.05 * h >= options.t_end)
            h = options.t_end - t;
        else
            h = std::min(h, options.t_end - t);
        const double t_new = t + h;

        // Predictor and BDF coefficients at the current order.
        double alpha = 0.0;
        if (order >= 2) {
            const double h1 = t_hist[0] - t_hist[1];
            const double h2 = t_hist[1] - t_hist[2];
            alpha = (2.0 * h + h1) / (h * (h + h1));
            rpart = -((h + h1) / (h * h1)) * z_hist[0] + (h / (h1 * (h + h1))) * z_hist[1];
            const Vector d1 = (z_hist[0] - z_hist[1]) / h1;
            const Vector d2 = (z_hist[1] - z_hist[2]) / h2;
            predictor = z_hist[0] + h * d1 + (h * (h + h1) / (h1 + h2)) * (d1 - d2);
        } else {
            alpha = 1.0 / h;
            rpart = -z_hist[0] / h;
            if (z_hist.size() >= 2) {
                const double h1 = t_hist[0] - t_hist[1];
                predictor = z_hist[0] + (h / h1) * (z_hist[0] - z_hist[1]);
            } else {
                predictor = z_hist[0];
            }
        }

        for (Index i = 0; i < n; ++i)
            weights[i] = atol[i] + options.rtol * std::abs(z_hist[0][i]);

        // Modified Newton on f(t_new, z, alpha*z + rpart) = 0.
        NewtonOutcome outcome;
        bool refreshed_this_attempt = false;
        const bool reuse_ok = have_factor && last_newton_iters <= 3 &&
                              std::abs(alpha / alpha_factored - 1.0) < 0.25;
        bool fresh = !reuse_ok;
        while (true) {
            z_new = predictor;
            zdot_new = alpha * z_new + rpart;
            bool failed = false;
            double dnorm_prev = 0.0;
            if (fresh) {
                refreshed_this_attempt = true;
                bool ok = false;
                try {
                    ok = model.factor(t_new, z_new, zdot_new, alpha);
                } catch (const SolverError&) {
                    ok = false;
                }
                if (!ok) {
                    have_factor = false;
                    break;
                }
                ++traj.stats.factorizations;
                alpha_factored = alpha;
                have_factor = true;
            }
            for (int it = 0; !failed && it < options.max_newton; ++it) {
                try {
                    model.residual(t_new, z_new, zdot_new, f);
                } catch (const SolverError& e) {
                    if (std::getenv("DDMOR_TRACE3"))
                        fprintf(stderr, "  newton it=%d residual threw: %s\n", it, e.what());
                    failed = true;
                    break;
                }
                Vector delta = f;
                model.solve_factored(delta);
                if (!delta.allFinite()) {
                    if (std::getenv("DDMOR_TRACE3"))
                        fprintf(stderr, "  newton it=%d non-finite delta\n", it);
                    failed = true;
                    break;
                }
                z_new -= delta;
                zdot_new = alpha * z_new + rpart;
                ++traj.stats.newton_iterations;
                const double dnorm = wrms_norm(delta, weights);
                if (dnorm < 0.08) {
                    outcome.converged = true;
                    outcome.iterations = it + 1;
                    break;
                }
                if (std::getenv("DDMOR_TRACE3"))
                    fprintf(stderr, "  newton it=%d dnorm=%.3e\n", it, dnorm);
                if (it > 0) {
                    const double rate = dnorm / dnorm_prev;
                    if (rate < 0.9 && dnorm * rate / (1.0 - rate) < 0.08) {
                        outcome.converged = true;
                        outcome.iterations = it + 1;
                        break;
                    }
                    if (rate > 2.0)
                        break;
                }
                dnorm_prev = dnorm;
            }
            if (outcome.converged || refreshed_this_attempt)
                break;
            fresh = true; // retry once with a fresh iteration matrix
        }
        last_newton_iters = outcome.converged ? outcome.iterations : options.max_newton;

        if (!outcome.converged) {
            if (std::getenv("DDMOR_TRACE2"))
                fprintf(stderr, "newton-fail t=%.4e h=%.4e iters=%d\n", t, h, outcome.iterations);
            if (options.fixed_step)
                throw SolverError("integrate: Newton failed in fixed-step mode at t = " +
                                  std::to_string(t));
            ++traj.stats.rejected;
            ++consecutive_rejects;
            have_factor = false;
            h *= 0.25;
            if (h < options.h_min)
                {
                char buf[64];
                snprintf(buf, sizeof buf, "%.6e", t);
                throw SolverError(std::string("integrate: step size underflow (Newton) at t = ") + buf);
            }
            continue;
        }

        // Local error test; the first step and fixed-step runs are exempt.
        double err = 0.0;
        int est_order = order;
        if (!options.fixed_step && !first_step) {
            if (order == 1) {
                const double h1 = t_hist[0] - t_hist[1];
                est = (z_new - predictor) * (2.0 * h / (h + h1));
            } else {
                const double h1 = t_hist[0] - t_hist[1];
                const double h2 = t_hist[1] - t_hist[2];
                est = (z_new - predictor) *
                      (2.0 * h * (h + h1) / ((2.0 * h + h1) * (h + h1 + h2)));
            }
            err = wrms_norm(est, weights);
            if (std::getenv("DDMOR_TRACE") && traj.stats.accepted + traj.stats.rejected < 60) {
                Index worst; est.cwiseQuotient(weights).cwiseAbs().maxCoeff(&worst);
                fprintf(stderr, "t=%.3e h=%.3e ord=%d err=%.3e worst=%ld estw=%.3e z=%.3e\n",
                        t, h, order, err, long(worst), est[worst] / weights[worst], z_new[worst]);
            }
            if (err > 1.0) {
                ++traj.stats.rejected;
                ++consecutive_rejects;
                h *= std::clamp(0.8 * std::pow(err, -1.0 / (est_order + 1)), 0.1, 0.5);
                if (h < options.h_min) {
                    char buf[32];
                    snprintf(buf, sizeof buf, "%.6e", t);
                    throw SolverError(
                        std::string("integrate: step size underflow (error test) at t = ") + buf);
                }
                continue;
            }
        }

        // Accept.
        t = t_new;
        traj.times.push_back(t);
        traj.states.push_back(z_new);
        traj.derivatives.push_back(alpha * z_new + rpart);
        ++traj.stats.accepted;
        consecutive_rejects = 0;
        first_step = false;

        t_hist.insert(t_hist.begin(), t);
        z_hist.insert(z_hist.begin(), z_new);
        if (t_hist.size() > 3) {
            t_hist.pop_back();
            z_hist.pop_back();
        }

        if (!options.fixed_step) {
            const double growth =
                err > 0.0 ? 0.8 * std::pow(err, -1.0 / (est_order + 1)) : 2.0;
            h = std::min({h * std::clamp(growth, 0.2, 2.0), h_max});
        }
    }
}

} // namespace

} // namespace ddmor
