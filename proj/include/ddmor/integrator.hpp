#pragma once

#include "ddmor/dae.hpp"
#include "ddmor/types.hpp"

namespace ddmor {

struct InitOptions {
    double tolerance = 1e-10; ///< residual infinity-norm target
    int max_newton = 100;
    int max_halvings = 8;
    double relax_horizon = 1e-4; ///< pseudo-transient fallback horizon, s
};

struct InitResult {
    Vector z;
    Vector zdot;
    double residual_norm = 0;
    int newton_iterations = 0;
};

/// Consistent initial values at t0: stationary Newton solve with source
/// homotopy (scale 0 -> 1), semiconductors starting from thermal equilibrium.
/// The returned zdot satisfies f(t0, z, zdot) = 0 together with z.
InitResult consistent_initialize(DaeModel& model, double t0, const InitOptions& options = {});

struct IntegratorOptions {
    double rtol = 1e-6;
    double t_end = 1.0;
    double h_init = 0;    ///< 0: automatic
    double h_max = 0;     ///< 0: t_end / 64
    double h_min = 1e-18; ///< step underflow floor, s
    long max_steps = 2000000;
    int max_newton = 8;
    bool fixed_step = false; ///< disable step/order control (convergence studies)
    double fixed_h = 0;
    int fixed_order = 2;
    /// Return the accepted part of the trajectory instead of throwing when
    /// the run dies early (used by relaxation fallbacks).
    bool keep_partial_on_failure = false;
};

/// Variable-step, variable-order BDF(1-2) integration of an implicit DAE.
/// Local error control in the weighted rms norm with the model's absolute
/// tolerances; modified Newton with iteration-matrix reuse across steps.
Trajectory integrate(DaeModel& model, const Vector& z0, const Vector& zdot0,
                     const IntegratorOptions& options);

/// Weighted rms norm used for Newton and local error tests.
double wrms_norm(const Vector& v, const Vector& weights);

} // namespace ddmor
