#pragma once

#include "ddmor/types.hpp"

#include <vector>

namespace ddmor {

/// Implicit DAE f(t, z, zdot) = 0 with a built-in linear solver for the
/// iteration matrix J = df/dz + alpha * df/dzdot.
class DaeModel {
public:
    virtual ~DaeModel() = default;

    virtual Index size() const = 0;

    virtual void residual(double t, const Vector& z, const Vector& zdot, Vector& out) const = 0;

    /// Factor the iteration matrix at (t, z, zdot, alpha). Returns false on a
    /// singular factorization.
    virtual bool factor(double t, const Vector& z, const Vector& zdot, double alpha) = 0;

    /// Solve the factored system in place.
    virtual void solve_factored(Vector& rhs) const = 0;

    /// Per-variable absolute tolerances for the integrator's weighted norm.
    virtual const Vector& absolute_tolerances() const = 0;

    /// Scale all sources by s in [0,1]; used for homotopy during consistent
    /// initialization.
    virtual void set_source_scale(double s) = 0;
    virtual double source_scale() const = 0;

    /// Starting point for the stationary solve at zero source scale
    /// (semiconductors at thermal equilibrium, network at rest).
    virtual Vector equilibrium_guess() = 0;

    /// Natural magnitude of each residual row, used to scale Newton merit
    /// norms. Equation blocks of the coupled system differ by many orders.
    virtual Vector residual_row_scales(double t, const Vector& z, const Vector& zdot)
    {
        (void)t;
        (void)z;
        (void)zdot;
        return Vector::Ones(size());
    }
};

/// Step statistics of one integration run.
struct StepStats {
    long accepted = 0;
    long rejected = 0;
    long newton_iterations = 0;
    long factorizations = 0;
};

/// Time-stamped states and derivatives delivered by the DAE integrator.
struct Trajectory {
    std::vector<double> times;
    std::vector<Vector> states;
    std::vector<Vector> derivatives;
    double parameter_hz = 0; ///< frequency parameter the run belongs to
    double rtol = 0;
    StepStats stats;

    std::size_t size() const { return times.size(); }
    bool empty() const { return times.empty(); }

    /// Piecewise-linear interpolation of the state at time t (clamped to the
    /// stored range).
    Vector interpolate_state(double t) const;
};

} // namespace ddmor
