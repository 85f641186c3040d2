#pragma once

#include "ddmor/network.hpp"
#include "ddmor/pod.hpp"
#include "ddmor/types.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ddmor {

/// Space-time norms of one trajectory, split by state component: network
/// parts in discrete time-series 2-norms, cell fields in L2(0,T; L2), flux
/// fields in L2(0,T; H(div)).
struct ComponentNorms {
    double e = 0;
    double j_v = 0;
    double j_l = 0;
    std::vector<std::array<double, 6>> device;

    double aggregate() const;
};

ComponentNorms trajectory_norms(const Trajectory& traj, const FullModel& model);

/// Per-component relative reduction error between a full trajectory and a
/// lifted reduced trajectory over the same horizon (the reduced run is
/// interpolated onto the full time grid).
struct RelativeError {
    ComponentNorms absolute;  ///< norms of the difference trajectory
    ComponentNorms reference; ///< norms of the full trajectory
    std::array<double, 3> network{};      ///< relative errors of e, j_V, j_L
    std::array<bool, 3> network_flagged{}; ///< true where the reference norm vanishes
    std::vector<std::array<double, 6>> device; ///< relative errors per device variable
    std::vector<std::array<bool, 6>> flagged;  ///< true where the reference norm vanishes
    double aggregate = 0;                      ///< Euclidean over defined relative errors
};

RelativeError relative_error(const Trajectory& full, const Trajectory& reduced_lifted,
                             const FullModel& model);

/// Dual-norm factorizations for measuring device residual blocks.
class ResidualNormContext {
public:
    explicit ResidualNormContext(const FullModel& model);
    /// Component norms of the unreduced device-block residual evaluated
    /// along a lifted reduced trajectory (network rows vanish by contract).
    std::vector<std::array<double, 6>> evaluate(const Trajectory& reduced_lifted,
                                                const FullModel& model) const;

private:
    std::vector<Vector> inv_mass_cell_;
    std::vector<std::shared_ptr<Eigen::SimplicialLLT<SparseMatrix>>> hdiv_llt_;
};

std::vector<std::array<double, 6>> unreduced_residual(const Trajectory& reduced_lifted,
                                                      const FullModel& model);

/// Calibrated residual weights: piecewise linear between sorted reference
/// frequencies, nearest-neighbour outside.
class WeightTable {
public:
    void insert(double omega, std::vector<std::array<double, 6>> weights);
    std::vector<std::array<double, 6>> at(double omega) const;
    bool empty() const { return omegas_.empty(); }
    const std::vector<double>& references() const { return omegas_; }

private:
    std::vector<double> omegas_; // sorted
    std::vector<std::vector<std::array<double, 6>>> weights_;
};

/// Weights making the weighted residual equal the relative error
/// component-wise at a reference; vanishing residual components get weight 1.
std::vector<std::array<double, 6>> calibrate_weights(
    const RelativeError& error, const std::vector<std::array<double, 6>>& residual_norms);

/// Distance between the spans of two bases: sqrt(2 - 2 sqrt(lambda_min(S S^T)))
/// with S the matrix of Euclidean inner products of orthonormalized columns.
double subspace_distance(const Matrix& a, const Matrix& b);
double subspace_distance(const PodBasis& a, const PodBasis& b);

/// One residual evaluation of the greedy sweep.
struct SweepPoint {
    double omega = 0;
    std::vector<std::array<double, 6>> weighted; ///< per device/component
    double aggregate = 0;
    bool failed = false;
};

struct IterationRecord {
    int step = 0;
    std::vector<double> references;
    double max_weighted_residual = 0;
    double argmax_omega = 0;
    std::vector<SweepPoint> sweep;
    bool has_true_error = false;
    double max_relative_error = 0;
    double argmax_error_omega = 0;
};

/// Calibration data of one reference parameter (weighted residual equals the
/// relative error there by construction).
struct CalibrationRecord {
    std::vector<std::array<double, 6>> relative_error;
    std::vector<std::array<double, 6>> residual_norms;
    std::vector<std::array<double, 6>> weights;
};

struct SamplingState {
    std::vector<double> references; ///< P_k in insertion order
    SnapshotStore store;
    std::vector<DeviceBases> bases;
    WeightTable weights;
    std::map<double, CalibrationRecord> calibration;
    std::vector<IterationRecord> history;
    std::map<double, Trajectory> full_runs;
    Vector initial_state; ///< consistent initial state shared by all runs
    std::string termination; ///< reason the loop stopped
};

struct GreedyOptions {
    double omega1 = 1e10;
    std::vector<double> test_points; ///< P_test, must be nonempty
    double tol = 0.0;                ///< residual target; <= 0 disables
    double delta_target = 1e-7;
    int max_iterations = 8;
    MergeStrategy strategy = MergeStrategy::ResvdAll;
    bool track_true_error = false; ///< also sweep full simulations for the error columns
    int workers = 1;
    double periods = 3.0;
    double rtol = 1e-6;
    Index mesh_elements = 320;
};

/// Log-spaced default test grid.
std::vector<double> log_spaced(double lo, double hi, int count);

/// Greedy residual-based sampling over the source-frequency parameter.
SamplingState greedy_sample(const Netlist& netlist, const GreedyOptions& options);

/// Simulate the full model at one frequency (shared by the CLI and the
/// sampling loop): consistent initialization plus BDF integration over
/// `periods` source periods.
Trajectory simulate_full(FullModel& model, double omega, double periods, double rtol,
                         Vector* initial_state_out = nullptr);

/// Simulate the reduced model at one frequency from its projected consistent
/// initial state.
Trajectory simulate_reduced(ReducedModel& rom, double omega, double periods, double rtol);

} // namespace ddmor
