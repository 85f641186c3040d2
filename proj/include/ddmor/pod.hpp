#pragma once

#include "ddmor/dae.hpp"
#include "ddmor/network.hpp"
#include "ddmor/types.hpp"

#include <Eigen/LU>

#include <array>
#include <memory>
#include <vector>

namespace ddmor {

/// The six reduced device variables, in block order.
enum class DeviceVar { Psi = 0, N = 1, P = 2, GradPsi = 3, Jn = 4, Jp = 5 };
constexpr std::array<DeviceVar, 6> kDeviceVars = {DeviceVar::Psi,     DeviceVar::N,
                                                  DeviceVar::P,       DeviceVar::GradPsi,
                                                  DeviceVar::Jn,      DeviceVar::Jp};
const char* device_var_name(DeviceVar v);

enum class MassTag { Cell, Flux };
constexpr MassTag mass_tag_of(DeviceVar v)
{
    return (v == DeviceVar::Psi || v == DeviceVar::N || v == DeviceVar::P) ? MassTag::Cell
                                                                           : MassTag::Flux;
}

/// Relative energy of the truncated singular values,
/// sqrt(sum_{i>s} sigma_i^2 / sum_i sigma_i^2) over the numerical rank m.
double information_gap(const Vector& sigma, Index s);

/// Mass-orthonormal reduced basis of one device variable.
struct PodBasis {
    DeviceVar tag = DeviceVar::Psi;
    MassTag mass = MassTag::Cell;
    Matrix basis;           ///< n x s coefficient matrix, basis^T M basis = I
    Vector singular_values; ///< full list from the snapshot SVD
    Index dimension() const { return basis.cols(); }
};

/// Snapshot POD: mass-weighted SVD of the coefficient snapshot matrix,
/// truncated at the smallest dimension with information gap <= delta_target
/// (delta_target <= 0 keeps the full numerical rank).
PodBasis compute_pod(const Matrix& snapshots, const Vector& diag_mass, double delta_target,
                     DeviceVar tag);
PodBasis compute_pod(const Matrix& snapshots, const SparseMatrix& mass, double delta_target,
                     DeviceVar tag);

/// Extend a basis with mass-orthonormal complement columns to a square basis
/// (exact-projection studies).
PodBasis complete_basis(const PodBasis& basis, const FemOperators& fem);

using DeviceBases = std::array<PodBasis, 6>;

/// Per-variable snapshot matrix of one device from a full-model trajectory.
Matrix extract_snapshots(const Trajectory& traj, const StateLayout& layout, std::size_t device,
                         DeviceVar var);

/// Per-reference snapshot archive of every device variable, the raw material
/// of basis construction and enrichment.
class SnapshotStore {
public:
    void add_trajectory(const StateLayout& layout, const Trajectory& traj);
    std::size_t runs() const { return runs_; }
    std::size_t devices() const { return per_device_.size(); }
    /// Column concatenation of all stored snapshot matrices of one variable.
    Matrix concatenated(std::size_t device, DeviceVar var) const;
    /// Snapshot matrix of one stored run.
    const Matrix& run_matrix(std::size_t run, std::size_t device, DeviceVar var) const;

private:
    std::vector<std::array<std::vector<Matrix>, 6>> per_device_;
    std::size_t runs_ = 0;
};

enum class MergeStrategy { ResvdAll, PodOfBases };

/// Bases over everything in the store. ResvdAll decomposes the concatenated
/// snapshot ensemble; PodOfBases decomposes the column concatenation of the
/// previous bases with the newest run's bases.
std::vector<DeviceBases> merge_bases(const SnapshotStore& store, const FullModel& full,
                                     MergeStrategy strategy, double delta_target,
                                     const std::vector<DeviceBases>* previous = nullptr);

/// Index ranges of the reduced state (e, j_V, j_L, j_S, per-device gammas).
struct ReducedLayout {
    Index nodes = 0, vsrc = 0, inductors = 0, sbranches = 0;
    struct DeviceRange {
        std::array<Index, 6> offset{};
        std::array<Index, 6> dim{};
    };
    std::vector<DeviceRange> device;
    Index total = 0;

    Index jv_offset() const { return nodes; }
    Index jl_offset() const { return nodes + vsrc; }
    Index js_offset() const { return nodes + vsrc + inductors; }
};

/// Galerkin-reduced coupled model: network equations unchanged, device blocks
/// projected onto the POD bases. The projected system matrix and couplings
/// are precomputed; the nonlinear functional is lifted and projected online.
class ReducedModel : public DaeModel {
public:
    ReducedModel(const FullModel& full, std::vector<DeviceBases> bases);

    Index size() const override { return layout_.total; }
    void residual(double t, const Vector& z, const Vector& zdot, Vector& out) const override;
    bool factor(double t, const Vector& z, const Vector& zdot, double alpha) override;
    void solve_factored(Vector& rhs) const override;
    const Vector& absolute_tolerances() const override { return atol_; }
    void set_source_scale(double s) override { source_scale_ = s; }
    double source_scale() const override { return source_scale_; }
    Vector equilibrium_guess() override;
    Vector residual_row_scales(double t, const Vector& z, const Vector& zdot) override;

    Matrix jacobian(double t, const Vector& z, const Vector& zdot, double alpha) const;

    const ReducedLayout& layout() const { return layout_; }
    const std::vector<DeviceBases>& bases() const { return bases_; }
    const Matrix& projected_system(std::size_t device) const { return a_pod_[device]; }
    void set_frequency(double hz) { netlist_.set_frequency(hz); }
    const Netlist& netlist() const { return netlist_; }

    /// Lift a reduced state to full-model coefficients.
    Vector lift_state(const Vector& z) const;

    /// Mass-orthogonal projection of a full state onto the reduced space.
    Vector project_full_state(const Vector& z_full) const;

    /// Plain test-function projection U^T of full residual rows (network rows
    /// copied through); the reduced residual equals this applied to the full
    /// residual at the lifted state.
    Vector project_residual(const Vector& full_residual) const;

    /// Full-model state projected by equilibrium_guess().
    void set_equilibrium_reference(Vector z_full) { equilibrium_full_ = std::move(z_full); }

    Index device_count() const { return static_cast<Index>(bases_.size()); }

private:
    void device_residual(std::size_t d, double t, const Vector& z, const Vector& zdot,
                         Vector& out) const;

    Netlist netlist_;
    StateLayout full_layout_;
    ReducedLayout layout_;
    std::vector<DeviceBases> bases_;
    std::vector<std::shared_ptr<const FemOperators>> fems_;
    std::vector<ScaledDevice> devices_;
    std::vector<Vector> dopings_;
    std::vector<Matrix> a_pod_;                   ///< per device, block dense
    std::vector<std::array<Vector, 6>> coupling_; ///< projected C1, C2, C3 rows (index 4,5,3 used)
    Vector equilibrium_full_;                     ///< full-model equilibrium guess to project
    Vector atol_;
    double source_scale_ = 1.0;

    Eigen::PartialPivLU<Matrix> lu_;
    Vector row_scale_;
    bool factored_ = false;
};

/// Build the reduced model, validating basis shapes against the full model.
/// `initial_reference` seeds reduced initialization; pass the consistent
/// initial state of the reference run (a snapshot, hence in the basis span).
/// Without it the full model's equilibrium guess is projected instead.
ReducedModel build_reduced_model(FullModel& full, std::vector<DeviceBases> bases,
                                 const Vector* initial_reference = nullptr);

/// Lift a reduced trajectory to full-model coefficient trajectories.
Trajectory lift_trajectory(const ReducedModel& rom, const Trajectory& reduced);

} // namespace ddmor
