#pragma once

#include "ddmor/dae.hpp"
#include "ddmor/mesh_fem.hpp"
#include "ddmor/semiconductor.hpp"
#include "ddmor/types.hpp"

#include <Eigen/SparseLU>

#include <memory>
#include <string>
#include <vector>

namespace ddmor {

/// Time-dependent source description.
struct SourceSpec {
    enum class Waveform { Sine, Dc };
    Waveform waveform = Waveform::Dc;
    double amplitude = 0; ///< V or A
    double frequency = 0; ///< Hz, sine only
    double offset = 0;    ///< V or A, sine only
};

/// amplitude*sin(2*pi*f*t) + offset for sine sources, amplitude for dc.
double source_eval(double t, const SourceSpec& source);

enum class BranchType { Resistor, Capacitor, Inductor, VoltageSource, CurrentSource, Semiconductor };

/// One two-terminal network branch. Node index -1 is ground. The branch
/// leaves `node_plus` and enters `node_minus`.
struct Branch {
    BranchType type = BranchType::Resistor;
    std::string name;
    int node_plus = -1;
    int node_minus = -1;
    double value = 0;    ///< Ohm / Farad / Henry for R, C, L
    SourceSpec source;   ///< V and I sources
    int device = -1;     ///< index into Netlist::devices for semiconductor branches
};

/// MNA network description: nodes, typed branches and semiconductor devices.
///
/// Semiconductor branches map contacts to terminal nodes as: contact 0
/// (outward normal -1, x=0) connects to node_plus, contact 1 (normal +1,
/// x=L) to node_minus. Positive branch current flows from node_plus through
/// the device into node_minus.
struct Netlist {
    std::vector<std::string> node_names; ///< non-ground nodes
    std::vector<Branch> branches;
    std::vector<PhysicalDevice> devices;
    std::vector<std::string> device_names;

    int node_count() const { return static_cast<int>(node_names.size()); }
    std::vector<Index> branches_of(BranchType type) const;

    /// Dense incidence matrix of one branch type, node_count x #branches,
    /// +1 where the branch leaves the node, -1 where it enters.
    Matrix incidence(BranchType type) const;

    /// Structural validation: node indices in range, positive R/C/L values,
    /// device references resolvable, unique branch names.
    void validate() const;

    /// Set the frequency of every sinusoidal source (the model's parameter).
    void set_frequency(double hz);
};

/// Index ranges of the partitioned unknown vector
/// z = (e, j_V, j_L, j_S, per-device (psi, n, p, grad_psi, j_n, j_p)).
struct StateLayout {
    Index nodes = 0;
    Index vsrc = 0;
    Index inductors = 0;
    Index sbranches = 0;
    struct DeviceRange {
        Index psi = 0, n = 0, p = 0, grad_psi = 0, j_n = 0, j_p = 0;
        Index cells = 0, flux = 0;
    };
    std::vector<DeviceRange> device;
    Index total = 0;

    Index e_offset() const { return 0; }
    Index jv_offset() const { return nodes; }
    Index jl_offset() const { return nodes + vsrc; }
    Index js_offset() const { return nodes + vsrc + inductors; }
};

struct FullModelOptions {
    Index mesh_elements = 200;
    double rtol = 1e-6; ///< kept with the model so tolerance vectors match
};

/// The coupled network/drift-diffusion DAE (full model).
class FullModel : public DaeModel {
public:
    FullModel(Netlist netlist, const FullModelOptions& options = {});

    Index size() const override { return layout_.total; }
    void residual(double t, const Vector& z, const Vector& zdot, Vector& out) const override;
    bool factor(double t, const Vector& z, const Vector& zdot, double alpha) override;
    void solve_factored(Vector& rhs) const override;
    const Vector& absolute_tolerances() const override { return atol_; }
    void set_source_scale(double s) override { source_scale_ = s; }
    double source_scale() const override { return source_scale_; }
    Vector equilibrium_guess() override;
    Vector residual_row_scales(double t, const Vector& z, const Vector& zdot) override;

    /// Iteration matrix as a sparse matrix (finite-difference checks, tests).
    SparseMatrix jacobian(double t, const Vector& z, const Vector& zdot, double alpha) const;

    const StateLayout& layout() const { return layout_; }
    const Netlist& netlist() const { return netlist_; }
    std::size_t device_count() const { return fems_.size(); }
    const FemOperators& fem(std::size_t d) const { return *fems_[d]; }
    std::shared_ptr<const FemOperators> fem_ptr(std::size_t d) const { return fems_[d]; }
    const ScaledDevice& device(std::size_t d) const { return devices_[d]; }
    const Vector& doping(std::size_t d) const { return dopings_[d]; }

    /// Applied contact potentials (V) of device d given node potentials e.
    std::vector<double> applied_potentials(std::size_t d, const Vector& e) const;

    void set_frequency(double hz) { netlist_.set_frequency(hz); }

    /// Device block residual (mass term + A_fem y + F(y) - b(e)) written into
    /// `out` at the device's offsets; shared with the sampling residual.
    void device_residual(std::size_t d, const Vector& z, const Vector& zdot, Vector& out) const;

private:
    void assemble_triplets(double t, const Vector& z, const Vector& zdot, double alpha,
                           std::vector<Triplet>& out) const;
    Vector device_equilibrium(std::size_t d) const;

    Netlist netlist_;
    StateLayout layout_;
    std::vector<std::shared_ptr<const FemOperators>> fems_;
    std::vector<ScaledDevice> devices_;
    std::vector<Vector> dopings_;
    Vector atol_;
    double source_scale_ = 1.0;

    Eigen::SparseLU<SparseMatrix> lu_;
    SparseMatrix jac_;
    bool pattern_analyzed_ = false;
};

/// Default absolute tolerances per partition kind.
struct DefaultTolerances {
    static constexpr double node_potential = 1e-9;      ///< V
    static constexpr double branch_current = 1e-12;     ///< A
    static constexpr double concentration = 1e-10;      ///< scaled
    static constexpr double flux_current = 1e-9;        ///< scaled
};

} // namespace ddmor
