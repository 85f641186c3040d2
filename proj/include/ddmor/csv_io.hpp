#pragma once

#include "ddmor/network.hpp"
#include "ddmor/pod.hpp"
#include "ddmor/sampling.hpp"
#include "ddmor/types.hpp"

#include <string>

namespace ddmor {

/// Shortest decimal that round-trips the double exactly (17 significant
/// digits at most).
std::string format_double(double value);

/// Trajectory table: schema header, then one row per accepted instant with
/// columns t, e_*, j_v_*, j_l_*, j_s_*, and per-device field coefficients.
void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                          const FullModel& model);

/// Basis file: header carries the variable tag, mass space, shape and the
/// full singular value list; the coefficient matrix follows row-wise.
/// Write/read round-trips bit exactly.
void write_basis_csv(const std::string& path, const PodBasis& basis);
PodBasis read_basis_csv(const std::string& path);

/// Campaign summary: one row per greedy iteration.
void write_campaign_summary_csv(const std::string& path, const SamplingState& state);

/// Residual-vs-frequency table of one greedy iteration.
void write_campaign_sweep_csv(const std::string& path, const IterationRecord& record);

} // namespace ddmor
