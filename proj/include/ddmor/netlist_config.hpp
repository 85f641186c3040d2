#pragma once

#include "ddmor/network.hpp"
#include "ddmor/pod.hpp"
#include "ddmor/types.hpp"

#include <string>

namespace ddmor {

struct SimulationSettings {
    Index mesh_elements = 200;
    double rtol = 1e-6;
    double periods = 3.0;
};

struct CampaignSettings {
    double pspace_min = 1e8;  ///< Hz
    double pspace_max = 1e12; ///< Hz
    int test_points = 25;
    double delta_target = 1e-7;
    double tol = 0.0; ///< residual target; 0 relies on the no-progress rule
    double omega1 = 1e10;
    int max_iterations = 8;
    MergeStrategy merge = MergeStrategy::ResvdAll;
};

/// Parsed configuration file: netlist plus solver and campaign settings.
struct Config {
    std::string name;
    Netlist netlist;
    SimulationSettings simulation;
    CampaignSettings campaign;

    void validate() const;
};

Config parse_config_text(const std::string& text);
Config load_config(const std::string& path);

} // namespace ddmor
