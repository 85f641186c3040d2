#include "ddmor/netlist_config.hpp"

#include "json.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace ddmor {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what)
{
    throw ConfigError("config: " + where + ": " + what);
}

double number(const json& j, const std::string& where, const char* key)
{
    if (!j.contains(key))
        fail(where, std::string("missing '") + key + "'");
    if (!j[key].is_number())
        fail(where, std::string("'") + key + "' must be a number");
    return j[key].get<double>();
}

double number_or(const json& j, const char* key, double fallback)
{
    return j.contains(key) ? j[key].get<double>() : fallback;
}

std::string text(const json& j, const std::string& where, const char* key)
{
    if (!j.contains(key) || !j[key].is_string())
        fail(where, std::string("missing string '") + key + "'");
    return j[key].get<std::string>();
}

PhysicalDevice parse_device(const json& j, const std::string& where)
{
    PhysicalDevice dev;
    dev.length = number(j, where, "length_cm");
    dev.area = number(j, where, "area_cm2");
    dev.permittivity = number(j, where, "permittivity_f_cm");
    dev.thermal_voltage = number(j, where, "thermal_voltage_v");
    dev.mobility_n = number(j, where, "mobility_n_cm2_vs");
    dev.mobility_p = number(j, where, "mobility_p_cm2_vs");
    dev.tau_n = number(j, where, "tau_n_s");
    dev.tau_p = number(j, where, "tau_p_s");
    dev.intrinsic = number(j, where, "intrinsic_cm3");
    if (!j.contains("doping_cm3") || !j["doping_cm3"].is_array() || j["doping_cm3"].empty())
        fail(where, "missing 'doping_cm3' segment list");
    dev.doping.clear();
    for (const json& seg : j["doping_cm3"]) {
        DopingSegment s;
        s.upto = number(seg, where + ".doping_cm3", "upto");
        s.value = number(seg, where + ".doping_cm3", "value");
        dev.doping.push_back(s);
    }
    return dev;
}

SourceSpec parse_source(const json& j, const std::string& where)
{
    SourceSpec s;
    const std::string waveform = text(j, where, "waveform");
    if (waveform == "sine") {
        s.waveform = SourceSpec::Waveform::Sine;
        s.amplitude = number(j, where, "amplitude");
        s.frequency = number(j, where, "frequency_hz");
        s.offset = number_or(j, "offset", 0.0);
    } else if (waveform == "dc") {
        s.waveform = SourceSpec::Waveform::Dc;
        s.amplitude = number(j, where, "amplitude");
    } else {
        fail(where, "unknown waveform '" + waveform + "'");
    }
    return s;
}

} // namespace

Config parse_config_text(const std::string& content)
{
    json root;
    try {
        root = json::parse(content);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }

    Config cfg;
    cfg.name = root.value("name", "unnamed");

    if (!root.contains("nodes") || !root["nodes"].is_array())
        fail("top level", "missing 'nodes' array");
    std::map<std::string, int> node_index;
    for (const json& n : root["nodes"]) {
        if (!n.is_string())
            fail("nodes", "node names must be strings");
        const std::string name = n.get<std::string>();
        if (name == "0" || name == "gnd")
            fail("nodes", "ground is implicit and may not be declared");
        if (!node_index.emplace(name, static_cast<int>(cfg.netlist.node_names.size())).second)
            fail("nodes", "duplicate node '" + name + "'");
        cfg.netlist.node_names.push_back(name);
    }
    auto resolve_node = [&](const std::string& name, const std::string& where) {
        if (name == "0" || name == "gnd")
            return -1;
        const auto it = node_index.find(name);
        if (it == node_index.end())
            fail(where, "unknown node '" + name + "'");
        return it->second;
    };

    std::map<std::string, int> device_index;
    if (root.contains("devices")) {
        if (!root["devices"].is_object())
            fail("devices", "must be an object of named devices");
        for (const auto& [name, body] : root["devices"].items()) {
            device_index.emplace(name, static_cast<int>(cfg.netlist.devices.size()));
            cfg.netlist.devices.push_back(parse_device(body, "devices." + name));
            cfg.netlist.device_names.push_back(name);
        }
    }

    if (!root.contains("branches") || !root["branches"].is_array())
        fail("top level", "missing 'branches' array");
    for (const json& jb : root["branches"]) {
        Branch br;
        br.name = text(jb, "branches", "name");
        const std::string where = "branch '" + br.name + "'";
        const std::string type = text(jb, where, "type");
        br.node_plus = resolve_node(text(jb, where, "plus"), where);
        br.node_minus = resolve_node(text(jb, where, "minus"), where);
        if (type == "R") {
            br.type = BranchType::Resistor;
            br.value = number(jb, where, "ohms");
        } else if (type == "C") {
            br.type = BranchType::Capacitor;
            br.value = number(jb, where, "farads");
        } else if (type == "L") {
            br.type = BranchType::Inductor;
            br.value = number(jb, where, "henries");
        } else if (type == "V") {
            br.type = BranchType::VoltageSource;
            if (!jb.contains("source"))
                fail(where, "voltage source needs a 'source' record");
            br.source = parse_source(jb["source"], where + ".source");
        } else if (type == "I") {
            br.type = BranchType::CurrentSource;
            if (!jb.contains("source"))
                fail(where, "current source needs a 'source' record");
            br.source = parse_source(jb["source"], where + ".source");
        } else if (type == "S") {
            br.type = BranchType::Semiconductor;
            const std::string device = text(jb, where, "device");
            const auto it = device_index.find(device);
            if (it == device_index.end())
                fail(where, "references missing device '" + device + "'");
            br.device = it->second;
        } else {
            fail(where, "unknown branch type '" + type + "'");
        }
        cfg.netlist.branches.push_back(br);
    }

    if (root.contains("mesh"))
        cfg.simulation.mesh_elements =
            static_cast<Index>(number(root["mesh"], "mesh", "elements"));
    if (root.contains("simulation")) {
        const json& sim = root["simulation"];
        cfg.simulation.rtol = number_or(sim, "rtol", cfg.simulation.rtol);
        cfg.simulation.periods = number_or(sim, "periods", cfg.simulation.periods);
    }
    if (root.contains("campaign")) {
        const json& c = root["campaign"];
        if (c.contains("pspace_hz")) {
            if (!c["pspace_hz"].is_array() || c["pspace_hz"].size() != 2)
                fail("campaign", "'pspace_hz' must be [min, max]");
            cfg.campaign.pspace_min = c["pspace_hz"][0].get<double>();
            cfg.campaign.pspace_max = c["pspace_hz"][1].get<double>();
        }
        cfg.campaign.test_points =
            static_cast<int>(number_or(c, "test_points", cfg.campaign.test_points));
        cfg.campaign.delta_target = number_or(c, "delta", cfg.campaign.delta_target);
        cfg.campaign.tol = number_or(c, "tol", cfg.campaign.tol);
        cfg.campaign.omega1 = number_or(c, "omega1_hz", cfg.campaign.omega1);
        cfg.campaign.max_iterations =
            static_cast<int>(number_or(c, "max_iterations", cfg.campaign.max_iterations));
        if (c.contains("merge")) {
            const std::string merge = c["merge"].get<std::string>();
            if (merge == "resvd-all")
                cfg.campaign.merge = MergeStrategy::ResvdAll;
            else if (merge == "pod-of-bases")
                cfg.campaign.merge = MergeStrategy::PodOfBases;
            else
                fail("campaign", "unknown merge strategy '" + merge + "'");
        }
    }

    cfg.validate();
    return cfg;
}

void Config::validate() const
{
    netlist.validate();
    if (simulation.mesh_elements < 2 || simulation.mesh_elements % 2 != 0)
        throw ConfigError("config: mesh element count must be even and at least 2");
    if (!(simulation.rtol > 0) || !(simulation.periods > 0))
        throw ConfigError("config: tolerances and horizon must be positive");
    if (!(campaign.pspace_min > 0) || !(campaign.pspace_max > campaign.pspace_min))
        throw ConfigError("config: parameter space bounds need 0 < min < max");
    if (!(campaign.delta_target > 0) || !(campaign.delta_target < 1))
        throw ConfigError("config: delta target must lie in (0,1)");
    if (campaign.test_points < 2)
        throw ConfigError("config: campaign needs at least two test points");
}

Config load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

} // namespace ddmor
