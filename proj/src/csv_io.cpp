#include "ddmor/csv_io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ddmor {

std::string format_double(double value)
{
    char buf[32];
    snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

namespace {

std::ofstream open_out(const std::string& path)
{
    std::ofstream out(path);
    if (!out)
        throw ConfigError("csv: cannot open '" + path + "' for writing");
    return out;
}

const char* var_column(DeviceVar v)
{
    return device_var_name(v);
}

} // namespace

void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                          const FullModel& model)
{
    std::ofstream out = open_out(path);
    const StateLayout& layout = model.layout();
    const Netlist& net = model.netlist();

    out << "# ddmor-csv v1 trajectory\n";
    out << "# columns: t, node potentials, source/inductor/device branch currents, "
           "then per-device coefficients psi,n,p,grad_psi,j_n,j_p\n";
    out << "t";
    for (const std::string& name : net.node_names)
        out << ",e_" << name;
    for (const Index b : net.branches_of(BranchType::VoltageSource))
        out << ",j_v_" << net.branches[static_cast<std::size_t>(b)].name;
    for (const Index b : net.branches_of(BranchType::Inductor))
        out << ",j_l_" << net.branches[static_cast<std::size_t>(b)].name;
    for (const Index b : net.branches_of(BranchType::Semiconductor))
        out << ",j_s_" << net.branches[static_cast<std::size_t>(b)].name;
    for (std::size_t d = 0; d < layout.device.size(); ++d) {
        const auto& r = layout.device[d];
        for (const DeviceVar v : kDeviceVars) {
            const Index dim = mass_tag_of(v) == MassTag::Cell ? r.cells : r.flux;
            for (Index i = 0; i < dim; ++i)
                out << ",dev" << d << "_" << var_column(v) << "_" << i;
        }
    }
    out << "\n";

    for (std::size_t k = 0; k < traj.size(); ++k) {
        out << format_double(traj.times[k]);
        const Vector& z = traj.states[k];
        for (Index i = 0; i < layout.total; ++i)
            out << "," << format_double(z[i]);
        out << "\n";
    }
}

void write_basis_csv(const std::string& path, const PodBasis& basis)
{
    std::ofstream out = open_out(path);
    out << "# ddmor-csv v1 basis\n";
    out << "var," << device_var_name(basis.tag) << "\n";
    out << "mass," << (basis.mass == MassTag::Cell ? "cell" : "flux") << "\n";
    out << "rows," << basis.basis.rows() << "\n";
    out << "cols," << basis.basis.cols() << "\n";
    out << "sigma";
    for (Index i = 0; i < basis.singular_values.size(); ++i)
        out << "," << format_double(basis.singular_values[i]);
    out << "\n";
    for (Index i = 0; i < basis.basis.rows(); ++i) {
        for (Index j = 0; j < basis.basis.cols(); ++j)
            out << (j ? "," : "") << format_double(basis.basis(i, j));
        out << "\n";
    }
}

namespace {

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ','))
        out.push_back(field);
    return out;
}

} // namespace

PodBasis read_basis_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("# ddmor-csv v1 basis", 0) != 0)
        throw ConfigError("csv: '" + path + "' is not a basis file");

    PodBasis basis;
    Index rows = -1, cols = -1;
    while (std::getline(in, line)) {
        const auto fields = split(line);
        if (fields.empty())
            continue;
        if (fields[0] == "var") {
            bool found = false;
            for (const DeviceVar v : kDeviceVars)
                if (fields.at(1) == device_var_name(v)) {
                    basis.tag = v;
                    found = true;
                }
            if (!found)
                throw ConfigError("csv: unknown variable tag '" + fields.at(1) + "'");
        } else if (fields[0] == "mass") {
            basis.mass = fields.at(1) == "cell" ? MassTag::Cell : MassTag::Flux;
        } else if (fields[0] == "rows") {
            rows = std::stol(fields.at(1));
        } else if (fields[0] == "cols") {
            cols = std::stol(fields.at(1));
        } else if (fields[0] == "sigma") {
            basis.singular_values.resize(static_cast<Index>(fields.size()) - 1);
            for (std::size_t i = 1; i < fields.size(); ++i)
                basis.singular_values[static_cast<Index>(i - 1)] = std::stod(fields[i]);
            break;
        }
    }
    if (rows < 0 || cols < 0)
        throw ConfigError("csv: basis file is missing its shape header");
    basis.basis.resize(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        if (!std::getline(in, line))
            throw ConfigError("csv: basis file truncated");
        const auto fields = split(line);
        if (static_cast<Index>(fields.size()) != cols)
            throw ConfigError("csv: basis row has wrong column count");
        for (Index j = 0; j < cols; ++j)
            basis.basis(i, j) = std::stod(fields[static_cast<std::size_t>(j)]);
    }
    return basis;
}

void write_campaign_summary_csv(const std::string& path, const SamplingState& state)
{
    std::ofstream out = open_out(path);
    out << "# ddmor-csv v1 campaign-summary\n";
    out << "step,references,max_scaled_residual,argmax_hz,max_relative_error,argmax_error_hz\n";
    for (const IterationRecord& rec : state.history) {
        out << rec.step << ",";
        for (std::size_t i = 0; i < rec.references.size(); ++i)
            out << (i ? ";" : "") << format_double(rec.references[i]);
        out << "," << format_double(rec.max_weighted_residual) << ","
            << format_double(rec.argmax_omega) << ",";
        if (rec.has_true_error)
            out << format_double(rec.max_relative_error) << ","
                << format_double(rec.argmax_error_omega);
        else
            out << ",";
        out << "\n";
    }
    out << "# termination: " << state.termination << "\n";
}

void write_campaign_sweep_csv(const std::string& path, const IterationRecord& record)
{
    std::ofstream out = open_out(path);
    out << "# ddmor-csv v1 campaign-sweep\n";
    out << "omega_hz";
    const std::size_t devices = record.sweep.empty() ? 0 : record.sweep.front().weighted.size();
    for (std::size_t d = 0; d < devices; ++d)
        for (const DeviceVar v : kDeviceVars)
            out << ",res_dev" << d << "_" << device_var_name(v);
    out << ",aggregate,failed\n";
    for (const SweepPoint& pt : record.sweep) {
        out << format_double(pt.omega);
        for (std::size_t d = 0; d < pt.weighted.size(); ++d)
            for (std::size_t v = 0; v < 6; ++v)
                out << "," << format_double(pt.weighted[d][v]);
        out << "," << format_double(pt.aggregate) << "," << (pt.failed ? 1 : 0) << "\n";
    }
}

} // namespace ddmor
