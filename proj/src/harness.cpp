// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include "xlmimo/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <mutex>
#include <thread>

namespace xlmimo {

namespace {

const std::vector<std::pair<Scheme, std::string>>& scheme_names() {
    static const std::vector<std::pair<Scheme, std::string>> names{
        {Scheme::Fixed, "fixed"},
        {Scheme::Wmmse, "wmmse"},
        {Scheme::PerfectFixed, "perfect-fixed"},
        {Scheme::PerfectWmmse, "perfect-wmmse"},
        {Scheme::AccessFixed, "access-fixed"},
        {Scheme::AccessWmmse, "access-wmmse"},
    };
    return names;
}

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

double to_double(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != value.size()) throw std::invalid_argument("config: '" + key + "' expects a number, got '" + value + "'");
    return out;
}

int to_int(const std::string& key, const std::string& value) {
    const double d = to_double(key, value);
    if (d != std::floor(d) || std::abs(d) > 2e9)
        throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + value + "'");
    return static_cast<int>(d);
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    std::uint64_t out = 0;
    try {
        if (!value.empty() && value.front() != '-') out = std::stoull(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != value.size())
        throw std::invalid_argument("config: '" + key + "' expects an unsigned integer");
    return out;
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("config: '" + key + "' expects true or false, got '" + value + "'");
}

std::string format_number(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", value);
    return buf;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
    Setter set;
    Getter get;
};

template <typename T>
Field number_field(T RunConfig::*section, double T::*member) {
    return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.*section.*member = to_double(k, v); },
            [=](const RunConfig& c) { return format_number(c.*section.*member); }};
}

template <typename T>
Field int_field(T RunConfig::*section, int T::*member) {
    return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.*section.*member = to_int(k, v); },
            [=](const RunConfig& c) { return std::to_string(c.*section.*member); }};
}

Field cpu_field(int axis) {
    return {[=](RunConfig& c, const std::string& k, const std::string& v) {
                c.layout.cpu_position(axis) = to_double(k, v);
            },
            [=](const RunConfig& c) { return format_number(c.layout.cpu_position(axis)); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table{
        {"L", int_field(&RunConfig::dims, &SystemDims::L)},
        {"N", int_field(&RunConfig::dims, &SystemDims::N)},
        {"M", int_field(&RunConfig::dims, &SystemDims::M)},
        {"K", int_field(&RunConfig::dims, &SystemDims::K)},
        {"grid_cols", int_field(&RunConfig::layout, &LayoutConfig::grid_cols)},
        {"grid_rows", int_field(&RunConfig::layout, &LayoutConfig::grid_rows)},
        {"grid_spacing", number_field(&RunConfig::layout, &LayoutConfig::grid_spacing)},
        {"grid_center_x", number_field(&RunConfig::layout, &LayoutConfig::grid_center_x)},
        {"array_y", number_field(&RunConfig::layout, &LayoutConfig::array_y)},
        {"grid_base_z", number_field(&RunConfig::layout, &LayoutConfig::grid_base_z)},
        {"cpu_x", cpu_field(0)},
        {"cpu_y", cpu_field(1)},
        {"cpu_z", cpu_field(2)},
        {"area_side", number_field(&RunConfig::layout, &LayoutConfig::area_side)},
        {"ue_height", number_field(&RunConfig::layout, &LayoutConfig::ue_height)},
        {"asd_azimuth_deg", number_field(&RunConfig::channel, &ChannelConfig::asd_azimuth_deg)},
        {"asd_elevation_deg", number_field(&RunConfig::channel, &ChannelConfig::asd_elevation_deg)},
        {"rician_k_factor_db", number_field(&RunConfig::channel, &ChannelConfig::rician_k_factor_db)},
        {"bandwidth_hz", number_field(&RunConfig::channel, &ChannelConfig::bandwidth_hz)},
        {"noise_figure_db", number_field(&RunConfig::channel, &ChannelConfig::noise_figure_db)},
        {"pathloss_ref_db", number_field(&RunConfig::channel, &ChannelConfig::pathloss_ref_db)},
        {"pathloss_exponent_db", number_field(&RunConfig::channel, &ChannelConfig::pathloss_exponent_db)},
        {"shadowing_std_db", number_field(&RunConfig::channel, &ChannelConfig::shadowing_std_db)},
        {"element_spacing", number_field(&RunConfig::channel, &ChannelConfig::element_spacing)},
        {"angle_grid_points", int_field(&RunConfig::channel, &ChannelConfig::angle_grid_points)},
        {"seed",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.channel.seed = to_u64(k, v); },
          [](const RunConfig& c) { return std::to_string(c.channel.seed); }}},
        {"kappa_ac", number_field(&RunConfig::hardware, &HardwareProfile<>::kappa_ac)},
        {"kappa_frt", number_field(&RunConfig::hardware, &HardwareProfile<>::kappa_frt)},
        {"p_ue_max", number_field(&RunConfig::hardware, &HardwareProfile<>::p_ue_max)},
        {"p_frt_max", number_field(&RunConfig::hardware, &HardwareProfile<>::p_frt_max)},
        {"noise_power_w",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "auto")
                  c.noise_power_w.reset();
              else
                  c.noise_power_w = to_double(k, v);
          },
          [](const RunConfig& c) { return c.noise_power_w ? format_number(*c.noise_power_w) : std::string("auto"); }}},
        {"schemes",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.schemes = parse_scheme_list(v); },
          [](const RunConfig& c) {
              std::string out;
              for (const Scheme s : c.schemes) out += (out.empty() ? "" : ",") + to_string(s);
              return out;
          }}},
        {"drops",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.n_drops = to_int(k, v); },
          [](const RunConfig& c) { return std::to_string(c.n_drops); }}},
        {"output",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.output = v; },
          [](const RunConfig& c) { return c.output.string(); }}},
        {"threads",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.threads = to_int(k, v); },
          [](const RunConfig& c) { return std::to_string(c.threads); }}},
        {"prelog",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.prelog = to_double(k, v); },
          [](const RunConfig& c) { return format_number(c.prelog); }}},
        {"wmmse_max_iter",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.optimizer.max_iter = to_int(k, v); },
          [](const RunConfig& c) { return std::to_string(c.optimizer.max_iter); }}},
        {"wmmse_tol",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.optimizer.tol = to_double(k, v); },
          [](const RunConfig& c) { return format_number(c.optimizer.tol); }}},
        {"solver_tol",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.optimizer.solver.tol = to_double(k, v); },
          [](const RunConfig& c) { return format_number(c.optimizer.solver.tol); }}},
        {"solver_max_iter",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              c.optimizer.solver.max_iter = to_int(k, v);
          },
          [](const RunConfig& c) { return std::to_string(c.optimizer.solver.max_iter); }}},
        {"wmmse_joint_step",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.optimizer.joint_step = to_bool(k, v); },
          [](const RunConfig& c) { return std::string(c.optimizer.joint_step ? "true" : "false"); }}},
        {"wmmse_restarts",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.optimizer.restarts = to_int(k, v); },
          [](const RunConfig& c) { return std::to_string(c.optimizer.restarts); }}},
        {"wmmse_restart_seed",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.optimizer.restart_seed = to_u64(k, v); },
          [](const RunConfig& c) { return std::to_string(c.optimizer.restart_seed); }}},
    };
    return table;
}

}  // namespace

std::string to_string(Scheme scheme) {
    for (const auto& [s, name] : scheme_names())
        if (s == scheme) return name;
    return "unknown";
}

Scheme parse_scheme(const std::string& name) {
    const std::string key = trim(name);
    for (const auto& [s, n] : scheme_names())
        if (n == key) return s;
    throw std::invalid_argument("unknown scheme '" + key + "'");
}

std::vector<Scheme> parse_scheme_list(const std::string& csv) {
    std::vector<Scheme> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (trim(item).empty()) continue;
        const Scheme s = parse_scheme(item);
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    }
    if (out.empty()) throw std::invalid_argument("scheme list is empty");
    return out;
}

bool is_optimized(Scheme scheme) {
    return scheme == Scheme::Wmmse || scheme == Scheme::PerfectWmmse || scheme == Scheme::AccessWmmse;
}

HardwareProfile<> scheme_hardware(Scheme scheme, const HardwareProfile<>& impaired) {
    switch (scheme) {
        case Scheme::PerfectFixed:
        case Scheme::PerfectWmmse:
            return impaired.with_kappa(1.0, 1.0);
        case Scheme::AccessFixed:
        case Scheme::AccessWmmse:
            return impaired.with_kappa(impaired.kappa_ac, 1.0);
        default:
            return impaired;
    }
}

HardwareProfile<> RunConfig::effective_hardware() const {
    HardwareProfile<> hw = hardware;
    hw.noise_power = noise_power_w ? *noise_power_w : noise_power(channel.bandwidth_hz, channel.noise_figure_db);
    return hw;
}

void RunConfig::validate() const {
    dims.validate();
    layout.validate();
    channel.validate();
    effective_hardware().validate();
    grid_shape(dims, layout);
    if (n_drops < 1) throw std::invalid_argument("config: drops must be >= 1");
    if (schemes.empty()) throw std::invalid_argument("config: scheme list is empty");
    if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
    if (!(prelog > 0.0)) throw std::invalid_argument("config: prelog must be positive");
    if (optimizer.max_iter < 1 || optimizer.solver.max_iter < 1)
        throw std::invalid_argument("config: iteration limits must be >= 1");
    if (!(optimizer.tol > 0.0) || !(optimizer.solver.tol > 0.0))
        throw std::invalid_argument("config: tolerances must be positive");
    if (optimizer.restarts < 0) throw std::invalid_argument("config: wmmse_restarts must be >= 0");
}

RunConfig default_config() { return RunConfig{}; }

void apply_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    for (const auto& [name, field] : fields()) {
        if (name == key) {
            field.set(config, key, value);
            return;
        }
    }
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig parse_config(std::istream& in, RunConfig base) {
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
        apply_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    return parse_config(in);
}

void write_config(std::ostream& out, const RunConfig& config) {
    for (const auto& [name, field] : fields()) out << name << " = " << field.get(config) << '\n';
}

RunResult evaluate_drop(const RunConfig& config, int drop) {
    const Drop d = draw_drop(config.dims, config.layout, config.channel, static_cast<std::uint64_t>(drop));
    const PrecoderSet<> precoders = bi_svd_precoders(d.channels);
    const HardwareProfile<> impaired = config.effective_hardware();

    RunResult out;
    for (const Scheme scheme : config.schemes) {
        const HardwareProfile<> hw = scheme_hardware(scheme, impaired);
        Allocation<> alloc;
        if (is_optimized(scheme)) {
            const WmmseContext<> ctx(d.channels, precoders, hw);
            WmmseResult<> res = wmmse_optimize(ctx, config.optimizer);
            if (res.diagnostic.rfind("aborted", 0) == 0) out.flagged.push_back({drop, scheme, res.diagnostic});
            alloc = std::move(res.allocation);
        } else {
            alloc = fixed_baseline_allocation(d.channels, precoders, hw);
        }
        const RVec<double> se = per_ue_se(d.channels, precoders, alloc, hw, config.prelog);
        if (!se.allFinite()) {
            out.flagged.push_back({drop, scheme, "non-finite spectral efficiency"});
            continue;
        }
        const double total = se.sum();
        for (int k = 0; k < se.size(); ++k) out.records.push_back({scheme, drop, k, se(k), total});
    }
    return out;
}

RunResult run_monte_carlo(const RunConfig& config) {
    config.validate();
    std::vector<RunResult> per_drop(static_cast<std::size_t>(config.n_drops));
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        for (int drop = next++; drop < config.n_drops; drop = next++) {
            try {
                per_drop[static_cast<std::size_t>(drop)] = evaluate_drop(config, drop);
            } catch (const std::exception& ex) {
                per_drop[static_cast<std::size_t>(drop)].flagged.push_back({drop, config.schemes.front(), ex.what()});
            } catch (...) {
                const std::lock_guard<std::mutex> lock(failure_mutex);
                failure = std::current_exception();
            }
        }
    };

    const int workers = std::min(config.threads, config.n_drops);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    RunResult out;
    for (auto& r : per_drop) {
        out.records.insert(out.records.end(), r.records.begin(), r.records.end());
        out.flagged.insert(out.flagged.end(), r.flagged.begin(), r.flagged.end());
    }
    return out;
}

CdfTable empirical_cdf(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("empirical_cdf: no values");
    std::sort(values.begin(), values.end());
    CdfTable out;
    const auto n = static_cast<double>(values.size());
    out.probabilities.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out.probabilities.push_back(static_cast<double>(i + 1) / n);
    out.values = std::move(values);
    return out;
}

CdfTable emit_cdf(const std::vector<SeRecord>& records, Scheme scheme) {
    std::vector<double> values;
    for (const auto& r : records)
        if (r.scheme == scheme) values.push_back(r.se);
    if (values.empty()) throw std::invalid_argument("emit_cdf: no records for scheme " + to_string(scheme));
    return empirical_cdf(std::move(values));
}

double quantile(const CdfTable& cdf, double q) {
    const auto it = std::lower_bound(cdf.probabilities.begin(), cdf.probabilities.end(), q - 1e-12);
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.probabilities.begin()),
                                           cdf.values.size() - 1);
    return cdf.values[idx];
}

void write_records_csv(std::ostream& out, const std::vector<SeRecord>& records) {
    out << "scheme,drop,ue,se_bps_hz\n";
    for (const auto& r : records)
        out << to_string(r.scheme) << ',' << r.drop << ',' << r.ue << ',' << format_number(r.se) << '\n';
}

std::vector<SeRecord> read_records_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || trim(line) != "scheme,drop,ue,se_bps_hz")
        throw std::invalid_argument("records csv: missing header 'scheme,drop,ue,se_bps_hz'");
    std::vector<SeRecord> out;
    int number = 1;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty()) continue;
        std::stringstream ss(line);
        std::string scheme, drop, ue, se;
        if (!std::getline(ss, scheme, ',') || !std::getline(ss, drop, ',') || !std::getline(ss, ue, ',') ||
            !std::getline(ss, se))
            throw std::invalid_argument("records csv line " + std::to_string(number) + ": expected 4 fields");
        out.push_back({parse_scheme(scheme), to_int("drop", trim(drop)), to_int("ue", trim(ue)),
                       to_double("se_bps_hz", trim(se)), 0.0});
    }
    // Per-drop sums are not stored in the file.
    std::map<std::pair<int, int>, double> sums;
    for (const auto& r : out) sums[{static_cast<int>(r.scheme), r.drop}] += r.se;
    for (auto& r : out) r.sum_se = sums[{static_cast<int>(r.scheme), r.drop}];
    return out;
}

void write_cdf_csv(std::ostream& out, const CdfTable& cdf) {
    out << "se_bps_hz,probability\n";
    for (std::size_t i = 0; i < cdf.values.size(); ++i)
        out << format_number(cdf.values[i]) << ',' << format_number(cdf.probabilities[i]) << '\n';
}

void write_outputs(const std::filesystem::path& dir, const std::vector<SeRecord>& records) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "records.csv");
        if (!out) throw std::runtime_error("cannot write " + (dir / "records.csv").string());
        write_records_csv(out, records);
    }
    for (const auto& [scheme, name] : scheme_names()) {
        const bool present =
            std::any_of(records.begin(), records.end(), [&](const SeRecord& r) { return r.scheme == scheme; });
        if (!present) continue;
        std::ofstream out(dir / ("cdf_" + name + ".csv"));
        if (!out) throw std::runtime_error("cannot write CDF for " + name);
        write_cdf_csv(out, emit_cdf(records, scheme));
    }
}

}  // namespace xlmimo
