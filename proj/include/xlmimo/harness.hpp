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

#ifndef XLMIMO_HARNESS_HPP
#define XLMIMO_HARNESS_HPP

#include "xlmimo/channel.hpp"
#include "xlmimo/system.hpp"
#include "xlmimo/wmmse.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace xlmimo {

/// Allocation strategy and hardware variant evaluated on every drop.
enum class Scheme {
    Fixed,         // impaired hardware, full power and amplification
    Wmmse,         // impaired hardware, optimized allocation
    PerfectFixed,  // ideal hardware
    PerfectWmmse,
    AccessFixed,   // only the access links impaired
    AccessWmmse,
};

std::string to_string(Scheme scheme);
Scheme parse_scheme(const std::string& name);
std::vector<Scheme> parse_scheme_list(const std::string& csv);
bool is_optimized(Scheme scheme);

/// Hardware used by a scheme: perfect variants set both quality factors to 1,
/// access-only variants set the fronthaul factor to 1.
HardwareProfile<> scheme_hardware(Scheme scheme, const HardwareProfile<>& impaired);

struct RunConfig {
    SystemDims dims;
    LayoutConfig layout;
    ChannelConfig channel;
    HardwareProfile<> hardware;
    std::optional<double> noise_power_w;  // default: thermal noise of the channel bandwidth
    std::vector<Scheme> schemes{Scheme::Fixed,        Scheme::Wmmse,       Scheme::AccessFixed,
                                Scheme::AccessWmmse,  Scheme::PerfectFixed, Scheme::PerfectWmmse};
    int n_drops = 100;
    std::filesystem::path output = "out";
    WmmseOptions<> optimizer;
    double prelog = 1.0;
    int threads = 1;

    /// Hardware with the noise power resolved.
    HardwareProfile<> effective_hardware() const;
    void validate() const;
};

/// Defaults of the reference deployment (L = 64, N = 4, M = 12, K = 8).
RunConfig default_config();

/// Parses `key = value` lines (`#` starts a comment) over the defaults.
/// Unknown keys are rejected.
RunConfig parse_config(std::istream& in, RunConfig base = default_config());
RunConfig load_config(const std::filesystem::path& path);
/// Applies a single key/value pair; shared by the file parser and CLI overrides.
void apply_config_value(RunConfig& config, const std::string& key, const std::string& value);
/// Writes every key with its current value in the format parse_config reads.
void write_config(std::ostream& out, const RunConfig& config);

struct SeRecord {
    Scheme scheme;
    int drop;
    int ue;
    double se;      // bit/s/Hz
    double sum_se;  // sum over UEs of this drop and scheme
};

struct FlaggedDrop {
    int drop;
    Scheme scheme;
    std::string diagnostic;
};

struct RunResult {
    std::vector<SeRecord> records;  // ordered by drop, then scheme order, then UE
    std::vector<FlaggedDrop> flagged;
};

/// Evaluates every requested scheme on one drop.
RunResult evaluate_drop(const RunConfig& config, int drop);

/// Runs all drops on config.threads workers. Output does not depend on the
/// thread count.
RunResult run_monte_carlo(const RunConfig& config);

struct CdfTable {
    std::vector<double> values;         // nondecreasing
    std::vector<double> probabilities;  // i / n
};

CdfTable empirical_cdf(std::vector<double> values);
/// CDF of the per-UE SE of one scheme. Throws if the scheme has no records.
CdfTable emit_cdf(const std::vector<SeRecord>& records, Scheme scheme);

/// Lower empirical quantile: smallest value whose CDF reaches q.
double quantile(const CdfTable& cdf, double q);

/// `scheme,drop,ue,se_bps_hz` with 12 significant digits.
void write_records_csv(std::ostream& out, const std::vector<SeRecord>& records);
std::vector<SeRecord> read_records_csv(std::istream& in);
/// `se_bps_hz,probability`.
void write_cdf_csv(std::ostream& out, const CdfTable& cdf);

/// Writes records.csv and cdf_<scheme>.csv for every scheme present.
void write_outputs(const std::filesystem::path& dir, const std::vector<SeRecord>& records);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Invariant suite on \`drops\` drops of \`config\`: precoder unitarity,
/// covariance structure, the MSE/SINR identity, fixed-baseline tightness,
/// WMMSE monotonicity, feasibility and dominance over the baseline.
std::vector<CheckResult> validate_invariants(const RunConfig& config, int drops);

}  // namespace xlmimo

#endif  // XLMIMO_HARNESS_HPP
