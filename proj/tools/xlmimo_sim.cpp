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

// Monte-Carlo driver: run, cdf, validate.

#include "xlmimo/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace xlmimo;

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> drops;
    std::optional<std::string> out;
    std::optional<std::string> schemes;
    std::optional<int> threads;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
    cmd->add_option("--config", opt.config_path, "key = value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", opt.seed, "master seed");
    cmd->add_option("--drops", opt.drops, "number of Monte-Carlo drops");
    cmd->add_option("--schemes", opt.schemes,
                    "comma-separated subset of fixed,wmmse,perfect-fixed,perfect-wmmse,access-fixed,access-wmmse");
    cmd->add_option("--threads", opt.threads, "worker threads");
    cmd->add_option("--set", opt.overrides, "extra configuration entries, key=value")->take_all();
}

RunConfig resolve(const CommonOptions& opt, const RunConfig& base) {
    RunConfig config = base;
    if (!opt.config_path.empty()) {
        std::ifstream in(opt.config_path);
        config = parse_config(in, base);
    }
    for (const auto& entry : opt.overrides) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + entry + "'");
        apply_config_value(config, entry.substr(0, eq), entry.substr(eq + 1));
    }
    if (opt.seed) config.channel.seed = *opt.seed;
    if (opt.drops) config.n_drops = *opt.drops;
    if (opt.out) config.output = *opt.out;
    if (opt.schemes) config.schemes = parse_scheme_list(*opt.schemes);
    if (opt.threads) config.threads = *opt.threads;
    config.validate();
    return config;
}

int run(const CommonOptions& opt, bool strict) {
    const RunConfig config = resolve(opt, default_config());
    const RunResult result = run_monte_carlo(config);
    write_outputs(config.output, result.records);
    {
        std::ofstream used(config.output / "config_used.txt");
        write_config(used, config);
    }
    for (const auto& f : result.flagged)
        std::cerr << "flagged drop " << f.drop << " [" << to_string(f.scheme) << "]: " << f.diagnostic << '\n';

    std::cout << "wrote " << result.records.size() << " records for " << config.n_drops << " drops to "
              << config.output.string() << '\n';
    for (const Scheme s : config.schemes) {
        const bool present = std::any_of(result.records.begin(), result.records.end(),
                                         [&](const SeRecord& r) { return r.scheme == s; });
        if (!present) continue;
        const CdfTable cdf = emit_cdf(result.records, s);
        std::cout << "  " << to_string(s) << ": median per-UE SE " << quantile(cdf, 0.5) << " bit/s/Hz\n";
    }
    return strict && !result.flagged.empty() ? 2 : 0;
}

int cdf(const std::string& records_path, const std::string& out_dir) {
    std::ifstream in(records_path);
    if (!in) throw std::runtime_error("cannot open " + records_path);
    const auto records = read_records_csv(in);
    std::filesystem::create_directories(out_dir);
    for (const std::string name :
         {"fixed", "wmmse", "perfect-fixed", "perfect-wmmse", "access-fixed", "access-wmmse"}) {
        const Scheme s = parse_scheme(name);
        const bool present =
            std::any_of(records.begin(), records.end(), [&](const SeRecord& r) { return r.scheme == s; });
        if (!present) continue;
        std::ofstream out(std::filesystem::path(out_dir) / ("cdf_" + name + ".csv"));
        write_cdf_csv(out, emit_cdf(records, s));
        std::cout << "wrote cdf_" << name << ".csv\n";
    }
    return 0;
}

int validate(const CommonOptions& opt) {
    RunConfig base = default_config();
    base.dims = {4, 2, 4, 3};
    base.n_drops = 5;
    const RunConfig config = resolve(opt, base);
    bool ok = true;
    for (const auto& check : validate_invariants(config, config.n_drops)) {
        std::cout << (check.passed ? "PASS " : "FAIL ") << check.name << ": " << check.detail << '\n';
        ok = ok && check.passed;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Modular XL-MIMO with amplify-and-forward wireless fronthaul: Monte-Carlo SE simulator"};
    app.require_subcommand(1);

    CommonOptions run_opt;
    bool strict = false;
    auto* run_cmd = app.add_subcommand("run", "run the Monte-Carlo simulation");
    add_common(run_cmd, run_opt);
    run_cmd->add_option("--out", run_opt.out, "output directory");
    run_cmd->add_flag("--strict", strict, "exit nonzero if any drop is flagged");

    std::string records_path;
    std::string cdf_out = ".";
    auto* cdf_cmd = app.add_subcommand("cdf", "build per-scheme CDF files from a records CSV");
    cdf_cmd->add_option("records", records_path, "records.csv from a previous run")->required();
    cdf_cmd->add_option("--out", cdf_out, "output directory");

    CommonOptions val_opt;
    auto* val_cmd = app.add_subcommand("validate", "run the invariant suite on small dimensions");
    add_common(val_cmd, val_opt);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run_cmd) return run(run_opt, strict);
        if (*cdf_cmd) return cdf(records_path, cdf_out);
        if (*val_cmd) return validate(val_opt);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return 0;
}
