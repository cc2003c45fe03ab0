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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "xlmimo/harness.hpp"

#include <fstream>
#include <sstream>

using namespace xlmimo;

namespace {

RunConfig small_config() {
    RunConfig c = default_config();
    c.dims = {4, 2, 4, 3};
    c.n_drops = 4;
    c.schemes = {Scheme::Fixed, Scheme::Wmmse};
    return c;
}

std::string config_text(const RunConfig& c) {
    std::ostringstream out;
    write_config(out, c);
    return out.str();
}

bool same_records(const std::vector<SeRecord>& a, const std::vector<SeRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].scheme != b[i].scheme || a[i].drop != b[i].drop || a[i].ue != b[i].ue || a[i].se != b[i].se)
            return false;
    return true;
}

}  // namespace

TEST_CASE("default configuration") {
    const RunConfig c = default_config();
    CHECK(c.dims.L == 64);
    CHECK(c.dims.N == 4);
    CHECK(c.dims.M == 12);
    CHECK(c.dims.K == 8);
    CHECK(c.hardware.kappa_ac == 0.95);
    CHECK(c.hardware.kappa_frt == 0.95);
    CHECK(c.hardware.p_ue_max == 0.2);
    CHECK(c.hardware.p_frt_max == 10.0);
    CHECK(c.schemes.size() == 6);
    CHECK(10.0 * std::log10(c.effective_hardware().noise_power) + 30.0 == doctest::Approx(-94.0).epsilon(1e-3));
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("configuration parsing") {
    SUBCASE("round trip through the text format") {
        RunConfig c = small_config();
        c.hardware.kappa_ac = 0.875;
        c.channel.seed = 1234567890123ULL;
        c.noise_power_w = 2.5e-13;
        c.threads = 3;
        std::istringstream in(config_text(c));
        const RunConfig parsed = parse_config(in);
        CHECK(config_text(parsed) == config_text(c));
        CHECK(parsed.hardware.kappa_ac == 0.875);
        CHECK(parsed.channel.seed == 1234567890123ULL);
        CHECK(*parsed.noise_power_w == 2.5e-13);
    }
    SUBCASE("comments, blank lines and whitespace") {
        std::istringstream in("# header\n\n  K = 5   # trailing\nschemes = fixed, wmmse\n");
        const RunConfig c = parse_config(in);
        CHECK(c.dims.K == 5);
        CHECK(c.schemes == std::vector<Scheme>{Scheme::Fixed, Scheme::Wmmse});
        CHECK(c.dims.L == 64);
    }
    SUBCASE("automatic noise power") {
        RunConfig c = small_config();
        apply_config_value(c, "noise_power_w", "1e-12");
        CHECK(c.effective_hardware().noise_power == 1e-12);
        apply_config_value(c, "noise_power_w", "auto");
        CHECK_FALSE(c.noise_power_w.has_value());
    }
    SUBCASE("errors") {
        RunConfig c = small_config();
        CHECK_THROWS_AS(apply_config_value(c, "no_such_key", "1"), std::invalid_argument);
        CHECK_THROWS_AS(apply_config_value(c, "K", "three"), std::invalid_argument);
        CHECK_THROWS_AS(apply_config_value(c, "K", "3.5"), std::invalid_argument);
        CHECK_THROWS_AS(apply_config_value(c, "kappa_ac", "0.9x"), std::invalid_argument);
        std::istringstream missing("K 8\n");
        CHECK_THROWS_AS(parse_config(missing), std::invalid_argument);
        CHECK_THROWS_AS(load_config("/nonexistent/path.cfg"), std::runtime_error);
    }
    SUBCASE("validation") {
        RunConfig c = small_config();
        c.n_drops = 0;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        c = small_config();
        c.hardware.kappa_frt = 1.5;
        CHECK_THROWS(c.validate());
        c = small_config();
        c.threads = 0;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    }
}

TEST_CASE("scheme names") {
    for (Scheme s : default_config().schemes) CHECK(parse_scheme(to_string(s)) == s);
    CHECK(parse_scheme(" access-wmmse ") == Scheme::AccessWmmse);
    CHECK_THROWS_AS(parse_scheme("optimal"), std::invalid_argument);
    CHECK(parse_scheme_list("wmmse,fixed,wmmse") == std::vector<Scheme>{Scheme::Wmmse, Scheme::Fixed});
    CHECK_THROWS_AS(parse_scheme_list(" , "), std::invalid_argument);
    CHECK(is_optimized(Scheme::PerfectWmmse));
    CHECK_FALSE(is_optimized(Scheme::AccessFixed));

    const auto hw = default_config().hardware;
    CHECK(scheme_hardware(Scheme::PerfectFixed, hw).kappa() == 1.0);
    CHECK(scheme_hardware(Scheme::AccessWmmse, hw).kappa_frt == 1.0);
    CHECK(scheme_hardware(Scheme::AccessWmmse, hw).kappa_ac == hw.kappa_ac);
    CHECK(scheme_hardware(Scheme::Wmmse, hw).kappa() == hw.kappa());
}

TEST_CASE("single drop evaluation") {
    RunConfig c = small_config();
    c.schemes = {Scheme::Fixed};
    const RunResult r = evaluate_drop(c, 2);
    REQUIRE(r.records.size() == 3);
    CHECK(r.flagged.empty());

    // Independent evaluation from the same drop.
    const Drop d = draw_drop(c.dims, c.layout, c.channel, 2);
    const auto P = bi_svd_precoders(d.channels);
    const auto hw = c.effective_hardware();
    const RVec<double> se = per_ue_se(d.channels, P, fixed_baseline_allocation(d.channels, P, hw), hw);
    for (int k = 0; k < 3; ++k) {
        CHECK(r.records[static_cast<std::size_t>(k)].ue == k);
        CHECK(r.records[static_cast<std::size_t>(k)].drop == 2);
        CHECK(r.records[static_cast<std::size_t>(k)].se == doctest::Approx(se(k)).epsilon(1e-12));
        CHECK(r.records[static_cast<std::size_t>(k)].sum_se == doctest::Approx(se.sum()).epsilon(1e-12));
    }

    c.prelog = 0.5;
    const RunResult half = evaluate_drop(c, 2);
    CHECK(half.records[0].se == doctest::Approx(0.5 * se(0)).epsilon(1e-12));
}

TEST_CASE("Monte Carlo runs are reproducible") {
    RunConfig c = small_config();
    const RunResult a = run_monte_carlo(c);
    CHECK(a.records.size() == static_cast<std::size_t>(c.n_drops * 2 * 3));
    CHECK(a.flagged.empty());
    CHECK(same_records(a.records, run_monte_carlo(c).records));

    c.threads = 3;
    CHECK(same_records(a.records, run_monte_carlo(c).records));

    c.channel.seed = 99;
    CHECK_FALSE(same_records(a.records, run_monte_carlo(c).records));

    // Ordered by drop, then scheme, then UE; the optimized scheme never loses.
    for (std::size_t i = 0; i < a.records.size(); i += 6) {
        CHECK(a.records[i].scheme == Scheme::Fixed);
        CHECK(a.records[i + 3].scheme == Scheme::Wmmse);
        CHECK(a.records[i + 3].sum_se >= a.records[i].sum_se - 1e-9);
    }
}

TEST_CASE("empirical CDF and quantiles") {
    const CdfTable cdf = empirical_cdf({3.0, 1.0, 2.0, 4.0});
    CHECK(cdf.values == std::vector<double>{1.0, 2.0, 3.0, 4.0});
    CHECK(cdf.probabilities == std::vector<double>{0.25, 0.5, 0.75, 1.0});
    CHECK(quantile(cdf, 0.5) == 2.0);
    CHECK(quantile(cdf, 0.51) == 3.0);
    CHECK(quantile(cdf, 1.0) == 4.0);
    CHECK(quantile(cdf, 0.0) == 1.0);
    CHECK_THROWS_AS(empirical_cdf({}), std::invalid_argument);

    std::vector<SeRecord> records{{Scheme::Fixed, 0, 0, 2.0, 0.0}, {Scheme::Wmmse, 0, 0, 5.0, 0.0},
                                  {Scheme::Fixed, 1, 0, 1.0, 0.0}};
    const CdfTable fixed = emit_cdf(records, Scheme::Fixed);
    CHECK(fixed.values == std::vector<double>{1.0, 2.0});
    CHECK_THROWS_AS(emit_cdf(records, Scheme::PerfectFixed), std::invalid_argument);
}

TEST_CASE("CSV output") {
    const std::vector<SeRecord> records{{Scheme::Fixed, 0, 0, 1.0 / 3.0, 0.0},
                                        {Scheme::Fixed, 0, 1, 2.718281828459045, 0.0},
                                        {Scheme::AccessWmmse, 7, 0, 1234.56789012345678, 0.0}};
    std::ostringstream out;
    write_records_csv(out, records);
    const std::string text = out.str();
    CHECK(text.rfind("scheme,drop,ue,se_bps_hz\nfixed,0,0,0.333333333333\n", 0) == 0);
    CHECK(text.find("access-wmmse,7,0,1234.56789012\n") != std::string::npos);

    std::istringstream in(text);
    const auto back = read_records_csv(in);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].scheme == records[i].scheme);
        CHECK(back[i].drop == records[i].drop);
        CHECK(std::abs(back[i].se - records[i].se) <= 1e-11 * std::abs(records[i].se));
    }
    CHECK(back[0].sum_se == doctest::Approx(back[0].se + back[1].se));

    std::istringstream bad("scheme,drop,ue\n");
    CHECK_THROWS_AS(read_records_csv(bad), std::invalid_argument);
    std::istringstream short_row("scheme,drop,ue,se_bps_hz\nfixed,0,1\n");
    CHECK_THROWS_AS(read_records_csv(short_row), std::invalid_argument);

    std::ostringstream cdf_out;
    write_cdf_csv(cdf_out, empirical_cdf({2.0, 1.0}));
    CHECK(cdf_out.str() == "se_bps_hz,probability\n1,0.5\n2,1\n");

    const auto dir = std::filesystem::temp_directory_path() / "xlmimo_test_outputs";
    std::filesystem::remove_all(dir);
    write_outputs(dir, records);
    CHECK(std::filesystem::exists(dir / "records.csv"));
    CHECK(std::filesystem::exists(dir / "cdf_fixed.csv"));
    CHECK(std::filesystem::exists(dir / "cdf_access-wmmse.csv"));
    CHECK_FALSE(std::filesystem::exists(dir / "cdf_wmmse.csv"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("invariant suite passes on a small system") {
    RunConfig c = small_config();
    for (const auto& check : validate_invariants(c, 2)) {
        INFO(check.name << ": " << check.detail);
        CHECK(check.passed);
    }
}
