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

#include <cmath>
#include <cstdio>

namespace xlmimo {

namespace {

struct Tally {
    std::string name;
    double worst = 0.0;
    double limit = 0.0;
    int failures = 0;

    void observe(double value) {
        if (!(value <= limit)) ++failures;  // NaN counts as a failure
        worst = std::isnan(value) ? value : std::max(worst, value);
    }

    CheckResult result() const {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "worst %.3e (limit %.1e), %d violation(s)", worst, limit, failures);
        return {name, failures == 0, buf};
    }
};

}  // namespace

std::vector<CheckResult> validate_invariants(const RunConfig& config, int drops) {
    config.validate();
    const HardwareProfile<> impaired = config.effective_hardware();

    Tally unitary{"precoders unitary", 0.0, 1e-10};
    Tally psd{"R_k - sigma^2 I positive semidefinite", 0.0, 1e-9};
    Tally diag{"distortion covariances nonnegative", 0.0, 0.0};
    Tally identity{"e_k (1 + SINR_k) = 1", 0.0, 1e-9};
    Tally tight{"fixed baseline fronthaul budget tight", 0.0, 1e-9};
    Tally monotone{"WMMSE objective nonincreasing", 0.0, 1e-7};
    Tally feasible{"WMMSE allocation feasible", 0.0, 1e-6};
    Tally dominance{"WMMSE sum SE >= fixed sum SE", 0.0, 0.0};
    Tally kappa{"SINR monotone in hardware quality", 0.0, 0.0};

    for (int drop = 0; drop < drops; ++drop) {
        const Drop d = draw_drop(config.dims, config.layout, config.channel, static_cast<std::uint64_t>(drop));
        const auto& ch = d.channels;
        const PrecoderSet<> P = bi_svd_precoders(ch);
        for (const auto& p : P.P)
            unitary.observe((p * p.adjoint() - CMat<double>::Identity(p.rows(), p.cols())).norm());

        const Allocation<> fixed = fixed_baseline_allocation(ch, P, impaired);
        for (int l = 0; l < ch.subarrays(); ++l) {
            const auto& H = ch.H[static_cast<std::size_t>(l)];
            const double pw = fronthaul_power(fixed.alpha(l), P[l], H, fixed.p, impaired.noise_power);
            tight.observe(std::abs(pw / impaired.p_frt_max - 1.0));
            diag.observe(-access_distortion_cov(fixed.p, H, impaired.kappa_ac).minCoeff());
            diag.observe(-fronthaul_distortion_cov(fixed.p, P[l], H, impaired.kappa_frt, impaired.noise_power)
                              .minCoeff());
        }

        const WmmseContext<> ctx(ch, P, impaired);
        WmmseState<> state;
        state.allocation = fixed;
        update_combiners(ctx, state);
        const CMat<double> g = ctx.aggregate(fixed.alpha);
        const CMat<double> base = impairment_covariance(ch, P, fixed, impaired);
        const RVec<double> sinr = per_ue_sinr(ch, P, fixed, impaired);
        for (int k = 0; k < ch.ues(); ++k) {
            const CMat<double> R = interference_covariance(k, g, base, fixed, impaired);
            const CMat<double> shifted = R - impaired.noise_power * CMat<double>::Identity(R.rows(), R.cols());
            Eigen::SelfAdjointEigenSolver<CMat<double>> eig(shifted, Eigen::EigenvaluesOnly);
            psd.observe(-eig.eigenvalues().minCoeff() / impaired.noise_power);
            identity.observe(std::abs(state.e(k) * (1.0 + sinr(k)) - 1.0));
        }

        const RVec<double> sinr_perfect = per_ue_sinr(ch, P, fixed, impaired.with_kappa(1.0, 1.0));
        const RVec<double> sinr_access = per_ue_sinr(ch, P, fixed, impaired.with_kappa(impaired.kappa_ac, 1.0));
        for (int k = 0; k < ch.ues(); ++k) {
            const double scale = 1e-12 * (1.0 + sinr_perfect(k));
            kappa.observe(sinr(k) - sinr_access(k) - scale);
            kappa.observe(sinr_access(k) - sinr_perfect(k) - scale);
        }

        const WmmseResult<> res = wmmse_optimize(ctx, config.optimizer);
        for (const auto& run : res.runs)
            for (std::size_t i = 1; i < run.block_trace.size(); ++i)
                monotone.observe(run.block_trace[i] - run.block_trace[i - 1]);
        feasible.observe(constraint_violation(ch, P, res.allocation, impaired));
        const double se_opt = per_ue_se(ch, P, res.allocation, impaired).sum();
        const double se_fixed = per_ue_se(ch, P, fixed, impaired).sum();
        dominance.observe(se_fixed - se_opt);
    }

    return {unitary.result(), psd.result(),      diag.result(),     identity.result(), tight.result(),
            kappa.result(),   monotone.result(), feasible.result(), dominance.result()};
}

}  // namespace xlmimo
