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

#ifndef XLMIMO_SYSTEM_HPP
#define XLMIMO_SYSTEM_HPP

#include "xlmimo/types.hpp"

#include <cmath>

namespace xlmimo {

/// Hardware quality factors, noise level and power budgets.
template <typename Real = double>
struct HardwareProfile {
    Real kappa_ac = Real(0.95);
    Real kappa_frt = Real(0.95);
    Real noise_power = Real(3.98e-13);  // watts
    Real p_ue_max = Real(0.2);          // watts
    Real p_frt_max = Real(10);          // watts

    Real kappa() const { return kappa_ac * kappa_frt; }

    HardwareProfile with_kappa(Real ac, Real frt) const {
        HardwareProfile out = *this;
        out.kappa_ac = ac;
        out.kappa_frt = frt;
        return out;
    }

    void validate() const {
        if (!(kappa_ac > 0 && kappa_ac <= 1) || !(kappa_frt > 0 && kappa_frt <= 1))
            throw std::invalid_argument("HardwareProfile: quality factors must lie in (0, 1]");
        if (!(noise_power > 0)) throw std::invalid_argument("HardwareProfile: noise power must be positive");
        if (!(p_ue_max > 0) || !(p_frt_max > 0))
            throw std::invalid_argument("HardwareProfile: power limits must be positive");
    }
};

/// Fronthaul precoders P_l, one N x N matrix per subarray.
template <typename Real = double>
struct PrecoderSet {
    std::vector<CMat<Real>> P;

    const CMat<Real>& operator[](int l) const { return P[static_cast<std::size_t>(l)]; }
    int size() const { return static_cast<int>(P.size()); }
};

/// UE powers p_k (watts) and fronthaul amplification coefficients alpha_l.
template <typename Real = double>
struct Allocation {
    RVec<Real> p;
    RVec<Real> alpha;
};

/// b[l] is M x K with column k = G_l P_l h_kl; g is M x K with column k = g_k.
template <typename Real = double>
struct EffectiveChannels {
    std::vector<CMat<Real>> b;
    CMat<Real> g;
};

// ---------------------------------------------------------------------------
// Distortion covariances. Both are diagonal, returned as their diagonal.

/// diag((1 - kappa_ac) sum_k p_k h_kl h_kl^H)
template <typename Real, typename DerivedP, typename DerivedH>
RVec<Real> access_distortion_cov(const Eigen::MatrixBase<DerivedP>& p,
                                 const Eigen::MatrixBase<DerivedH>& H_l, Real kappa_ac) {
    return (Real(1) - kappa_ac) * (H_l.cwiseAbs2() * p);
}

/// diag((1 - kappa_frt) (sum_k p_k P h h^H P^H + sigma^2 P P^H))
template <typename Real, typename DerivedP>
RVec<Real> fronthaul_distortion_cov(const Eigen::MatrixBase<DerivedP>& p, const CMat<Real>& P_l,
                                    const CMat<Real>& H_l, Real kappa_frt, Real noise_power) {
    const CMat<Real> PH = P_l * H_l;
    const RVec<Real> signal = PH.cwiseAbs2() * p;
    const RVec<Real> noise = P_l.cwiseAbs2().rowwise().sum();
    return (Real(1) - kappa_frt) * (signal + noise_power * noise);
}

// ---------------------------------------------------------------------------
// Bi-SVD precoding

template <typename Real>
struct FullSvd {
    CMat<Real> U;
    RVec<Real> singular_values;
    CMat<Real> V;
};

namespace detail {

template <typename Real, typename Derived>
Complex<Real> leading_phase(const Eigen::MatrixBase<Derived>& column) {
    const Real threshold = Real(1e3) * std::numeric_limits<Real>::epsilon();
    for (Eigen::Index i = 0; i < column.size(); ++i) {
        const Real mag = std::abs(column(i));
        if (mag > threshold) return std::conj(column(i)) / mag;
    }
    return Complex<Real>(1);
}

}  // namespace detail

/// Full SVD A = U diag(s) V^H with singular values descending and the first
/// nonzero entry of every left-singular vector real and nonnegative. Paired
/// right-singular vectors are rotated with them; columns outside the paired
/// range are normalized on their own first nonzero entry.
template <typename Real>
FullSvd<Real> full_svd(const CMat<Real>& A) {
    Eigen::JacobiSVD<CMat<Real>> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    FullSvd<Real> out{svd.matrixU(), svd.singularValues(), svd.matrixV()};
    const Eigen::Index paired = std::min(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < out.U.cols(); ++i) {
        const Complex<Real> phase = detail::leading_phase<Real>(out.U.col(i));
        out.U.col(i) *= phase;
        if (i < paired) out.V.col(i) *= phase;
    }
    for (Eigen::Index i = paired; i < out.V.cols(); ++i)
        out.V.col(i) *= detail::leading_phase<Real>(out.V.col(i));
    return out;
}

/// P_l = V_G U_H^H from full SVDs of the fronthaul and access channels.
template <typename Real>
CMat<Real> bi_svd_precoder(const CMat<Real>& G_l, const CMat<Real>& H_l) {
    if (G_l.cols() != H_l.rows())
        throw std::invalid_argument("bi_svd_precoder: G and H disagree on N");
    return full_svd(G_l).V * full_svd(H_l).U.adjoint();
}

template <typename Real>
PrecoderSet<Real> bi_svd_precoders(const ChannelRealization<Real>& ch) {
    PrecoderSet<Real> out;
    out.P.reserve(ch.H.size());
    for (std::size_t l = 0; l < ch.H.size(); ++l) out.P.push_back(bi_svd_precoder(ch.G[l], ch.H[l]));
    return out;
}

// ---------------------------------------------------------------------------
// End-to-end quantities

/// b_kl = G_l P_l h_kl for every (k, l).
template <typename Real>
std::vector<CMat<Real>> per_subarray_channels(const ChannelRealization<Real>& ch,
                                              const PrecoderSet<Real>& precoders) {
    std::vector<CMat<Real>> b;
    b.reserve(ch.H.size());
    for (std::size_t l = 0; l < ch.H.size(); ++l) b.push_back(ch.G[l] * (precoders.P[l] * ch.H[l]));
    return b;
}

/// g_k = sum_l alpha_l b_kl, columnwise.
template <typename Real, typename DerivedA>
CMat<Real> aggregate_channels(const std::vector<CMat<Real>>& b, const Eigen::MatrixBase<DerivedA>& alpha) {
    CMat<Real> g = CMat<Real>::Zero(b.front().rows(), b.front().cols());
    for (std::size_t l = 0; l < b.size(); ++l) g += alpha(static_cast<Eigen::Index>(l)) * b[l];
    return g;
}

template <typename Real, typename DerivedA>
EffectiveChannels<Real> effective_channels(const ChannelRealization<Real>& ch,
                                           const PrecoderSet<Real>& precoders,
                                           const Eigen::MatrixBase<DerivedA>& alpha) {
    EffectiveChannels<Real> out;
    out.b = per_subarray_channels(ch, precoders);
    out.g = aggregate_channels(out.b, alpha);
    return out;
}

/// The UE-independent part of R_k: amplified access distortion and noise,
/// fronthaul distortion and CPU noise.
template <typename Real>
CMat<Real> impairment_covariance(const ChannelRealization<Real>& ch, const PrecoderSet<Real>& precoders,
                                 const Allocation<Real>& alloc, const HardwareProfile<Real>& hw) {
    const Eigen::Index M = ch.cpu_antennas();
    CMat<Real> R = hw.noise_power * CMat<Real>::Identity(M, M);
    for (int l = 0; l < ch.subarrays(); ++l) {
        const Real a2 = alloc.alpha(l) * alloc.alpha(l);
        if (a2 == Real(0)) continue;
        const auto& G = ch.G[static_cast<std::size_t>(l)];
        const auto& H = ch.H[static_cast<std::size_t>(l)];
        const auto& P = precoders[l];
        const RVec<Real> d_ac = access_distortion_cov(alloc.p, H, hw.kappa_ac);
        const RVec<Real> d_frt = fronthaul_distortion_cov(alloc.p, P, H, hw.kappa_frt, hw.noise_power);
        const CMat<Real> GP = G * P;
        const RVec<Real> ac = hw.kappa_frt * (d_ac.array() + hw.noise_power).matrix();
        R.noalias() += a2 * GP * ac.template cast<Complex<Real>>().asDiagonal() * GP.adjoint();
        R.noalias() += a2 * G * d_frt.template cast<Complex<Real>>().asDiagonal() * G.adjoint();
    }
    return R;
}

/// R_k given the aggregated channels g and the UE-independent part.
template <typename Real>
CMat<Real> interference_covariance(int k, const CMat<Real>& g, const CMat<Real>& impairment,
                                   const Allocation<Real>& alloc, const HardwareProfile<Real>& hw) {
    CMat<Real> R = impairment;
    const Real c = hw.kappa();
    for (Eigen::Index i = 0; i < g.cols(); ++i) {
        if (i == k) continue;
        R.noalias() += (c * alloc.p(i)) * g.col(i) * g.col(i).adjoint();
    }
    return R;
}

/// Interference-plus-distortion covariance of UE k, evaluated from scratch.
template <typename Real>
CMat<Real> interference_covariance(int k, const ChannelRealization<Real>& ch,
                                   const PrecoderSet<Real>& precoders, const Allocation<Real>& alloc,
                                   const HardwareProfile<Real>& hw) {
    const CMat<Real> g = effective_channels(ch, precoders, alloc.alpha).g;
    return interference_covariance(k, g, impairment_covariance(ch, precoders, alloc, hw), alloc, hw);
}

template <typename Real>
struct SinrSe {
    Real sinr;
    Real se;
};

/// SINR_k = kappa_frt kappa_ac p_k g_k^H R_k^{-1} g_k, SE_k = prelog log2(1 + SINR_k).
template <typename Real, typename DerivedG>
SinrSe<Real> sinr_and_se(const Eigen::MatrixBase<DerivedG>& g_k, const CMat<Real>& R_k, Real p_k,
                         const HardwareProfile<Real>& hw, Real prelog = Real(1)) {
    if (p_k == Real(0)) return {Real(0), Real(0)};
    Eigen::LLT<CMat<Real>> llt(R_k);
    if (llt.info() != Eigen::Success) throw std::runtime_error("sinr_and_se: R_k is not positive definite");
    const CVec<Real> x = llt.solve(g_k);
    const Real quad = std::max(Real(0), std::real(g_k.dot(x)));
    const Real sinr = hw.kappa() * p_k * quad;
    return {sinr, prelog * std::log2(Real(1) + sinr)};
}

/// Per-UE SINR for an allocation.
template <typename Real>
RVec<Real> per_ue_sinr(const ChannelRealization<Real>& ch, const PrecoderSet<Real>& precoders,
                       const Allocation<Real>& alloc, const HardwareProfile<Real>& hw) {
    const CMat<Real> g = effective_channels(ch, precoders, alloc.alpha).g;
    const CMat<Real> base = impairment_covariance(ch, precoders, alloc, hw);
    RVec<Real> sinr(g.cols());
    for (int k = 0; k < g.cols(); ++k)
        sinr(k) = sinr_and_se(g.col(k), interference_covariance(k, g, base, alloc, hw), alloc.p(k), hw).sinr;
    return sinr;
}

/// Per-UE spectral efficiency in bit/s/Hz.
template <typename Real>
RVec<Real> per_ue_se(const ChannelRealization<Real>& ch, const PrecoderSet<Real>& precoders,
                     const Allocation<Real>& alloc, const HardwareProfile<Real>& hw,
                     Real prelog = Real(1)) {
    return prelog * per_ue_sinr(ch, precoders, alloc, hw).unaryExpr([](Real s) { return std::log2(Real(1) + s); });
}

// ---------------------------------------------------------------------------
// Fronthaul power

/// psi_l = tr(sum_k p_k P h h^H P^H + sigma^2 P P^H), the fronthaul power at alpha_l = 1.
template <typename Real, typename DerivedP>
Real fronthaul_load(const CMat<Real>& P_l, const CMat<Real>& H_l, const Eigen::MatrixBase<DerivedP>& p,
                    Real noise_power) {
    const RVec<Real> xi = (P_l * H_l).colwise().squaredNorm().transpose();
    return xi.dot(p) + noise_power * P_l.squaredNorm();
}

template <typename Real, typename DerivedP>
Real fronthaul_power(Real alpha_l, const CMat<Real>& P_l, const CMat<Real>& H_l,
                     const Eigen::MatrixBase<DerivedP>& p, Real noise_power) {
    return alpha_l * alpha_l * fronthaul_load(P_l, H_l, p, noise_power);
}

/// Full UE power and the largest amplification meeting every fronthaul budget.
template <typename Real>
Allocation<Real> fixed_baseline_allocation(const ChannelRealization<Real>& ch, const PrecoderSet<Real>& precoders,
                                           const HardwareProfile<Real>& hw) {
    Allocation<Real> out;
    out.p = RVec<Real>::Constant(ch.ues(), hw.p_ue_max);
    out.alpha.resize(ch.subarrays());
    for (int l = 0; l < ch.subarrays(); ++l)
        out.alpha(l) = std::sqrt(hw.p_frt_max / fronthaul_load(precoders[l], ch.H[static_cast<std::size_t>(l)],
                                                                out.p, hw.noise_power));
    return out;
}

/// Largest relative violation of the UE and fronthaul power constraints (0 if feasible).
template <typename Real>
Real constraint_violation(const ChannelRealization<Real>& ch, const PrecoderSet<Real>& precoders,
                          const Allocation<Real>& alloc, const HardwareProfile<Real>& hw) {
    Real worst = Real(0);
    for (Eigen::Index k = 0; k < alloc.p.size(); ++k) {
        worst = std::max(worst, -alloc.p(k) / hw.p_ue_max);
        worst = std::max(worst, alloc.p(k) / hw.p_ue_max - Real(1));
    }
    for (int l = 0; l < ch.subarrays(); ++l) {
        worst = std::max(worst, -alloc.alpha(l));
        const Real pw = fronthaul_power(alloc.alpha(l), precoders[l], ch.H[static_cast<std::size_t>(l)],
                                        alloc.p, hw.noise_power);
        worst = std::max(worst, pw / hw.p_frt_max - Real(1));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Sample-level oracle

template <typename Real>
struct SignalStatistics {
    CVec<Real> mean;
    CMat<Real> covariance;
    std::size_t samples = 0;
};

/// Propagates random symbols, distortions and noise through the two-slot
/// signal chain and returns the empirical mean and covariance of the CPU
/// received signal. Distortion terms are drawn only when kappa < 1.
template <typename Real>
SignalStatistics<Real> simulate_signal_samples(const ChannelRealization<Real>& ch,
                                               const PrecoderSet<Real>& precoders,
                                               const Allocation<Real>& alloc,
                                               const HardwareProfile<Real>& hw, std::size_t n_samples,
                                               Rng& rng) {
    if (n_samples < 1) throw std::invalid_argument("simulate_signal_samples: need at least one sample");
    std::normal_distribution<Real> normal(Real(0), std::sqrt(Real(0.5)));
    auto cn = [&](Eigen::Index n) {
        CVec<Real> z(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Real re = normal(rng);
            const Real im = normal(rng);
            z(i) = Complex<Real>(re, im);
        }
        return z;
    };

    const int L = ch.subarrays();
    const Eigen::Index N = ch.antennas();
    const Eigen::Index M = ch.cpu_antennas();
    const Eigen::Index K = ch.ues();
    const Real sigma = std::sqrt(hw.noise_power);
    const RVec<Real> amp = alloc.p.cwiseSqrt();

    std::vector<RVec<Real>> ac_std;
    std::vector<RVec<Real>> frt_std;
    for (int l = 0; l < L; ++l) {
        const auto& H = ch.H[static_cast<std::size_t>(l)];
        ac_std.push_back(access_distortion_cov(alloc.p, H, hw.kappa_ac).cwiseSqrt());
        frt_std.push_back(
            fronthaul_distortion_cov(alloc.p, precoders[l], H, hw.kappa_frt, hw.noise_power).cwiseSqrt());
    }

    SignalStatistics<Real> stats;
    stats.mean = CVec<Real>::Zero(M);
    stats.covariance = CMat<Real>::Zero(M, M);
    stats.samples = n_samples;
    for (std::size_t s = 0; s < n_samples; ++s) {
        const CVec<Real> symbols = cn(K);
        CVec<Real> y = sigma * cn(M);
        for (int l = 0; l < L; ++l) {
            const auto& H = ch.H[static_cast<std::size_t>(l)];
            CVec<Real> y_l = std::sqrt(hw.kappa_ac) * (H * amp.template cast<Complex<Real>>().cwiseProduct(symbols));
            if (hw.kappa_ac < Real(1)) y_l += ac_std[static_cast<std::size_t>(l)].template cast<Complex<Real>>().cwiseProduct(cn(N));
            y_l += sigma * cn(N);
            CVec<Real> tx = std::sqrt(hw.kappa_frt) * alloc.alpha(l) * (precoders[l] * y_l);
            if (hw.kappa_frt < Real(1))
                tx += alloc.alpha(l) * frt_std[static_cast<std::size_t>(l)].template cast<Complex<Real>>().cwiseProduct(cn(N));
            y += ch.G[static_cast<std::size_t>(l)] * tx;
        }
        stats.mean += y;
        stats.covariance.noalias() += y * y.adjoint();
    }
    const Real inv = Real(1) / static_cast<Real>(n_samples);
    stats.mean *= inv;
    stats.covariance *= inv;
    return stats;
}

}  // namespace xlmimo

#endif  // XLMIMO_SYSTEM_HPP
