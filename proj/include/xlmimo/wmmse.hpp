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

#ifndef XLMIMO_WMMSE_HPP
#define XLMIMO_WMMSE_HPP

#include "xlmimo/qpsolve.hpp"
#include "xlmimo/system.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <string>

namespace xlmimo {

/// A fixed realization with its precoders, plus quantities that do not
/// change across WMMSE iterations. Holds references; the realization and
/// precoders must outlive it.
template <typename Real = double>
class WmmseContext {
public:
    WmmseContext(const ChannelRealization<Real>& ch, const PrecoderSet<Real>& precoders,
                 const HardwareProfile<Real>& hw)
        : ch_(ch), precoders_(precoders), hw_(hw) {
        hw.validate();
        const int L = ch.subarrays();
        if (precoders.size() != L) throw std::invalid_argument("WmmseContext: one precoder per subarray required");
        xi_.resize(L, ch.ues());
        noise_load_.resize(L);
        for (int l = 0; l < L; ++l) {
            const auto& G = ch.G[static_cast<std::size_t>(l)];
            const auto& H = ch.H[static_cast<std::size_t>(l)];
            const auto& P = precoders[l];
            const CMat<Real> PH = P * H;
            b_.push_back(G * PH);
            GP_.push_back(G * P);
            h_abs2_.push_back(H.cwiseAbs2());
            ph_abs2_.push_back(PH.cwiseAbs2());
            p_rows_.push_back(P.cwiseAbs2().rowwise().sum());
            xi_.row(l) = PH.colwise().squaredNorm();
            noise_load_(l) = hw.noise_power * P.squaredNorm();
        }
    }

    const ChannelRealization<Real>& channels() const { return ch_; }
    const PrecoderSet<Real>& precoders() const { return precoders_; }
    const HardwareProfile<Real>& hardware() const { return hw_; }

    int subarrays() const { return ch_.subarrays(); }
    int ues() const { return ch_.ues(); }
    int cpu_antennas() const { return ch_.cpu_antennas(); }

    /// b_l = G_l P_l H_l (M x K).
    const CMat<Real>& b(int l) const { return b_[static_cast<std::size_t>(l)]; }
    const CMat<Real>& GP(int l) const { return GP_[static_cast<std::size_t>(l)]; }
    const CMat<Real>& G(int l) const { return ch_.G[static_cast<std::size_t>(l)]; }
    /// |h_kl,n|^2 (N x K).
    const RMat<Real>& h_abs2(int l) const { return h_abs2_[static_cast<std::size_t>(l)]; }
    /// |(P_l h_kl)_n|^2 (N x K).
    const RMat<Real>& ph_abs2(int l) const { return ph_abs2_[static_cast<std::size_t>(l)]; }
    /// diag(P_l P_l^H).
    const RVec<Real>& precoder_row_energy(int l) const { return p_rows_[static_cast<std::size_t>(l)]; }
    /// xi_{l,k} = ||P_l h_kl||^2 (L x K).
    const RMat<Real>& xi() const { return xi_; }
    /// sigma^2 tr(P_l P_l^H) per subarray.
    const RVec<Real>& noise_load() const { return noise_load_; }

    /// psi_l for UE powers p.
    RVec<Real> fronthaul_loads(const RVec<Real>& p) const { return xi_ * p + noise_load_; }

    CMat<Real> aggregate(const RVec<Real>& alpha) const { return aggregate_channels(b_, alpha); }

private:
    const ChannelRealization<Real>& ch_;
    const PrecoderSet<Real>& precoders_;
    HardwareProfile<Real> hw_;
    std::vector<CMat<Real>> b_;
    std::vector<CMat<Real>> GP_;
    std::vector<RMat<Real>> h_abs2_;
    std::vector<RMat<Real>> ph_abs2_;
    std::vector<RVec<Real>> p_rows_;
    RMat<Real> xi_;
    RVec<Real> noise_load_;
};

/// Combiners (columns of v), MSE weights and MSEs, and the allocation they refer to.
template <typename Real = double>
struct WmmseState {
    CMat<Real> v;
    RVec<Real> w;
    RVec<Real> e;
    Allocation<Real> allocation;
    Real objective = Real(0);
    int iteration = 0;
};

// ---------------------------------------------------------------------------
// Per-UE closed forms

/// v_k = (R_k + rho_k g_k g_k^H)^{-1} sqrt(rho_k) g_k.
template <typename Real, typename DerivedG>
CVec<Real> mmse_combiner(const Eigen::MatrixBase<DerivedG>& g_k, const CMat<Real>& R_k, Real rho_k) {
    if (rho_k <= Real(0)) return CVec<Real>::Zero(g_k.size());
    CMat<Real> total = R_k;
    total.noalias() += rho_k * g_k * g_k.adjoint();
    Eigen::LLT<CMat<Real>> llt(total);
    if (llt.info() != Eigen::Success) throw std::runtime_error("mmse_combiner: covariance is not positive definite");
    return llt.solve(std::sqrt(rho_k) * g_k);
}

/// e_k = 1 - 2 Re(sqrt(rho) v^H g) + v^H (R + rho g g^H) v.
template <typename Real, typename DerivedV, typename DerivedG>
Real mse(const Eigen::MatrixBase<DerivedV>& v_k, const Eigen::MatrixBase<DerivedG>& g_k, const CMat<Real>& R_k,
         Real rho_k) {
    const Complex<Real> vg = v_k.dot(g_k);
    const Real quad = std::real(v_k.dot(R_k * v_k));
    return Real(1) - Real(2) * std::sqrt(rho_k) * std::real(vg) + quad + rho_k * std::norm(vg);
}

template <typename Real>
RVec<Real> optimal_weights(const RVec<Real>& e) {
    if ((e.array() <= Real(0)).any())
        throw std::domain_error("optimal_weights: nonpositive MSE indicates a numerical failure");
    return e.cwiseInverse();
}

/// sum_k (w_k e_k - ln w_k).
template <typename Real>
Real wmmse_objective(const RVec<Real>& w, const RVec<Real>& e) {
    return w.dot(e) - w.array().log().sum();
}

/// MSEs of the given combiners under an allocation.
template <typename Real>
RVec<Real> mses(const WmmseContext<Real>& ctx, const Allocation<Real>& alloc, const CMat<Real>& v) {
    const auto& hw = ctx.hardware();
    const CMat<Real> g = ctx.aggregate(alloc.alpha);
    const CMat<Real> base = impairment_covariance(ctx.channels(), ctx.precoders(), alloc, hw);
    RVec<Real> e(ctx.ues());
    for (int k = 0; k < ctx.ues(); ++k)
        e(k) = mse(v.col(k), g.col(k), interference_covariance(k, g, base, alloc, hw), hw.kappa() * alloc.p(k));
    return e;
}

// ---------------------------------------------------------------------------
// Block updates on the state

/// MMSE combiners and their MSEs for the current allocation.
template <typename Real>
void update_combiners(const WmmseContext<Real>& ctx, WmmseState<Real>& state) {
    const auto& hw = ctx.hardware();
    const auto& alloc = state.allocation;
    const CMat<Real> g = ctx.aggregate(alloc.alpha);
    const CMat<Real> base = impairment_covariance(ctx.channels(), ctx.precoders(), alloc, hw);
    state.v.resize(ctx.cpu_antennas(), ctx.ues());
    state.e.resize(ctx.ues());
    for (int k = 0; k < ctx.ues(); ++k) {
        const CMat<Real> R = interference_covariance(k, g, base, alloc, hw);
        const Real rho = hw.kappa() * alloc.p(k);
        state.v.col(k) = mmse_combiner(g.col(k), R, rho);
        state.e(k) = mse(state.v.col(k), g.col(k), R, rho);
    }
    if (state.w.size() != ctx.ues()) state.w = RVec<Real>::Ones(ctx.ues());
    state.objective = wmmse_objective(state.w, state.e);
}

template <typename Real>
void update_weights(WmmseState<Real>& state) {
    state.w = optimal_weights(state.e);
    state.objective = wmmse_objective(state.w, state.e);
}

// ---------------------------------------------------------------------------
// UE-power subproblem: sum_k w_k e_k = constant + sum_k A_k q_k^2 - 2 B_k q_k

template <typename Real = double>
struct UePowerSubproblem {
    RVec<Real> A;
    RVec<Real> B;
    RMat<Real> xi;          // L x K
    RVec<Real> alpha;
    RVec<Real> noise_load;  // sigma^2 tr(P_l P_l^H)
    Real q_max = Real(0);
    Real p_frt_max = Real(0);
    Real constant = Real(0);

    Real weighted_mse(const RVec<Real>& q) const {
        return constant + (A.array() * q.array().square() - Real(2) * B.array() * q.array()).sum();
    }
};

template <typename Real>
UePowerSubproblem<Real> assemble_ue_power_subproblem(const WmmseContext<Real>& ctx, const WmmseState<Real>& state) {
    const auto& hw = ctx.hardware();
    const auto& alpha = state.allocation.alpha;
    const auto& v = state.v;
    const auto& w = state.w;
    const Eigen::Index K = ctx.ues();
    const Real c = hw.kappa();
    const Real s2 = hw.noise_power;

    const CMat<Real> g = ctx.aggregate(alpha);
    const CMat<Real> vg = v.adjoint() * g;  // (j, k) = v_j^H g_k

    // Distortion contributions v_j^H (C_ac,k + C_frt,k) v_j, indexed (j, k).
    RMat<Real> distortion = RMat<Real>::Zero(K, K);
    RVec<Real> noise_quad = s2 * v.colwise().squaredNorm().transpose();
    for (int l = 0; l < ctx.subarrays(); ++l) {
        const Real a2 = alpha(l) * alpha(l);
        if (a2 == Real(0)) continue;
        const RMat<Real> u2 = (ctx.GP(l).adjoint() * v).cwiseAbs2();  // N x K, |(P^H G^H v_j)_n|^2
        const RMat<Real> r2 = (ctx.G(l).adjoint() * v).cwiseAbs2();   // N x K, |(G^H v_j)_n|^2
        distortion.noalias() += (a2 * hw.kappa_frt * (Real(1) - hw.kappa_ac)) * u2.transpose() * ctx.h_abs2(l);
        distortion.noalias() += (a2 * (Real(1) - hw.kappa_frt)) * r2.transpose() * ctx.ph_abs2(l);
        noise_quad += (a2 * s2) * (hw.kappa_frt * u2.colwise().sum().transpose() +
                                   (Real(1) - hw.kappa_frt) * (r2.transpose() * ctx.precoder_row_energy(l)));
    }

    UePowerSubproblem<Real> sub;
    sub.A = c * (vg.cwiseAbs2().transpose() * w) + distortion.transpose() * w;
    sub.B.resize(K);
    for (Eigen::Index k = 0; k < K; ++k) sub.B(k) = w(k) * std::sqrt(c) * std::real(vg(k, k));
    sub.xi = ctx.xi();
    sub.alpha = alpha;
    sub.noise_load = ctx.noise_load();
    sub.q_max = std::sqrt(hw.p_ue_max);
    sub.p_frt_max = hw.p_frt_max;
    sub.constant = w.sum() + w.dot(noise_quad);
    return sub;
}

template <typename Real = double>
struct BlockUpdate {
    RVec<Real> value;
    KktReport report;
    bool kept_previous = false;
};

/// Solves the UE-power QCQP in q = sqrt(p) and returns the new powers p = q^2.
/// The problem is passed to the solver in units of q_max so the box is [0, 1].
template <typename Real>
BlockUpdate<Real> update_ue_powers(const UePowerSubproblem<Real>& sub, const SolverOptions& options = {},
                                   const std::optional<RVec<Real>>& current_p = std::nullopt) {
    const Eigen::Index K = sub.A.size();
    const Real qm = sub.q_max;

    SeparableQcqp<Real> qp;
    qp.a = sub.A * (qm * qm);
    qp.b = sub.B * qm;
    qp.upper = RVec<Real>::Ones(K);
    std::vector<Eigen::Index> rows;
    RMat<Real> c(sub.alpha.size(), K);
    RVec<Real> d(sub.alpha.size());
    for (Eigen::Index l = 0; l < sub.alpha.size(); ++l) {
        const Real a2 = sub.alpha(l) * sub.alpha(l);
        const RVec<Real> coeff = (a2 * qm * qm) * sub.xi.row(l).transpose();
        if (a2 == Real(0) || coeff.maxCoeff() <= Real(0)) continue;
        const Real budget = sub.p_frt_max - a2 * sub.noise_load(l);
        if (budget <= Real(1e-12) * sub.p_frt_max) {
            // Amplification already uses the whole budget on noise alone.
            for (Eigen::Index k = 0; k < K; ++k)
                if (coeff(k) > Real(0)) qp.upper(k) = Real(0);
            continue;
        }
        c.row(static_cast<Eigen::Index>(rows.size())) = coeff.transpose() / budget;
        d(static_cast<Eigen::Index>(rows.size())) = Real(1);
        rows.push_back(l);
    }
    const auto m = static_cast<Eigen::Index>(rows.size());
    qp.c = c.topRows(m);
    qp.d = d.head(m);

    const QpSolution<Real> sol = solve_separable_qcqp(qp, options);
    BlockUpdate<Real> out;
    out.report = sol.report;
    RVec<Real> q = qm * sol.x;
    if (current_p) {
        const RVec<Real> q_old = current_p->cwiseMax(Real(0)).cwiseSqrt();
        if (sub.weighted_mse(q) > sub.weighted_mse(q_old)) {
            q = q_old;
            out.kept_previous = true;
        }
    }
    out.value = q.cwiseAbs2().cwiseMin(sub.q_max * sub.q_max);
    return out;
}

// ---------------------------------------------------------------------------
// Amplification subproblem: sum_k w_k e_k = constant + alpha^T H alpha - 2 f^T alpha

template <typename Real = double>
struct AlphaSubproblem {
    RMat<Real> H;      // real part of the Hermitian quadratic form
    RVec<Real> f;      // real part of the linear term
    RVec<Real> psi;    // fronthaul load per subarray at the current powers
    RVec<Real> upper;  // sqrt(p_frt_max / psi_l)
    Real constant = Real(0);

    Real weighted_mse(const RVec<Real>& alpha) const {
        return constant + alpha.dot(H * alpha) - Real(2) * f.dot(alpha);
    }
};

template <typename Real>
AlphaSubproblem<Real> assemble_alpha_subproblem(const WmmseContext<Real>& ctx, const WmmseState<Real>& state) {
    const auto& hw = ctx.hardware();
    const auto& p = state.allocation.p;
    const auto& v = state.v;
    const auto& w = state.w;
    const int L = ctx.subarrays();
    const Eigen::Index K = ctx.ues();
    const Real c = hw.kappa();
    const Real s2 = hw.noise_power;

    // t(k)(l, i) = v_k^H b_il and delta(k, l).
    std::vector<CMat<Real>> t(static_cast<std::size_t>(K), CMat<Real>(L, K));
    RMat<Real> delta(K, L);
    for (int l = 0; l < L; ++l) {
        const CMat<Real> vb = v.adjoint() * ctx.b(l);  // (k, i)
        for (Eigen::Index k = 0; k < K; ++k) t[static_cast<std::size_t>(k)].row(l) = vb.row(k);

        const auto& H = ctx.channels().H[static_cast<std::size_t>(l)];
        const RVec<Real> d_ac = access_distortion_cov(p, H, hw.kappa_ac);
        const RVec<Real> d_frt = fronthaul_distortion_cov(p, ctx.precoders()[l], H, hw.kappa_frt, s2);
        const RMat<Real> u2 = (ctx.GP(l).adjoint() * v).cwiseAbs2();
        const RMat<Real> r2 = (ctx.G(l).adjoint() * v).cwiseAbs2();
        delta.col(l) = hw.kappa_frt * (u2.transpose() * (d_ac.array() + s2).matrix()) + r2.transpose() * d_frt;
    }

    AlphaSubproblem<Real> sub;
    sub.H = RMat<Real>::Zero(L, L);
    CVec<Real> f = CVec<Real>::Zero(L);
    const CVec<Real> amp = p.cwiseSqrt().template cast<Complex<Real>>();
    for (Eigen::Index k = 0; k < K; ++k) {
        const auto& tk = t[static_cast<std::size_t>(k)];
        const CMat<Real> scaled = tk * amp.asDiagonal();
        sub.H.noalias() += (c * w(k)) * (scaled * scaled.adjoint()).real();
        f += (w(k) * std::sqrt(c * p(k))) * tk.col(k);
    }
    sub.H.diagonal() += delta.transpose() * w;
    sub.H = Real(0.5) * (sub.H + sub.H.transpose()).eval();
    sub.f = f.real();
    sub.psi = ctx.fronthaul_loads(p);
    sub.upper = (hw.p_frt_max / sub.psi.array()).sqrt().matrix();
    sub.constant = w.sum() + s2 * w.dot(v.colwise().squaredNorm().transpose());
    return sub;
}

/// Solves the box QP in alpha, posed in units of the per-subarray bound.
template <typename Real>
BlockUpdate<Real> update_alpha(const AlphaSubproblem<Real>& sub, const SolverOptions& options = {},
                               const std::optional<RVec<Real>>& current_alpha = std::nullopt) {
    const Eigen::Index L = sub.f.size();
    const auto scale = sub.upper.asDiagonal();

    BoxQp<Real> qp;
    qp.Q = scale * sub.H * scale;
    qp.Q = Real(0.5) * (qp.Q + qp.Q.transpose()).eval();
    qp.b = scale * sub.f;
    qp.lower = RVec<Real>::Zero(L);
    qp.upper = RVec<Real>::Ones(L);

    std::optional<RVec<Real>> start;
    if (current_alpha) start = current_alpha->cwiseQuotient(sub.upper);
    const QpSolution<Real> sol = solve_box_qp(qp, options, start);

    BlockUpdate<Real> out;
    out.report = sol.report;
    out.value = sub.upper.cwiseProduct(sol.x);
    if (current_alpha) {
        const RVec<Real> old = current_alpha->cwiseMax(Real(0)).cwiseMin(sub.upper);
        if (sub.weighted_mse(out.value) > sub.weighted_mse(old)) {
            out.value = old;
            out.kept_previous = true;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient of the sum-rate objective

template <typename Real = double>
struct AllocationGradient {
    RVec<Real> p;
    RVec<Real> alpha;
};

/// Gradient of K - sum_k ln(1 + SINR_k) with respect to (p, alpha). The state
/// must hold the MMSE combiners and optimal weights of its allocation, where
/// the weighted MSE touches the objective and shares its gradient.
template <typename Real>
AllocationGradient<Real> sum_rate_gradient(const WmmseContext<Real>& ctx, const WmmseState<Real>& state) {
    const auto& hw = ctx.hardware();
    const auto& alloc = state.allocation;
    const Real c = hw.kappa();
    const auto sub = assemble_ue_power_subproblem(ctx, state);

    AllocationGradient<Real> grad;
    grad.p = sub.A;
    const CMat<Real> g = ctx.aggregate(alloc.alpha);
    std::optional<CMat<Real>> base;
    for (int j = 0; j < ctx.ues(); ++j) {
        Real gain;  // w_j c g_j^H (R_j + c p_j g_j g_j^H)^{-1} g_j
        if (alloc.p(j) > Real(0)) {
            gain = state.w(j) * std::sqrt(c) * std::real(state.v.col(j).dot(g.col(j))) / std::sqrt(alloc.p(j));
        } else {
            if (!base) base = impairment_covariance(ctx.channels(), ctx.precoders(), alloc, hw);
            const Eigen::LLT<CMat<Real>> llt(interference_covariance(j, g, *base, alloc, hw));
            gain = state.w(j) * c * std::real(g.col(j).dot(llt.solve(g.col(j))));
        }
        grad.p(j) -= gain;
    }
    const auto asub = assemble_alpha_subproblem(ctx, state);
    grad.alpha = Real(2) * (asub.H * alloc.alpha - asub.f);
    return grad;
}

// ---------------------------------------------------------------------------
// Joint refinement in box coordinates
//
// With u_k = p_k / p_ue_max and t_l = alpha_l / alpha_max,l(p), where
// alpha_max,l(p) = sqrt(p_frt_max / psi_l(p)), the feasible set is the unit box.

template <typename Real>
RVec<Real> amplification_limits(const WmmseContext<Real>& ctx, const RVec<Real>& p) {
    return (ctx.hardware().p_frt_max / ctx.fronthaul_loads(p).array()).sqrt().matrix();
}

template <typename Real>
RVec<Real> to_box_coordinates(const WmmseContext<Real>& ctx, const Allocation<Real>& alloc) {
    const int K = ctx.ues();
    const int L = ctx.subarrays();
    RVec<Real> z(K + L);
    z.head(K) = (alloc.p / ctx.hardware().p_ue_max).cwiseMax(Real(0)).cwiseMin(Real(1));
    z.tail(L) = alloc.alpha.cwiseQuotient(amplification_limits(ctx, alloc.p)).cwiseMax(Real(0)).cwiseMin(Real(1));
    return z;
}

template <typename Real>
Allocation<Real> from_box_coordinates(const WmmseContext<Real>& ctx, const RVec<Real>& z) {
    const int K = ctx.ues();
    const int L = ctx.subarrays();
    Allocation<Real> alloc;
    alloc.p = ctx.hardware().p_ue_max * z.head(K);
    alloc.alpha = z.tail(L).cwiseProduct(amplification_limits(ctx, alloc.p));
    return alloc;
}

/// MMSE combiners, optimal weights and the sum-rate objective at an allocation.
template <typename Real>
WmmseState<Real> evaluate_state(const WmmseContext<Real>& ctx, const Allocation<Real>& alloc) {
    WmmseState<Real> state;
    state.allocation = alloc;
    update_combiners(ctx, state);
    update_weights(state);
    return state;
}

/// Gradient of the sum-rate objective in box coordinates.
template <typename Real>
RVec<Real> box_gradient(const WmmseContext<Real>& ctx, const WmmseState<Real>& state) {
    const auto grad = sum_rate_gradient(ctx, state);
    const auto& alloc = state.allocation;
    const int K = ctx.ues();
    const int L = ctx.subarrays();
    const RVec<Real> psi = ctx.fronthaul_loads(alloc.p);
    // d alpha_l / d p_k at fixed t_l is -alpha_l xi_lk / (2 psi_l).
    const RVec<Real> weight = grad.alpha.cwiseProduct(alloc.alpha).cwiseQuotient(Real(2) * psi);
    RVec<Real> out(K + L);
    out.head(K) = ctx.hardware().p_ue_max * (grad.p - ctx.xi().transpose() * weight);
    out.tail(L) = grad.alpha.cwiseProduct(amplification_limits(ctx, alloc.p));
    return out;
}

/// One projected Newton step on the sum-rate objective over the unit box.
/// Coordinates at a bound with the gradient pointing outward are held fixed;
/// on the rest the Hessian, from differences of the analytic gradient, is
/// made positive definite by taking absolute eigenvalues. The step is backtracked until it satisfies the Armijo
/// condition; on failure the state is left unchanged and false is returned.
/// `state` must come from evaluate_state.
template <typename Real>
bool joint_newton_step(const WmmseContext<Real>& ctx, WmmseState<Real>& state) {
    const RVec<Real> z = to_box_coordinates(ctx, state.allocation);
    const RVec<Real> g = box_gradient(ctx, state);
    const Eigen::Index n = z.size();

    const Real pg_norm = (z - (z - g).cwiseMax(Real(0)).cwiseMin(Real(1))).norm();
    if (pg_norm == Real(0)) return false;
    const Real eps = std::min(Real(1e-3), pg_norm);
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool held = (z(i) <= eps && g(i) > Real(0)) || (z(i) >= Real(1) - eps && g(i) < Real(0));
        if (!held) free.push_back(i);
    }

    RVec<Real> d = -g;
    const auto m = static_cast<Eigen::Index>(free.size());
    if (m > 0) {
        const Real h = std::max(Real(1e-6), std::sqrt(std::numeric_limits<Real>::epsilon()));
        RMat<Real> hess(m, m);
        for (Eigen::Index a = 0; a < m; ++a) {
            const Eigen::Index i = free[static_cast<std::size_t>(a)];
            const Real step = z(i) + h <= Real(1) ? h : -h;
            RVec<Real> zs = z;
            zs(i) += step;
            const RVec<Real> gs = box_gradient(ctx, evaluate_state(ctx, from_box_coordinates(ctx, zs)));
            for (Eigen::Index b = 0; b < m; ++b) {
                const Eigen::Index j = free[static_cast<std::size_t>(b)];
                hess(b, a) = (gs(j) - g(j)) / step;
            }
        }
        hess = Real(0.5) * (hess + hess.transpose()).eval();
        const Eigen::SelfAdjointEigenSolver<RMat<Real>> eig(hess);
        RVec<Real> lambda = eig.eigenvalues().cwiseAbs();
        lambda = lambda.cwiseMax(Real(1e-8) * std::max(lambda.maxCoeff(), std::numeric_limits<Real>::min()));
        RVec<Real> g_free(m);
        for (Eigen::Index a = 0; a < m; ++a) g_free(a) = g(free[static_cast<std::size_t>(a)]);
        const RVec<Real> d_free =
            -(eig.eigenvectors() * (eig.eigenvectors().transpose() * g_free).cwiseQuotient(lambda));
        for (Eigen::Index a = 0; a < m; ++a) d(free[static_cast<std::size_t>(a)]) = d_free(a);
    }

    Real t = Real(1);
    for (int backtrack = 0; backtrack < 40; ++backtrack, t *= Real(0.5)) {
        const RVec<Real> trial = (z + t * d).cwiseMax(Real(0)).cwiseMin(Real(1));
        const Allocation<Real> alloc = from_box_coordinates(ctx, trial);
        const RVec<Real> sinr = per_ue_sinr(ctx.channels(), ctx.precoders(), alloc, ctx.hardware());
        const Real value = static_cast<Real>(sinr.size()) - sinr.array().log1p().sum();
        if (value < state.objective && value <= state.objective + Real(1e-4) * g.dot(trial - z)) {
            state = evaluate_state(ctx, alloc);
            return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------
// Alternating optimization

template <typename Real = double>
struct WmmseOptions {
    int max_iter = 200;
    double tol = 1e-6;
    SolverOptions solver;
    std::optional<Allocation<Real>> initial;  // defaults to the fixed baseline
    /// Follow the four block updates of every iteration with a joint Newton step.
    bool joint_step = true;
    /// Extra runs from random points of the feasible set; the best run is returned.
    int restarts = 4;
    std::uint64_t restart_seed = 1;
};

/// One run of the alternating optimization from a single starting point.
template <typename Real = double>
struct WmmseRun {
    Allocation<Real> allocation;  // best allocation of this run
    Real value = std::numeric_limits<Real>::infinity();
    /// K - sum_k ln(1 + SINR_k) of the allocation entering each iteration.
    std::vector<Real> trace;
    /// Objective after every block update (v, w, q, alpha and the joint step).
    std::vector<Real> block_trace;
    int iterations = 0;
    bool converged = false;
    int solver_warnings = 0;
    std::string diagnostic;
};

template <typename Real = double>
struct WmmseResult {
    Allocation<Real> allocation;
    /// Trace, block trace, iteration count and convergence of the selected run.
    std::vector<Real> trace;
    std::vector<Real> block_trace;
    int iterations = 0;
    bool converged = false;
    int solver_warnings = 0;  // over all runs
    std::string diagnostic;
    /// Every run; the first starts from the initial allocation.
    std::vector<WmmseRun<Real>> runs;
    std::size_t selected = 0;
};

/// Alternates v -> w -> q -> alpha (and optionally a joint Newton step) from
/// `start` until the relative change of the sum-rate objective falls below
/// options.tol or max_iter is reached. The returned allocation is the best
/// seen, so it is never worse than `start`.
template <typename Real>
WmmseRun<Real> wmmse_run(const WmmseContext<Real>& ctx, const WmmseOptions<Real>& options,
                         const Allocation<Real>& start) {
    WmmseRun<Real> run;
    WmmseState<Real> state;
    state.allocation = start;
    state.w = RVec<Real>::Ones(ctx.ues());
    run.allocation = start;
    Real previous = std::numeric_limits<Real>::quiet_NaN();

    auto note = [&](const KktReport& r, const char* block) {
        if (!r.converged) {
            ++run.solver_warnings;
            if (run.diagnostic.empty()) run.diagnostic = std::string(block) + " subproblem did not reach tolerance";
        }
    };

    try {
        for (int it = 1; it <= options.max_iter + 1; ++it) {
            update_combiners(ctx, state);
            run.block_trace.push_back(state.objective);
            update_weights(state);
            run.block_trace.push_back(state.objective);

            const Real value = state.objective;  // K - sum ln(1 + SINR) here
            if (!std::isfinite(value)) throw std::runtime_error("objective is not finite");
            run.trace.push_back(value);
            if (value < run.value) {
                run.value = value;
                run.allocation = state.allocation;
            }
            if (std::isfinite(previous) && std::abs(previous - value) <= options.tol * std::abs(value)) {
                run.converged = true;
                break;
            }
            if (it > options.max_iter) break;
            previous = value;
            state.iteration = it;
            run.iterations = it;

            const auto q_update = update_ue_powers(assemble_ue_power_subproblem(ctx, state), options.solver,
                                                   std::optional<RVec<Real>>(state.allocation.p));
            note(q_update.report, "UE-power");
            state.allocation.p = q_update.value;
            state.e = mses(ctx, state.allocation, state.v);
            run.block_trace.push_back(wmmse_objective(state.w, state.e));

            const auto a_update = update_alpha(assemble_alpha_subproblem(ctx, state), options.solver,
                                               std::optional<RVec<Real>>(state.allocation.alpha));
            note(a_update.report, "amplification");
            state.allocation.alpha = a_update.value;
            state.e = mses(ctx, state.allocation, state.v);
            run.block_trace.push_back(wmmse_objective(state.w, state.e));

            if (options.joint_step) {
                state = evaluate_state(ctx, state.allocation);
                joint_newton_step(ctx, state);
                run.block_trace.push_back(state.objective);
            }
        }
    } catch (const std::exception& ex) {
        run.diagnostic = std::string("aborted: ") + ex.what();
        run.converged = false;
    }
    return run;
}

/// Runs the alternating optimization from the initial allocation (the fixed
/// baseline by default) and from options.restarts random feasible points,
/// and returns the best result. Never worse than the initial allocation.
template <typename Real>
WmmseResult<Real> wmmse_optimize(const WmmseContext<Real>& ctx, const WmmseOptions<Real>& options = {}) {
    WmmseResult<Real> result;
    const Allocation<Real> initial = options.initial ? *options.initial
                                                     : fixed_baseline_allocation(ctx.channels(), ctx.precoders(),
                                                                                 ctx.hardware());
    result.allocation = initial;
    if (initial.p.size() != ctx.ues() || initial.alpha.size() != ctx.subarrays() || !initial.p.allFinite() ||
        !initial.alpha.allFinite()) {
        result.diagnostic = "aborted: initial allocation is malformed";
        return result;
    }

    std::vector<Allocation<Real>> starts{initial};
    Rng rng(options.restart_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int r = 0; r < options.restarts; ++r) {
        RVec<Real> z(ctx.ues() + ctx.subarrays());
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = static_cast<Real>(unit(rng));
        starts.push_back(from_box_coordinates(ctx, z));
    }

    for (const auto& start : starts) {
        result.runs.push_back(wmmse_run(ctx, options, start));
        result.solver_warnings += result.runs.back().solver_warnings;
    }
    // Runs that aborted before evaluating anything keep value = inf and lose.
    for (std::size_t i = 1; i < result.runs.size(); ++i)
        if (result.runs[i].value < result.runs[result.selected].value) result.selected = i;

    const auto& best = result.runs[result.selected];
    if (std::isfinite(best.value)) result.allocation = best.allocation;
    result.trace = best.trace;
    result.block_trace = best.block_trace;
    result.iterations = best.iterations;
    result.converged = best.converged;
    result.diagnostic = best.diagnostic;
    return result;
}

}  // namespace xlmimo

#endif  // XLMIMO_WMMSE_HPP
