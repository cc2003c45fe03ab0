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

#ifndef XLMIMO_QPSOLVE_HPP
#define XLMIMO_QPSOLVE_HPP

#include "xlmimo/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace xlmimo {

struct SolverOptions {
    double tol = 1e-8;
    int max_iter = 10000;
};

/// Optimality certificate of a returned solution. `converged` implies every
/// residual is at most the requested tolerance.
struct KktReport {
    double stationarity = 0.0;
    double primal_violation = 0.0;
    double complementarity = 0.0;
    int iterations = 0;
    bool converged = false;
};

// ---------------------------------------------------------------------------
// Box-constrained QP:  minimize x^T Q x - 2 b^T x  s.t.  lower <= x <= upper

template <typename Real = double>
struct BoxQp {
    RMat<Real> Q;
    RVec<Real> b;
    RVec<Real> lower;
    RVec<Real> upper;

    Eigen::Index size() const { return b.size(); }

    Real objective(const RVec<Real>& x) const { return x.dot(Q * x) - Real(2) * b.dot(x); }
    RVec<Real> gradient(const RVec<Real>& x) const { return Real(2) * (Q * x - b); }

    void validate() const {
        const Eigen::Index n = b.size();
        if (Q.rows() != n || Q.cols() != n || lower.size() != n || upper.size() != n)
            throw std::invalid_argument("BoxQp: dimension mismatch");
        if ((lower.array() > upper.array()).any()) throw std::invalid_argument("BoxQp: lower > upper");
        const Real scale = std::max(Real(1), Q.cwiseAbs().maxCoeff());
        if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > Real(1e-12) * scale)
            throw std::invalid_argument("BoxQp: Q is not symmetric");
        if (n > 0) {
            Eigen::SelfAdjointEigenSolver<RMat<Real>> eig(Q, Eigen::EigenvaluesOnly);
            if (eig.eigenvalues().minCoeff() < -Real(1e-9) * std::max(Real(1e-300), Q.norm()))
                throw std::invalid_argument("BoxQp: Q is not positive semidefinite");
        }
    }
};

template <typename Real = double>
struct QpSolution {
    RVec<Real> x;
    RVec<Real> multipliers;  // one per quadratic constraint; empty for box QPs
    KktReport report;
};

/// Sup-norm of x - clamp(x - grad f(x)), zero exactly at box-constrained stationary points.
template <typename Real>
Real projected_gradient_residual(const BoxQp<Real>& qp, const RVec<Real>& x) {
    const RVec<Real> step = (x - qp.gradient(x)).cwiseMax(qp.lower).cwiseMin(qp.upper);
    return (x - step).cwiseAbs().maxCoeff();
}

/// Cyclic coordinate descent with exact minimization along each coordinate.
/// Starts from the projection of `start` (or of zero) and never increases
/// the objective.
template <typename Real>
QpSolution<Real> solve_box_qp(const BoxQp<Real>& qp, const SolverOptions& options = {},
                              const std::optional<RVec<Real>>& start = std::nullopt) {
    qp.validate();
    const Eigen::Index n = qp.size();
    RVec<Real> x = start ? *start : RVec<Real>::Zero(n);
    x = x.cwiseMax(qp.lower).cwiseMin(qp.upper);

    QpSolution<Real> out;
    if (n == 0) {
        out.report.converged = true;
        out.x = x;
        return out;
    }

    RVec<Real> Qx = qp.Q * x;
    int sweep = 0;
    Real residual = projected_gradient_residual(qp, x);
    while (residual > options.tol && sweep < options.max_iter) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const Real half_grad = Qx(i) - qp.b(i);
            const Real curvature = qp.Q(i, i);
            Real target;
            if (curvature > Real(0)) {
                target = x(i) - half_grad / curvature;
            } else if (half_grad < Real(0)) {
                target = qp.upper(i);
            } else if (half_grad > Real(0)) {
                target = qp.lower(i);
            } else {
                target = x(i);
            }
            if (!std::isfinite(target)) throw std::invalid_argument("solve_box_qp: objective unbounded on the box");
            target = std::clamp(target, qp.lower(i), qp.upper(i));
            const Real delta = target - x(i);
            if (delta != Real(0)) {
                x(i) = target;
                Qx += delta * qp.Q.col(i);
            }
        }
        ++sweep;
        Qx.noalias() = qp.Q * x;
        residual = projected_gradient_residual(qp, x);
    }

    out.x = x;
    out.report.stationarity = static_cast<double>(residual);
    out.report.iterations = sweep;
    out.report.converged = residual <= options.tol;
    return out;
}

// ---------------------------------------------------------------------------
// Separable QCQP:
//   minimize sum_k a_k x_k^2 - 2 b_k x_k
//   s.t.     0 <= x_k <= upper_k,   sum_k c(l, k) x_k^2 <= d_l  for every row l of c

template <typename Real = double>
struct SeparableQcqp {
    RVec<Real> a;
    RVec<Real> b;
    RVec<Real> upper;
    RMat<Real> c;  // constraints x variables
    RVec<Real> d;

    Eigen::Index size() const { return a.size(); }
    Eigen::Index constraints() const { return d.size(); }

    Real objective(const RVec<Real>& x) const {
        return (a.array() * x.array().square() - Real(2) * b.array() * x.array()).sum();
    }

    /// sum_k c(l, k) x_k^2 - d_l per constraint.
    RVec<Real> slack(const RVec<Real>& x) const { return c * x.cwiseAbs2() - d; }

    void validate() const {
        const Eigen::Index n = a.size();
        if (b.size() != n || upper.size() != n || c.cols() != n || c.rows() != d.size())
            throw std::invalid_argument("SeparableQcqp: dimension mismatch");
        if ((a.array() < Real(0)).any()) throw std::invalid_argument("SeparableQcqp: a must be nonnegative");
        if ((c.array() < Real(0)).any()) throw std::invalid_argument("SeparableQcqp: c must be nonnegative");
        if ((d.array() <= Real(0)).any()) throw std::invalid_argument("SeparableQcqp: d must be positive");
        if ((upper.array() < Real(0)).any()) throw std::invalid_argument("SeparableQcqp: negative upper bound");
    }
};

/// Minimizer of the Lagrangian over the box for fixed multipliers.
template <typename Real>
RVec<Real> qcqp_primal(const SeparableQcqp<Real>& qp, const RVec<Real>& lambda) {
    const RVec<Real> curvature = qp.a + qp.c.transpose() * lambda;
    RVec<Real> x(qp.size());
    for (Eigen::Index k = 0; k < qp.size(); ++k) {
        if (qp.b(k) <= Real(0)) {
            x(k) = Real(0);
        } else if (curvature(k) > Real(0)) {
            x(k) = std::min(qp.b(k) / curvature(k), qp.upper(k));
        } else {
            if (!std::isfinite(qp.upper(k)))
                throw std::invalid_argument("solve_separable_qcqp: objective unbounded on the box");
            x(k) = qp.upper(k);
        }
    }
    return x;
}

/// KKT residuals of (x, lambda):
///  - stationarity: sup-norm of the box-projected Lagrangian gradient, where a
///    coordinate within active_tol * max(1, bound) of a bound counts as on it
///  - primal violation: max over constraints of max(0, slack_l) / d_l, and box violations
///  - complementarity: max over constraints of lambda_l |slack_l|
template <typename Real>
KktReport qcqp_kkt(const SeparableQcqp<Real>& qp, const RVec<Real>& x, const RVec<Real>& lambda,
                   Real active_tol = Real(0)) {
    KktReport r;
    const RVec<Real> curvature = qp.a + qp.c.transpose() * lambda;
    Real stat = 0;
    Real box = 0;
    for (Eigen::Index k = 0; k < qp.size(); ++k) {
        Real g = Real(2) * (curvature(k) * x(k) - qp.b(k));
        if (x(k) <= active_tol && g > Real(0)) g = Real(0);
        if (x(k) >= qp.upper(k) - active_tol * std::max(Real(1), qp.upper(k)) && g < Real(0)) g = Real(0);
        stat = std::max(stat, std::abs(g));
        box = std::max({box, -x(k), x(k) - qp.upper(k)});
    }
    const RVec<Real> s = qp.slack(x);
    Real viol = box;
    Real comp = 0;
    for (Eigen::Index l = 0; l < qp.constraints(); ++l) {
        viol = std::max(viol, s(l) / qp.d(l));
        comp = std::max(comp, lambda(l) * std::abs(s(l)));
    }
    r.stationarity = static_cast<double>(stat);
    r.primal_violation = static_cast<double>(std::max(Real(0), viol));
    r.complementarity = static_cast<double>(comp);
    return r;
}

/// Dual decomposition: cyclic exact maximization of the concave dual over one
/// multiplier at a time (bisection on the constraint slack), with the
/// closed-form clamped primal minimizer in between. The returned point is
/// always primal feasible.
template <typename Real>
QpSolution<Real> solve_separable_qcqp(const SeparableQcqp<Real>& qp, const SolverOptions& options = {}) {
    qp.validate();
    const Eigen::Index m = qp.constraints();
    RVec<Real> lambda = RVec<Real>::Zero(m);
    RVec<Real> x = qcqp_primal(qp, lambda);

    auto converged = [&](const KktReport& r) {
        return r.stationarity <= options.tol && r.primal_violation <= options.tol &&
               r.complementarity <= options.tol;
    };

    const auto active_tol = static_cast<Real>(options.tol);
    KktReport report = qcqp_kkt(qp, x, lambda, active_tol);
    int sweep = 0;
    while (!converged(report) && sweep < options.max_iter) {
        for (Eigen::Index l = 0; l < m; ++l) {
            auto slack_at = [&](Real t) {
                RVec<Real> trial = lambda;
                trial(l) = t;
                return qp.slack(qcqp_primal(qp, trial))(l);
            };
            if (slack_at(Real(0)) <= Real(0)) {
                lambda(l) = Real(0);
                continue;
            }
            Real lo = Real(0);
            Real hi = std::max(Real(1), lambda(l));
            while (slack_at(hi) > Real(0)) {
                lo = hi;
                hi *= Real(2);
                if (!std::isfinite(hi)) throw std::runtime_error("solve_separable_qcqp: multiplier diverged");
            }
            for (int it = 0; it < 200 && hi - lo > std::numeric_limits<Real>::epsilon() * hi; ++it) {
                const Real mid = Real(0.5) * (lo + hi);
                (slack_at(mid) > Real(0) ? lo : hi) = mid;
            }
            lambda(l) = hi;
        }
        x = qcqp_primal(qp, lambda);
        report = qcqp_kkt(qp, x, lambda, active_tol);
        ++sweep;
    }

    // Pull the point back inside every quadratic constraint.
    const RVec<Real> load = qp.c * x.cwiseAbs2();
    Real shrink = Real(1);
    for (Eigen::Index l = 0; l < m; ++l)
        if (load(l) > qp.d(l)) shrink = std::min(shrink, std::sqrt(qp.d(l) / load(l)));
    if (shrink < Real(1)) x *= shrink;

    QpSolution<Real> out;
    out.x = x;
    out.multipliers = lambda;
    out.report = qcqp_kkt(qp, x, lambda, active_tol);
    out.report.iterations = sweep;
    out.report.converged = converged(out.report);
    return out;
}

}  // namespace xlmimo

#endif  // XLMIMO_QPSOLVE_HPP
