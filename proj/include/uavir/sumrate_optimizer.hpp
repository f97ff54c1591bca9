#ifndef UAVIR_SUMRATE_OPTIMIZER_HPP
#define UAVIR_SUMRATE_OPTIMIZER_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "uavir/channel_model.hpp"

// Per-slot joint optimization of the BS precoder W (M x K) and the reflection
// row theta (1 x N) for the downlink sum-rate
//
//     C(W, theta) = b * sum_k log2(1 + eta_k),
//     eta_k = |theta D_k w_k|^2 / (sum_{i != k} |theta D_k w_i|^2 + sigma^2),
//
// under sum_k ||w_k||^2 <= P_max and |theta_n| <= 1. The solver alternates a
// Lagrangian dual transform in alpha with quadratic transforms in lambda
// (precoder block) and delta (reflection block).
//
// The dual transform is written in natural-log units scaled by b / ln 2 so
// that alpha_k = eta_k is the exact maximizer and C is an upper envelope of
// C_alpha. Every quadratic transform uses conj(lambda_k) in its linear term,
// which makes the closed-form lambda and delta updates the exact maximizers.

namespace uavir {

struct OptimizerConfig {
    double p_max = 10.0;  // watts
    double outer_tolerance = 1e-6;
    int max_outer_iterations = 200;
    double inner_tolerance = 1e-6;
    int max_inner_iterations = 100;
    double kappa_bisection_tolerance = 1e-10;
    // Hold theta at its initial value and only optimize the precoder.
    bool fixed_reflection = false;
    // Extra random starting points tried by optimize(csi, cfg); the best
    // sum-rate wins. Zero keeps the single deterministic start.
    int restarts = 3;
    std::uint64_t restart_seed = 0;

    void validate() const {
        if (!(p_max > 0.0)) throw InvalidArgument("p_max must be > 0");
        if (!(outer_tolerance > 0.0) || !(inner_tolerance > 0.0) || !(kappa_bisection_tolerance > 0.0))
            throw InvalidArgument("optimizer tolerances must be > 0");
        if (max_outer_iterations < 1 || max_inner_iterations < 1)
            throw InvalidArgument("optimizer iteration caps must be >= 1");
        if (restarts < 0) throw InvalidArgument("restarts must be >= 0");
    }
};

struct BeamformingSolution {
    CMatrix W;
    CRowVector theta;
    double sum_rate = 0.0;
    std::vector<double> per_ue_sinr;
    int iterations = 0;
    bool converged = false;
    // C_alpha after every alpha update and after every reflection block, in
    // the order they were produced.
    std::vector<double> objective_trace;
    // Sum-rate C at every alpha update; pairs with the even trace entries.
    std::vector<double> rate_trace;
};

/// theta D_k W, i.e. the 1 x K row of every stream's amplitude at UE k.
inline CRowVector stream_gains(const CMatrix& W, const CRowVector& theta, const CMatrix& Dk) {
    return (theta * Dk) * W;
}

namespace detail {

inline void check_dims(const CMatrix& W, const CRowVector& theta, const EffectiveCsi& csi) {
    if (csi.users() < 1) throw InvalidArgument("CSI must contain at least one UE");
    if (W.rows() != csi.antennas() || W.cols() != csi.users())
        throw InvalidArgument("precoder must be M x K");
    if (theta.size() != csi.elements()) throw InvalidArgument("reflection vector must be 1 x N");
}

inline void check_noise(const EffectiveCsi& csi) {
    if (!(csi.noise_power > 0.0)) throw InvalidArgument("noise power must be > 0");
}

}  // namespace detail

inline double sinr(const CMatrix& W, const CRowVector& theta, const EffectiveCsi& csi, int k) {
    detail::check_noise(csi);
    detail::check_dims(W, theta, csi);
    if (k < 0 || k >= csi.users()) throw InvalidArgument("UE index out of range");
    const CRowVector g = stream_gains(W, theta, csi.D[k]);
    const double signal = std::norm(g(k));
    const double interference = g.squaredNorm() - signal;
    return signal / (std::max(interference, 0.0) + csi.noise_power);
}

inline std::vector<double> sinrs(const CMatrix& W, const CRowVector& theta, const EffectiveCsi& csi) {
    std::vector<double> out(csi.users());
    for (int k = 0; k < csi.users(); ++k) out[k] = sinr(W, theta, csi, k);
    return out;
}

inline double sum_rate(const CMatrix& W, const CRowVector& theta, const EffectiveCsi& csi) {
    double total = 0.0;
    for (double eta : sinrs(W, theta, csi)) total += csi.bandwidth * std::log2(1.0 + eta);
    return total;
}

/// Weights alpha_hat_k = b (1 + alpha_k) / ln 2 of the fractional subproblem.
inline std::vector<double> rate_weights(const std::vector<double>& alpha, double bandwidth) {
    std::vector<double> w(alpha.size());
    for (std::size_t k = 0; k < alpha.size(); ++k) w[k] = bandwidth * (1.0 + alpha[k]) / std::numbers::ln2;
    return w;
}

/// C_alpha(W, theta, alpha). Equals sum_rate when alpha = eta.
inline double surrogate_objective(const CMatrix& W, const CRowVector& theta, const std::vector<double>& alpha,
                                  const EffectiveCsi& csi) {
    const auto eta = sinrs(W, theta, csi);
    if (alpha.size() != eta.size()) throw InvalidArgument("alpha must have K entries");
    double acc = 0.0;
    for (std::size_t k = 0; k < eta.size(); ++k) {
        if (alpha[k] < 0.0) throw InvalidArgument("alpha must be nonnegative");
        acc += std::log1p(alpha[k]) - alpha[k] + (1.0 + alpha[k]) * eta[k] / (1.0 + eta[k]);
    }
    return csi.bandwidth * acc / std::numbers::ln2;
}

inline std::vector<double> update_alpha(const CMatrix& W, const CRowVector& theta, const EffectiveCsi& csi) {
    return sinrs(W, theta, csi);
}

/// Shared closed form of the lambda and delta updates:
/// sqrt(alpha_hat_k) theta D_k w_k / (sum_i |theta D_k w_i|^2 + sigma^2).
inline CVector update_lambda(const CMatrix& W, const CRowVector& theta, const std::vector<double>& alpha,
                             const EffectiveCsi& csi) {
    detail::check_noise(csi);
    detail::check_dims(W, theta, csi);
    const auto weights = rate_weights(alpha, csi.bandwidth);
    CVector out(csi.users());
    for (int k = 0; k < csi.users(); ++k) {
        const CRowVector g = stream_gains(W, theta, csi.D[k]);
        out(k) = std::sqrt(weights[k]) * g(k) / (g.squaredNorm() + csi.noise_power);
    }
    return out;
}

inline CVector update_delta(const CMatrix& W, const CRowVector& theta, const std::vector<double>& alpha,
                            const EffectiveCsi& csi) {
    return update_lambda(W, theta, alpha, csi);
}

/// Quadratic-transform objective shared by the precoder (aux = lambda) and
/// reflection (aux = delta) blocks.
inline double quadratic_transform_objective(const CMatrix& W, const CRowVector& theta, const CVector& aux,
                                            const std::vector<double>& alpha, const EffectiveCsi& csi) {
    const auto weights = rate_weights(alpha, csi.bandwidth);
    double acc = 0.0;
    for (int k = 0; k < csi.users(); ++k) {
        const CRowVector g = stream_gains(W, theta, csi.D[k]);
        acc += 2.0 * std::sqrt(weights[k]) * std::real(std::conj(aux(k)) * g(k));
        acc -= std::norm(aux(k)) * (g.squaredNorm() + csi.noise_power);
    }
    return acc;
}

/// sum_k alpha_hat_k eta_k / (1 + eta_k), the fractional objective both blocks ascend.
inline double fractional_objective(const CMatrix& W, const CRowVector& theta, const std::vector<double>& alpha,
                                   const EffectiveCsi& csi) {
    const auto weights = rate_weights(alpha, csi.bandwidth);
    double acc = 0.0;
    for (int k = 0; k < csi.users(); ++k) {
        const CRowVector g = stream_gains(W, theta, csi.D[k]);
        acc += weights[k] * std::norm(g(k)) / (g.squaredNorm() + csi.noise_power);
    }
    return acc;
}

struct PrecodingUpdate {
    CMatrix W;
    double kappa = 0.0;
};

/// Maximizer of the lambda-transform over the power ball:
/// w_k = sqrt(alpha_hat_k) lambda_k (kappa I + sum_i |lambda_i|^2 a_i^H a_i)^{-1} a_k^H
/// with a_i = theta D_i, kappa = 0 when the unconstrained (minimum-norm)
/// solution fits the budget, otherwise the bisected kappa making it tight.
inline PrecodingUpdate update_precoding(const CRowVector& theta, const std::vector<double>& alpha,
                                        const CVector& lambda, const EffectiveCsi& csi, double p_max,
                                        double kappa_tolerance = 1e-10) {
    const int m = csi.antennas();
    const int k_users = csi.users();
    if (theta.size() != csi.elements()) throw InvalidArgument("reflection vector must be 1 x N");
    if (lambda.size() != k_users) throw InvalidArgument("lambda must have K entries");
    const auto weights = rate_weights(alpha, csi.bandwidth);

    CMatrix a(k_users, m);
    for (int k = 0; k < k_users; ++k) a.row(k) = theta * csi.D[k];
    CMatrix gram = CMatrix::Zero(m, m);
    CMatrix rhs(m, k_users);
    for (int k = 0; k < k_users; ++k) {
        gram.noalias() += std::norm(lambda(k)) * a.row(k).adjoint() * a.row(k);
        rhs.col(k) = std::sqrt(weights[k]) * lambda(k) * a.row(k).adjoint();
    }

    Eigen::SelfAdjointEigenSolver<CMatrix> eig(gram);
    const Eigen::VectorXd& mu = eig.eigenvalues();
    const CMatrix& V = eig.eigenvectors();
    const CMatrix c = V.adjoint() * rhs;
    const Eigen::VectorXd energy = c.rowwise().squaredNorm();
    const double mu_max = std::max(mu.maxCoeff(), 0.0);
    const double null_floor = mu_max * 1e-12;

    auto power = [&](double kappa) {
        double p = 0.0;
        for (int i = 0; i < m; ++i) {
            const double denom = kappa + std::max(mu(i), 0.0);
            if (kappa == 0.0 && mu(i) <= null_floor) continue;  // minimum-norm solution
            p += energy(i) / (denom * denom);
        }
        return p;
    };
    auto solve = [&](double kappa) {
        Eigen::VectorXd inv(m);
        for (int i = 0; i < m; ++i) {
            const double denom = kappa + std::max(mu(i), 0.0);
            inv(i) = (kappa == 0.0 && mu(i) <= null_floor) ? 0.0 : 1.0 / denom;
        }
        return CMatrix(V * inv.asDiagonal() * c);
    };

    PrecodingUpdate out;
    if (power(0.0) <= p_max) {
        out.W = solve(0.0);
        out.kappa = 0.0;
        return out;
    }
    double hi = 1.0;
    int doublings = 0;
    while (!(power(hi) <= p_max)) {
        hi *= 2.0;
        if (++doublings > 2000 || !std::isfinite(hi))
            throw NumericalError("power constraint infeasible bracketing");
    }
    double lo = 0.0;
    for (int it = 0; it < 400; ++it) {
        if ((p_max - power(hi)) <= kappa_tolerance * p_max) break;
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (power(mid) > p_max)
            lo = mid;
        else
            hi = mid;
    }
    out.kappa = hi;
    out.W = solve(hi);
    return out;
}

struct Qcqp {
    CMatrix U;  // N x N Hermitian PSD
    CVector v;  // N
    double C = 0.0;
};

/// Expansion of the delta-transform as -theta U theta^H + 2 Re{theta v} - C:
///   U = sum_k |delta_k|^2 sum_i (D_k w_i)(D_k w_i)^H
///   v = sum_k sqrt(alpha_hat_k) conj(delta_k) D_k w_k
///   C = sum_k |delta_k|^2 sigma^2
inline Qcqp build_qcqp(const CMatrix& W, const CVector& delta, const std::vector<double>& alpha,
                       const EffectiveCsi& csi) {
    const int n = csi.elements();
    const auto weights = rate_weights(alpha, csi.bandwidth);
    Qcqp q;
    q.U = CMatrix::Zero(n, n);
    q.v = CVector::Zero(n);
    for (int k = 0; k < csi.users(); ++k) {
        const double d2 = std::norm(delta(k));
        const CMatrix cols = csi.D[k] * W;  // column i is D_k w_i
        if (d2 != 0.0) q.U.noalias() += d2 * cols * cols.adjoint();
        q.v += std::sqrt(weights[k]) * std::conj(delta(k)) * cols.col(k);
        q.C += d2 * csi.noise_power;
    }
    q.U = 0.5 * (q.U + q.U.adjoint()).eval();
    return q;
}

inline double qcqp_objective(const Qcqp& q, const CRowVector& theta) {
    const cplx quad = (theta * q.U * theta.adjoint())(0, 0);
    const cplx lin = (theta * q.v)(0);
    return -quad.real() + 2.0 * lin.real() - q.C;
}

namespace detail {

inline void clip_to_unit_disks(CVector& y) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double r = std::abs(y(i));
        if (r > 1.0) y(i) /= r;
    }
}

}  // namespace detail

/// Maximize -theta U theta^H + 2 Re{theta v} over |theta_n| <= 1 by projected
/// gradient ascent with Armijo backtracking, started from theta_init.
/// Works on y = theta^H where the ascent direction is v - U y.
inline CRowVector update_reflection(const Qcqp& q, const CRowVector& theta_init, double tolerance = 1e-8,
                                    int max_iterations = 500) {
    const Eigen::Index n = q.v.size();
    if (q.v.isZero(0.0)) return CRowVector::Zero(n);
    const double trace = std::max(q.U.diagonal().real().sum(), 0.0);
    if (trace == 0.0) {
        CRowVector theta(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double r = std::abs(q.v(i));
            theta(i) = r > 0.0 ? std::conj(q.v(i)) / r : cplx{};
        }
        return theta;
    }

    auto objective = [&](const CVector& y) {
        return -(y.adjoint() * q.U * y)(0, 0).real() + 2.0 * y.dot(q.v).real();
    };
    CVector y = theta_init.adjoint();
    detail::clip_to_unit_disks(y);
    const double base_step = 1.0 / trace;  // 1 / trace(U) <= 1 / lambda_max(U)
    double step = base_step;
    double f = objective(y);
    constexpr double armijo = 1e-4;

    for (int it = 0; it < max_iterations; ++it) {
        const CVector grad = q.v - q.U * y;
        CVector probe = y + base_step * grad;
        detail::clip_to_unit_disks(probe);
        if ((probe - y).norm() < tolerance) break;

        double s = step * 2.0;
        CVector next;
        double f_next = f;
        for (int bt = 0; bt < 60; ++bt) {
            next = y + s * grad;
            detail::clip_to_unit_disks(next);
            f_next = objective(next);
            const double decrease = 2.0 * grad.dot(next - y).real();
            if (f_next >= f + armijo * decrease) break;
            s *= 0.5;
        }
        if (!(f_next >= f)) break;
        step = std::max(s, base_step);
        y = next;
        f = f_next;
    }
    return y.adjoint();
}

/// Equal-power matched filter toward the all-ones reflection.
inline std::pair<CMatrix, CRowVector> initial_point(const EffectiveCsi& csi, double p_max) {
    const int k_users = csi.users();
    const CRowVector theta = CRowVector::Ones(csi.elements());
    CMatrix W = CMatrix::Zero(csi.antennas(), k_users);
    for (int k = 0; k < k_users; ++k) {
        const CVector a = (theta * csi.D[k]).adjoint();
        const double nrm = a.norm();
        if (nrm > 0.0) W.col(k) = std::sqrt(p_max / k_users) * a / nrm;
    }
    return {W, theta};
}

namespace detail {

inline bool relative_change_below(double previous, double current, double tol) {
    const double scale = std::max(std::abs(previous), std::abs(current));
    if (scale == 0.0) return true;
    return std::abs(current - previous) <= tol * scale;
}

/// The same instance with D_k / sigma and unit noise; every SINR is unchanged.
inline EffectiveCsi normalized(const EffectiveCsi& csi) {
    EffectiveCsi out;
    out.bandwidth = csi.bandwidth;
    out.noise_power = 1.0;
    const double s = 1.0 / std::sqrt(csi.noise_power);
    out.D.reserve(csi.D.size());
    for (const CMatrix& d : csi.D) out.D.push_back(s * d);
    return out;
}

}  // namespace detail

/// Alternating optimization: alpha update, then lambda/W rounds, then
/// delta/theta rounds, repeated until C_alpha stops changing.
inline BeamformingSolution optimize(const EffectiveCsi& csi_in, const OptimizerConfig& cfg, CMatrix W,
                                    CRowVector theta) {
    cfg.validate();
    detail::check_noise(csi_in);
    detail::check_dims(W, theta, csi_in);
    if (W.squaredNorm() > cfg.p_max * (1.0 + 1e-9)) throw InvalidArgument("initial precoder violates the power budget");
    for (Eigen::Index i = 0; i < theta.size(); ++i)
        if (std::abs(theta(i)) > 1.0 + 1e-9) throw InvalidArgument("initial reflection violates |theta_n| <= 1");

    const EffectiveCsi csi = detail::normalized(csi_in);
    BeamformingSolution sol;
    std::vector<double> alpha;

    for (int outer = 1; outer <= cfg.max_outer_iterations; ++outer) {
        sol.iterations = outer;
        alpha = update_alpha(W, theta, csi);
        const double start = surrogate_objective(W, theta, alpha, csi);
        sol.objective_trace.push_back(start);
        sol.rate_trace.push_back(sum_rate(W, theta, csi));

        double f_prev = fractional_objective(W, theta, alpha, csi);
        for (int it = 0; it < cfg.max_inner_iterations; ++it) {
            const CVector lambda = update_lambda(W, theta, alpha, csi);
            W = update_precoding(theta, alpha, lambda, csi, cfg.p_max, cfg.kappa_bisection_tolerance).W;
            const double f = fractional_objective(W, theta, alpha, csi);
            const bool done = detail::relative_change_below(f_prev, f, cfg.inner_tolerance);
            f_prev = f;
            if (done) break;
        }

        for (int it = 0; it < cfg.max_inner_iterations && !cfg.fixed_reflection; ++it) {
            const CVector delta = update_delta(W, theta, alpha, csi);
            const Qcqp q = build_qcqp(W, delta, alpha, csi);
            theta = update_reflection(q, theta, cfg.inner_tolerance, cfg.max_inner_iterations);
            const double f = fractional_objective(W, theta, alpha, csi);
            const bool done = detail::relative_change_below(f_prev, f, cfg.inner_tolerance);
            f_prev = f;
            if (done) break;
        }

        const double c_alpha = surrogate_objective(W, theta, alpha, csi);
        sol.objective_trace.push_back(c_alpha);
        if (detail::relative_change_below(start, c_alpha, cfg.outer_tolerance)) {
            sol.converged = true;
            break;
        }
    }

    sol.W = std::move(W);
    sol.theta = std::move(theta);
    sol.per_ue_sinr = sinrs(sol.W, sol.theta, csi_in);
    sol.sum_rate = 0.0;
    for (double eta : sol.per_ue_sinr) sol.sum_rate += csi_in.bandwidth * std::log2(1.0 + eta);
    return sol;
}

/// A random start: unit-modulus theta with either matched-filter or
/// Gaussian precoding at full power.
inline std::pair<CMatrix, CRowVector> random_start_point(const EffectiveCsi& csi, double p_max, bool matched,
                                                         Rng& rng) {
    std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
    CRowVector theta(csi.elements());
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = std::polar(1.0, phase(rng));
    CMatrix W(csi.antennas(), csi.users());
    for (int k = 0; k < csi.users(); ++k) {
        const CVector a = (theta * csi.D[k]).adjoint();
        if (matched && a.norm() > 0.0) {
            W.col(k) = a / a.norm();
        } else {
            for (Eigen::Index i = 0; i < W.rows(); ++i) W(i, k) = sample_cn(rng);
        }
    }
    const double nrm = W.norm();
    if (nrm > 0.0) W *= std::sqrt(p_max) / nrm;
    return {W, theta};
}

/// Run from initial_point and from cfg.restarts random starts; keep the
/// highest sum-rate (the earliest start on ties).
inline BeamformingSolution optimize(const EffectiveCsi& csi, const OptimizerConfig& cfg) {
    auto [W, theta] = initial_point(csi, cfg.p_max);
    BeamformingSolution best = optimize(csi, cfg, std::move(W), std::move(theta));
    if (cfg.fixed_reflection) return best;
    Rng rng(mix_seed(cfg.restart_seed, 0x5eed));
    for (int r = 0; r < cfg.restarts; ++r) {
        auto [W0, th0] = random_start_point(csi, cfg.p_max, r % 2 == 0, rng);
        BeamformingSolution s = optimize(csi, cfg, std::move(W0), std::move(th0));
        if (s.sum_rate > best.sum_rate) best = std::move(s);
    }
    return best;
}

}  // namespace uavir

#endif  // UAVIR_SUMRATE_OPTIMIZER_HPP
