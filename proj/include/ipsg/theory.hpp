#pragma once

// Constants of the convergence analysis and empirical verifiers for the
// provable bounds (pre-conditioner convergence, one-step error recursion,
// limiting error).
//
// Conventions: s1 >= sd are the extreme eigenvalues of A^T A (unnormalized);
// Lambda_i = ||a^i||^2 is the largest eigenvalue of the rank-one matrix
// (a^i)^T a^i; K_beta = ((1/N) A^T A + beta I)^{-1}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "ipsg/dataset.hpp"
#include "ipsg/linalg.hpp"
#include "ipsg/optimizers.hpp"
#include "ipsg/rng.hpp"

namespace ipsg::theory {

struct NoiseBounds {
    double V1 = 0.0;  // gradient variance at x*
    double V2 = 0.0;  // relative variance growth
    double E1 = 0.0;  // >= sqrt(V1 N)
    double E2 = 0.0;  // >= sqrt((V2+1) N)
};

struct Ktilde0 {
    double spec = 0.0;  // ||K(0) - K_beta||
    double frob = 0.0;  // ||K(0) - K_beta||_F
};

struct SeriesPoint {
    std::size_t t = 0;
    double C4 = 0, C5 = 0, C6 = 0, C7 = 0, C8 = 0;
    double R1 = 0, R2 = 0, R3 = 0;
    double delta_bar = 0;
};

struct Constants {
    // inputs echoed
    double alpha = 0, beta = 0, delta = 0;
    std::size_t N = 0, d = 0;
    // spectral data
    Matrix K_beta;
    double K_beta_norm = 0, K_beta_frob = 0;
    double s1 = 0, sd = 0, kappa = 0;
    // scalar constants
    double rho = 0, C1 = 0, C2 = 0, C3 = 0;
    double L = 0, sigma2 = 0;
    double mu = 0, varrho = 0, alpha_bar = 0;
};

inline Vector row_lambdas(const Matrix& A) {
    Vector lam(A.rows, 0.0);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const double* a = A.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < A.cols; ++j) s += a[j] * a[j];
        lam[i] = s;
    }
    return lam;
}

namespace detail {

inline Matrix kbeta_from_gram(const Matrix& G, std::size_t N, double beta) {
    const std::size_t d = G.rows;
    Matrix S(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            S(i, j) = G(i, j) / static_cast<double>(N) + (i == j ? beta : 0.0);
    Matrix K = solve_spd(S, identity(d));
    // S is diagonally dominated by beta for the parameter ranges in use; a
    // loose residual means corrupted inputs, not conditioning.
    const Matrix R = matmul(S, K);
    double worst = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            worst = std::max(worst, std::fabs(R(i, j) - (i == j ? 1.0 : 0.0)));
    if (worst > 1e-10)
        throw numerical_error("compute_kbeta: identity residual " + std::to_string(worst) +
                              " exceeds 1e-10");
    return K;
}

}  // namespace detail

inline Matrix compute_kbeta(const Matrix& A, double beta) {
    if (!(beta > 0)) throw std::invalid_argument("compute_kbeta: beta must be > 0");
    return detail::kbeta_from_gram(gram(A), A.rows, beta);
}

// rho = (1/N) sum_i ||I - alpha((a^i)^T a^i + beta I)||, using the closed-form
// eigenvalues {1 - alpha(Lambda_i + beta), 1 - alpha beta (mult. d-1)} of each
// rank-one summand.
inline double compute_rho(const Matrix& A, double alpha, double beta) {
    const Vector lam = row_lambdas(A);
    const std::size_t d = A.cols;
    double acc = 0.0;
    for (double li : lam) {
        const double top = std::fabs(1.0 - alpha * (li + beta));
        acc += (d == 1) ? top : std::max(top, std::fabs(1.0 - alpha * beta));
    }
    return acc / static_cast<double>(A.rows);
}

// C1 = max_i ||(a^i)^T a^i - (1/N) A^T A||,
// C2 = alpha (1/N) sum_i ||(a^i)^T a^i - (1/N) A^T A|| ||K_beta||.
// Each per-row matrix is rank-one minus the fixed Gram average; rotating into
// the eigenbasis of (1/N) A^T A makes it diagonal-plus-rank-one with an O(d)
// matvec, so the N spectral norms cost O(d) each instead of O(d^3).
inline std::pair<double, double> compute_C1_C2(const Matrix& A, double alpha,
                                               double kbeta_norm) {
    const std::size_t N = A.rows, d = A.cols;
    Matrix Gn = gram(A);
    for (double& v : Gn.a) v /= static_cast<double>(N);
    const SymEig eg = sym_eig(Gn, 1e-12, true);
    Vector ap(d);
    double c1 = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double* a = A.row(i);
        for (std::size_t k = 0; k < d; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += a[j] * eg.vectors(j, k);
            ap[k] = s;
        }
        auto apply = [&](const Vector& v) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += ap[k] * v[k];
            Vector out(d);
            for (std::size_t k = 0; k < d; ++k) out[k] = ap[k] * dot - eg.values[k] * v[k];
            return out;
        };
        const double nrm = sym_op_norm(apply, d, 12345 + i, 600, 1e-12);
        c1 = std::max(c1, nrm);
        sum += nrm;
    }
    return {c1, alpha * (sum / static_cast<double>(N)) * kbeta_norm};
}

// L = beta + max_i Lambda_i;
// sigma^2 = max_j (1/N) sum_i ||((a^i)^T a^i + beta I) K_beta e_j - e_j||^2;
// C3 = alpha N sigma^2 / (sd (1 - alpha L)).
// Column j of the per-row matrix is (a^i)^T u_j + W e_j with u = a^i K_beta
// and W = beta K_beta - I, giving the O(N d^2) evaluation below.
inline std::tuple<double, double, double> compute_L_sigma2_C3(const Matrix& A, double beta,
                                                              double alpha, const Matrix& K_beta,
                                                              double sd) {
    const std::size_t N = A.rows, d = A.cols;
    const Vector lam = row_lambdas(A);
    const double L = beta + *std::max_element(lam.begin(), lam.end());
    if (!(alpha > 0) || !(alpha < 1.0 / L))
        throw std::domain_error("compute_L_sigma2_C3: requires 0 < alpha < 1/L = " +
                                std::to_string(1.0 / L) + ", got alpha = " +
                                std::to_string(alpha));
    Matrix W = K_beta;
    for (double& v : W.a) v *= beta;
    for (std::size_t j = 0; j < d; ++j) W(j, j) -= 1.0;
    Vector omega(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) omega[j] += W(i, j) * W(i, j);

    Vector acc(d, 0.0), u(d), v(d);
    for (std::size_t i = 0; i < N; ++i) {
        const double* a = A.row(i);
        std::fill(u.begin(), u.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
        for (std::size_t k = 0; k < d; ++k) {
            const double ak = a[k];
            if (ak == 0.0) continue;
            const double* Kk = &K_beta.a[k * d];
            const double* Wk = &W.a[k * d];
            for (std::size_t j = 0; j < d; ++j) {
                u[j] += ak * Kk[j];
                v[j] += ak * Wk[j];
            }
        }
        for (std::size_t j = 0; j < d; ++j) acc[j] += u[j] * u[j] * lam[i] + 2.0 * u[j] * v[j] + omega[j];
    }
    double sigma2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) sigma2 = std::max(sigma2, acc[j] / static_cast<double>(N));
    sigma2 = std::max(sigma2, 0.0);
    const double C3 = alpha * static_cast<double>(N) * sigma2 / (sd * (1.0 - alpha * L));
    return {L, sigma2, C3};
}

inline double compute_alpha_bar(std::size_t N, double s1, double sd, double L, double beta) {
    if (!(sd > 0)) throw std::domain_error("compute_alpha_bar: sd must be > 0 (Assumption 1)");
    const double n = static_cast<double>(N);
    return std::min({n / sd, 1.0 / L, 2.0 / (s1 / n + beta)});
}

inline double compute_mu(double alpha, double sd, std::size_t N, double L) {
    return 1.0 - (2.0 * alpha * sd / static_cast<double>(N)) * (1.0 - alpha * L);
}

inline double compute_varrho(double alpha, double s1, double sd, std::size_t N, double beta) {
    const double n = static_cast<double>(N);
    return std::max(std::fabs(1.0 - alpha * (s1 / n + beta)),
                    std::fabs(1.0 - alpha * (sd / n + beta)));
}

inline Constants compute_constants(const Matrix& A, double alpha, double beta, double delta) {
    Constants c;
    c.alpha = alpha;
    c.beta = beta;
    c.delta = delta;
    c.N = A.rows;
    c.d = A.cols;
    const Matrix G = gram(A);
    std::tie(c.s1, c.sd) = sym_extreme_eigs(G);
    if (!(c.sd > 0)) throw std::domain_error("compute_constants: A^T A singular (Assumption 1)");
    c.kappa = c.s1 / c.sd;
    c.K_beta = detail::kbeta_from_gram(G, c.N, beta);
    // K_beta shares eigenvectors with A^T A; its norm is 1/(sd/N + beta)
    c.K_beta_norm = 1.0 / (c.sd / static_cast<double>(c.N) + beta);
    c.K_beta_frob = frob_norm(c.K_beta);
    c.rho = compute_rho(A, alpha, beta);
    std::tie(c.C1, c.C2) = compute_C1_C2(A, alpha, c.K_beta_norm);
    std::tie(c.L, c.sigma2, c.C3) = compute_L_sigma2_C3(A, beta, alpha, c.K_beta, c.sd);
    c.alpha_bar = compute_alpha_bar(c.N, c.s1, c.sd, c.L, beta);
    c.mu = compute_mu(alpha, c.sd, c.N, c.L);
    c.varrho = compute_varrho(alpha, c.s1, c.sd, c.N, beta);
    return c;
}

inline Ktilde0 ktilde0_norms(const Matrix& K0, const Matrix& K_beta) {
    Matrix D = K0;
    for (std::size_t i = 0; i < D.a.size(); ++i) D.a[i] -= K_beta.a[i];
    return {spectral_norm(D), frob_norm(D)};
}

namespace detail {

inline double geom_sum(double r, std::size_t upto) {  // sum_{j=0}^{upto} r^j
    if (r == 1.0) return static_cast<double>(upto + 1);
    return (1.0 - std::pow(r, static_cast<double>(upto + 1))) / (1.0 - r);
}

}  // namespace detail

// Literal transcription of the time-indexed constants; evaluated per t.
inline std::vector<SeriesPoint> compute_series(const Constants& c, const NoiseBounds& nb,
                                               const Ktilde0& k0,
                                               const std::vector<std::size_t>& ts) {
    const double n = static_cast<double>(c.N);
    const double dd = static_cast<double>(c.d);
    std::vector<SeriesPoint> out;
    out.reserve(ts.size());
    for (std::size_t t : ts) {
        const double td = static_cast<double>(t);
        const double rho_sum = detail::geom_sum(c.rho, t);  // sum_{j=0}^t rho^j
        const double bracket = dd * c.C3 + c.K_beta_norm * c.K_beta_norm +
                               2.0 * c.C2 * c.K_beta_norm * rho_sum +
                               k0.frob * k0.frob * std::pow(c.mu, td + 1.0) +
                               2.0 * c.K_beta_norm * k0.spec * std::pow(c.rho, td + 1.0);
        SeriesPoint p;
        p.t = t;
        p.C4 = (nb.V2 + 1.0) * (c.s1 * c.s1 / n) * bracket;
        p.C5 = 2.0 * c.C1 * nb.E2 * (c.s1 / n) * (c.K_beta_norm + k0.spec * std::pow(c.varrho, td));
        p.C6 = 2.0 * c.sd / (c.sd + n * c.beta) -
               2.0 * (c.s1 / n) * k0.spec * std::pow(c.varrho, td + 1.0);
        p.C7 = 2.0 * c.C1 * nb.E1 * (c.K_beta_norm + k0.spec * std::pow(c.varrho, td));
        p.C8 = p.C4 + 0.5;
        p.R3 = c.delta * c.delta * nb.V1 * n * bracket;
        p.R2 = p.R3 + 0.5 * c.alpha * c.alpha * p.C7 * p.C7;
        p.R1 = 1.0 + c.delta * c.delta * p.C8 + c.alpha * c.delta * p.C5 - c.delta * p.C6;
        p.delta_bar = std::min(1.0 / p.C6, (p.C6 - c.alpha * p.C5) / p.C8);
        out.push_back(p);
    }
    return out;
}

// Limiting expected squared error (t -> infinity); requires rho < 1.
inline double limit_error_bound(const Constants& c, const NoiseBounds& nb) {
    if (!(c.rho < 1.0))
        throw std::domain_error("limit_error_bound: requires rho < 1, got rho = " +
                                std::to_string(c.rho));
    const double n = static_cast<double>(c.N);
    const double dd = static_cast<double>(c.d);
    const double term1 = c.delta * c.delta * nb.V1 * n *
                         (dd * c.C3 + c.K_beta_norm * c.K_beta_norm +
                          2.0 * c.C2 * c.K_beta_norm / (1.0 - c.rho));
    const double t2 = c.C1 * nb.E1 * c.K_beta_norm;
    return term1 + 2.0 * c.alpha * c.alpha * t2 * t2;
}

// --- noise bounds --------------------------------------------------------

// V1: exact variance of the row gradient at x* by enumeration. V2/E2: fit
// over random probes on spheres of radii {0.1, 1, 10} ||x*|| + 1, with the
// floors demanded by the bound derivation.
inline NoiseBounds estimate_noise_bounds(const data::Dataset& ds, const Vector& x_star,
                                         std::size_t probes_per_radius, RngStream& rng) {
    if (probes_per_radius < 1)
        throw std::invalid_argument("estimate_noise_bounds: probes must be >= 1");
    const std::size_t N = ds.A.rows, d = ds.A.cols;
    const double n = static_cast<double>(N);
    const Vector lam = row_lambdas(ds.A);

    // residuals and mean gradient at a point
    const Matrix G = gram(ds.A);
    const Vector atb = matvec_t(ds.A, ds.B);
    auto mean_grad = [&](const Vector& x) {
        Vector g = matvec(G, x);
        for (std::size_t j = 0; j < d; ++j) g[j] = (g[j] - atb[j]) / n;
        return g;
    };
    // E||g - mean||^2 and max_i ||g^i|| at a point, in O(N d)
    auto scan = [&](const Vector& x, const Vector& mean) {
        double var = 0.0, maxg = 0.0;
        const double mean2 = [&] {
            double s = 0.0;
            for (double v : mean) s += v * v;
            return s;
        }();
        for (std::size_t i = 0; i < N; ++i) {
            const double* a = ds.A.row(i);
            double s = -ds.B[i], am = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                s += a[j] * x[j];
                am += a[j] * mean[j];
            }
            const double g2 = s * s * lam[i];
            var += g2 - 2.0 * s * am + mean2;
            maxg = std::max(maxg, std::fabs(s) * std::sqrt(lam[i]));
        }
        return std::pair<double, double>{var / n, maxg};
    };

    NoiseBounds nb;
    const Vector grad_star = mean_grad(x_star);
    const auto [v1, maxg_star] = scan(x_star, grad_star);
    nb.V1 = std::max(v1, 0.0);
    nb.E1 = std::max(maxg_star, std::sqrt(nb.V1 * n));

    const double xs_norm = vec_norm(x_star);
    double v2 = 0.0, e2_fit = 0.0;
    for (double scale : {0.1, 1.0, 10.0}) {
        const double radius = scale * xs_norm + 1.0;
        for (std::size_t p = 0; p < probes_per_radius; ++p) {
            Vector dir(d);
            for (std::size_t j = 0; j < d; ++j) dir[j] = rng.normal();
            double dn = vec_norm(dir);
            if (dn == 0.0) {
                dir[0] = 1.0;
                dn = 1.0;
            }
            Vector x(d);
            for (std::size_t j = 0; j < d; ++j) x[j] = x_star[j] + radius * dir[j] / dn;
            const Vector grad = mean_grad(x);
            const double gn = vec_norm(grad);
            if (gn == 0.0) continue;
            const auto [var, maxg] = scan(x, grad);
            v2 = std::max(v2, (var - nb.V1) / (gn * gn));
            e2_fit = std::max(e2_fit, (maxg - nb.E1) / gn);
        }
    }
    nb.V2 = std::max(v2, 0.0);
    nb.E2 = std::max(e2_fit, std::sqrt((nb.V2 + 1.0) * n));
    return nb;
}

// --- verifiers -----------------------------------------------------------

struct UnbiasednessReport {
    bool pass = false;
    double worst_rel = 0.0;    // worst component gap, relative
    double grad_norm = 0.0;    // ||grad F(x)||
    double grad_bound = 0.0;   // (s1/N) ||x - x*||
    bool grad_bound_ok = false;
};

// Enumeration average of the row gradients vs (1/N)(A^T A x - A^T B), plus
// the gradient-norm bound ||grad F(x)|| <= (s1/N) ||x - x*||.
inline UnbiasednessReport verify_unbiasedness(const data::Dataset& ds, const Vector& x,
                                              double s1, const Vector& x_star) {
    const std::size_t N = ds.A.rows, d = ds.A.cols;
    const double n = static_cast<double>(N);
    Vector mean(d, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        const double* a = ds.A.row(i);
        double s = -ds.B[i];
        for (std::size_t j = 0; j < d; ++j) s += a[j] * x[j];
        for (std::size_t j = 0; j < d; ++j) mean[j] += a[j] * s;
    }
    for (std::size_t j = 0; j < d; ++j) mean[j] /= n;

    const Matrix G = gram(ds.A);
    Vector full = matvec(G, x);
    const Vector atb = matvec_t(ds.A, ds.B);
    double scale = 1.0;
    for (std::size_t j = 0; j < d; ++j) {
        full[j] = (full[j] - atb[j]) / n;
        scale = std::max(scale, std::fabs(full[j]));
    }
    UnbiasednessReport rep;
    for (std::size_t j = 0; j < d; ++j)
        rep.worst_rel = std::max(rep.worst_rel, std::fabs(mean[j] - full[j]) / scale);
    rep.pass = rep.worst_rel <= 1e-12;

    rep.grad_norm = vec_norm(full);
    double zn = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double z = x[j] - x_star[j];
        zn += z * z;
    }
    rep.grad_bound = (s1 / n) * std::sqrt(zn);
    rep.grad_bound_ok = rep.grad_norm <= rep.grad_bound * (1.0 + 1e-10) + 1e-12;
    rep.pass = rep.pass && rep.grad_bound_ok;
    return rep;
}

struct Lemma1Report {
    double rho = 0.0, C2 = 0.0, K0_dev = 0.0;
    bool rho_lt_1 = false;
    std::size_t T = 0, trials = 0;
    std::vector<double> mean, bound, stderr_;  // index t-1 for t = 1..T
    std::size_t violations = 0;
    double worst_gap = 0.0;  // max over t of mean - (bound + 3 se)
    bool pass = false;
};

// Monte Carlo check of E||K~(t)|| <= rho^t ||K~(0)|| + C2 sum_{j<t} rho^j.
// rho_shift supports fault-injection audits of the check itself.
inline Lemma1Report verify_lemma1(const data::Dataset& ds, double alpha, double beta,
                                  const Matrix& K0, std::size_t T, std::size_t trials,
                                  RngStream& rng, double rho_shift = 0.0) {
    const std::size_t N = ds.A.rows, d = ds.A.cols;
    const Vector lam = row_lambdas(ds.A);
    for (double li : lam)
        if (!(alpha > 0 && alpha < 2.0 / (li + beta)))
            throw std::domain_error("verify_lemma1: requires 0 < alpha < min_i 2/(Lambda_i+beta) = " +
                                    std::to_string(2.0 / (li + beta)));
    if (T < 1 || trials < 1) throw std::invalid_argument("verify_lemma1: T and trials must be >= 1");

    const Matrix K_beta = compute_kbeta(ds.A, beta);
    const double kb_norm = 1.0 / ([&] {
        const Matrix G = gram(ds.A);
        auto [s1, sd] = sym_extreme_eigs(G);
        (void)s1;
        return sd / static_cast<double>(N) + beta;
    }());
    Lemma1Report rep;
    rep.rho = compute_rho(ds.A, alpha, beta) + rho_shift;
    rep.rho_lt_1 = rep.rho < 1.0;
    rep.C2 = compute_C1_C2(ds.A, alpha, kb_norm).second;
    rep.K0_dev = ktilde0_norms(K0, K_beta).spec;
    rep.T = T;
    rep.trials = trials;

    std::vector<double> sum(T, 0.0), sumsq(T, 0.0);
    Matrix K(d, d);
    for (std::size_t trial = 0; trial < trials; ++trial) {
        K = K0;
        for (std::size_t t = 1; t <= T; ++t) {
            const std::size_t i = rng.uniform_below(N);
            const Matrix R = opt::precond_residuals(K, std::span<const double>(ds.A.row(i), d), beta);
            for (std::size_t k = 0; k < K.a.size(); ++k) K.a[k] -= alpha * R.a[k];
            Matrix D = K;
            for (std::size_t k = 0; k < D.a.size(); ++k) D.a[k] -= K_beta.a[k];
            const double dev = spectral_norm(D);
            sum[t - 1] += dev;
            sumsq[t - 1] += dev * dev;
        }
    }
    rep.mean.resize(T);
    rep.bound.resize(T);
    rep.stderr_.resize(T);
    const double tn = static_cast<double>(trials);
    double rho_sum = 0.0, rho_pow = 1.0;  // sum_{j<t} rho^j, rho^t
    for (std::size_t t = 1; t <= T; ++t) {
        rho_sum += rho_pow;
        rho_pow *= rep.rho;
        rep.mean[t - 1] = sum[t - 1] / tn;
        const double var = std::max(sumsq[t - 1] / tn - rep.mean[t - 1] * rep.mean[t - 1], 0.0);
        rep.stderr_[t - 1] = std::sqrt(var / tn);
        rep.bound[t - 1] = rho_pow * rep.K0_dev + rep.C2 * rho_sum;
        const double slack = rep.bound[t - 1] + 3.0 * rep.stderr_[t - 1] +
                             1e-12 * (1.0 + rep.bound[t - 1]);
        const double gap = rep.mean[t - 1] - slack;
        if (gap > 0) ++rep.violations;
        rep.worst_gap = std::max(rep.worst_gap, gap);
    }
    rep.pass = rep.rho_lt_1 && rep.violations == 0;
    return rep;
}

struct StepRecursionReport {
    double z_norm = 0.0;
    double lhs_mean = 0.0, lhs_stderr = 0.0;
    double R1 = 0.0, R2 = 0.0, rhs = 0.0;
    double delta_bar0 = 0.0;
    bool domain_ok = false;
    std::string domain_msg;
    bool pass = false;
};

// Monte Carlo one-step check of E||z(t+1)||^2 <= R1 ||z(t)||^2 + R2 from a
// fixed state (x_t, K_t), treated as the initial state of a fresh run (the
// series evaluated at t = 0 with K~(0) = K_t - K_beta).
inline StepRecursionReport verify_step_recursion(const data::Dataset& ds, double alpha,
                                                 double beta, double delta, const Vector& x_t,
                                                 const Matrix& K_t, const NoiseBounds& nb,
                                                 std::size_t trials, RngStream& rng) {
    const std::size_t N = ds.A.rows, d = ds.A.cols;
    StepRecursionReport rep;
    Constants c;
    try {
        c = compute_constants(ds.A, alpha, beta, delta);
        if (!(alpha < c.alpha_bar))
            throw std::domain_error("verify_step_recursion: requires alpha < alpha_bar = " +
                                    std::to_string(c.alpha_bar));
        rep.domain_ok = true;
    } catch (const std::domain_error& e) {
        rep.domain_msg = e.what();
        return rep;
    }
    const Vector x_star = ds.x_star ? *ds.x_star : data::least_squares_oracle(ds);
    double z2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double z = x_t[j] - x_star[j];
        z2 += z * z;
    }
    rep.z_norm = std::sqrt(z2);

    const Ktilde0 k0 = ktilde0_norms(K_t, c.K_beta);
    const SeriesPoint s0 = compute_series(c, nb, k0, {0}).front();
    rep.R1 = s0.R1;
    rep.R2 = s0.R2;
    rep.delta_bar0 = s0.delta_bar;
    rep.rhs = s0.R1 * z2 + s0.R2;

    opt::IpsgState base;
    base.x = x_t;
    base.K = K_t;
    base.alpha = alpha;
    base.delta = delta;
    base.beta = beta;
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t i = rng.uniform_below(N);
        std::span<const double> a(ds.A.row(i), d);
        opt::GradientSample smp{opt::stoch_grad(x_t, a, ds.B[i]),
                                opt::precond_residuals(K_t, a, beta)};
        const opt::IpsgState next = opt::ipsg_update(base, smp);
        double e2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double z = next.x[j] - x_star[j];
            e2 += z * z;
        }
        sum += e2;
        sumsq += e2 * e2;
    }
    const double tn = static_cast<double>(trials);
    rep.lhs_mean = sum / tn;
    const double var = std::max(sumsq / tn - rep.lhs_mean * rep.lhs_mean, 0.0);
    rep.lhs_stderr = std::sqrt(var / tn);
    rep.pass = rep.lhs_mean <= rep.rhs + 3.0 * rep.lhs_stderr + 1e-12 * (1.0 + rep.rhs);
    return rep;
}

}  // namespace ipsg::theory
