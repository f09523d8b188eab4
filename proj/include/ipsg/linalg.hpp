#pragma once

// Dense double-precision kernels for the small/medium problems this lab works
// with. Row-major storage throughout; everything is value-semantic.

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ipsg {

using Vector = std::vector<double>;

// Raised for convergence failures, loss of positive definiteness, non-finite
// state and similar runtime numerical trouble (CLI maps these to exit 2).
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}
    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows = init.size();
        cols = rows ? init.begin()->size() : 0;
        a.reserve(rows * cols);
        for (const auto& row : init) {
            if (row.size() != cols) throw std::invalid_argument("Matrix: ragged initializer");
            a.insert(a.end(), row.begin(), row.end());
        }
    }

    double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
    double* row(std::size_t r) { return a.data() + r * cols; }
    const double* row(std::size_t r) const { return a.data() + r * cols; }
};

inline Matrix identity(std::size_t n) {
    Matrix I(n, n);
    for (std::size_t i = 0; i < n; ++i) I(i, i) = 1.0;
    return I;
}

inline bool all_finite(const Matrix& M) {
    for (double v : M.a)
        if (!std::isfinite(v)) return false;
    return true;
}

inline bool all_finite(const Vector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline Vector matvec(const Matrix& M, const Vector& v) {
    if (v.size() != M.cols)
        throw std::invalid_argument("matvec: dimension mismatch (" + std::to_string(M.rows) + "x" +
                                    std::to_string(M.cols) + " vs " + std::to_string(v.size()) + ")");
    Vector out(M.rows, 0.0);
    for (std::size_t r = 0; r < M.rows; ++r) {
        const double* mr = M.row(r);
        double s = 0.0;
        for (std::size_t c = 0; c < M.cols; ++c) s += mr[c] * v[c];
        out[r] = s;
    }
    return out;
}

// w = M^T v
inline Vector matvec_t(const Matrix& M, const Vector& v) {
    if (v.size() != M.rows) throw std::invalid_argument("matvec_t: dimension mismatch");
    Vector out(M.cols, 0.0);
    for (std::size_t r = 0; r < M.rows; ++r) {
        const double* mr = M.row(r);
        const double vr = v[r];
        for (std::size_t c = 0; c < M.cols; ++c) out[c] += mr[c] * vr;
    }
    return out;
}

inline Matrix matmul(const Matrix& A, const Matrix& B) {
    if (A.cols != B.rows) throw std::invalid_argument("matmul: dimension mismatch");
    Matrix C(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const double* ai = A.row(i);
        double* ci = C.row(i);
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = B.row(k);
            for (std::size_t j = 0; j < B.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return C;
}

inline Matrix transpose(const Matrix& A) {
    Matrix T(A.cols, A.rows);
    for (std::size_t r = 0; r < A.rows; ++r)
        for (std::size_t c = 0; c < A.cols; ++c) T(c, r) = A(r, c);
    return T;
}

// A^T A, accumulated symmetrically (fills both triangles).
inline Matrix gram(const Matrix& A) {
    Matrix G(A.cols, A.cols);
    for (std::size_t r = 0; r < A.rows; ++r) {
        const double* ar = A.row(r);
        for (std::size_t i = 0; i < A.cols; ++i) {
            const double ari = ar[i];
            if (ari == 0.0) continue;
            double* gi = G.row(i);
            for (std::size_t j = i; j < A.cols; ++j) gi[j] += ari * ar[j];
        }
    }
    for (std::size_t i = 0; i < A.cols; ++i)
        for (std::size_t j = 0; j < i; ++j) G(i, j) = G(j, i);
    return G;
}

inline double vec_norm(const Vector& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double frob_norm(const Matrix& M) {
    double s = 0.0;
    for (double x : M.a) s += x * x;
    return std::sqrt(s);
}

namespace detail {

inline void require_symmetric(const Matrix& S, double tol, const char* who) {
    if (S.rows != S.cols) throw std::invalid_argument(std::string(who) + ": matrix not square");
    double scale = 0.0;
    for (double v : S.a) scale = std::max(scale, std::fabs(v));
    const double thresh = tol * std::max(scale, 1.0);
    for (std::size_t i = 0; i < S.rows; ++i)
        for (std::size_t j = i + 1; j < S.cols; ++j)
            if (std::fabs(S(i, j) - S(j, i)) > thresh)
                throw std::invalid_argument(std::string(who) + ": matrix not symmetric within tolerance");
}

}  // namespace detail

struct SymEig {
    Vector values;   // descending
    Matrix vectors;  // column k pairs with values[k]; empty unless requested
};

// Cyclic Jacobi with the classical threshold strategy. Quadratically
// convergent once off-diagonal mass is small; we sweep until the off-diagonal
// Frobenius norm drops below tol * ||S||_F (floored near machine eps).
inline SymEig sym_eig(const Matrix& S, double tol = 1e-12, bool want_vectors = false) {
    detail::require_symmetric(S, 1e-8, "sym_eig");
    const std::size_t n = S.rows;
    Matrix A = S;
    Matrix V = want_vectors ? identity(n) : Matrix();

    const double total = frob_norm(S);
    const double target = std::max(tol, 1e-15) * std::max(total, 1e-300);

    const int max_sweeps = 64;
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += 2.0 * A(i, j) * A(i, j);
        if (std::sqrt(off) <= target) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (apq == 0.0) continue;
                const double app = A(p, p), aqq = A(q, q);
                // rotation angle from the standard 2x2 symmetric Schur decomposition
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0) ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                              : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                if (want_vectors) {
                    for (std::size_t k = 0; k < n; ++k) {
                        const double vkp = V(k, p), vkq = V(k, q);
                        V(k, p) = c * vkp - s * vkq;
                        V(k, q) = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    if (sweep == max_sweeps) throw numerical_error("sym_eig: Jacobi did not converge");

    SymEig out;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = A(i, i);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i < n; ++i)  // small n: selection sort keeps it simple
        for (std::size_t j = i + 1; j < n; ++j)
            if (out.values[order[j]] > out.values[order[i]]) std::swap(order[i], order[j]);
    Vector sorted(n);
    for (std::size_t i = 0; i < n; ++i) sorted[i] = out.values[order[i]];
    out.values = std::move(sorted);
    if (want_vectors) {
        out.vectors = Matrix(n, n);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = V(r, order[k]);
    }
    return out;
}

// (largest, smallest) eigenvalue of a symmetric matrix.
inline std::pair<double, double> sym_extreme_eigs(const Matrix& S, double tol = 1e-12) {
    SymEig e = sym_eig(S, tol, false);
    if (e.values.empty()) throw std::invalid_argument("sym_extreme_eigs: empty matrix");
    return {e.values.front(), e.values.back()};
}

// Cholesky solve for SPD systems; rhs may carry several columns.
inline Matrix solve_spd(const Matrix& S, const Matrix& rhs) {
    detail::require_symmetric(S, 1e-8, "solve_spd");
    if (rhs.rows != S.rows) throw std::invalid_argument("solve_spd: rhs dimension mismatch");
    const std::size_t n = S.rows;
    Matrix L(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = S(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= L(j, k) * L(j, k);
        if (!(d > 0.0) || !std::isfinite(d))
            throw numerical_error("solve_spd: non-positive pivot at column " + std::to_string(j));
        const double ljj = std::sqrt(d);
        L(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = S(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
            L(i, j) = s / ljj;
        }
    }
    Matrix X = rhs;
    for (std::size_t col = 0; col < rhs.cols; ++col) {
        // forward: L y = b
        for (std::size_t i = 0; i < n; ++i) {
            double s = X(i, col);
            for (std::size_t k = 0; k < i; ++k) s -= L(i, k) * X(k, col);
            X(i, col) = s / L(i, i);
        }
        // back: L^T x = y
        for (std::size_t ii = n; ii-- > 0;) {
            double s = X(ii, col);
            for (std::size_t k = ii + 1; k < n; ++k) s -= L(k, ii) * X(k, col);
            X(ii, col) = s / L(ii, ii);
        }
    }
    return X;
}

inline Vector solve_spd(const Matrix& S, const Vector& rhs) {
    Matrix b(rhs.size(), 1);
    for (std::size_t i = 0; i < rhs.size(); ++i) b(i, 0) = rhs[i];
    Matrix x = solve_spd(S, b);
    Vector out(rhs.size());
    for (std::size_t i = 0; i < rhs.size(); ++i) out[i] = x(i, 0);
    return out;
}

// Induced 2-norm via the Gram route: sqrt(lambda_max(M^T M)), taking the
// smaller of the two Gram products.
inline double spectral_norm(const Matrix& M, double tol = 1e-12) {
    if (M.rows == 0 || M.cols == 0) return 0.0;
    const Matrix G = (M.rows >= M.cols) ? gram(M) : gram(transpose(M));
    auto [s1, sd] = sym_extreme_eigs(G, tol);
    (void)sd;
    return std::sqrt(std::max(s1, 0.0));
}

// Spectral norm of a symmetric matrix given as a matvec callback: power
// iteration on M^2 so sign ties between +/- extreme eigenvalues cannot stall.
template <typename Apply>
double sym_op_norm(Apply&& apply, std::size_t n, std::uint64_t seed = 12345,
                   int max_iters = 300, double tol = 1e-13) {
    if (n == 0) return 0.0;
    Vector v(n);
    std::uint64_t s = seed * 6364136223846793005ull + 1442695040888963407ull;
    for (std::size_t i = 0; i < n; ++i) {
        s ^= s >> 12; s ^= s << 25; s ^= s >> 27;
        v[i] = static_cast<double>((s * 2685821657736338717ull) >> 11) / 9007199254740992.0 - 0.5;
    }
    double nv = vec_norm(v);
    if (nv == 0.0) { v[0] = 1.0; nv = 1.0; }
    for (double& x : v) x /= nv;

    double est = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        Vector w = apply(apply(v));
        const double lam2 = [&] {  // Rayleigh quotient for M^2
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += v[i] * w[i];
            return dot;
        }();
        const double nw = vec_norm(w);
        if (nw == 0.0) return 0.0;
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
        const double next = std::sqrt(std::max(lam2, 0.0));
        if (it > 4 && std::fabs(next - est) <= tol * std::max(1.0, next)) { est = next; break; }
        est = next;
    }
    return est;
}

}  // namespace ipsg
