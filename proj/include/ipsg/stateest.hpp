#pragma once

// Distributed state estimation of discrete-time LTI systems via the
// regression reformulation: agent i holds d samples of its scalar output
// y_i(t) = c^i z(t), z(t+1) = A z(t), and recovering z(0) is the distributed
// least-squares problem with agent blocks (O^i, y^i).

#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ipsg/dataset.hpp"
#include "ipsg/linalg.hpp"
#include "ipsg/simnet.hpp"

namespace ipsg::est {

struct LtiSystem {
    Matrix A_state;              // d x d
    std::vector<Vector> C_rows;  // one measurement row per agent, each length d
};

struct ObservabilityMatrices {
    std::vector<Matrix> O_local;  // m matrices, d x d
    Matrix O_stacked;             // (m d) x d, agent-major: row (i-1)*d + t
    Matrix O_bar;                 // (m d) x d, time-major: row t*m + (i-1)
    std::vector<std::size_t> perm;  // O_bar row r == O_stacked row perm[r]
    std::vector<std::size_t> rank_local;
    std::size_t rank_global = 0;
    bool jointly_observable = false;
};

struct MeasurementSet {
    std::vector<Vector> y_local;  // m vectors, each length d
};

inline Vector propagate(const Matrix& A_state, const Vector& z0, std::size_t t) {
    if (A_state.rows != A_state.cols || A_state.cols != z0.size())
        throw std::invalid_argument("propagate: dimension mismatch");
    Vector z = z0;
    for (std::size_t k = 0; k < t; ++k) z = matvec(A_state, z);
    return z;
}

// rows [c; cA; ...; cA^{d-1}]
inline Matrix local_observability(const Matrix& A_state, const Vector& c) {
    const std::size_t d = A_state.rows;
    if (A_state.cols != d || c.size() != d)
        throw std::invalid_argument("local_observability: dimension mismatch");
    Matrix O(d, d);
    Vector row = c;
    for (std::size_t t = 0; t < d; ++t) {
        for (std::size_t j = 0; j < d; ++j) O(t, j) = row[j];
        if (t + 1 < d) row = matvec_t(A_state, row);  // row' = row * A
    }
    return O;
}

// numerical rank via singular values (eigenvalues of M^T M), relative
// tolerance against the largest singular value
inline std::size_t numerical_rank(const Matrix& M, double rel_tol = 1e-8) {
    if (M.rows == 0 || M.cols == 0) return 0;
    const Matrix G = (M.rows >= M.cols) ? gram(M) : gram(transpose(M));
    SymEig eig = sym_eig(G);
    double smax = 0.0;
    for (double v : eig.values) smax = std::max(smax, std::sqrt(std::max(v, 0.0)));
    if (smax == 0.0) return 0;
    std::size_t r = 0;
    for (double v : eig.values)
        if (std::sqrt(std::max(v, 0.0)) > rel_tol * smax) ++r;
    return r;
}

inline ObservabilityMatrices check_joint_observability(const LtiSystem& sys) {
    const std::size_t d = sys.A_state.rows;
    const std::size_t m = sys.C_rows.size();
    ObservabilityMatrices out;
    out.O_local.reserve(m);
    out.rank_local.reserve(m);
    out.O_stacked = Matrix(m * d, d);
    out.O_bar = Matrix(m * d, d);
    out.perm.resize(m * d);
    for (std::size_t i = 0; i < m; ++i) {
        Matrix O = local_observability(sys.A_state, sys.C_rows[i]);
        out.rank_local.push_back(numerical_rank(O));
        for (std::size_t t = 0; t < d; ++t)
            for (std::size_t j = 0; j < d; ++j) out.O_stacked(i * d + t, j) = O(t, j);
        out.O_local.push_back(std::move(O));
    }
    // global ordering interleaves agents per time step; a pure row permutation
    // of the agent-major stack
    for (std::size_t t = 0; t < d; ++t)
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t rbar = t * m + i;
            const std::size_t rstk = i * d + t;
            out.perm[rbar] = rstk;
            for (std::size_t j = 0; j < d; ++j) out.O_bar(rbar, j) = out.O_stacked(rstk, j);
        }
    for (std::size_t r = 0; r < m * d; ++r)
        for (std::size_t j = 0; j < d; ++j)
            if (out.O_bar(r, j) != out.O_stacked(out.perm[r], j))
                throw numerical_error("check_joint_observability: permutation mismatch");
    out.rank_global = numerical_rank(out.O_stacked);
    out.jointly_observable = out.rank_global == d;
    return out;
}

// y^i stacks c^i A^t z0 for t = 0..d-1
inline MeasurementSet simulate_measurements(const LtiSystem& sys, const Vector& z0) {
    const std::size_t d = sys.A_state.rows;
    MeasurementSet ms;
    ms.y_local.reserve(sys.C_rows.size());
    for (const Vector& c : sys.C_rows) {
        Vector y(d);
        Vector z = z0;
        for (std::size_t t = 0; t < d; ++t) {
            double v = 0.0;
            for (std::size_t j = 0; j < d; ++j) v += c[j] * z[j];
            y[t] = v;
            if (t + 1 < d) z = matvec(sys.A_state, z);
        }
        ms.y_local.push_back(std::move(y));
    }
    return ms;
}

// agent i's regression block is (O^i, y^i); x* is the initial state, left to
// be recovered by the solver
inline std::pair<data::Dataset, data::Partition> to_regression(const LtiSystem& sys,
                                                               const MeasurementSet& meas) {
    const std::size_t d = sys.A_state.rows;
    const std::size_t m = sys.C_rows.size();
    if (meas.y_local.size() != m)
        throw std::invalid_argument("to_regression: measurement count != agent count");
    ObservabilityMatrices obs = check_joint_observability(sys);
    data::Dataset ds;
    ds.name = "stateest-regression";
    ds.A = std::move(obs.O_stacked);
    ds.B.reserve(m * d);
    for (const Vector& y : meas.y_local) ds.B.insert(ds.B.end(), y.begin(), y.end());
    ds.consistent = true;  // noiseless measurement model
    ds.provenance = "LTI observability regression; m=" + std::to_string(m) +
                    ", d=" + std::to_string(d);
    if (!obs.jointly_observable)
        ds.provenance += "; WARNING: not jointly observable (rank " +
                         std::to_string(obs.rank_global) + " < " + std::to_string(d) +
                         "), solution non-unique";
    data::Partition part = data::partition(ds, m);
    return {std::move(ds), std::move(part)};
}

inline std::pair<Vector, sim::RunResult> estimate_initial_state(const LtiSystem& sys,
                                                                const MeasurementSet& meas,
                                                                const sim::RunConfig& cfg) {
    auto [ds, part] = to_regression(sys, meas);
    sim::RunResult rr = sim::run_until_stop(cfg, ds, part);
    Vector z0_hat = rr.x;
    return {std::move(z0_hat), std::move(rr)};
}

// --- system specification files -------------------------------------------
//
//   # comment
//   d 4
//   m 4
//   A  a11 a12 ... a1d  a21 ... add     (row-major, free-form whitespace)
//   c1 v1 ... vd
//   ...
//   cm v1 ... vd
//   z0 v1 ... vd                         (optional)
//
// d and m must precede A, c<i>, z0.

struct SystemFile {
    LtiSystem sys;
    std::optional<Vector> z0;
};

namespace detail {

class TokenStream {
  public:
    TokenStream(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

    std::optional<std::string> next() {
        for (;;) {
            if (pos_ >= line_.size()) {
                if (!std::getline(in_, line_)) return std::nullopt;
                ++lineno_;
                pos_ = 0;
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(line_[pos_]))) {
                ++pos_;
                continue;
            }
            if (line_[pos_] == '#') {
                pos_ = line_.size();
                continue;
            }
            std::size_t start = pos_;
            while (pos_ < line_.size() &&
                   !std::isspace(static_cast<unsigned char>(line_[pos_])) && line_[pos_] != '#')
                ++pos_;
            return line_.substr(start, pos_ - start);
        }
    }

    double real(const char* what) {
        auto tok = next();
        if (!tok) throw data::format_error(path_, lineno_, std::string("unexpected end of file reading ") + what);
        try {
            std::size_t used = 0;
            double v = std::stod(*tok, &used);
            if (used != tok->size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw data::format_error(path_, lineno_, std::string("expected a number for ") + what +
                                                         ", got '" + *tok + "'");
        }
    }

    std::size_t count(const char* what) {
        const double v = real(what);
        if (v < 1 || v != static_cast<double>(static_cast<std::size_t>(v)))
            throw data::format_error(path_, lineno_, std::string("expected a positive integer for ") + what);
        return static_cast<std::size_t>(v);
    }

    std::size_t line() const { return lineno_; }
    const std::string& path() const { return path_; }

  private:
    std::istream& in_;
    std::string path_;
    std::string line_;
    std::size_t pos_ = 0;
    std::size_t lineno_ = 0;
};

}  // namespace detail

inline SystemFile load_system(std::istream& in, const std::string& path) {
    detail::TokenStream ts(in, path);
    std::size_t d = 0, m = 0;
    std::optional<Matrix> A;
    std::vector<Vector> c_rows;
    std::vector<bool> c_seen;
    std::optional<Vector> z0;

    auto need_dims = [&](const std::string& key) {
        if (d == 0 || m == 0)
            throw data::format_error(path, ts.line(), "'" + key + "' requires d and m first");
    };
    for (;;) {
        auto key = ts.next();
        if (!key) break;
        if (*key == "d") {
            d = ts.count("d");
        } else if (*key == "m") {
            m = ts.count("m");
        } else if (*key == "A") {
            need_dims(*key);
            Matrix M(d, d);
            for (std::size_t i = 0; i < d * d; ++i) M.a[i] = ts.real("A entries");
            A = std::move(M);
        } else if (*key == "z0") {
            need_dims(*key);
            Vector z(d);
            for (std::size_t i = 0; i < d; ++i) z[i] = ts.real("z0 entries");
            z0 = std::move(z);
        } else if (key->size() > 1 && (*key)[0] == 'c') {
            need_dims(*key);
            std::size_t idx = 0;
            try {
                idx = static_cast<std::size_t>(std::stoul(key->substr(1)));
            } catch (const std::exception&) {
                throw data::format_error(path, ts.line(), "unknown key '" + *key + "'");
            }
            if (idx < 1 || idx > m)
                throw data::format_error(path, ts.line(),
                                         "agent index " + std::to_string(idx) + " outside 1.." +
                                             std::to_string(m));
            if (c_rows.empty()) {
                c_rows.assign(m, Vector());
                c_seen.assign(m, false);
            }
            if (c_seen[idx - 1])
                throw data::format_error(path, ts.line(), "duplicate row '" + *key + "'");
            Vector c(d);
            for (std::size_t i = 0; i < d; ++i) c[i] = ts.real("c entries");
            c_rows[idx - 1] = std::move(c);
            c_seen[idx - 1] = true;
        } else {
            throw data::format_error(path, ts.line(), "unknown key '" + *key + "'");
        }
    }
    if (d == 0 || m == 0) throw data::format_error(path, ts.line(), "missing d or m");
    if (!A) throw data::format_error(path, ts.line(), "missing A");
    for (std::size_t i = 0; i < m; ++i)
        if (c_rows.empty() || !c_seen[i])
            throw data::format_error(path, ts.line(), "missing row c" + std::to_string(i + 1));
    SystemFile sf;
    sf.sys.A_state = std::move(*A);
    sf.sys.C_rows = std::move(c_rows);
    sf.z0 = std::move(z0);
    return sf;
}

inline SystemFile load_system_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open system file: " + path);
    return load_system(in, path);
}

// Built-in demo: two decoupled planar rotations; each agent sees one
// coordinate, so every local observability matrix has rank 2 < 4 while the
// four agents are jointly observable.
inline std::pair<LtiSystem, Vector> builtin_demo() {
    const double t1 = 0.7, t2 = 0.3;
    LtiSystem sys;
    sys.A_state = Matrix{{std::cos(t1), -std::sin(t1), 0.0, 0.0},
                         {std::sin(t1), std::cos(t1), 0.0, 0.0},
                         {0.0, 0.0, std::cos(t2), -std::sin(t2)},
                         {0.0, 0.0, std::sin(t2), std::cos(t2)}};
    for (std::size_t i = 0; i < 4; ++i) {
        Vector c(4, 0.0);
        c[i] = 1.0;
        sys.C_rows.push_back(std::move(c));
    }
    return {std::move(sys), Vector{1.0, -1.0, 0.5, 2.0}};
}

}  // namespace ipsg::est
