#pragma once

// Synchronous server/agent round protocol with seeded randomness, message
// accounting, and the windowed stopping rule.
//
// Round shape (one iteration t):
//   1. server broadcasts x(t) [and K(t) for IPSG] to all m agents
//   2. every agent draws one local row uniformly and computes its gradient
//      sample; for IPSG the selected agent additionally materializes the
//      preconditioner residual matrix
//   3. all m agents upload; the server draws zeta_t uniform over {1..m} and
//      applies exactly one agent's sample
// All m uplinks are counted by the message/byte counters even though one is
// consumed. To keep one round at O(d^2) rather than O(m d^2) work, the m-1
// discarded residual matrices are never materialized; no RNG is attached to
// that computation, so trajectories are identical to the all-materialized
// protocol.
//
// RNG layout: stream 0 is the server (zeta draws), stream i is agent i,
// i = 1..m, all derived from the run seed. Replay is deterministic and
// independent of evaluation order.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ipsg/dataset.hpp"
#include "ipsg/linalg.hpp"
#include "ipsg/optimizers.hpp"
#include "ipsg/rng.hpp"

namespace ipsg::sim {

struct AgentNode {
    std::size_t id = 1;  // 1..m
    Matrix A;            // n x d local block
    Vector B;            // n local outputs
    RngStream rng{0};
};

inline std::vector<AgentNode> make_agents(const data::Dataset& ds, const data::Partition& part,
                                          std::uint64_t seed) {
    std::vector<AgentNode> agents;
    agents.reserve(part.m);
    const std::size_t d = ds.A.cols;
    for (std::size_t i = 0; i < part.m; ++i) {
        const auto [lo, hi] = part.blocks[i];
        AgentNode ag;
        ag.id = i + 1;
        ag.A = Matrix(hi - lo, d);
        ag.B.assign(ds.B.begin() + static_cast<std::ptrdiff_t>(lo),
                    ds.B.begin() + static_cast<std::ptrdiff_t>(hi));
        for (std::size_t r = lo; r < hi; ++r)
            for (std::size_t c = 0; c < d; ++c) ag.A(r - lo, c) = ds.A(r, c);
        ag.rng = RngStream(seed, ag.id);
        agents.push_back(std::move(ag));
    }
    return agents;
}

struct RunConfig {
    opt::Method method = opt::Method::ipsg;
    opt::MethodParams params;
    std::uint64_t seed = 0;
    std::size_t t_max = 10000;
    double eps_tol = 1e-4;
    std::size_t window = 10;
    Vector x0;  // empty = origin
    Matrix K0;  // empty = zero matrix (IPSG only)
};

struct RunResult {
    std::vector<double> errors;  // errors[t] = relative estimation error after t rounds
    std::optional<std::size_t> stop_iter;
    std::uint64_t messages_up = 0;
    std::uint64_t messages_down = 0;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
    std::uint64_t seed = 0;
    Vector x;  // final iterate
};

// First index t such that errors[t-window+1 .. t] are all <= eps_tol; the
// last index of the first qualifying window is reported.
inline std::optional<std::size_t> stopping_index(std::span<const double> errors, double eps_tol,
                                                 std::size_t window) {
    if (window < 1) throw std::invalid_argument("stopping_index: window must be >= 1");
    if (!(eps_tol > 0)) throw std::invalid_argument("stopping_index: eps_tol must be > 0");
    std::size_t run = 0;
    for (std::size_t t = 0; t < errors.size(); ++t) {
        run = (errors[t] <= eps_tol) ? run + 1 : 0;
        if (run >= window) return t;
    }
    return std::nullopt;
}

struct ServerState {
    opt::Method method = opt::Method::ipsg;
    opt::IpsgState ipsg;      // used when method == ipsg
    opt::BaselineState base;  // otherwise
    RngStream rng{0};
};

inline const Vector& server_x(const ServerState& sv) {
    return sv.method == opt::Method::ipsg ? sv.ipsg.x : sv.base.x;
}

struct Channels {
    std::uint64_t messages_up = 0;
    std::uint64_t messages_down = 0;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
};

// reusable per-round buffers, sized on first use
struct RoundWorkspace {
    Vector u;     // a * K
    Matrix Rmat;  // (a^T a + beta I) K - I for the consumed agent
    Vector g;
    Vector w;  // K(t+1) * g
};

namespace detail {

constexpr std::uint64_t kRealBytes = 8;

// agent-side: draw a row, return (row index, residual a.x - b)
inline std::pair<std::size_t, double> agent_draw(AgentNode& ag, const Vector& x) {
    const std::size_t r = sample_uniform(ag.rng, ag.A.rows);
    const double* a = ag.A.row(r);
    double s = -ag.B[r];
    for (std::size_t j = 0; j < x.size(); ++j) s += a[j] * x[j];
    return {r, s};
}

}  // namespace detail

// One synchronous round; t is the 1-based iteration index (drives the Adam
// family schedules). Mutates server, agents' RNG streams, counters. Returns
// the consumed (zeta, local row) pair.
inline std::pair<std::size_t, std::size_t> round(ServerState& sv, std::vector<AgentNode>& agents,
                                                 std::size_t t, RoundWorkspace& ws, Channels& ch) {
    const std::size_t m = agents.size();
    const Vector& x = server_x(sv);
    const std::size_t d = x.size();
    const bool is_ipsg = sv.method == opt::Method::ipsg;
    const std::uint64_t payload = (static_cast<std::uint64_t>(d) +
                                   (is_ipsg ? static_cast<std::uint64_t>(d) * d : 0)) *
                                  detail::kRealBytes;

    // phase 1: broadcast + local draws
    ch.messages_down += m;
    ch.bytes_down += m * payload;
    std::vector<std::pair<std::size_t, double>> drawn(m);
    for (std::size_t i = 0; i < m; ++i) drawn[i] = detail::agent_draw(agents[i], x);

    // phase 2: uplinks counted, one consumed
    ch.messages_up += m;
    ch.bytes_up += m * payload;
    const std::size_t zeta = sample_uniform(sv.rng, m);
    const AgentNode& ag = agents[zeta];
    const auto [row, s] = drawn[zeta];
    const double* a = ag.A.row(row);

    if (ws.g.size() != d) ws.g.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) ws.g[j] = a[j] * s;

    if (!is_ipsg) {
        switch (sv.method) {
            case opt::Method::sgd: sv.base = opt::sgd_update(sv.base, ws.g); break;
            case opt::Method::adagrad: sv.base = opt::adagrad_update(sv.base, ws.g); break;
            case opt::Method::adam: sv.base = opt::adam_update(sv.base, ws.g, t); break;
            case opt::Method::amsgrad: sv.base = opt::amsgrad_update(sv.base, ws.g, t); break;
            default: throw std::logic_error("round: unreachable method");
        }
        return {zeta, row};
    }

    // agent side: materialize the consumed residual matrix
    Matrix& K = sv.ipsg.K;
    if (ws.u.size() != d) ws.u.assign(d, 0.0);
    if (ws.Rmat.rows != d || ws.Rmat.cols != d) ws.Rmat = Matrix(d, d);
    if (ws.w.size() != d) ws.w.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) ws.u[j] = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double ai = a[i];
        if (ai == 0.0) continue;
        const double* Ki = &K.a[i * d];
        for (std::size_t j = 0; j < d; ++j) ws.u[j] += ai * Ki[j];
    }
    const double beta = sv.ipsg.beta;
    for (std::size_t i = 0; i < d; ++i) {
        const double ai = a[i];
        const double* Ki = &K.a[i * d];
        double* Ri = &ws.Rmat.a[i * d];
        for (std::size_t j = 0; j < d; ++j) Ri[j] = ai * ws.u[j] + beta * Ki[j];
        Ri[i] -= 1.0;
    }

    // server side: K(t+1) = K(t) - alpha R, then x(t+1) = x(t) - delta K(t+1) g,
    // with the matvec fused into the same sweep
    const double alpha = sv.ipsg.alpha;
    const double delta = sv.ipsg.delta;
    for (std::size_t i = 0; i < d; ++i) {
        double* Ki = &K.a[i * d];
        const double* Ri = &ws.Rmat.a[i * d];
        double wi = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double knew = Ki[j] - alpha * Ri[j];
            Ki[j] = knew;
            wi += knew * ws.g[j];
        }
        ws.w[i] = wi;
    }
    for (std::size_t i = 0; i < d; ++i) sv.ipsg.x[i] -= delta * ws.w[i];
    return {zeta, row};
}

inline ServerState make_server(const RunConfig& cfg, std::size_t d) {
    ServerState sv;
    sv.method = cfg.method;
    sv.rng = RngStream(cfg.seed, 0);
    Vector x0 = cfg.x0.empty() ? Vector(d, 0.0) : cfg.x0;
    if (x0.size() != d) throw std::invalid_argument("run: x0 dimension mismatch");
    if (cfg.method == opt::Method::ipsg) {
        Matrix K0 = cfg.K0.rows == 0 ? Matrix(d, d, 0.0) : cfg.K0;
        if (K0.rows != d || K0.cols != d) throw std::invalid_argument("run: K0 dimension mismatch");
        sv.ipsg = opt::make_ipsg_state(std::move(x0), std::move(K0), cfg.params);
    } else {
        sv.base = opt::make_baseline_state(cfg.method, std::move(x0), cfg.params);
    }
    return sv;
}

// Full run: iterate rounds, record the relative estimation error
// ||x(t)-x*|| / ||x(0)-x*|| each iteration, stop at the first t whose trailing
// window of `window` errors are all <= eps_tol, or exhaust t_max (stop_iter
// absent; not an error). When x(0) = x* the absolute error ||x(t)-x*|| is
// recorded instead.
inline RunResult run_until_stop(const RunConfig& cfg, const data::Dataset& ds,
                                const data::Partition& part) {
    if (!(cfg.eps_tol > 0)) throw std::invalid_argument("run: eps_tol must be > 0");
    if (cfg.window < 1) throw std::invalid_argument("run: window must be >= 1");
    const std::size_t d = ds.A.cols;
    const Vector x_star = ds.x_star ? *ds.x_star : data::least_squares_oracle(ds);

    std::vector<AgentNode> agents = make_agents(ds, part, cfg.seed);
    ServerState sv = make_server(cfg, d);
    RoundWorkspace ws;
    Channels ch;

    auto err_of = [&](const Vector& x, double denom) {
        double sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double z = x[i] - x_star[i];
            sq += z * z;
        }
        return std::sqrt(sq) / denom;
    };
    double denom = 0.0;
    {
        const Vector& x0 = server_x(sv);
        for (std::size_t i = 0; i < d; ++i) {
            const double z = x0[i] - x_star[i];
            denom += z * z;
        }
        denom = std::sqrt(denom);
        if (denom == 0.0) denom = 1.0;  // absolute-error fallback
    }

    RunResult res;
    res.seed = cfg.seed;
    res.errors.reserve(cfg.t_max + 1);
    res.errors.push_back(err_of(server_x(sv), denom));
    std::size_t run = res.errors[0] <= cfg.eps_tol ? 1 : 0;
    if (run >= cfg.window) res.stop_iter = 0;

    for (std::size_t t = 1; t <= cfg.t_max && !res.stop_iter; ++t) {
        round(sv, agents, t, ws, ch);
        const double e = err_of(server_x(sv), denom);
        if (!std::isfinite(e))
            throw numerical_error("run aborted: non-finite state at iteration " +
                                  std::to_string(t) + " (method " +
                                  opt::method_name(cfg.method) + ")");
        res.errors.push_back(e);
        run = e <= cfg.eps_tol ? run + 1 : 0;
        if (run >= cfg.window) res.stop_iter = t;
    }

    res.messages_up = ch.messages_up;
    res.messages_down = ch.messages_down;
    res.bytes_up = ch.bytes_up;
    res.bytes_down = ch.bytes_down;
    res.x = server_x(sv);
    return res;
}

}  // namespace ipsg::sim
