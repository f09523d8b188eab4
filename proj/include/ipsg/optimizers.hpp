#pragma once

// Per-iteration update rules: IPSG and the baseline stochastic optimizers.
// Everything is a pure function of (state, sample); the simulator owns looping
// and sampling.

#include <cmath>
#include <span>
#include <string>

#include "ipsg/linalg.hpp"

namespace ipsg::opt {

struct IpsgState {
    Vector x;
    Matrix K;
    double alpha = 0.0;
    double delta = 0.0;
    double beta = 0.0;
};

struct GradientSample {
    Vector g;     // a^T(a.x - b)
    Matrix Rmat;  // column j = (a^T a + beta I) k_j - e_j
};

// g = a^T (a.x - b) for one data row.
inline Vector stoch_grad(const Vector& x, std::span<const double> a, double b) {
    if (a.size() != x.size()) throw std::invalid_argument("stoch_grad: dimension mismatch");
    double s = -b;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * x[i];
    Vector g(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) g[i] = a[i] * s;
    return g;
}

// (a^T a + beta I) K - I without forming the d x d outer product: first the
// row u = a.K, then R = beta K + a^T u - I.
inline Matrix precond_residuals(const Matrix& K, std::span<const double> a, double beta) {
    const std::size_t d = K.rows;
    if (K.cols != d || a.size() != d)
        throw std::invalid_argument("precond_residuals: dimension mismatch");
    Vector u(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        const double ar = a[r];
        if (ar == 0.0) continue;
        const double* kr = K.row(r);
        for (std::size_t c = 0; c < d; ++c) u[c] += ar * kr[c];
    }
    Matrix R(d, d);
    for (std::size_t r = 0; r < d; ++r) {
        const double ar = a[r];
        const double* kr = K.row(r);
        double* rr = R.row(r);
        for (std::size_t c = 0; c < d; ++c) rr[c] = beta * kr[c] + ar * u[c];
        rr[r] -= 1.0;
    }
    return R;
}

// One IPSG step: K is updated first and the x-update uses the new K.
inline IpsgState ipsg_update(const IpsgState& st, const GradientSample& sample) {
    const std::size_t d = st.x.size();
    if (sample.g.size() != d || sample.Rmat.rows != d || sample.Rmat.cols != d ||
        st.K.rows != d || st.K.cols != d)
        throw std::invalid_argument("ipsg_update: dimension mismatch");
    IpsgState out = st;
    for (std::size_t i = 0; i < out.K.a.size(); ++i) out.K.a[i] = st.K.a[i] - st.alpha * sample.Rmat.a[i];
    Vector Kg = matvec(out.K, sample.g);
    for (std::size_t i = 0; i < d; ++i) out.x[i] = st.x[i] - st.delta * Kg[i];
    if (!all_finite(out.x) || !all_finite(out.K))
        throw numerical_error("ipsg_update: non-finite result");
    return out;
}

enum class Method { ipsg, sgd, adagrad, adam, amsgrad };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::ipsg: return "ipsg";
        case Method::sgd: return "sgd";
        case Method::adagrad: return "adagrad";
        case Method::adam: return "adam";
        case Method::amsgrad: return "amsgrad";
    }
    return "?";
}

inline Method method_from_name(const std::string& s) {
    if (s == "ipsg") return Method::ipsg;
    if (s == "sgd") return Method::sgd;
    if (s == "adagrad") return Method::adagrad;
    if (s == "adam") return Method::adam;
    if (s == "amsgrad") return Method::amsgrad;
    throw std::invalid_argument("unknown method '" + s + "'");
}

struct BaselineState {
    Method method = Method::sgd;
    Vector x;
    Vector acc;   // AdaGrad: running sum of g^2
    Vector m;     // Adam/AMSGrad first moment
    Vector v;     // Adam/AMSGrad second moment
    Vector vmax;  // AMSGrad max second moment
    double alpha = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-7;
    bool alpha_over_sqrt_t = false;  // alpha_t = alpha / sqrt(t), t >= 1
};

// one bag of hyperparameters covering every method; unused fields are ignored.
struct MethodParams {
    double alpha = 0.0;
    double delta = 0.0;   // IPSG only
    double beta = 0.0;    // IPSG only
    double beta1 = 0.9;   // Adam family
    double beta2 = 0.999;
    double eps = 1e-7;
    bool alpha_over_sqrt_t = false;
};

inline IpsgState make_ipsg_state(Vector x0, Matrix K0, const MethodParams& p) {
    IpsgState st;
    st.x = std::move(x0);
    st.K = std::move(K0);
    st.alpha = p.alpha;
    st.delta = p.delta;
    st.beta = p.beta;
    return st;
}

inline BaselineState make_baseline_state(Method m, Vector x0, const MethodParams& p) {
    BaselineState st;
    st.method = m;
    st.x = std::move(x0);
    st.alpha = p.alpha;
    st.beta1 = p.beta1;
    st.beta2 = p.beta2;
    st.eps = p.eps;
    st.alpha_over_sqrt_t = p.alpha_over_sqrt_t;
    return st;
}

inline double step_size(const BaselineState& st, std::size_t t) {
    return st.alpha_over_sqrt_t ? st.alpha / std::sqrt(static_cast<double>(t)) : st.alpha;
}

inline BaselineState sgd_update(const BaselineState& st, const Vector& g) {
    BaselineState out = st;
    for (std::size_t i = 0; i < g.size(); ++i) out.x[i] -= st.alpha * g[i];
    return out;
}

inline BaselineState adagrad_update(const BaselineState& st, const Vector& g) {
    BaselineState out = st;
    if (out.acc.empty()) out.acc.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        out.acc[i] += g[i] * g[i];
        out.x[i] -= st.alpha * g[i] / (std::sqrt(out.acc[i]) + st.eps);
    }
    return out;
}

inline BaselineState adam_update(const BaselineState& st, const Vector& g, std::size_t t) {
    if (t < 1) throw std::invalid_argument("adam_update: t starts at 1");
    BaselineState out = st;
    if (out.m.empty()) out.m.assign(g.size(), 0.0);
    if (out.v.empty()) out.v.assign(g.size(), 0.0);
    const double at = step_size(st, t);
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < g.size(); ++i) {
        out.m[i] = st.beta1 * out.m[i] + (1.0 - st.beta1) * g[i];
        out.v[i] = st.beta2 * out.v[i] + (1.0 - st.beta2) * g[i] * g[i];
        const double mhat = out.m[i] / bc1;
        const double vhat = out.v[i] / bc2;
        out.x[i] -= at * mhat / (std::sqrt(vhat) + st.eps);
    }
    return out;
}

// AMSGrad: first moment bias-corrected as in Adam; second moment tracked as a
// running max with no bias correction.
inline BaselineState amsgrad_update(const BaselineState& st, const Vector& g, std::size_t t) {
    if (t < 1) throw std::invalid_argument("amsgrad_update: t starts at 1");
    BaselineState out = st;
    if (out.m.empty()) out.m.assign(g.size(), 0.0);
    if (out.v.empty()) out.v.assign(g.size(), 0.0);
    if (out.vmax.empty()) out.vmax.assign(g.size(), 0.0);
    const double at = step_size(st, t);
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(t));
    for (std::size_t i = 0; i < g.size(); ++i) {
        out.m[i] = st.beta1 * out.m[i] + (1.0 - st.beta1) * g[i];
        out.v[i] = st.beta2 * out.v[i] + (1.0 - st.beta2) * g[i] * g[i];
        out.vmax[i] = std::max(out.vmax[i], out.v[i]);
        const double mhat = out.m[i] / bc1;
        out.x[i] -= at * mhat / (std::sqrt(out.vmax[i]) + st.eps);
    }
    return out;
}

inline double suggest_alpha(double s1, double sd) {
    if (!(sd > 0.0)) throw std::invalid_argument("suggest_alpha: sd must be positive (Assumption 1)");
    return 2.0 / (s1 + sd);
}

}  // namespace ipsg::opt
