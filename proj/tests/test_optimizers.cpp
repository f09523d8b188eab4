#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ipsg/datagen.hpp"
#include "ipsg/optimizers.hpp"
#include "oracles.hpp"

using ipsg::Matrix;
using ipsg::Vector;
namespace opt = ipsg::opt;

namespace {

// literal transcription used as the independent oracle: forms a^T a densely
// and updates column by column, then x with the *new* K.
opt::IpsgState transcription_step(const opt::IpsgState& st, const Vector& a, double b) {
    const std::size_t d = st.x.size();
    Matrix ata(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) ata(i, j) = a[i] * a[j];
    opt::IpsgState out = st;
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < d; ++i) {
            double Rij = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                Rij += (ata(i, k) + (i == k ? 0.0 : 0.0)) * st.K(k, j);
            Rij += st.beta * st.K(i, j);
            if (i == j) Rij -= 1.0;
            out.K(i, j) = st.K(i, j) - st.alpha * Rij;
        }
    }
    double resid = -b;
    for (std::size_t i = 0; i < d; ++i) resid += a[i] * st.x[i];
    Vector g(d);
    for (std::size_t i = 0; i < d; ++i) g[i] = a[i] * resid;
    for (std::size_t i = 0; i < d; ++i) {
        double kg = 0.0;
        for (std::size_t k = 0; k < d; ++k) kg += out.K(i, k) * g[k];
        out.x[i] = st.x[i] - st.delta * kg;
    }
    return out;
}

}  // namespace

TEST_CASE("stoch_grad basics") {
    CHECK(opt::stoch_grad({2, 3}, std::vector<double>{1, 0}, 0.0) == Vector{2, 0});

    Vector a{2, -1};
    Vector x{1, 2};
    CHECK(opt::stoch_grad(x, a, 0.0) == Vector{0, 0});  // a.x = 0 = b

    CHECK_THROWS_AS(opt::stoch_grad({1}, a, 0.0), std::invalid_argument);
}

TEST_CASE("stoch_grad matches finite differences") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 10; ++rep) {
        Vector a = oracle::random_vector(rng, 6);
        Vector x = oracle::random_vector(rng, 6);
        const double b = oracle::random_vector(rng, 1)[0];
        Vector g = opt::stoch_grad(x, a, b);
        auto f = [&](const Vector& p) {
            double r = -b;
            for (std::size_t i = 0; i < p.size(); ++i) r += a[i] * p[i];
            return 0.5 * r * r;
        };
        const double h = 1e-6;
        for (std::size_t i = 0; i < 6; ++i) {
            Vector xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            CHECK(g[i] == Catch::Approx((f(xp) - f(xm)) / (2 * h)).margin(1e-6));
        }
    }
}

TEST_CASE("stoch_grad linearity in x") {
    std::mt19937_64 rng(22);
    Vector a = oracle::random_vector(rng, 5);
    Vector x = oracle::random_vector(rng, 5);
    Vector y = oracle::random_vector(rng, 5);
    Vector xy(5);
    for (std::size_t i = 0; i < 5; ++i) xy[i] = x[i] + y[i];
    const double b = 0.37;
    Vector lhs = opt::stoch_grad(xy, a, b);
    Vector gx = opt::stoch_grad(x, a, b);
    double ay = 0.0;
    for (std::size_t i = 0; i < 5; ++i) ay += a[i] * y[i];
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(lhs[i] == Catch::Approx(gx[i] + a[i] * ay).margin(1e-13));
}

TEST_CASE("unbiasedness by enumeration") {
    ipsg::data::Dataset ds = ipsg::data::random_problem(40, 6, 23, false, 0.2);
    std::mt19937_64 rng(24);
    Matrix G = ipsg::gram(ds.A);
    Vector atb = ipsg::matvec_t(ds.A, ds.B);
    for (int rep = 0; rep < 5; ++rep) {
        Vector x = oracle::random_vector(rng, 6, -3.0, 3.0);
        Vector mean(6, 0.0);
        for (std::size_t r = 0; r < ds.A.rows; ++r) {
            Vector g = opt::stoch_grad(x, std::span<const double>(ds.A.row(r), 6), ds.B[r]);
            for (std::size_t i = 0; i < 6; ++i) mean[i] += g[i];
        }
        Vector full = ipsg::matvec(G, x);
        double scale = 0.0, diff = 0.0;
        for (std::size_t i = 0; i < 6; ++i) {
            mean[i] /= static_cast<double>(ds.A.rows);
            full[i] = (full[i] - atb[i]) / static_cast<double>(ds.A.rows);
            scale = std::max(scale, std::fabs(full[i]));
            diff = std::max(diff, std::fabs(mean[i] - full[i]));
        }
        CHECK(diff <= 1e-12 * std::max(scale, 1.0));
    }
}

TEST_CASE("precond_residuals basics") {
    Matrix K0(3, 3, 0.0);
    Matrix R = opt::precond_residuals(K0, std::vector<double>{1, 2, 3}, 0.5);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(R(i, j) == (i == j ? -1.0 : 0.0));

    // scalar fixed point: K = K_beta = 1/(1+1) = 0.5
    Matrix Kb{{0.5}};
    Matrix Rfp = opt::precond_residuals(Kb, std::vector<double>{1}, 1.0);
    CHECK(Rfp(0, 0) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("precond_residuals matches dense oracle") {
    std::mt19937_64 rng(25);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix K = oracle::random_matrix(rng, 4, 4);
        Vector a = oracle::random_vector(rng, 4);
        const double beta = 0.25 + rep * 0.1;
        Matrix R = opt::precond_residuals(K, a, beta);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                double want = beta * K(i, j) - (i == j ? 1.0 : 0.0);
                for (std::size_t k = 0; k < 4; ++k) want += a[i] * a[k] * K(k, j);
                CHECK(R(i, j) == Catch::Approx(want).margin(1e-12));
            }
    }
}

TEST_CASE("ipsg_update scalar chain") {
    opt::IpsgState st;
    st.x = {1.0};
    st.K = Matrix{{0.0}};
    st.alpha = 0.3;
    st.delta = 0.7;
    st.beta = 1.0;
    Vector a{1.0};
    opt::GradientSample s{opt::stoch_grad(st.x, a, 0.0), opt::precond_residuals(st.K, a, 1.0)};
    CHECK(s.g[0] == 1.0);
    CHECK(s.Rmat(0, 0) == -1.0);
    opt::IpsgState nx = opt::ipsg_update(st, s);
    CHECK(nx.K(0, 0) == Catch::Approx(0.3).margin(1e-15));
    CHECK(nx.x[0] == Catch::Approx(1.0 - 0.7 * 0.3).margin(1e-15));
}

TEST_CASE("ipsg_update with zero gradient still updates K") {
    std::mt19937_64 rng(26);
    opt::IpsgState st;
    st.x = oracle::random_vector(rng, 3);
    st.K = oracle::random_matrix(rng, 3, 3);
    st.alpha = 0.2;
    st.delta = 0.5;
    st.beta = 1.0;
    opt::GradientSample s;
    s.g = Vector(3, 0.0);
    s.Rmat = oracle::random_matrix(rng, 3, 3);
    opt::IpsgState nx = opt::ipsg_update(st, s);
    CHECK(nx.x == st.x);
    for (std::size_t i = 0; i < 9; ++i)
        CHECK(nx.K.a[i] == Catch::Approx(st.K.a[i] - 0.2 * s.Rmat.a[i]).margin(1e-15));
}

TEST_CASE("ipsg_update equals literal transcription and uses the new K") {
    std::mt19937_64 rng(27);
    for (int rep = 0; rep < 10; ++rep) {
        opt::IpsgState st;
        st.x = oracle::random_vector(rng, 3);
        st.K = oracle::random_matrix(rng, 3, 3);
        st.alpha = 0.15;
        st.delta = 0.9;
        st.beta = 0.8;
        Vector a = oracle::random_vector(rng, 3);
        const double b = oracle::random_vector(rng, 1)[0];
        opt::GradientSample s{opt::stoch_grad(st.x, a, b),
                              opt::precond_residuals(st.K, a, st.beta)};
        opt::IpsgState got = opt::ipsg_update(st, s);
        opt::IpsgState want = transcription_step(st, a, b);
        for (std::size_t i = 0; i < 9; ++i) CHECK(got.K.a[i] == Catch::Approx(want.K.a[i]).margin(1e-13));
        for (std::size_t i = 0; i < 3; ++i) CHECK(got.x[i] == Catch::Approx(want.x[i]).margin(1e-13));

        // the stale-K route must differ (when alpha*Rmat*g is nonzero)
        Vector stale = ipsg::matvec(st.K, s.g);
        Vector fresh = ipsg::matvec(got.K, s.g);
        double gap = 0.0;
        for (std::size_t i = 0; i < 3; ++i) gap = std::max(gap, std::fabs(stale[i] - fresh[i]));
        if (gap > 1e-9) {
            double xgap = 0.0;
            for (std::size_t i = 0; i < 3; ++i)
                xgap = std::max(xgap, std::fabs(got.x[i] - (st.x[i] - st.delta * stale[i])));
            CHECK(xgap > 0.0);
        }
    }
}

TEST_CASE("ipsg_update flags non-finite results") {
    opt::IpsgState st;
    st.x = {1.0};
    st.K = Matrix{{1.0}};
    st.alpha = 1.0;
    st.delta = 1.0;
    st.beta = 1.0;
    opt::GradientSample s;
    s.g = {std::numeric_limits<double>::infinity()};
    s.Rmat = Matrix{{0.0}};
    CHECK_THROWS_AS(opt::ipsg_update(st, s), ipsg::numerical_error);
}

TEST_CASE("sgd") {
    opt::BaselineState st;
    st.method = opt::Method::sgd;
    st.x = {1.0};
    st.alpha = 0.1;
    CHECK(opt::sgd_update(st, {1.0}).x[0] == Catch::Approx(0.9).margin(1e-15));
    CHECK(opt::sgd_update(st, {0.0}).x[0] == 1.0);
}

TEST_CASE("adagrad") {
    opt::BaselineState st;
    st.method = opt::Method::adagrad;
    st.x = {1.0, 2.0};
    st.alpha = 0.5;
    st.eps = 1e-7;
    opt::BaselineState s1 = opt::adagrad_update(st, {0.0, 0.0});
    CHECK(s1.x == st.x);
    CHECK(s1.acc == Vector{0.0, 0.0});

    opt::BaselineState s2 = opt::adagrad_update(st, {2.0, 0.0});
    CHECK(s2.acc[0] == 4.0);
    CHECK(s2.x[0] == Catch::Approx(1.0 - 0.5 * 2.0 / (2.0 + 1e-7)).margin(1e-12));
    CHECK(s2.x[1] == 2.0);
}

TEST_CASE("adam first step bias correction cancels") {
    opt::BaselineState st;
    st.method = opt::Method::adam;
    st.x = {3.0};
    st.alpha = 0.1;
    st.beta1 = 0.9;
    st.beta2 = 0.999;
    st.eps = 1e-7;
    opt::BaselineState nx = opt::adam_update(st, {2.0}, 1);
    CHECK(nx.x[0] == Catch::Approx(3.0 - 0.1 * 2.0 / (2.0 + 1e-7)).margin(1e-12));
    CHECK_THROWS_AS(opt::adam_update(st, {2.0}, 0), std::invalid_argument);
}

TEST_CASE("adam sqrt-t schedule") {
    opt::BaselineState st;
    st.method = opt::Method::adam;
    st.x = {0.0};
    st.alpha = 0.5;
    st.alpha_over_sqrt_t = true;
    CHECK(opt::step_size(st, 1) == 0.5);
    CHECK(opt::step_size(st, 4) == 0.25);
}

TEST_CASE("amsgrad max second moment never amplifies the raw-v step") {
    opt::BaselineState ams;
    ams.method = opt::Method::amsgrad;
    ams.x = {0.0};
    ams.alpha = 0.3;
    ams.beta1 = 0.9;
    ams.beta2 = 0.99;
    ams.eps = 1e-7;
    // monotonically shrinking gradients
    double prev_x = 0.0;
    for (std::size_t t = 1; t <= 30; ++t) {
        const double g = 4.0 / static_cast<double>(t);
        opt::BaselineState nx = opt::amsgrad_update(ams, {g}, t);
        const double step_taken = std::fabs(nx.x[0] - prev_x);
        // same step but with the un-maxed second moment in the denominator
        const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t));
        const double mhat = nx.m[0] / bc1;
        const double raw_step = std::fabs(0.3 * mhat / (std::sqrt(nx.v[0]) + 1e-7));
        CHECK(step_taken <= raw_step + 1e-15);
        CHECK(nx.vmax[0] >= nx.v[0]);
        prev_x = nx.x[0];
        ams = nx;
    }
}

TEST_CASE("suggest_alpha") {
    CHECK(opt::suggest_alpha(1.0, 1.0) == 1.0);
    CHECK(opt::suggest_alpha(3.0, 1.0) == 0.5);
    CHECK_THROWS_AS(opt::suggest_alpha(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("deterministic scalar IPSG error is monotone after the first step") {
    // N=1, d=1: every sample is the full gradient
    const double a = 2.0, b = 3.0, x_star = 1.5;
    opt::IpsgState st;
    st.x = {0.0};
    st.K = Matrix{{0.0}};
    st.beta = 1.0;
    const double L = st.beta + a * a;  // 5
    st.alpha = 0.5 / L;
    st.delta = 1.0;
    double prev = std::fabs(st.x[0] - x_star);
    bool first = true;
    for (int t = 0; t < 200; ++t) {
        opt::GradientSample s{opt::stoch_grad(st.x, std::vector<double>{a}, b),
                              opt::precond_residuals(st.K, std::vector<double>{a}, st.beta)};
        st = opt::ipsg_update(st, s);
        const double err = std::fabs(st.x[0] - x_star);
        if (!first) CHECK(err <= prev + 1e-15);
        prev = err;
        first = false;
    }
    CHECK(prev < 0.4);
}
