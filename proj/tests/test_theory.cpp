#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ipsg/datagen.hpp"
#include "ipsg/theory.hpp"
#include "oracles.hpp"

using ipsg::Matrix;
using ipsg::Vector;
namespace th = ipsg::theory;
namespace data = ipsg::data;
namespace opt = ipsg::opt;

namespace {

Matrix scalar_mat(double v) { return Matrix{{v}}; }

// dense per-row norm oracle: forms each matrix and calls the eigensolver
double rho_oracle(const Matrix& A, double alpha, double beta) {
    const std::size_t N = A.rows, d = A.cols;
    double acc = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        Matrix M(d, d, 0.0);
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t c = 0; c < d; ++c) M(r, c) = -alpha * A(i, r) * A(i, c);
            M(r, r) += 1.0 - alpha * beta;
        }
        acc += ipsg::spectral_norm(M);
    }
    return acc / static_cast<double>(N);
}

std::pair<double, double> c1c2_oracle(const Matrix& A, double alpha, double kbeta_norm) {
    const std::size_t N = A.rows, d = A.cols;
    Matrix Gn = ipsg::gram(A);
    for (double& v : Gn.a) v /= static_cast<double>(N);
    double c1 = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        Matrix M(d, d);
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) M(r, c) = A(i, r) * A(i, c) - Gn(r, c);
        const double nrm = ipsg::spectral_norm(M);
        c1 = std::max(c1, nrm);
        sum += nrm;
    }
    return {c1, alpha * (sum / static_cast<double>(N)) * kbeta_norm};
}

double sigma2_oracle(const Matrix& A, double beta, const Matrix& K_beta) {
    const std::size_t N = A.rows, d = A.cols;
    double best = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            // ((a^T a + beta I) K_beta e_j - e_j) assembled entry by entry
            Vector col(d, 0.0);
            for (std::size_t r = 0; r < d; ++r) {
                double v = 0.0;
                for (std::size_t k = 0; k < d; ++k)
                    v += (A(i, r) * A(i, k) + (r == k ? beta : 0.0)) * K_beta(k, j);
                col[r] = v - (r == j ? 1.0 : 0.0);
            }
            for (double v : col) acc += v * v;
        }
        best = std::max(best, acc / static_cast<double>(N));
    }
    return best;
}

// independently written transcription of every series formula
th::SeriesPoint series_oracle(const th::Constants& c, const th::NoiseBounds& nb,
                              const th::Ktilde0& k0, std::size_t t) {
    const double n = static_cast<double>(c.N);
    double rho_sum = 0.0;
    for (std::size_t j = 0; j <= t; ++j) rho_sum += std::pow(c.rho, static_cast<double>(j));
    auto powi = [](double base, std::size_t e) {
        double r = 1.0;
        for (std::size_t k = 0; k < e; ++k) r *= base;
        return r;
    };
    const double kb = c.K_beta_norm;
    const double common = static_cast<double>(c.d) * c.C3 + kb * kb + 2.0 * c.C2 * kb * rho_sum +
                          k0.frob * k0.frob * powi(c.mu, t + 1) + 2.0 * kb * k0.spec * powi(c.rho, t + 1);
    th::SeriesPoint p;
    p.t = t;
    p.C4 = (nb.V2 + 1.0) * c.s1 * c.s1 / n * common;
    p.C5 = 2.0 * c.C1 * nb.E2 * c.s1 / n * (kb + k0.spec * powi(c.varrho, t));
    p.C6 = 2.0 * c.sd / (c.sd + n * c.beta) - 2.0 * c.s1 / n * k0.spec * powi(c.varrho, t + 1);
    p.C7 = 2.0 * c.C1 * nb.E1 * (kb + k0.spec * powi(c.varrho, t));
    p.C8 = p.C4 + 0.5;
    p.R3 = c.delta * c.delta * nb.V1 * n * common;
    p.R2 = p.R3 + 0.5 * c.alpha * c.alpha * p.C7 * p.C7;
    p.R1 = 1.0 + c.delta * c.delta * p.C8 + c.alpha * c.delta * p.C5 - c.delta * p.C6;
    p.delta_bar = std::min(1.0 / p.C6, (p.C6 - c.alpha * p.C5) / p.C8);
    return p;
}

}  // namespace

TEST_CASE("compute_kbeta") {
    Matrix k1 = th::compute_kbeta(scalar_mat(1.0), 1.0);
    CHECK(k1(0, 0) == Catch::Approx(0.5).margin(1e-15));

    Matrix I2 = ipsg::identity(2);
    Matrix k2 = th::compute_kbeta(I2, 0.5);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(k2(i, j) == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-14));

    std::mt19937_64 rng(41);
    Matrix A = oracle::random_matrix(rng, 30, 5);
    Matrix K = th::compute_kbeta(A, 1.0);  // residual gate inside
    double asym = 0.0, knorm = ipsg::spectral_norm(K);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) asym = std::max(asym, std::fabs(K(i, j) - K(j, i)));
    CHECK(asym <= 1e-12 * knorm);
    CHECK_THROWS_AS(th::compute_kbeta(A, 0.0), std::invalid_argument);

    // closed-form norm equals the dense route
    auto [s1, sd] = ipsg::sym_extreme_eigs(ipsg::gram(A));
    (void)s1;
    CHECK(knorm == Catch::Approx(1.0 / (sd / 30.0 + 1.0)).epsilon(1e-12));
}

TEST_CASE("compute_rho closed form") {
    Matrix A1 = scalar_mat(1.0);
    CHECK(th::compute_rho(A1, 0.5, 1.0) == Catch::Approx(0.0).margin(1e-15));
    CHECK(th::compute_rho(A1, 0.25, 1.0) == Catch::Approx(0.5).margin(1e-15));
    CHECK(th::compute_rho(A1, 0.0, 1.0) == 1.0);

    std::mt19937_64 rng(42);
    Matrix A = oracle::random_matrix(rng, 10, 3);
    const double beta = 0.8;
    for (double alpha : {0.05, 0.2, 0.31})
        CHECK(th::compute_rho(A, alpha, beta) ==
              Catch::Approx(rho_oracle(A, alpha, beta)).epsilon(1e-10));
    CHECK(th::compute_rho(A, 0.0, beta) == 1.0);

    // rho < 1 on the Lemma 1 hypothesis range
    Vector lam = th::row_lambdas(A);
    double amax = 1e300;
    for (double li : lam) amax = std::min(amax, 2.0 / (li + beta));
    for (double f : {0.1, 0.5, 0.9, 0.99}) CHECK(th::compute_rho(A, f * amax, beta) < 1.0);
}

TEST_CASE("compute_C1_C2") {
    // single row: the row equals the average, both vanish
    auto [c1s, c2s] = th::compute_C1_C2(scalar_mat(1.0), 0.5, 0.5);
    CHECK(c1s == Catch::Approx(0.0).margin(1e-12));
    CHECK(c2s == Catch::Approx(0.0).margin(1e-12));

    std::mt19937_64 rng(43);
    Matrix A = oracle::random_matrix(rng, 10, 3);
    const double kb = 0.37;
    auto [c1, c2] = th::compute_C1_C2(A, 0.2, kb);
    auto [o1, o2] = c1c2_oracle(A, 0.2, kb);
    CHECK(c1 == Catch::Approx(o1).epsilon(1e-10));
    CHECK(c2 == Catch::Approx(o2).epsilon(1e-10));
}

TEST_CASE("compute_L_sigma2_C3") {
    {
        Matrix A = scalar_mat(1.0);
        Matrix Kb = th::compute_kbeta(A, 1.0);
        auto [L, s2, c3] = th::compute_L_sigma2_C3(A, 1.0, 0.25, Kb, 1.0);
        CHECK(L == 2.0);
        CHECK(s2 == Catch::Approx(0.0).margin(1e-15));
        CHECK(c3 == Catch::Approx(0.0).margin(1e-15));
        CHECK_THROWS_AS(th::compute_L_sigma2_C3(A, 1.0, 0.6, Kb, 1.0), std::domain_error);
        CHECK_THROWS_AS(th::compute_L_sigma2_C3(A, 1.0, 0.0, Kb, 1.0), std::domain_error);
    }
    {
        Matrix I2 = ipsg::identity(2);
        Matrix Kb = th::compute_kbeta(I2, 0.5);  // = I
        auto [L, s2, c3] = th::compute_L_sigma2_C3(I2, 0.5, 0.3, Kb, 1.0);
        CHECK(L == 1.5);
        CHECK(s2 == Catch::Approx(0.25).margin(1e-14));
        CHECK(s2 == Catch::Approx(sigma2_oracle(I2, 0.5, Kb)).margin(1e-14));
        CHECK(c3 == Catch::Approx(0.3 * 2.0 * 0.25 / (1.0 * (1.0 - 0.3 * 1.5))).epsilon(1e-13));
    }
    {
        std::mt19937_64 rng(44);
        Matrix A = oracle::random_matrix(rng, 8, 3);
        Matrix Kb = th::compute_kbeta(A, 1.0);
        auto [s1, sd] = ipsg::sym_extreme_eigs(ipsg::gram(A));
        (void)s1;
        Vector lam = th::row_lambdas(A);
        double L_expect = 1.0;
        for (double li : lam) L_expect = std::max(L_expect, 1.0 + li);
        const double alpha = 0.5 / L_expect;
        auto [L, s2, c3] = th::compute_L_sigma2_C3(A, 1.0, alpha, Kb, sd);
        CHECK(L == Catch::Approx(L_expect).epsilon(1e-14));
        CHECK(s2 == Catch::Approx(sigma2_oracle(A, 1.0, Kb)).epsilon(1e-12));
        CHECK(c3 == Catch::Approx(alpha * 8.0 * s2 / (sd * (1.0 - alpha * L))).epsilon(1e-13));
    }
}

TEST_CASE("compute_alpha_bar") {
    CHECK(th::compute_alpha_bar(1, 1.0, 1.0, 2.0, 1.0) == 0.5);
    CHECK_THROWS_AS(th::compute_alpha_bar(1, 1.0, 0.0, 2.0, 1.0), std::domain_error);

    // dominant-beta regime: the 1/L branch wins
    std::mt19937_64 rng(45);
    Matrix A = oracle::random_matrix(rng, 12, 3);
    auto [s1, sd] = ipsg::sym_extreme_eigs(ipsg::gram(A));
    Vector lam = th::row_lambdas(A);
    double L = 1000.0;
    for (double li : lam) L = std::max(L, 1000.0 + li);
    CHECK(th::compute_alpha_bar(12, s1, sd, L, 1000.0) == 1.0 / L);
}

TEST_CASE("mu and varrho formulas") {
    CHECK(th::compute_mu(0.0, 3.0, 7, 11.0) == 1.0);
    CHECK(th::compute_mu(0.1, 2.0, 4, 5.0) ==
          Catch::Approx(1.0 - (2.0 * 0.1 * 2.0 / 4.0) * (1.0 - 0.5)).margin(1e-15));
    // varrho < 1 iff 0 < alpha < 2/((s1/N)+beta)
    const double s1 = 6.0, sd = 2.0, beta = 1.0;
    const std::size_t N = 3;
    const double lim = 2.0 / (s1 / 3.0 + beta);
    CHECK(th::compute_varrho(0.5 * lim, s1, sd, N, beta) < 1.0);
    CHECK(th::compute_varrho(0.99 * lim, s1, sd, N, beta) < 1.0);
    CHECK(th::compute_varrho(lim, s1, sd, N, beta) == Catch::Approx(1.0).margin(1e-12));
    CHECK(th::compute_varrho(0.0, s1, sd, N, beta) == 1.0);
}

TEST_CASE("compute_series matches an independent transcription") {
    std::mt19937_64 rng(46);
    Matrix A = oracle::random_matrix(rng, 14, 4);
    th::Constants c = th::compute_constants(A, 0.05, 1.0, 0.4);
    th::NoiseBounds nb{0.7, 1.3, 3.1, 4.2};
    Matrix K0(4, 4, 0.0);
    th::Ktilde0 k0 = th::ktilde0_norms(K0, c.K_beta);

    std::vector<std::size_t> ts{0, 1, 2, 7, 50, 1000};
    auto series = th::compute_series(c, nb, k0, ts);
    REQUIRE(series.size() == ts.size());
    for (std::size_t k = 0; k < ts.size(); ++k) {
        th::SeriesPoint want = series_oracle(c, nb, k0, ts[k]);
        const th::SeriesPoint& got = series[k];
        CHECK(got.C4 == Catch::Approx(want.C4).epsilon(1e-12));
        CHECK(got.C5 == Catch::Approx(want.C5).epsilon(1e-12));
        CHECK(got.C6 == Catch::Approx(want.C6).epsilon(1e-12));
        CHECK(got.C7 == Catch::Approx(want.C7).epsilon(1e-12));
        CHECK(got.C8 == Catch::Approx(want.C8).epsilon(1e-12));
        CHECK(got.R1 == Catch::Approx(want.R1).epsilon(1e-12));
        CHECK(got.R2 == Catch::Approx(want.R2).epsilon(1e-12));
        CHECK(got.R3 == Catch::Approx(want.R3).epsilon(1e-12));
        CHECK(got.delta_bar == Catch::Approx(want.delta_bar).epsilon(1e-12));
    }

    // K(0) = K_beta: the varrho terms vanish, C5/C6 sit at their limits
    th::Ktilde0 zero{0.0, 0.0};
    auto lim = th::compute_series(c, nb, zero, {0, 9999});
    const double n = 14.0;
    CHECK(lim[0].C5 == Catch::Approx(2.0 * c.C1 * nb.E2 * c.s1 / n * c.K_beta_norm).epsilon(1e-13));
    CHECK(lim[1].C5 == Catch::Approx(lim[0].C5).epsilon(1e-13));
    CHECK(lim[0].C6 == Catch::Approx(2.0 * c.sd / (c.sd + n * c.beta)).epsilon(1e-13));
    CHECK(lim[1].C6 == Catch::Approx(lim[0].C6).epsilon(1e-13));
}

TEST_CASE("delta_bar positivity and the contraction window") {
    std::mt19937_64 rng(47);
    Matrix A = oracle::random_matrix(rng, 16, 3);
    data::Dataset ds;
    ds.A = A;
    ds.B = ipsg::matvec(A, Vector(3, 1.0));
    ds.x_star = Vector(3, 1.0);
    th::Constants c0 = th::compute_constants(A, 0.01, 1.0, 1.0);  // alpha placeholder
    ipsg::RngStream nrng(7);
    th::NoiseBounds nb = th::estimate_noise_bounds(ds, *ds.x_star, 50, nrng);
    // delta_bar(t) can only turn positive when alpha is also below the
    // asymptotic ratio C6(inf)/C5(inf); C5, C6 do not depend on alpha.
    const double c5_inf = 2.0 * c0.C1 * nb.E2 * (c0.s1 / 16.0) * c0.K_beta_norm;
    const double c6_inf = 2.0 * c0.sd / (c0.sd + 16.0 * 1.0);
    const double alpha = std::min(0.5 * c0.alpha_bar, 0.5 * c6_inf / c5_inf);
    th::Constants c = th::compute_constants(A, alpha, 1.0, 1.0);
    th::Ktilde0 k0 = th::ktilde0_norms(Matrix(3, 3, 0.0), c.K_beta);

    // find T <= 1e6 with C6(t) - alpha C5(t) > 0 from there on
    std::optional<std::size_t> T;
    for (std::size_t t = 0; t <= 1000000 && !T; t = (t == 0 ? 1 : t * 2)) {
        auto s = th::compute_series(c, nb, k0, {t}).front();
        if (s.C6 - alpha * s.C5 > 0) T = t;
    }
    REQUIRE(T.has_value());
    std::vector<std::size_t> ts;
    for (std::size_t t = *T; t <= *T + 1000; t += 100) ts.push_back(t);
    for (auto& s : th::compute_series(c, nb, k0, ts)) {
        CHECK(s.C6 - alpha * s.C5 > 0.0);
        CHECK(s.delta_bar > 0.0);
        th::Constants cd = c;
        cd.delta = 0.9 * s.delta_bar;
        auto sd2 = th::compute_series(cd, nb, k0, {s.t}).front();
        CHECK(sd2.R1 > 0.0);
        CHECK(sd2.R1 < 1.0);
    }
}

TEST_CASE("limit_error_bound") {
    // consistent single-point case: V1 = 0 and C1 E1 = 0, bound is exactly 0
    data::Dataset one;
    one.A = scalar_mat(2.0);
    one.B = {2.0};
    one.x_star = Vector{1.0};
    th::Constants c = th::compute_constants(one.A, 0.1, 1.0, 0.5);
    ipsg::RngStream rng(3);
    th::NoiseBounds nb = th::estimate_noise_bounds(one, *one.x_star, 20, rng);
    CHECK(th::limit_error_bound(c, nb) == Catch::Approx(0.0).margin(1e-20));

    // delta = 0 leaves only the gradient-heterogeneity term
    std::mt19937_64 mrng(48);
    Matrix A = oracle::random_matrix(mrng, 10, 3);
    th::Constants c2 = th::compute_constants(A, 0.05, 1.0, 0.0);
    th::NoiseBounds nb2{0.3, 0.7, 2.0, 3.0};
    const double t2 = c2.C1 * nb2.E1 * c2.K_beta_norm;
    CHECK(th::limit_error_bound(c2, nb2) == Catch::Approx(2.0 * 0.05 * 0.05 * t2 * t2).epsilon(1e-13));

    th::Constants bad = c2;
    bad.rho = 1.2;
    CHECK_THROWS_AS(th::limit_error_bound(bad, nb2), std::domain_error);
}

TEST_CASE("estimate_noise_bounds") {
    SECTION("consistent dataset: V1 and E1 vanish") {
        data::Dataset ds = data::random_problem(24, 4, 51);
        ipsg::RngStream rng(9);
        th::NoiseBounds nb = th::estimate_noise_bounds(ds, *ds.x_star, 30, rng);
        CHECK(nb.V1 <= 1e-18);
        CHECK(nb.E1 <= 1e-8);
        CHECK(nb.E1 >= std::sqrt(nb.V1 * 24.0));
        CHECK(nb.E2 >= std::sqrt((nb.V2 + 1.0) * 24.0));
    }
    SECTION("N=1: variance identically zero") {
        data::Dataset one;
        one.A = Matrix{{1.0, 2.0}};
        one.B = {7.0};
        // gram is rank deficient for a single 2-wide row; a minimizer by hand
        one.x_star = Vector{1.4, 2.8};
        ipsg::RngStream rng(11);
        th::NoiseBounds nb = th::estimate_noise_bounds(one, *one.x_star, 25, rng);
        CHECK(nb.V1 <= 1e-18);
        CHECK(nb.V2 <= 1e-12);
    }
    SECTION("inconsistent dataset: V1 equals the enumeration oracle") {
        data::Dataset ds = data::random_problem(30, 4, 52, false, 0.5);
        const Vector xs = data::least_squares_oracle(ds);
        ipsg::RngStream rng(13);
        th::NoiseBounds nb = th::estimate_noise_bounds(ds, xs, 40, rng);
        double v1 = 0.0, maxg = 0.0;
        for (std::size_t i = 0; i < 30; ++i) {
            double s = -ds.B[i], l2 = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                s += ds.A(i, j) * xs[j];
                l2 += ds.A(i, j) * ds.A(i, j);
            }
            v1 += s * s * l2;
            maxg = std::max(maxg, std::fabs(s) * std::sqrt(l2));
        }
        v1 /= 30.0;
        CHECK(nb.V1 == Catch::Approx(v1).epsilon(1e-10));
        CHECK(nb.V1 > 0.0);
        CHECK(nb.E1 >= maxg * (1.0 - 1e-12));
        CHECK(nb.V2 >= 0.0);
    }
}

TEST_CASE("verify_unbiasedness") {
    data::Dataset ds = data::random_problem(30, 6, 53, false, 0.3);
    const Vector xs = data::least_squares_oracle(ds);
    auto [s1, sd] = ipsg::sym_extreme_eigs(ipsg::gram(ds.A));
    (void)sd;

    th::UnbiasednessReport at_star = th::verify_unbiasedness(ds, xs, s1, xs);
    CHECK(at_star.pass);
    CHECK(at_star.worst_rel <= 1e-12);

    std::mt19937_64 rng(54);
    for (int rep = 0; rep < 20; ++rep) {
        Vector x = oracle::random_vector(rng, 6, -5.0, 5.0);
        th::UnbiasednessReport r = th::verify_unbiasedness(ds, x, s1, xs);
        CHECK(r.pass);
        CHECK(r.grad_norm <= r.grad_bound * (1.0 + 1e-10) + 1e-12);
    }

    // A = I, B = 0, x = e1: both sides e1 / N
    data::Dataset idd;
    idd.A = ipsg::identity(3);
    idd.B = Vector(3, 0.0);
    idd.x_star = Vector(3, 0.0);
    Vector e1{1.0, 0.0, 0.0};
    th::UnbiasednessReport r = th::verify_unbiasedness(idd, e1, 1.0, *idd.x_star);
    CHECK(r.pass);
}

TEST_CASE("verify_lemma1") {
    SECTION("scalar deterministic case: equality structure") {
        data::Dataset one;
        one.A = scalar_mat(1.0);
        one.B = {1.0};
        one.x_star = Vector{1.0};
        ipsg::RngStream rng(15);
        th::Lemma1Report rep =
            th::verify_lemma1(one, 0.25, 1.0, Matrix(1, 1, 0.0), 30, 3, rng);
        CHECK(rep.pass);
        CHECK(rep.C2 == Catch::Approx(0.0).margin(1e-14));
        for (std::size_t t = 1; t <= 30; ++t)
            CHECK(rep.mean[t - 1] == Catch::Approx(rep.bound[t - 1]).margin(1e-12));
    }
    SECTION("K0 = K_beta: bound reduces to the C2 series") {
        data::Dataset ds = data::random_problem(12, 3, 55);
        Matrix Kb = th::compute_kbeta(ds.A, 1.0);
        Vector lam = th::row_lambdas(ds.A);
        double amax = 1e300;
        for (double li : lam) amax = std::min(amax, 2.0 / (li + 1.0));
        ipsg::RngStream rng(16);
        th::Lemma1Report rep = th::verify_lemma1(ds, 0.9 * amax, 1.0, Kb, 60, 400, rng);
        CHECK(rep.pass);
        CHECK(rep.K0_dev <= 1e-10);
        double rho_sum = 0.0, rho_pow = 1.0;
        for (std::size_t t = 1; t <= 60; ++t) {
            rho_sum += rho_pow;
            rho_pow *= rep.rho;
            CHECK(rep.bound[t - 1] == Catch::Approx(rep.C2 * rho_sum + rho_pow * rep.K0_dev)
                                          .epsilon(1e-12));
        }
    }
    SECTION("hypothesis violation is a domain error") {
        data::Dataset ds = data::random_problem(12, 3, 56);
        ipsg::RngStream rng(17);
        CHECK_THROWS_AS(th::verify_lemma1(ds, 100.0, 1.0, Matrix(3, 3, 0.0), 10, 5, rng),
                        std::domain_error);
    }
    SECTION("corrupted rho trips the rho < 1 assertion") {
        data::Dataset ds = data::random_problem(12, 3, 57);
        Vector lam = th::row_lambdas(ds.A);
        double amax = 1e300;
        for (double li : lam) amax = std::min(amax, 2.0 / (li + 1.0));
        ipsg::RngStream rng(18);
        th::Lemma1Report ok = th::verify_lemma1(ds, 0.5 * amax, 1.0, Matrix(3, 3, 0.0), 20, 50, rng);
        REQUIRE(ok.pass);
        REQUIRE(ok.rho > 0.5);  // so the +0.5 corruption necessarily breaks rho < 1
        ipsg::RngStream rng2(18);
        th::Lemma1Report bad =
            th::verify_lemma1(ds, 0.5 * amax, 1.0, Matrix(3, 3, 0.0), 20, 50, rng2, 0.5);
        CHECK(!bad.rho_lt_1);
        CHECK(!bad.pass);
    }
}

TEST_CASE("verify_step_recursion") {
    SECTION("z=0 on consistent data: left side vanishes") {
        data::Dataset ds = data::random_problem(20, 4, 58);
        th::Constants c = th::compute_constants(ds.A, 0.01, 1.0, 0.5);
        const double alpha = 0.5 * c.alpha_bar;
        ipsg::RngStream nrng(19);
        th::NoiseBounds nb = th::estimate_noise_bounds(ds, *ds.x_star, 30, nrng);
        ipsg::RngStream rng(20);
        th::StepRecursionReport rep = th::verify_step_recursion(
            ds, alpha, 1.0, 0.2, *ds.x_star, Matrix(4, 4, 0.0), nb, 200, rng);
        REQUIRE(rep.domain_ok);
        CHECK(rep.pass);
        CHECK(rep.lhs_mean <= 1e-18);
    }
    SECTION("N=1 deterministic: single trial satisfies the bound outright") {
        data::Dataset one;
        one.A = scalar_mat(1.0);
        one.B = {1.0};
        one.x_star = Vector{1.0};
        ipsg::RngStream nrng(21);
        th::NoiseBounds nb = th::estimate_noise_bounds(one, *one.x_star, 20, nrng);
        ipsg::RngStream rng(22);
        th::StepRecursionReport rep = th::verify_step_recursion(
            one, 0.25, 1.0, 0.3, Vector{0.0}, Matrix(1, 1, 0.0), nb, 1, rng);
        REQUIRE(rep.domain_ok);
        CHECK(rep.lhs_stderr == 0.0);
        CHECK(rep.pass);
    }
    SECTION("warm states from a short run") {
        data::Dataset ds = data::random_problem(20, 5, 59);
        th::Constants c = th::compute_constants(ds.A, 0.01, 1.0, 0.5);
        const double alpha = 0.5 * c.alpha_bar;
        ipsg::RngStream nrng(23);
        th::NoiseBounds nb = th::estimate_noise_bounds(ds, *ds.x_star, 30, nrng);

        opt::MethodParams p;
        p.alpha = alpha;
        p.delta = 0.05;
        p.beta = 1.0;
        opt::IpsgState st = opt::make_ipsg_state(Vector(5, 0.0), Matrix(5, 5, 0.0), p);
        ipsg::RngStream walk(24);
        ipsg::RngStream mc(25);
        for (std::size_t t = 1; t <= 60; ++t) {
            const std::size_t i = walk.uniform_below(20);
            std::span<const double> a(ds.A.row(i), 5);
            opt::GradientSample s{opt::stoch_grad(st.x, a, ds.B[i]),
                                  opt::precond_residuals(st.K, a, 1.0)};
            st = opt::ipsg_update(st, s);
            if (t % 20 != 0) continue;
            th::StepRecursionReport rep =
                th::verify_step_recursion(ds, alpha, 1.0, 0.05, st.x, st.K, nb, 3000, mc);
            REQUIRE(rep.domain_ok);
            CHECK(rep.pass);
        }
    }
    SECTION("alpha above alpha_bar is reported, not thrown") {
        data::Dataset ds = data::random_problem(20, 4, 60);
        ipsg::RngStream rng(26);
        th::NoiseBounds nb{0, 0, 0, std::sqrt(20.0)};
        th::StepRecursionReport rep = th::verify_step_recursion(
            ds, 1000.0, 1.0, 0.1, *ds.x_star, Matrix(4, 4, 0.0), nb, 10, rng);
        CHECK(!rep.domain_ok);
        CHECK(!rep.pass);
        CHECK(!rep.domain_msg.empty());
    }
}

TEST_CASE("constants orchestrator invariants") {
    std::mt19937_64 rng(61);
    Matrix A = oracle::random_matrix(rng, 15, 4);
    Vector lam = th::row_lambdas(A);
    double amax = 1e300;
    for (double li : lam) amax = std::min(amax, 2.0 / (li + 1.0));
    // 0.45 * min_i 2/(Lambda_i+beta) = 0.9/L stays inside C3's alpha < 1/L domain
    th::Constants c = th::compute_constants(A, 0.45 * amax, 1.0, 0.5);
    CHECK(c.rho < 1.0);
    CHECK(c.kappa >= 1.0);
    CHECK(c.kappa == Catch::Approx(c.s1 / c.sd));
    CHECK(c.K_beta_norm == Catch::Approx(ipsg::spectral_norm(c.K_beta)).epsilon(1e-11));
    CHECK(c.K_beta_frob == Catch::Approx(ipsg::frob_norm(c.K_beta)).epsilon(1e-13));
    CHECK(c.alpha_bar > 0.0);
    CHECK(c.mu < 1.0);
    CHECK(c.N == 15);
    CHECK(c.d == 4);
}
