#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ipsg/linalg.hpp"
#include "oracles.hpp"

using ipsg::Matrix;
using ipsg::Vector;

TEST_CASE("matvec basics") {
    Matrix I2 = ipsg::identity(2);
    CHECK(ipsg::matvec(I2, {3, 4}) == Vector{3, 4});

    Matrix M{{1, 2}, {0, 1}};
    CHECK(ipsg::matvec(M, {1, 1}) == Vector{3, 1});

    CHECK_THROWS_AS(ipsg::matvec(M, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("matvec matches naive oracle") {
    std::mt19937_64 rng(101);
    for (int rep = 0; rep < 20; ++rep) {
        Matrix M = oracle::random_matrix(rng, 5, 3);
        Vector v = oracle::random_vector(rng, 3);
        Vector got = ipsg::matvec(M, v);
        Vector want = oracle::naive_matvec(M, v);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(std::fabs(got[i] - want[i]) <= 1e-14);
    }
}

TEST_CASE("matvec_t and matmul against oracles") {
    std::mt19937_64 rng(102);
    Matrix A = oracle::random_matrix(rng, 6, 4);
    Matrix B = oracle::random_matrix(rng, 4, 5);
    Matrix C = ipsg::matmul(A, B);
    Matrix Cn = oracle::naive_matmul(A, B);
    for (std::size_t i = 0; i < C.a.size(); ++i) CHECK(std::fabs(C.a[i] - Cn.a[i]) <= 1e-13);

    Vector v = oracle::random_vector(rng, 6);
    Vector w = ipsg::matvec_t(A, v);
    Vector wn = ipsg::matvec(ipsg::transpose(A), v);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::fabs(w[i] - wn[i]) <= 1e-14);
}

TEST_CASE("gram basics and symmetry") {
    CHECK(ipsg::gram(ipsg::identity(3)).a == ipsg::identity(3).a);

    Matrix col{{1}, {2}};
    CHECK(ipsg::gram(col).a == std::vector<double>{5});

    Matrix A{{1, 2}, {3, 4}};
    Matrix G = ipsg::gram(A);
    CHECK(G(0, 0) == 10.0);
    CHECK(G(0, 1) == 14.0);
    CHECK(G(1, 0) == 14.0);
    CHECK(G(1, 1) == 20.0);

    std::mt19937_64 rng(103);
    Matrix R = oracle::random_matrix(rng, 608, 188);
    Matrix Gr = ipsg::gram(R);
    Matrix Go = oracle::naive_gram(R);
    double scale = 0.0, diff = 0.0, asym = 0.0;
    for (std::size_t i = 0; i < Gr.a.size(); ++i) {
        scale = std::max(scale, std::fabs(Go.a[i]));
        diff = std::max(diff, std::fabs(Gr.a[i] - Go.a[i]));
    }
    for (std::size_t i = 0; i < Gr.rows; ++i)
        for (std::size_t j = 0; j < i; ++j) asym = std::max(asym, std::fabs(Gr(i, j) - Gr(j, i)));
    CHECK(diff <= 1e-10 * scale);
    CHECK(asym <= 1e-14 * scale);
}

TEST_CASE("sym_extreme_eigs on easy spectra") {
    auto [a1, a2] = ipsg::sym_extreme_eigs(ipsg::identity(3));
    CHECK(a1 == Catch::Approx(1.0).margin(1e-12));
    CHECK(a2 == Catch::Approx(1.0).margin(1e-12));

    Matrix D{{4, 0}, {0, 1}};
    auto [s1, sd] = ipsg::sym_extreme_eigs(D);
    CHECK(s1 == Catch::Approx(4.0).margin(1e-12));
    CHECK(sd == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("sym_extreme_eigs matches independent shifted-power oracle") {
    std::mt19937_64 rng(104);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix B = oracle::random_matrix(rng, 5, 5);
        Matrix S(5, 5);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) S(i, j) = 0.5 * (B(i, j) + B(j, i));
        auto [s1, sd] = ipsg::sym_extreme_eigs(S);
        Vector all = oracle::eig_all(S);
        CHECK(s1 == Catch::Approx(all.front()).margin(1e-8));
        CHECK(sd == Catch::Approx(all.back()).margin(1e-8));
    }
}

TEST_CASE("sym_extreme_eigs rejects asymmetric input") {
    Matrix M{{1, 2}, {0, 1}};
    CHECK_THROWS_AS(ipsg::sym_extreme_eigs(M), std::invalid_argument);
}

TEST_CASE("sym_extreme_eigs bracketing property") {
    std::mt19937_64 rng(105);
    Matrix S = oracle::random_spd(rng, 6);
    auto [s1, sd] = ipsg::sym_extreme_eigs(S);
    for (int rep = 0; rep < 50; ++rep) {
        Vector v = oracle::random_vector(rng, 6);
        double nv = ipsg::vec_norm(v);
        for (auto& x : v) x /= nv;
        Vector Sv = ipsg::matvec(S, v);
        double q = 0.0;
        for (std::size_t i = 0; i < 6; ++i) q += v[i] * Sv[i];
        CHECK(q <= s1 + 1e-10);
        CHECK(q >= sd - 1e-10);
    }
}

TEST_CASE("sym_eig returns consistent eigenpairs") {
    std::mt19937_64 rng(106);
    Matrix S = oracle::random_spd(rng, 7);
    ipsg::SymEig e = ipsg::sym_eig(S, 1e-13, true);
    for (std::size_t k = 0; k < 7; ++k) {
        Vector v(7);
        for (std::size_t i = 0; i < 7; ++i) v[i] = e.vectors(i, k);
        Vector Sv = ipsg::matvec(S, v);
        for (std::size_t i = 0; i < 7; ++i)
            CHECK(std::fabs(Sv[i] - e.values[k] * v[i]) <= 1e-9 * std::max(1.0, std::fabs(e.values[k])));
    }
    for (std::size_t k = 1; k < 7; ++k) CHECK(e.values[k - 1] >= e.values[k]);
}

TEST_CASE("solve_spd basics") {
    std::mt19937_64 rng(107);
    Matrix R = oracle::random_matrix(rng, 3, 3);
    Matrix X = ipsg::solve_spd(ipsg::identity(3), R);
    for (std::size_t i = 0; i < X.a.size(); ++i) CHECK(X.a[i] == Catch::Approx(R.a[i]).margin(1e-14));

    Matrix s{{2}};
    Matrix one{{1}};
    CHECK(ipsg::solve_spd(s, one)(0, 0) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("solve_spd residual on random SPD") {
    std::mt19937_64 rng(108);
    Matrix S = oracle::random_spd(rng, 6);
    Matrix RHS = oracle::random_matrix(rng, 6, 3);
    Matrix X = ipsg::solve_spd(S, RHS);
    Matrix SX = ipsg::matmul(S, X);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < SX.a.size(); ++i) {
        num += (SX.a[i] - RHS.a[i]) * (SX.a[i] - RHS.a[i]);
        den += RHS.a[i] * RHS.a[i];
    }
    CHECK(std::sqrt(num) <= 1e-10 * std::sqrt(den));
}

TEST_CASE("solve_spd flags indefinite and asymmetric inputs") {
    Matrix indef{{1, 2}, {2, 1}};  // eigenvalues 3 and -1
    CHECK_THROWS_AS(ipsg::solve_spd(indef, ipsg::identity(2)), ipsg::numerical_error);

    Matrix asym{{1, 2}, {0, 1}};
    CHECK_THROWS_AS(ipsg::solve_spd(asym, ipsg::identity(2)), std::invalid_argument);
}

TEST_CASE("norms") {
    CHECK(ipsg::spectral_norm(ipsg::identity(3)) == Catch::Approx(1.0).margin(1e-12));
    CHECK(ipsg::frob_norm(ipsg::identity(3)) == Catch::Approx(std::sqrt(3.0)).margin(1e-14));
    CHECK(ipsg::vec_norm({3, 4}) == Catch::Approx(5.0).margin(1e-14));

    Matrix D{{2, 0}, {0, -5}};
    CHECK(ipsg::spectral_norm(D) == Catch::Approx(5.0).margin(1e-12));
}

TEST_CASE("spectral norm agrees with oracle eigensolver on gram") {
    std::mt19937_64 rng(109);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix M = oracle::random_matrix(rng, 4, 3);
        double got = ipsg::spectral_norm(M);
        Vector eigs = oracle::eig_all(oracle::naive_gram(M));
        CHECK(got == Catch::Approx(std::sqrt(std::max(eigs.front(), 0.0))).margin(1e-8));
        CHECK(got <= ipsg::frob_norm(M) + 1e-12);
    }
}

TEST_CASE("sym_op_norm matches dense spectral norm") {
    std::mt19937_64 rng(110);
    for (int rep = 0; rep < 8; ++rep) {
        Matrix S = oracle::random_spd(rng, 9, 0.0);
        for (std::size_t i = 0; i < 9; ++i) S(i, i) -= 2.0;  // push some eigenvalues negative
        double dense = ipsg::spectral_norm(S);
        double op = ipsg::sym_op_norm([&](const Vector& v) { return ipsg::matvec(S, v); }, 9,
                                      7000 + rep);
        CHECK(op == Catch::Approx(dense).epsilon(1e-7));
    }
}

TEST_CASE("matrix construction guards") {
    CHECK_THROWS_AS(Matrix({{1, 2}, {3}}), std::invalid_argument);
    Matrix empty;
    CHECK(ipsg::spectral_norm(empty) == 0.0);
}
