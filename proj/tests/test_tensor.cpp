#include <cmath>
#include <set>

#include "doctest.h"
#include "race/config.hpp"
#include "race/rng.hpp"
#include "race/tensor.hpp"
#include "test_util.hpp"

using namespace race;
using race::testing::ulp_distance;

TEST_CASE("row_normalize examples") {
    const Matrix x = Matrix::from_data(3, 2, {3.0, 4.0, 1.0, 0.0, 0.0, 0.0});
    const Matrix y = row_normalize(x);
    CHECK(y(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(y(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(y(1, 0) == 1.0);
    CHECK(y(1, 1) == 0.0);
    CHECK(y(2, 0) == 0.0);
    CHECK(y(2, 1) == 0.0);
}

TEST_CASE("row_normalize passes tiny rows through unchanged") {
    const Matrix x = Matrix::from_data(1, 2, {1e-13, -2e-13});
    CHECK(row_normalize(x) == x);
}

TEST_CASE("matrix construction rejects bad user data") {
    CHECK_THROWS_AS(Matrix::from_data(2, 2, {1.0, 2.0, 3.0}), std::invalid_argument);
    CHECK_THROWS_AS(Matrix::from_data(1, 2, {1.0, NAN}), std::invalid_argument);
    CHECK_THROWS_AS(Matrix::from_data(1, 2, {INFINITY, 0.0}), std::invalid_argument);

    Matrix m(1, 2);
    m(0, 1) = NAN;
    CHECK_THROWS_AS(row_normalize(m), std::invalid_argument);
}

TEST_CASE("row_normalize is idempotent and scale invariant") {
    SeededRng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 1 + trial % 17;
        Matrix x = race::testing::random_matrix(rng, 4, d);
        const Matrix once = row_normalize(x);
        const Matrix twice = row_normalize(once);
        for (std::size_t e = 0; e < x.size(); ++e) {
            REQUIRE(ulp_distance(once.data()[e], twice.data()[e]) <= 1);
        }
        const double c = 0.01 + 100.0 * rng.uniform();
        Matrix scaled = x;
        for (double& v : scaled.data()) v *= c;
        const Matrix ns = row_normalize(scaled);
        for (std::size_t e = 0; e < x.size(); ++e) {
            REQUIRE(ulp_distance(once.data()[e], ns.data()[e]) <= 4);
        }
    }
}

TEST_CASE("gaussian_matrix moments against standard normal") {
    SeededRng rng(12345);
    const Matrix w = gaussian_matrix(rng, 100, 1000);
    double mean = 0.0;
    for (double x : w.data()) mean += x;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double x : w.data()) var += (x - mean) * (x - mean);
    var /= static_cast<double>(w.size() - 1);
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("gaussian_matrix is deterministic per derived stream") {
    SeededRng a = derive_table_rng(7, 0, 3);
    SeededRng b = derive_table_rng(7, 0, 3);
    CHECK(gaussian_matrix(a, 4, 9) == gaussian_matrix(b, 4, 9));
    CHECK_THROWS_AS(gaussian_matrix(a, 0, 3), std::invalid_argument);
}

TEST_CASE("derive_table_rng mixing") {
    CHECK(derive_table_rng(7, 0, 0).state() == derive_table_rng(7, 0, 0).state());
    CHECK(derive_table_rng(7, 0, 0).state() != derive_table_rng(7, 0, 1).state());
    CHECK(derive_table_rng(7, 1, 0).state() != derive_table_rng(8, 0, 0).state());

    // Exhaustive small domain: (seed, m, l) in {0..7} x {0..63}^2 must not collide.
    std::set<std::uint64_t> states;
    std::size_t total = 0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        for (std::uint32_t m = 0; m < 64; ++m) {
            for (std::uint32_t l = 0; l < 64; ++l) {
                states.insert(derive_table_rng(seed, m, l).state());
                ++total;
            }
        }
    }
    CHECK(states.size() == total);
}

TEST_CASE("distinct table streams are uncorrelated") {
    SeededRng base = derive_table_rng(99, 0, 0);
    const Matrix ref = gaussian_matrix(base, 1, 10000);
    for (std::uint32_t m = 0; m < 3; ++m) {
        for (std::uint32_t l = 0; l < 3; ++l) {
            if (m == 0 && l == 0) continue;
            SeededRng other = derive_table_rng(99, m, l);
            const Matrix w = gaussian_matrix(other, 1, 10000);
            double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
            const double n = 10000.0;
            for (std::size_t e = 0; e < 10000; ++e) {
                const double a = ref.data()[e], b = w.data()[e];
                sa += a;
                sb += b;
                sab += a * b;
                saa += a * a;
                sbb += b * b;
            }
            const double cov = sab / n - (sa / n) * (sb / n);
            const double rho = cov / std::sqrt((saa / n - sa * sa / (n * n)) * (sbb / n - sb * sb / (n * n)));
            CHECK(std::abs(rho) < 0.05);
        }
    }
}

TEST_CASE("SketchConfig validation") {
    SketchConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.buckets() == 4);
    cfg.P = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.P = 21;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.P = 20;
    CHECK_NOTHROW(cfg.validate());
    cfg.beta = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.beta = INFINITY;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.beta = 1.0;
    cfg.L = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.L = 1;
    cfg.M = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
