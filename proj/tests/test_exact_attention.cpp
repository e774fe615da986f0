#include <cmath>
#include <numbers>

#include "doctest.h"
#include "race/exact_attention.hpp"
#include "test_util.hpp"

using namespace race;
using race::testing::max_abs_diff;
using race::testing::random_inputs;

namespace {

// Direct per-element evaluation of softmax attention.
Matrix brute_softmax(const AttnInputs& in, bool causal) {
    const std::size_t n = in.length(), d = in.key_dim(), dv = in.value_dim();
    Matrix out(n, dv);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t nk = causal ? i + 1 : n;
        double z = 0.0;
        std::vector<double> w(nk);
        for (std::size_t j = 0; j < nk; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += in.q(i, c) * in.k(j, c);
            w[j] = std::exp(s / std::sqrt(static_cast<double>(d)));
            z += w[j];
        }
        for (std::size_t c = 0; c < dv; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < nk; ++j) acc += w[j] * in.v(j, c);
            out(i, c) = acc / z;
        }
    }
    return out;
}

Matrix brute_angular(const AttnInputs& in, unsigned gamma, bool causal) {
    const std::size_t n = in.length(), dv = in.value_dim();
    Matrix out(n, dv);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t nk = causal ? i + 1 : n;
        double den = 0.0;
        std::vector<double> num(dv, 0.0);
        for (std::size_t j = 0; j < nk; ++j) {
            const double s = angular_similarity(in.q.row(i), in.k.row(j), gamma);
            den += s;
            for (std::size_t c = 0; c < dv; ++c) num[c] += s * in.v(j, c);
        }
        for (std::size_t c = 0; c < dv; ++c) out(i, c) = num[c] / den;
    }
    return out;
}

template <typename Forward>
double fd_loss(const AttnInputs& in, const Matrix& g, Forward&& fwd) {
    const Matrix o = fwd(in);
    double s = 0.0;
    for (std::size_t e = 0; e < o.size(); ++e) s += o.data()[e] * g.data()[e];
    return s;
}

// Max relative error of grads against central differences over all components.
template <typename Forward>
double fd_max_error(AttnInputs in, const Matrix& g, const AttnGradients& grads, Forward&& fwd) {
    const double h = 1e-5;
    double worst = 0.0;
    auto sweep = [&](Matrix& x, const Matrix& dx) {
        for (std::size_t e = 0; e < x.size(); ++e) {
            const double saved = x.data()[e];
            x.data()[e] = saved + h;
            const double up = fd_loss(in, g, fwd);
            x.data()[e] = saved - h;
            const double down = fd_loss(in, g, fwd);
            x.data()[e] = saved;
            const double fd = (up - down) / (2 * h);
            const double a = dx.data()[e];
            // Floor sized to the central-difference roundoff (~eps * |loss| / h), so
            // structurally zero entries (e.g. dQ of causal row 0) compare absolutely.
            worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3}));
        }
    };
    sweep(in.q, grads.dq);
    sweep(in.k, grads.dk);
    sweep(in.v, grads.dv);
    return worst;
}

}  // namespace

TEST_CASE("softmax attention: single key returns V") {
    const AttnInputs in = random_inputs(1, 1, 5, 3);
    CHECK(max_abs_diff(softmax_attention(in, false), in.v) < 1e-15);
    CHECK(max_abs_diff(softmax_attention(in, true), in.v) < 1e-15);
}

TEST_CASE("softmax attention: identical keys give the uniform mean of V") {
    AttnInputs in = random_inputs(2, 7, 4);
    for (std::size_t j = 1; j < 7; ++j) {
        for (std::size_t c = 0; c < 4; ++c) in.k(j, c) = in.k(0, c);
    }
    const Matrix o = softmax_attention(in, false);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (std::size_t j = 0; j < 7; ++j) mean += in.v(j, c);
        mean /= 7.0;
        for (std::size_t i = 0; i < 7; ++i) CHECK(o(i, c) == doctest::Approx(mean).epsilon(1e-13));
    }
}

TEST_CASE("softmax attention matches the double-loop oracle") {
    const AttnInputs in = random_inputs(3, 6, 4);
    CHECK(max_abs_diff(softmax_attention(in, false), brute_softmax(in, false)) < 1e-12);
    CHECK(max_abs_diff(softmax_attention(in, true), brute_softmax(in, true)) < 1e-12);
    const AttnInputs wide = random_inputs(4, 70, 9, 5);
    CHECK(max_abs_diff(softmax_attention(wide, true, 3), brute_softmax(wide, true)) < 1e-12);
}

TEST_CASE("softmax weight rows are stochastic") {
    for (std::size_t n : {1, 13, 257, 1000}) {
        AttnInputs in = random_inputs(n, n, 8);
        for (double& x : in.q.data()) x *= 3.0;
        for (bool causal : {false, true}) {
            const Matrix p = softmax_attention_weights(in, causal);
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    REQUIRE(p(i, j) >= 0.0);
                    s += p(i, j);
                }
                REQUIRE(std::abs(s - 1.0) < 1e-12);
            }
        }
    }
}

TEST_CASE("angular similarity closed forms") {
    const std::vector<double> e0{1.0, 0.0, 0.0}, e1{0.0, 1.0, 0.0}, neg{-1.0, 0.0, 0.0};
    CHECK(angular_similarity(e0, e0, 5) == 1.0);
    CHECK(angular_similarity(e0, e1, 2) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(angular_similarity(e0, neg, 1) == 0.0);
    CHECK(angular_similarity(e0, neg, 7) == 0.0);
    const std::vector<double> zero{0.0, 0.0, 0.0};
    CHECK_THROWS_AS(angular_similarity(zero, e0, 2), std::invalid_argument);
    CHECK_THROWS_AS(angular_similarity(e0, std::vector<double>{1.0}, 2), std::invalid_argument);
}

TEST_CASE("angular similarity: symmetry, scale invariance, sharpening") {
    SeededRng rng(21);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t d = 2 + trial % 15;
        const Matrix x = race::testing::random_matrix(rng, 2, d);
        const unsigned gamma = 1 + static_cast<unsigned>(trial % 12);
        const double s = angular_similarity(x.row(0), x.row(1), gamma);
        REQUIRE(s == angular_similarity(x.row(1), x.row(0), gamma));
        REQUIRE(s >= 0.0);
        REQUIRE(s <= 1.0);

        // Power-of-two scales are exact in binary floating point.
        Matrix scaled = x;
        for (std::size_t c = 0; c < d; ++c) {
            scaled(0, c) *= 8.0;
            scaled(1, c) *= 0.25;
        }
        REQUIRE(s == angular_similarity(scaled.row(0), scaled.row(1), gamma));

        // Non-dyadic scales on inputs with short mantissas, so a*x is exactly representable
        // and the comparison measures the kernel rather than rounding of the scaled input.
        Matrix coarse(2, d);
        for (double& v : coarse.data()) v = std::round(rng.normal() * 1048576.0) / 1024.0;
        if (row_norm<double>(coarse.row(0)) > 0.0 && row_norm<double>(coarse.row(1)) > 0.0) {
            const double a = (1.0 + std::floor(999.0 * rng.uniform())) / 64.0;
            const double b = (1.0 + std::floor(999.0 * rng.uniform())) / 64.0;
            Matrix cs = coarse;
            for (std::size_t c = 0; c < d; ++c) {
                cs(0, c) *= a;
                cs(1, c) *= b;
            }
            REQUIRE(race::testing::ulp_distance(angular_similarity(coarse.row(0), coarse.row(1), gamma),
                                                angular_similarity(cs.row(0), cs.row(1), gamma)) <= 4);
        }

        // Strictly decreasing in gamma away from q = +-k.
        REQUIRE(angular_similarity(x.row(0), x.row(1), gamma + 1) < s);
    }
    const std::vector<double> q{0.3, -0.4, 1.2};
    for (unsigned g = 1; g <= 12; ++g) CHECK(angular_similarity(q, q, g) == 1.0);
}

TEST_CASE("angular attention examples") {
    const AttnInputs one = random_inputs(5, 1, 4, 2);
    CHECK(max_abs_diff(angular_attention(one, 3, false).out, one.v) < 1e-15);

    AttnInputs same = random_inputs(6, 9, 4);
    for (std::size_t i = 0; i < 9; ++i) {
        for (std::size_t c = 0; c < 4; ++c) same.q(i, c) = same.k(i, c) = (c == 1 ? 1.0 : 0.0);
    }
    const auto res = angular_attention(same, 6, false);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (std::size_t j = 0; j < 9; ++j) mean += same.v(j, c);
        mean /= 9.0;
        for (std::size_t i = 0; i < 9; ++i) CHECK(res.out(i, c) == doctest::Approx(mean).epsilon(1e-13));
    }
    CHECK(res.degenerate_rows.empty());

    const AttnInputs in = random_inputs(7, 8, 4);
    CHECK(max_abs_diff(angular_attention(in, 3, false).out, brute_angular(in, 3, false)) < 1e-12);
    CHECK(max_abs_diff(angular_attention(in, 3, true).out, brute_angular(in, 3, true)) < 1e-12);
}

TEST_CASE("causal angular attention equals non-causal on each prefix exactly") {
    const AttnInputs in = random_inputs(8, 20, 5, 3);
    const auto causal = angular_attention(in, 4, true);
    for (std::size_t t = 0; t < 20; ++t) {
        AttnInputs prefix{Matrix(t + 1, 5), Matrix(t + 1, 5), Matrix(t + 1, 3)};
        for (std::size_t j = 0; j <= t; ++j) {
            for (std::size_t c = 0; c < 5; ++c) {
                prefix.q(j, c) = in.q(j, c);
                prefix.k(j, c) = in.k(j, c);
            }
            for (std::size_t c = 0; c < 3; ++c) prefix.v(j, c) = in.v(j, c);
        }
        const auto full = angular_attention(prefix, 4, false);
        for (std::size_t c = 0; c < 3; ++c) REQUIRE(causal.out(t, c) == full.out(t, c));
    }
}

TEST_CASE("angular attention flags degenerate rows") {
    AttnInputs in{Matrix::from_data(2, 2, {1.0, 0.0, 0.0, 0.0}), Matrix::from_data(2, 2, {-1.0, 0.0, -2.0, 0.0}),
                  Matrix::from_data(2, 1, {5.0, 6.0})};
    const auto res = angular_attention(in, 2, false);
    REQUIRE(res.degenerate_rows.size() == 2);
    CHECK(res.out(0, 0) == 0.0);
    CHECK(res.out(1, 0) == 0.0);
}

TEST_CASE("shape mismatch is rejected") {
    AttnInputs in = random_inputs(9, 4, 3);
    in.k = Matrix(4, 2);
    CHECK_THROWS_AS(softmax_attention(in, false), std::invalid_argument);
    CHECK_THROWS_AS(angular_attention(in, 2, false), std::invalid_argument);
    in = random_inputs(9, 4, 3);
    in.v = Matrix(3, 3);
    CHECK_THROWS_AS(softmax_attention(in, false), std::invalid_argument);
}

TEST_CASE("softmax VJP matches finite differences") {
    const AttnInputs in = random_inputs(10, 7, 3, 2);
    SeededRng rng(5);
    const Matrix g = race::testing::random_matrix(rng, 7, 2);
    for (bool causal : {false, true}) {
        const auto grads = softmax_attention_vjp(in, causal, g);
        const double err = fd_max_error(in, g, grads, [&](const AttnInputs& x) { return softmax_attention(x, causal); });
        CHECK(err < 1e-6);
    }
}

TEST_CASE("angular VJP matches finite differences") {
    const AttnInputs in = random_inputs(11, 6, 4, 3);
    SeededRng rng(6);
    const Matrix g = race::testing::random_matrix(rng, 6, 3);
    for (bool causal : {false, true}) {
        const auto grads = angular_attention_vjp(in, 3, causal, g);
        const double err =
            fd_max_error(in, g, grads, [&](const AttnInputs& x) { return angular_attention(x, 3, causal).out; });
        CHECK(err < 1e-5);
    }
}

TEST_CASE("exact attention is worker invariant") {
    const AttnInputs in = random_inputs(12, 100, 6);
    CHECK(softmax_attention(in, false, 1) == softmax_attention(in, false, 4));
    CHECK(angular_attention(in, 5, true, 1).out == angular_attention(in, 5, true, 4).out);
}
