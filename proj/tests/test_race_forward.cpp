#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "race/race_attention.hpp"
#include "test_util.hpp"

using namespace race;
using race::testing::max_abs_diff;
using race::testing::random_inputs;
using race::testing::random_matrix;

namespace {

SketchConfig make_cfg(std::size_t p, std::size_t l, std::size_t m, double beta, std::uint64_t seed,
                      bool causal = false) {
    SketchConfig cfg;
    cfg.P = p;
    cfg.L = l;
    cfg.M = m;
    cfg.beta = beta;
    cfg.seed = seed;
    cfg.causal = causal;
    return cfg;
}

AttnInputs prefix(const AttnInputs& inp, std::size_t t) {
    auto head = [t](const Matrix& x) {
        Matrix h(t, x.cols());
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t c = 0; c < x.cols(); ++c) h(i, c) = x(i, c);
        }
        return h;
    };
    return {head(inp.q), head(inp.k), head(inp.v)};
}

double max_rel_error(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t e = 0; e < a.size(); ++e) {
        const double x = a.data()[e], y = b.data()[e];
        m = std::max(m, std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-300}));
    }
    return m;
}

}  // namespace

TEST_CASE("single key returns its value") {
    for (bool causal : {false, true}) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const AttnInputs inp = random_inputs(seed, 1, 5, 3);
            const auto cfg = make_cfg(1 + seed % 4, 1 + seed % 3, 1 + seed % 2, 0.5 + seed, seed, causal);
            const RaceOutput out = race_attention(inp, cfg);
            for (std::size_t c = 0; c < 3; ++c) CHECK(out.out(0, c) == doctest::Approx(inp.v(0, c)).epsilon(1e-15));
            CHECK(out.degenerate_rows.empty());
        }
    }
}

TEST_CASE("constant values are reproduced") {
    for (bool causal : {false, true}) {
        AttnInputs inp = random_inputs(3, 40, 6, 2);
        for (std::size_t j = 0; j < 40; ++j) {
            inp.v(j, 0) = 1.25;
            inp.v(j, 1) = -3.5;
        }
        const RaceOutput out = race_attention(inp, make_cfg(3, 4, 2, 8.0, 9, causal));
        for (std::size_t i = 0; i < 40; ++i) {
            CHECK(std::abs(out.out(i, 0) - 1.25) < 1e-10);
            CHECK(std::abs(out.out(i, 1) + 3.5) < 1e-10);
        }
    }
}

TEST_CASE("vectorized forward equals the scalar oracle") {
    const AttnInputs fixed = random_inputs(1, 32, 8);
    const auto fixed_cfg = make_cfg(2, 3, 2, 8.0, 1);
    CHECK(max_rel_error(race_attention(fixed, fixed_cfg).out, race_attention_oracle(fixed, fixed_cfg).out) <= 1e-10);

    int instances = 0;
    std::uint64_t seed = 100;
    for (std::size_t p : {1, 2, 3}) {
        for (std::size_t l : {1, 2, 4}) {
            for (std::size_t m : {1, 2}) {
                for (std::size_t n : {1, 2, 17, 64}) {
                    const bool causal = (seed % 3) == 0;
                    const AttnInputs inp = random_inputs(seed, n, 5, 3);
                    const auto cfg = make_cfg(p, l, m, 1.0 + static_cast<double>(seed % 16), seed, causal);
                    const RaceOutput fast = race_attention(inp, cfg);
                    const RaceOutput slow = race_attention_oracle(inp, cfg);
                    REQUIRE(max_rel_error(fast.out, slow.out) <= 1e-10);
                    for (std::size_t i = 0; i < n; ++i) {
                        REQUIRE(std::abs(fast.den[i] - slow.den[i]) <= 1e-10 * slow.den[i]);
                    }
                    ++seed;
                    ++instances;
                }
            }
        }
    }
    CHECK(instances >= 50);
}

TEST_CASE("oracle: causal at full length equals non-causal on the last row") {
    const AttnInputs inp = random_inputs(5, 12, 4);
    const auto nc = race_attention_oracle(inp, make_cfg(2, 2, 1, 4.0, 3));
    const auto c = race_attention_oracle(inp, make_cfg(2, 2, 1, 4.0, 3, true));
    for (std::size_t col = 0; col < 4; ++col) CHECK(c.out(11, col) == nc.out(11, col));
    CHECK_THROWS_AS(race_attention_oracle(random_inputs(1, 513, 2), make_cfg(1, 1, 1, 1.0, 0)), std::invalid_argument);
}

TEST_CASE("causal rows equal non-causal output on the prefix") {
    const AttnInputs inp = random_inputs(6, 48, 6, 4);
    auto cfg = make_cfg(3, 3, 2, 8.0, 17, true);
    cfg.block_rows = 5;
    const RaceOutput causal = race_attention(inp, cfg);
    auto nc_cfg = cfg;
    nc_cfg.causal = false;
    for (std::size_t t = 1; t <= 48; ++t) {
        const RaceOutput p = race_attention(prefix(inp, t), nc_cfg);
        for (std::size_t c = 0; c < 4; ++c) REQUIRE(std::abs(causal.out(t - 1, c) - p.out(t - 1, c)) < 1e-10);
    }
}

TEST_CASE("near-hard outputs stay inside the convex hull of values") {
    SeededRng dirs(77);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const AttnInputs inp = random_inputs(seed, 30, 6, 3);
        for (bool causal : {false, true}) {
            const RaceOutput out = race_attention(inp, make_cfg(2, 4, 1, 1e3, seed, causal));
            for (int probe = 0; probe < 20; ++probe) {
                const Matrix u = random_matrix(dirs, 1, 3);
                for (std::size_t i = 0; i < 30; ++i) {
                    // Degenerate rows are defined as zero output, not a mixture.
                    if (std::find(out.degenerate_rows.begin(), out.degenerate_rows.end(), i) !=
                        out.degenerate_rows.end()) {
                        continue;
                    }
                    const std::size_t visible = causal ? i + 1 : 30;
                    double support = -INFINITY;
                    for (std::size_t j = 0; j < visible; ++j) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < 3; ++c) s += u(0, c) * inp.v(j, c);
                        support = std::max(support, s);
                    }
                    double proj = 0.0;
                    for (std::size_t c = 0; c < 3; ++c) proj += u(0, c) * out.out(i, c);
                    REQUIRE(proj <= support + 1e-6);
                }
            }
        }
    }
}

TEST_CASE("outputs are deterministic per seed") {
    const AttnInputs inp = random_inputs(8, 50, 7);
    for (bool causal : {false, true}) {
        const auto cfg = make_cfg(3, 2, 2, 8.0, 42, causal);
        CHECK(race_attention(inp, cfg).out == race_attention(inp, cfg).out);
        auto other = cfg;
        other.seed = 43;
        CHECK(race_attention(inp, cfg).out != race_attention(inp, other).out);
    }
}

TEST_CASE("block size does not change the output") {
    const AttnInputs inp = random_inputs(9, 101, 5, 3);
    for (bool causal : {false, true}) {
        auto cfg = make_cfg(2, 3, 2, 8.0, 5, causal);
        const Matrix ref = race_attention(inp, cfg).out;
        for (std::size_t b : {1, 7, 64, 100, 101}) {
            cfg.block_rows = b;
            CHECK(max_abs_diff(race_attention(inp, cfg).out, ref) <= 1e-12);
        }
    }
}

TEST_CASE("worker count does not change the output") {
    const AttnInputs inp = random_inputs(10, 300, 8);
    for (bool causal : {false, true}) {
        auto cfg = make_cfg(3, 4, 2, 8.0, 6, causal);
        cfg.block_rows = 37;
        const RaceOutput one = race_attention(inp, cfg);
        cfg.workers = 4;
        const RaceOutput four = race_attention(inp, cfg);
        CHECK(one.out == four.out);
        CHECK(one.den == four.den);
    }
}

TEST_CASE("single precision inputs track the double path") {
    const AttnInputs inp = random_inputs(11, 64, 8);
    const AttnInputsF inpf{matrix_cast<float>(inp.q), matrix_cast<float>(inp.k), matrix_cast<float>(inp.v)};
    for (bool causal : {false, true}) {
        const auto cfg = make_cfg(2, 2, 1, 8.0, 2, causal);
        const Matrix a = race_attention(inp, cfg).out;
        const Matrix b = matrix_cast<double>(race_attention(inpf, cfg).out);
        CHECK(max_abs_diff(a, b) < 1e-5);
    }
}

TEST_CASE("shape and config errors") {
    AttnInputs inp = random_inputs(12, 4, 3);
    inp.k = Matrix(3, 3);
    CHECK_THROWS_AS(race_attention(inp, SketchConfig{}), std::invalid_argument);
    auto cfg = SketchConfig{};
    cfg.P = 0;
    CHECK_THROWS_AS(race_attention(random_inputs(12, 4, 3), cfg), std::invalid_argument);
    const RaceOutput empty = race_attention(AttnInputs{Matrix(0, 3), Matrix(0, 3), Matrix(0, 2)}, SketchConfig{});
    CHECK(empty.out.rows() == 0);
}

TEST_CASE("race kernel: entries bounded and symmetric when Q = K") {
    SeededRng rng(13);
    const Matrix q = random_matrix(rng, 40, 6);
    const Matrix s = race_kernel(q, q, make_cfg(3, 8, 2, 4.0, 1));
    for (std::size_t i = 0; i < 40; ++i) {
        for (std::size_t j = 0; j < 40; ++j) {
            REQUIRE(s(i, j) >= 0.0);
            REQUIRE(s(i, j) <= 1.0 + 1e-10);
            REQUIRE(std::abs(s(i, j) - s(j, i)) <= 1e-12);
        }
    }
    CHECK_THROWS_AS(race_kernel(Matrix(2049, 2), Matrix(2, 2), SketchConfig{}), std::invalid_argument);
}

TEST_CASE("race kernel: self collisions are near one in the hard limit") {
    SeededRng rng(14);
    const Matrix q = random_matrix(rng, 8, 5);
    const Matrix s = race_kernel(q, q, make_cfg(1, 10000, 1, 1e3, 3));
    for (std::size_t i = 0; i < 8; ++i) CHECK(s(i, i) >= 0.99);
}

TEST_CASE("race kernel: off-diagonal entry matches the squared angular kernel") {
    SeededRng rng(15);
    const std::size_t tables = 10000;
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix x = row_normalize(random_matrix(rng, 2, 6));
        const Matrix q = Matrix::from_data(1, 6, {x.row(0).begin(), x.row(0).end()});
        const Matrix k = Matrix::from_data(1, 6, {x.row(1).begin(), x.row(1).end()});
        double cosv = 0.0;
        for (std::size_t c = 0; c < 6; ++c) cosv += x(0, c) * x(1, c);
        const double expected = std::pow(1.0 - std::acos(cosv) / std::numbers::pi, 2.0);
        const double got = race_kernel(q, k, make_cfg(2, tables, 1, 1e3, 100 + trial))(0, 0);
        CHECK(std::abs(got - expected) <= 3.0 * std::sqrt(expected * (1.0 - expected) / tables));
    }
}

TEST_CASE("hard race attention uses the sign buckets of the same tables") {
    const AttnInputs inp = random_inputs(16, 20, 4, 2);
    const auto cfg = make_cfg(2, 3, 1, 8.0, 4);
    const AttentionOutput hard = hard_race_attention(inp, cfg);
    const auto tables = sample_tables(cfg, 4);
    const Matrix qn = row_normalize(inp.q), kn = row_normalize(inp.k);
    for (std::size_t i = 0; i < 20; ++i) {
        std::vector<double> num(2, 0.0);
        double den = 0.0;
        for (const HashTable& t : tables) {
            const auto hq = hard_hash(qn, t);
            const auto hk = hard_hash(kn, t);
            for (std::size_t j = 0; j < 20; ++j) {
                if (hq[i] != hk[j]) continue;
                den += 1.0;
                for (std::size_t c = 0; c < 2; ++c) num[c] += inp.v(j, c);
            }
        }
        CHECK(hard.den[i] == doctest::Approx(den / 3.0));
        if (den > 0) {
            for (std::size_t c = 0; c < 2; ++c) CHECK(hard.out(i, c) == doctest::Approx(num[c] / den));
        }
    }
}
