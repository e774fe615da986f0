#pragma once

#include <cstddef>
#include <vector>

#include "race/config.hpp"
#include "race/exact_attention.hpp"
#include "race/sketch.hpp"

namespace race {

template <typename T>
using BasicRaceOutput = BasicAttentionOutput<T>;
using RaceOutput = BasicRaceOutput<double>;

// The M*L hash tables of a config, ordered by (m, l): index m * L + l.
// Table (m, l) draws its projections from derive_table_rng(cfg.seed, m, l).
std::vector<HashTable> sample_tables(const SketchConfig& cfg, std::size_t d);

// Soft RACE attention.
//
// Non-causal: per table, key features build bucket statistics A = Phi_K^T 1 and
// B = Phi_K^T V; each query then reads Num = mean_tables(phi(q) B) and
// Den = mean_tables(phi(q) . A), and O = Num / Den.
//
// Causal: one left-to-right scan per table with running A and B, so row t
// only sees keys 1..t.
//
// Tables run as independent tasks with private accumulators; the reduction
// over tables is always in (m, l) order, so outputs are bit-identical for any
// worker count. Statistics accumulate in double regardless of T.
template <typename T>
BasicRaceOutput<T> race_attention(const BasicAttnInputs<T>& inp, const SketchConfig& cfg);

inline constexpr std::size_t kOracleMaxLength = 512;
inline constexpr std::size_t kKernelMaxLength = 2048;

// Scalar reference for race_attention: explicit loops over (table, i, j, r),
// and for causal mode a fresh non-causal evaluation on every prefix.
// Requires N <= 512.
RaceOutput race_attention_oracle(const AttnInputs& inp, const SketchConfig& cfg);

// Averaged sketch kernel S_hat = mean_tables(Phi_Q Phi_K^T). Quadratic; N <= 2048.
Matrix race_kernel(const Matrix& q, const Matrix& k, const SketchConfig& cfg);

// Hard-assignment limit: keys and queries land in their sign(W x) bucket
// only. Same tables as race_attention for the same cfg.
AttentionOutput hard_race_attention(const AttnInputs& inp, const SketchConfig& cfg);

}  // namespace race
