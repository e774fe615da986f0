#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "race/tensor.hpp"

namespace race {

// SplitMix64 finalizer. A bijection on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic generator. Single owner; do not share across threads.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t state) : state_(state), engine_(state) {}

    std::uint64_t state() const noexcept { return state_; }
    std::mt19937_64& engine() noexcept { return engine_; }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

private:
    std::uint64_t state_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Mixes (seed, ensemble m, table l) into a generator state:
//   state = splitmix64(splitmix64(seed) ^ (m << 32 | l))
// For a fixed seed this is injective in (m, l) while both are below 2^32,
// because splitmix64 is a bijection.
SeededRng derive_table_rng(std::uint64_t seed, std::uint32_t m, std::uint32_t l);

// p x d matrix of i.i.d. standard normal draws.
Matrix gaussian_matrix(SeededRng& rng, std::size_t p, std::size_t d);

}  // namespace race
