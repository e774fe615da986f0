#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace race {

// Denominators at or below this produce a zero output row and a degenerate flag.
inline constexpr double kDegenerateDen = 1e-30;

inline constexpr std::size_t kMaxHyperplanes = 20;
inline constexpr std::size_t kDefaultBlockRows = 4096;
inline constexpr double kDefaultBeta = 8.0;

struct SketchConfig {
    std::size_t P = 2;           // hyperplanes per table, R = 2^P buckets
    std::size_t L = 1;           // tables per ensemble
    std::size_t M = 1;           // ensembles; Num/Den averaged over all M*L tables
    double beta = kDefaultBeta;  // soft-assignment temperature
    std::uint64_t seed = 0;
    bool causal = false;

    // Unit-normalize query/key rows before hashing.
    bool normalize = true;
    // Row block size for feature computation. Results are block-size invariant.
    std::size_t block_rows = kDefaultBlockRows;
    // Worker threads; 0 uses the OpenMP default. Results are worker invariant.
    int workers = 1;

    std::size_t buckets() const noexcept { return std::size_t{1} << P; }
    std::size_t tables() const noexcept { return M * L; }

    void validate() const {
        if (P < 1 || P > kMaxHyperplanes) {
            throw std::invalid_argument("SketchConfig: P must be in [1, " +
                                        std::to_string(kMaxHyperplanes) + "], got " +
                                        std::to_string(P));
        }
        if (L < 1) throw std::invalid_argument("SketchConfig: L must be >= 1");
        if (M < 1) throw std::invalid_argument("SketchConfig: M must be >= 1");
        if (!(beta > 0.0) || !std::isfinite(beta)) {
            throw std::invalid_argument("SketchConfig: beta must be finite and > 0");
        }
        if (block_rows < 1) throw std::invalid_argument("SketchConfig: block_rows must be >= 1");
        if (workers < 0) throw std::invalid_argument("SketchConfig: workers must be >= 0");
    }
};

}  // namespace race
