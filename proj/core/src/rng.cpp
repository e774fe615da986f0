#include "race/rng.hpp"

#include <stdexcept>

namespace race {

SeededRng derive_table_rng(std::uint64_t seed, std::uint32_t m, std::uint32_t l) {
    const std::uint64_t key = (static_cast<std::uint64_t>(m) << 32) | static_cast<std::uint64_t>(l);
    return SeededRng(splitmix64(splitmix64(seed) ^ key));
}

Matrix gaussian_matrix(SeededRng& rng, std::size_t p, std::size_t d) {
    if (p < 1 || d < 1) throw std::invalid_argument("gaussian_matrix: p and d must be >= 1");
    Matrix w(p, d);
    for (double& x : w.data()) x = rng.normal();
    return w;
}

}  // namespace race
