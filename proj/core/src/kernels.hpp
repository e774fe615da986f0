#pragma once

#include <cstddef>

namespace race::detail {

// Dot product accumulated in double with four independent partial sums.
template <typename A, typename B>
inline double dot(const A* a, const B* b, std::size_t n) noexcept {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t c = 0;
    for (; c + 4 <= n; c += 4) {
        s0 += static_cast<double>(a[c]) * static_cast<double>(b[c]);
        s1 += static_cast<double>(a[c + 1]) * static_cast<double>(b[c + 1]);
        s2 += static_cast<double>(a[c + 2]) * static_cast<double>(b[c + 2]);
        s3 += static_cast<double>(a[c + 3]) * static_cast<double>(b[c + 3]);
    }
    for (; c < n; ++c) s0 += static_cast<double>(a[c]) * static_cast<double>(b[c]);
    return (s0 + s1) + (s2 + s3);
}

// y += alpha * x
template <typename X>
inline void axpy(double alpha, const X* x, double* y, std::size_t n) noexcept {
    for (std::size_t c = 0; c < n; ++c) y[c] += alpha * static_cast<double>(x[c]);
}

inline double ipow(double base, unsigned e) noexcept {
    double r = 1.0;
    while (e) {
        if (e & 1U) r *= base;
        base *= base;
        e >>= 1U;
    }
    return r;
}

}  // namespace race::detail
