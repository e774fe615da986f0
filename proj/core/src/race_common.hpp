#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "race/config.hpp"
#include "race/sketch.hpp"
#include "race/tensor.hpp"
#include "kernels.hpp"

namespace race::detail {

// Scratch for turning one input row into its soft corner distribution.
struct FeatureScratch {
    std::vector<double> x;
    std::vector<double> u;

    FeatureScratch(std::size_t d, std::size_t p) : x(d), u(p) {}
};

// Copies (and optionally unit-normalizes) row x into s.x, returns the norm.
template <typename T>
double load_row(std::span<const T> x, bool normalize, FeatureScratch& s) {
    if (normalize) return normalize_row_into(x, std::span<double>(s.x));
    for (std::size_t c = 0; c < x.size(); ++c) s.x[c] = static_cast<double>(x[c]);
    return row_norm(x);
}

// phi(x) for a row already loaded into s.x; also leaves tanh activations in s.u.
inline void feature_of_loaded(const HashTable& table, double beta, FeatureScratch& s,
                              std::span<double> phi) {
    tanh_projection(table, s.x, s.u);
    corner_distribution(table, s.u, beta, FeaturePath::automatic, phi);
}

struct TableStats {
    std::vector<double> mass;  // A, length R
    Matrix values;             // B, R x d_v
};

// A = Phi_K^T 1 and B = Phi_K^T V for one table, keys in row order.
template <typename T>
TableStats key_stats(const BasicMatrix<T>& k, const BasicMatrix<T>& v, const HashTable& table,
                     const SketchConfig& cfg) {
    const std::size_t r_count = table.buckets();
    const std::size_t dv = v.cols();
    TableStats st{std::vector<double>(r_count, 0.0), Matrix(r_count, dv)};
    FeatureScratch s(k.cols(), table.bits());
    std::vector<double> phi(r_count);
    for (std::size_t j = 0; j < k.rows(); ++j) {
        load_row(k.row(j), cfg.normalize, s);
        feature_of_loaded(table, cfg.beta, s, phi);
        const T* vj = v.row(j).data();
        for (std::size_t r = 0; r < r_count; ++r) {
            st.mass[r] += phi[r];
            axpy(phi[r], vj, st.values.row(r).data(), dv);
        }
    }
    return st;
}

// Writes O = num / den for one row, or zeros when den is degenerate.
template <typename T>
void write_ratio(std::span<const double> num, double den, std::span<T> out) {
    if (den > kDegenerateDen) {
        for (std::size_t c = 0; c < out.size(); ++c) out[c] = static_cast<T>(num[c] / den);
    } else {
        for (auto& o : out) o = T{0};
    }
}

// Pullback of phi(x) = softmax_r(beta * tanh(W x) . v_r) for a row whose
// activations u and features phi were computed from the loaded x.
// Adds W^T dz into dx, where dz is the gradient at the projections.
inline void feature_pullback(const HashTable& table, double beta, std::span<const double> u,
                             std::span<const double> phi, std::span<const double> dphi,
                             std::span<double> dx) {
    const std::size_t p = table.bits();
    const std::size_t r_count = table.buckets();
    double mean = 0.0;
    for (std::size_t r = 0; r < r_count; ++r) mean += phi[r] * dphi[r];
    const Matrix& w = table.projections();
    for (std::size_t t = 0; t < p; ++t) {
        // sum_r dlogit_r * v_rt, with v_rt = -1 when bit t of r is set.
        double du = 0.0;
        for (std::size_t r = 0; r < r_count; ++r) {
            const double dl = phi[r] * (dphi[r] - mean);
            du += ((r >> t) & 1U) ? -dl : dl;
        }
        const double dz = beta * du * (1.0 - u[t] * u[t]);
        const auto wt = w.row(t);
        for (std::size_t c = 0; c < dx.size(); ++c) dx[c] += dz * wt[c];
    }
}

// Pullback of the optional row normalization. xh is the loaded (unit) row,
// n its original norm; rows below kZeroRowNorm were passed through unchanged.
template <typename T>
void normalize_pullback(bool normalize, std::span<const double> xh, double n,
                        std::span<const double> g, std::span<T> out) {
    if (!normalize || n < kZeroRowNorm) {
        for (std::size_t c = 0; c < out.size(); ++c) out[c] = static_cast<T>(g[c]);
        return;
    }
    double proj = 0.0;
    for (std::size_t c = 0; c < xh.size(); ++c) proj += xh[c] * g[c];
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = static_cast<T>((g[c] - xh[c] * proj) / n);
}

}  // namespace race::detail
