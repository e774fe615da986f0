#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "race/tensor.hpp"

namespace race {

// Per-head query/key/value matrices. Q and K are N x d, V is N x d_v.
template <typename T>
struct BasicAttnInputs {
    BasicMatrix<T> q;
    BasicMatrix<T> k;
    BasicMatrix<T> v;

    std::size_t length() const noexcept { return q.rows(); }
    std::size_t key_dim() const noexcept { return q.cols(); }
    std::size_t value_dim() const noexcept { return v.cols(); }

    // Throws std::invalid_argument on shape mismatch or non-finite entries.
    void validate() const;
};

using AttnInputs = BasicAttnInputs<double>;
using AttnInputsF = BasicAttnInputs<float>;

// Output of a normalized-similarity attention: O = diag(den)^-1 * num.
// Rows whose den <= kDegenerateDen are zero and listed in degenerate_rows.
template <typename T>
struct BasicAttentionOutput {
    BasicMatrix<T> out;
    std::vector<double> den;
    std::vector<std::size_t> degenerate_rows;
};

using AttentionOutput = BasicAttentionOutput<double>;

template <typename T>
struct BasicAttnGradients {
    BasicMatrix<T> dq;
    BasicMatrix<T> dk;
    BasicMatrix<T> dv;
};

using AttnGradients = BasicAttnGradients<double>;

// softmax(Q K^T / sqrt(d)) V, row-wise softmax; causal masks keys j > i.
template <typename T>
BasicMatrix<T> softmax_attention(const BasicAttnInputs<T>& inp, bool causal, int workers = 1);

// The N x N softmax weight matrix (test scale).
Matrix softmax_attention_weights(const AttnInputs& inp, bool causal);

// Reverse-mode gradient of softmax_attention against cotangent d_out.
template <typename T>
BasicAttnGradients<T> softmax_attention_vjp(const BasicAttnInputs<T>& inp, bool causal,
                                            const BasicMatrix<T>& d_out, int workers = 1);

// (1 - arccos(cos_angle(q, k)) / pi)^gamma. Throws on a zero-norm argument.
double angular_similarity(std::span<const double> q, std::span<const double> k, unsigned gamma);

// Exact N x N matrix S_ij = angular_similarity(Q_i, K_j, gamma).
Matrix angular_kernel_matrix(const Matrix& q, const Matrix& k, unsigned gamma);

// O_i = sum_j sim(Q_i, K_j) V_j / sum_j sim(Q_i, K_j); causal restricts to j <= i.
// Zero-norm query/key rows contribute zero similarity.
template <typename T>
BasicAttentionOutput<T> angular_attention(const BasicAttnInputs<T>& inp, unsigned gamma,
                                          bool causal, int workers = 1);

// Reverse-mode gradient of angular_attention. d sim / d cos is evaluated with
// 1 - cos^2 floored at 1e-12, so aligned or antipodal pairs stay finite.
template <typename T>
BasicAttnGradients<T> angular_attention_vjp(const BasicAttnInputs<T>& inp, unsigned gamma,
                                            bool causal, const BasicMatrix<T>& d_out,
                                            int workers = 1);

}  // namespace race
