#include "race/exact_attention.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "race/config.hpp"
#include "kernels.hpp"
#include "parallel.hpp"

namespace race {

namespace {

constexpr std::size_t kRowsPerTask = 32;
// Query/key rows per GEMM block in the softmax reference.
constexpr std::size_t kSoftmaxBlock = 64;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rows [begin, begin + count) of a matrix as a read-only Eigen view.
template <typename T>
Eigen::Map<const RowMat<T>> rows_of(const BasicMatrix<T>& m, std::size_t begin, std::size_t count) {
    return {m.data().data() + begin * m.cols(), static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(m.cols())};
}

template <typename T, typename Expr>
void store_rows(BasicMatrix<T>& dst, std::size_t begin, const Eigen::MatrixBase<Expr>& src) {
    Eigen::Map<RowMat<T>>(dst.data().data() + begin * dst.cols(), src.rows(), src.cols()) = src;
}

// In place: row r of p becomes exp(p - max) over its first `visible` entries and
// zero after them. Returns the sum, accumulated in double.
template <typename T>
double exp_row(RowMat<T>& p, std::size_t r, std::size_t visible) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, p(r, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < visible; ++j) {
        p(r, j) = std::exp(p(r, j) - mx);
        sum += p(r, j);
    }
    for (std::size_t j = visible; j < static_cast<std::size_t>(p.cols()); ++j) p(r, j) = T(0);
    return sum;
}

template <typename T>
void check_cotangent(const BasicAttnInputs<T>& inp, const BasicMatrix<T>& d_out, const char* who) {
    if (d_out.rows() != inp.length() || d_out.cols() != inp.value_dim()) {
        throw std::invalid_argument(std::string(who) + ": cotangent shape mismatch");
    }
}

// a = 1 - arccos(clamp(rho)) / pi
inline double angular_base(double rho) {
    return 1.0 - std::acos(std::clamp(rho, -1.0, 1.0)) / std::numbers::pi;
}

// d/d rho of angular_base(rho)^gamma, with 1 - rho^2 floored at 1e-12.
inline double angular_slope(double rho, unsigned gamma) {
    const double c = std::clamp(rho, -1.0, 1.0);
    const double a = angular_base(c);
    const double s = std::sqrt(std::max(1.0 - c * c, 1e-12));
    return static_cast<double>(gamma) * detail::ipow(a, gamma - 1) / (std::numbers::pi * s);
}

// Unit rows in double plus their original norms; zero rows are flagged by norm.
struct UnitRows {
    Matrix unit;
    std::vector<double> norm;

    bool zero(std::size_t i) const { return norm[i] < kZeroRowNorm; }
};

template <typename T>
UnitRows unit_rows(const BasicMatrix<T>& x) {
    UnitRows u{Matrix(x.rows(), x.cols()), std::vector<double>(x.rows())};
    for (std::size_t i = 0; i < x.rows(); ++i) {
        u.norm[i] = normalize_row_into(x.row(i), u.unit.row(i));
    }
    return u;
}

// Pullback of x -> x / ||x|| at a row with unit direction xh and norm n.
inline void unit_pullback(std::span<const double> xh, double n, std::span<const double> g,
                          std::span<double> out) {
    if (n < kZeroRowNorm) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    double proj = 0.0;
    for (std::size_t c = 0; c < xh.size(); ++c) proj += xh[c] * g[c];
    for (std::size_t c = 0; c < xh.size(); ++c) out[c] = (g[c] - xh[c] * proj) / n;
}

}  // namespace

template <typename T>
void BasicAttnInputs<T>::validate() const {
    if (q.rows() != k.rows() || q.rows() != v.rows()) {
        throw std::invalid_argument("AttnInputs: Q, K, V must share the row count N");
    }
    if (q.cols() != k.cols()) {
        throw std::invalid_argument("AttnInputs: Q and K must share the column count d");
    }
    if (q.cols() < 1 || v.cols() < 1) {
        throw std::invalid_argument("AttnInputs: d and d_v must be >= 1");
    }
    if (!q.all_finite() || !k.all_finite() || !v.all_finite()) {
        throw std::invalid_argument("AttnInputs: non-finite entry");
    }
}

template <typename T>
BasicMatrix<T> softmax_attention(const BasicAttnInputs<T>& inp, bool causal, int workers) {
    inp.validate();
    const std::size_t n = inp.length();
    const std::size_t dv = inp.value_dim();
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(inp.key_dim())));
    BasicMatrix<T> out(n, dv);

    detail::parallel_for(detail::block_count(n, kSoftmaxBlock), workers, [&](std::size_t b) {
        const auto blk = detail::row_block(b, n, kSoftmaxBlock);
        const std::size_t rows = blk.end - blk.begin;
        const std::size_t nk = causal ? blk.end : n;
        RowMat<T> p = (rows_of(inp.q, blk.begin, rows) * rows_of(inp.k, 0, nk).transpose()) * scale;
        std::vector<double> sum(rows);
        for (std::size_t r = 0; r < rows; ++r) sum[r] = exp_row(p, r, causal ? blk.begin + r + 1 : nk);
        const RowMat<T> o = p * rows_of(inp.v, 0, nk);
        for (std::size_t r = 0; r < rows; ++r) {
            auto dst = out.row(blk.begin + r);
            for (std::size_t c = 0; c < dv; ++c) dst[c] = static_cast<T>(o(r, c) / sum[r]);
        }
    });
    return out;
}

Matrix softmax_attention_weights(const AttnInputs& inp, bool causal) {
    inp.validate();
    const std::size_t n = inp.length();
    const std::size_t d = inp.key_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix p(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t nk = causal ? i + 1 : n;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < nk; ++j) {
            p(i, j) = scale * detail::dot(inp.q.row(i).data(), inp.k.row(j).data(), d);
            mx = std::max(mx, p(i, j));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
            p(i, j) = std::exp(p(i, j) - mx);
            sum += p(i, j);
        }
        for (std::size_t j = 0; j < nk; ++j) p(i, j) /= sum;
    }
    return p;
}

// Two passes over blocks: query blocks produce dQ and the per-row softmax
// statistics, then key blocks recompute the probabilities to produce dK and dV.
// No shared writes.
template <typename T>
BasicAttnGradients<T> softmax_attention_vjp(const BasicAttnInputs<T>& inp, bool causal,
                                            const BasicMatrix<T>& d_out, int workers) {
    inp.validate();
    check_cotangent(inp, d_out, "softmax_attention_vjp");
    const std::size_t n = inp.length();
    const std::size_t d = inp.key_dim();
    const std::size_t dv = inp.value_dim();
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

    std::vector<T> row_max(n), row_delta(n);
    std::vector<double> row_sum(n);
    BasicAttnGradients<T> g{BasicMatrix<T>(n, d), BasicMatrix<T>(n, d), BasicMatrix<T>(n, dv)};
    const std::size_t blocks = detail::block_count(n, kSoftmaxBlock);

    detail::parallel_for(blocks, workers, [&](std::size_t b) {
        const auto blk = detail::row_block(b, n, kSoftmaxBlock);
        const std::size_t rows = blk.end - blk.begin;
        const std::size_t nk = causal ? blk.end : n;
        RowMat<T> p = (rows_of(inp.q, blk.begin, rows) * rows_of(inp.k, 0, nk).transpose()) * scale;
        const RowMat<T> dp = rows_of(d_out, blk.begin, rows) * rows_of(inp.v, 0, nk).transpose();
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t i = blk.begin + r;
            const std::size_t visible = causal ? i + 1 : nk;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, p(r, j));
            const double sum = exp_row(p, r, visible);
            const T inv = static_cast<T>(1.0 / sum);
            double delta = 0.0;
            for (std::size_t j = 0; j < visible; ++j) {
                p(r, j) *= inv;
                delta += static_cast<double>(p(r, j)) * dp(r, j);
            }
            for (std::size_t j = 0; j < visible; ++j) p(r, j) = scale * p(r, j) * (dp(r, j) - static_cast<T>(delta));
            row_max[i] = mx;
            row_sum[i] = sum;
            row_delta[i] = static_cast<T>(delta);
        }
        store_rows(g.dq, blk.begin, p * rows_of(inp.k, 0, nk));
    });

    detail::parallel_for(blocks, workers, [&](std::size_t b) {
        const auto blk = detail::row_block(b, n, kSoftmaxBlock);
        const std::size_t cols = blk.end - blk.begin;
        const std::size_t q0 = causal ? blk.begin : 0;
        const std::size_t nq = n - q0;
        RowMat<T> pt = (rows_of(inp.k, blk.begin, cols) * rows_of(inp.q, q0, nq).transpose()) * scale;
        const RowMat<T> dpt = rows_of(inp.v, blk.begin, cols) * rows_of(d_out, q0, nq).transpose();
        RowMat<T> dst(cols, nq);
        for (std::size_t r = 0; r < cols; ++r) {
            const std::size_t j = blk.begin + r;
            for (std::size_t c = 0; c < nq; ++c) {
                const std::size_t i = q0 + c;
                if (causal && i < j) {
                    pt(r, c) = T(0);
                    dst(r, c) = T(0);
                    continue;
                }
                pt(r, c) = static_cast<T>(std::exp(pt(r, c) - row_max[i]) / row_sum[i]);
                dst(r, c) = scale * pt(r, c) * (dpt(r, c) - row_delta[i]);
            }
        }
        store_rows(g.dk, blk.begin, dst * rows_of(inp.q, q0, nq));
        store_rows(g.dv, blk.begin, pt * rows_of(d_out, q0, nq));
    });
    return g;
}

double angular_similarity(std::span<const double> q, std::span<const double> k, unsigned gamma) {
    if (q.size() != k.size()) throw std::invalid_argument("angular_similarity: dimension mismatch");
    const double nq = row_norm(q);
    const double nk = row_norm(k);
    if (nq < kZeroRowNorm || nk < kZeroRowNorm) {
        throw std::invalid_argument("angular_similarity: zero-norm vector");
    }
    // Angle from the chord lengths of the unit vectors: well conditioned near 0 and pi,
    // and the same value arccos(clamp(cos)) would give in exact arithmetic.
    long double lq = 0.0L, lk = 0.0L;
    for (std::size_t c = 0; c < q.size(); ++c) {
        lq += static_cast<long double>(q[c]) * q[c];
        lk += static_cast<long double>(k[c]) * k[c];
    }
    lq = std::sqrt(lq);
    lk = std::sqrt(lk);
    long double diff = 0.0L, sum = 0.0L;
    for (std::size_t c = 0; c < q.size(); ++c) {
        const long double a = q[c] / lq, b = k[c] / lk;
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    const long double theta = 2.0L * std::atan2(std::sqrt(diff), std::sqrt(sum));
    const long double base = 1.0L - theta / std::numbers::pi_v<long double>;
    long double r = 1.0L;
    for (unsigned g = 0; g < gamma; ++g) r *= base;
    return static_cast<double>(r);
}

Matrix angular_kernel_matrix(const Matrix& q, const Matrix& k, unsigned gamma) {
    if (q.cols() != k.cols()) throw std::invalid_argument("angular_kernel_matrix: dimension mismatch");
    Matrix s(q.rows(), k.rows());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        for (std::size_t j = 0; j < k.rows(); ++j) s(i, j) = angular_similarity(q.row(i), k.row(j), gamma);
    }
    return s;
}

template <typename T>
BasicAttentionOutput<T> angular_attention(const BasicAttnInputs<T>& inp, unsigned gamma,
                                          bool causal, int workers) {
    inp.validate();
    const std::size_t n = inp.length();
    const std::size_t d = inp.key_dim();
    const std::size_t dv = inp.value_dim();
    const UnitRows qh = unit_rows(inp.q);
    const UnitRows kh = unit_rows(inp.k);

    BasicAttentionOutput<T> res{BasicMatrix<T>(n, dv), std::vector<double>(n), {}};
    detail::parallel_for(detail::block_count(n, kRowsPerTask), workers, [&](std::size_t b) {
        const auto blk = detail::row_block(b, n, kRowsPerTask);
        std::vector<double> acc(dv);
        for (std::size_t i = blk.begin; i < blk.end; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            double den = 0.0;
            if (!qh.zero(i)) {
                const std::size_t nk = causal ? i + 1 : n;
                for (std::size_t j = 0; j < nk; ++j) {
                    if (kh.zero(j)) continue;
                    const double rho = detail::dot(qh.unit.row(i).data(), kh.unit.row(j).data(), d);
                    const double s = detail::ipow(angular_base(rho), gamma);
                    den += s;
                    detail::axpy(s, inp.v.row(j).data(), acc.data(), dv);
                }
            }
            res.den[i] = den;
            auto o = res.out.row(i);
            if (den > kDegenerateDen) {
                for (std::size_t c = 0; c < dv; ++c) o[c] = static_cast<T>(acc[c] / den);
            }
        }
    });
    for (std::size_t i = 0; i < n; ++i) {
        if (!(res.den[i] > kDegenerateDen)) res.degenerate_rows.push_back(i);
    }
    return res;
}

template <typename T>
BasicAttnGradients<T> angular_attention_vjp(const BasicAttnInputs<T>& inp, unsigned gamma,
                                            bool causal, const BasicMatrix<T>& d_out,
                                            int workers) {
    check_cotangent(inp, d_out, "angular_attention_vjp");
    const auto fwd = angular_attention(inp, gamma, causal, workers);
    const std::size_t n = inp.length();
    const std::size_t d = inp.key_dim();
    const std::size_t dv = inp.value_dim();
    const UnitRows qh = unit_rows(inp.q);
    const UnitRows kh = unit_rows(inp.k);

    // g_i = dO_i / den_i and delta_i = g_i . O_i; zero for degenerate rows.
    Matrix g(n, dv);
    std::vector<double> delta(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(fwd.den[i] > kDegenerateDen)) continue;
        for (std::size_t c = 0; c < dv; ++c) {
            g(i, c) = static_cast<double>(d_out(i, c)) / fwd.den[i];
            delta[i] += g(i, c) * static_cast<double>(fwd.out(i, c));
        }
    }

    BasicAttnGradients<T> res{BasicMatrix<T>(n, d), BasicMatrix<T>(n, d), BasicMatrix<T>(n, dv)};
    detail::parallel_for(detail::block_count(n, kRowsPerTask), workers, [&](std::size_t b) {
        const auto blk = detail::row_block(b, n, kRowsPerTask);
        std::vector<double> dqh(d), dq(d);
        for (std::size_t i = blk.begin; i < blk.end; ++i) {
            std::fill(dqh.begin(), dqh.end(), 0.0);
            if (!qh.zero(i)) {
                const std::size_t nk = causal ? i + 1 : n;
                for (std::size_t j = 0; j < nk; ++j) {
                    if (kh.zero(j)) continue;
                    const double rho = detail::dot(qh.unit.row(i).data(), kh.unit.row(j).data(), d);
                    const double ds = detail::dot(g.row(i).data(), inp.v.row(j).data(), dv) - delta[i];
                    detail::axpy(ds * angular_slope(rho, gamma), kh.unit.row(j).data(), dqh.data(), d);
                }
            }
            unit_pullback(qh.unit.row(i), qh.norm[i], dqh, dq);
            auto dst = res.dq.row(i);
            for (std::size_t c = 0; c < d; ++c) dst[c] = static_cast<T>(dq[c]);
        }
    });
    detail::parallel_for(detail::block_count(n, kRowsPerTask), workers, [&](std::size_t b) {
        const auto blk = detail::row_block(b, n, kRowsPerTask);
        std::vector<double> dkh(d), dk(d), dvj(dv);
        for (std::size_t j = blk.begin; j < blk.end; ++j) {
            std::fill(dkh.begin(), dkh.end(), 0.0);
            std::fill(dvj.begin(), dvj.end(), 0.0);
            if (!kh.zero(j)) {
                for (std::size_t i = causal ? j : 0; i < n; ++i) {
                    if (qh.zero(i)) continue;
                    const double rho = detail::dot(qh.unit.row(i).data(), kh.unit.row(j).data(), d);
                    const double s = detail::ipow(angular_base(rho), gamma);
                    detail::axpy(s, g.row(i).data(), dvj.data(), dv);
                    const double ds = detail::dot(g.row(i).data(), inp.v.row(j).data(), dv) - delta[i];
                    detail::axpy(ds * angular_slope(rho, gamma), qh.unit.row(i).data(), dkh.data(), d);
                }
            }
            unit_pullback(kh.unit.row(j), kh.norm[j], dkh, dk);
            auto dkr = res.dk.row(j);
            auto dvr = res.dv.row(j);
            for (std::size_t c = 0; c < d; ++c) dkr[c] = static_cast<T>(dk[c]);
            for (std::size_t c = 0; c < dv; ++c) dvr[c] = static_cast<T>(dvj[c]);
        }
    });
    return res;
}

template struct BasicAttnInputs<float>;
template struct BasicAttnInputs<double>;
template BasicMatrix<float> softmax_attention(const BasicAttnInputs<float>&, bool, int);
template BasicMatrix<double> softmax_attention(const BasicAttnInputs<double>&, bool, int);
template BasicAttnGradients<float> softmax_attention_vjp(const BasicAttnInputs<float>&, bool,
                                                         const BasicMatrix<float>&, int);
template BasicAttnGradients<double> softmax_attention_vjp(const BasicAttnInputs<double>&, bool,
                                                          const BasicMatrix<double>&, int);
template BasicAttentionOutput<float> angular_attention(const BasicAttnInputs<float>&, unsigned, bool, int);
template BasicAttentionOutput<double> angular_attention(const BasicAttnInputs<double>&, unsigned, bool, int);
template BasicAttnGradients<float> angular_attention_vjp(const BasicAttnInputs<float>&, unsigned, bool,
                                                         const BasicMatrix<float>&, int);
template BasicAttnGradients<double> angular_attention_vjp(const BasicAttnInputs<double>&, unsigned, bool,
                                                          const BasicMatrix<double>&, int);

}  // namespace race
