#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace race {

// Rows whose Euclidean norm falls below this are passed through unnormalized.
inline constexpr double kZeroRowNorm = 1e-12;

// Dense row-major matrix. Only what the attention code needs: element access,
// row spans and a finiteness check.
template <typename T>
class BasicMatrix {
public:
    using value_type = T;

    BasicMatrix() = default;

    BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    // Builds a matrix from user data; rejects size mismatch and NaN/Inf.
    static BasicMatrix from_data(std::size_t rows, std::size_t cols, std::vector<T> data) {
        if (data.size() != rows * cols) {
            throw std::invalid_argument("BasicMatrix: data length " + std::to_string(data.size()) +
                                        " != rows*cols " + std::to_string(rows * cols));
        }
        BasicMatrix m;
        m.rows_ = rows;
        m.cols_ = cols;
        m.data_ = std::move(data);
        if (!m.all_finite()) {
            throw std::invalid_argument("BasicMatrix: non-finite entry in input data");
        }
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

    std::span<T> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
    std::span<const T> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }

    bool all_finite() const noexcept {
        for (const T& x : data_) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    }

    bool same_shape(const BasicMatrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool operator==(const BasicMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

template <typename To, typename From>
BasicMatrix<To> matrix_cast(const BasicMatrix<From>& x) {
    BasicMatrix<To> out(x.rows(), x.cols());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
    return out;
}

// Euclidean norm of a row, accumulated in double.
template <typename T>
double row_norm(std::span<const T> x) noexcept {
    double s = 0.0;
    for (const T& v : x) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
}

// Writes x / ||x|| into out (double), or x itself when ||x|| < kZeroRowNorm.
// Returns the norm.
template <typename T>
double normalize_row_into(std::span<const T> x, std::span<double> out) noexcept {
    // Extended precision keeps the result within an ulp of the rounded quotient.
    long double s = 0.0L;
    for (const T& v : x) s += static_cast<long double>(v) * static_cast<long double>(v);
    const long double n = std::sqrt(s);
    if (n < kZeroRowNorm) {
        for (std::size_t c = 0; c < x.size(); ++c) out[c] = static_cast<double>(x[c]);
    } else {
        for (std::size_t c = 0; c < x.size(); ++c) out[c] = static_cast<double>(static_cast<long double>(x[c]) / n);
    }
    return static_cast<double>(n);
}

// Scales every row to unit Euclidean norm; near-zero rows are returned unchanged.
template <typename T>
BasicMatrix<T> row_normalize(const BasicMatrix<T>& x) {
    if (!x.all_finite()) throw std::invalid_argument("row_normalize: non-finite input");
    BasicMatrix<T> out(x.rows(), x.cols());
    std::vector<double> buf(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        normalize_row_into(x.row(i), std::span<double>(buf));
        auto dst = out.row(i);
        for (std::size_t c = 0; c < x.cols(); ++c) dst[c] = static_cast<T>(buf[c]);
    }
    return out;
}

}  // namespace race
