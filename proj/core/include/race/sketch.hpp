#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "race/rng.hpp"
#include "race/tensor.hpp"

namespace race {

// Corner r of {+-1}^P: bit t of r set -> component t is -1, clear -> +1.
std::vector<int> corner_vector(std::size_t r, std::size_t P);

// Largest P for which the explicit R x P corner matrix is materialized.
inline constexpr std::size_t kMaxExplicitCornerBits = 10;

// One LSH table: P Gaussian hyperplanes over R^d and the corner set {+-1}^P.
class HashTable {
public:
    // Takes a P x d projection matrix; P in [1, 20], entries finite.
    explicit HashTable(Matrix projections);

    static HashTable sample(SeededRng& rng, std::size_t P, std::size_t d);

    const Matrix& projections() const noexcept { return w_; }
    std::size_t bits() const noexcept { return w_.rows(); }
    std::size_t buckets() const noexcept { return std::size_t{1} << w_.rows(); }
    std::size_t dim() const noexcept { return w_.cols(); }

    // R x P matrix of +-1 entries (row-major); empty when P > kMaxExplicitCornerBits.
    std::span<const double> corners() const noexcept { return corners_; }

private:
    Matrix w_;
    std::vector<double> corners_;
};

enum class FeaturePath {
    automatic,         // explicit corners for P <= 10, factored above
    explicit_corners,  // softmax over all R corner logits
    factored,          // product of per-bit two-way softmaxes
};

// u_t = tanh(w_t . x) for each hyperplane.
void tanh_projection(const HashTable& table, std::span<const double> x, std::span<double> u);

// Soft corner distribution from activations u:
//   phi_r = softmax_r(beta * u . v_r)
// out has R entries.
void corner_distribution(const HashTable& table, std::span<const double> u, double beta,
                         FeaturePath path, std::span<double> out);

// Row-stochastic N x R matrix of soft bucket assignments.
class FeatureMatrix {
public:
    FeatureMatrix() = default;

    // Checks entries >= 0 and row sums equal to 1 within 1e-10.
    static FeatureMatrix from_matrix(Matrix phi);

    const Matrix& matrix() const noexcept { return phi_; }
    std::size_t rows() const noexcept { return phi_.rows(); }
    std::size_t buckets() const noexcept { return phi_.cols(); }
    std::span<const double> row(std::size_t i) const noexcept { return phi_.row(i); }

private:
    friend struct FeatureMatrixAccess;
    Matrix phi_;
};

template <typename T>
FeatureMatrix soft_features(const BasicMatrix<T>& x, const HashTable& table, double beta,
                            FeaturePath path = FeaturePath::automatic);

// Bucket index of sign(W x); a zero projection counts as +1.
template <typename T>
std::vector<std::uint32_t> hard_hash(const BasicMatrix<T>& x, const HashTable& table);

struct BucketStats {
    std::vector<double> mass;  // A = Phi^T 1
    Matrix values;             // B = Phi^T V, R x d_v
};

template <typename T>
BucketStats bucket_stats(const FeatureMatrix& phi_k, const BasicMatrix<T>& v);

}  // namespace race
