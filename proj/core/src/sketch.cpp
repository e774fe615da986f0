#include "race/sketch.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "race/config.hpp"
#include "kernels.hpp"

namespace race {

namespace {

inline double logistic(double z) noexcept { return 1.0 / (1.0 + std::exp(-z)); }

void check_beta(double beta) {
    if (!(beta > 0.0) || !std::isfinite(beta)) {
        throw std::invalid_argument("soft features: beta must be finite and > 0");
    }
}

}  // namespace

struct FeatureMatrixAccess {
    static FeatureMatrix wrap(Matrix phi) {
        FeatureMatrix f;
        f.phi_ = std::move(phi);
        return f;
    }
};

std::vector<int> corner_vector(std::size_t r, std::size_t P) {
    if (P < 1 || P > kMaxHyperplanes || r >= (std::size_t{1} << P)) {
        throw std::out_of_range("corner_vector: index " + std::to_string(r) + " out of range for P=" +
                                std::to_string(P));
    }
    std::vector<int> v(P);
    for (std::size_t t = 0; t < P; ++t) v[t] = ((r >> t) & 1U) ? -1 : 1;
    return v;
}

HashTable::HashTable(Matrix projections) : w_(std::move(projections)) {
    if (w_.rows() < 1 || w_.rows() > kMaxHyperplanes) {
        throw std::invalid_argument("HashTable: hyperplane count must be in [1, 20]");
    }
    if (w_.cols() < 1) throw std::invalid_argument("HashTable: dimension must be >= 1");
    if (!w_.all_finite()) throw std::invalid_argument("HashTable: non-finite projection");
    const std::size_t p = w_.rows();
    if (p <= kMaxExplicitCornerBits) {
        const std::size_t r_count = buckets();
        corners_.resize(r_count * p);
        for (std::size_t r = 0; r < r_count; ++r) {
            for (std::size_t t = 0; t < p; ++t) corners_[r * p + t] = ((r >> t) & 1U) ? -1.0 : 1.0;
        }
    }
}

HashTable HashTable::sample(SeededRng& rng, std::size_t P, std::size_t d) {
    return HashTable(gaussian_matrix(rng, P, d));
}

void tanh_projection(const HashTable& table, std::span<const double> x, std::span<double> u) {
    const Matrix& w = table.projections();
    for (std::size_t t = 0; t < w.rows(); ++t) {
        u[t] = std::tanh(detail::dot(w.row(t).data(), x.data(), w.cols()));
    }
}

void corner_distribution(const HashTable& table, std::span<const double> u, double beta,
                         FeaturePath path, std::span<double> out) {
    const std::size_t p = table.bits();
    const std::size_t r_count = table.buckets();
    if (path == FeaturePath::automatic) {
        path = p <= kMaxExplicitCornerBits ? FeaturePath::explicit_corners : FeaturePath::factored;
    }
    if (path == FeaturePath::explicit_corners) {
        const auto corners = table.corners();
        if (corners.empty()) {
            throw std::invalid_argument("corner_distribution: explicit corners unavailable for P > 10");
        }
        double mx = -INFINITY;
        for (std::size_t r = 0; r < r_count; ++r) {
            double s = 0.0;
            for (std::size_t t = 0; t < p; ++t) s += u[t] * corners[r * p + t];
            out[r] = beta * s;
            mx = std::max(mx, out[r]);
        }
        double sum = 0.0;
        for (std::size_t r = 0; r < r_count; ++r) {
            out[r] = std::exp(out[r] - mx);
            sum += out[r];
        }
        for (std::size_t r = 0; r < r_count; ++r) out[r] /= sum;
        return;
    }
    // Each bit is an independent two-way softmax: P(+1) = sigma(2 beta u_t).
    // Build the product table by doubling over bits, low bit first.
    out[0] = 1.0;
    for (std::size_t t = 0; t < p; ++t) {
        const std::size_t half = std::size_t{1} << t;
        const double plus = logistic(2.0 * beta * u[t]);
        const double minus = logistic(-2.0 * beta * u[t]);
        for (std::size_t r = 0; r < half; ++r) {
            out[r + half] = out[r] * minus;
            out[r] *= plus;
        }
    }
}

FeatureMatrix FeatureMatrix::from_matrix(Matrix phi) {
    for (std::size_t i = 0; i < phi.rows(); ++i) {
        double s = 0.0;
        for (double x : phi.row(i)) {
            if (!(x >= 0.0)) throw std::invalid_argument("FeatureMatrix: negative or NaN entry");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-10) {
            throw std::invalid_argument("FeatureMatrix: row " + std::to_string(i) + " does not sum to 1");
        }
    }
    return FeatureMatrixAccess::wrap(std::move(phi));
}

template <typename T>
FeatureMatrix soft_features(const BasicMatrix<T>& x, const HashTable& table, double beta,
                            FeaturePath path) {
    check_beta(beta);
    if (x.cols() != table.dim()) throw std::invalid_argument("soft_features: dimension mismatch");
    if (!x.all_finite()) throw std::invalid_argument("soft_features: non-finite input");
    Matrix phi(x.rows(), table.buckets());
    std::vector<double> xd(x.cols()), u(table.bits());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto xi = x.row(i);
        std::copy(xi.begin(), xi.end(), xd.begin());
        tanh_projection(table, xd, u);
        corner_distribution(table, u, beta, path, phi.row(i));
    }
    return FeatureMatrixAccess::wrap(std::move(phi));
}

template <typename T>
std::vector<std::uint32_t> hard_hash(const BasicMatrix<T>& x, const HashTable& table) {
    if (x.cols() != table.dim()) throw std::invalid_argument("hard_hash: dimension mismatch");
    const Matrix& w = table.projections();
    std::vector<std::uint32_t> idx(x.rows(), 0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::uint32_t r = 0;
        for (std::size_t t = 0; t < w.rows(); ++t) {
            if (detail::dot(w.row(t).data(), x.row(i).data(), w.cols()) < 0.0) r |= 1U << t;
        }
        idx[i] = r;
    }
    return idx;
}

template <typename T>
BucketStats bucket_stats(const FeatureMatrix& phi_k, const BasicMatrix<T>& v) {
    if (phi_k.rows() != v.rows()) throw std::invalid_argument("bucket_stats: row count mismatch");
    const std::size_t r_count = phi_k.buckets();
    const std::size_t dv = v.cols();
    BucketStats st{std::vector<double>(r_count, 0.0), Matrix(r_count, dv)};
    for (std::size_t j = 0; j < v.rows(); ++j) {
        const auto phi = phi_k.row(j);
        for (std::size_t r = 0; r < r_count; ++r) {
            st.mass[r] += phi[r];
            detail::axpy(phi[r], v.row(j).data(), st.values.row(r).data(), dv);
        }
    }
    return st;
}

template FeatureMatrix soft_features(const BasicMatrix<float>&, const HashTable&, double, FeaturePath);
template FeatureMatrix soft_features(const BasicMatrix<double>&, const HashTable&, double, FeaturePath);
template std::vector<std::uint32_t> hard_hash(const BasicMatrix<float>&, const HashTable&);
template std::vector<std::uint32_t> hard_hash(const BasicMatrix<double>&, const HashTable&);
template BucketStats bucket_stats(const FeatureMatrix&, const BasicMatrix<float>&);
template BucketStats bucket_stats(const FeatureMatrix&, const BasicMatrix<double>&);

}  // namespace race
