#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "race/config.hpp"
#include "race/exact_attention.hpp"
#include "race/rng.hpp"
#include "race/tensor.hpp"

namespace race {

// Confidence level used when evaluating high-probability bounds.
inline constexpr double kBoundDelta = 0.01;
// Bias-bound constants, reported but not asserted.
inline const double kBiasGaussianConstant = 4.0 / std::sqrt(2.0 * std::numbers::pi);
inline const double kBiasTanhConstant = 2.0 * std::tanh(1.0);
inline constexpr std::size_t kDeviationMaxLength = 1024;
// Row sums of the exact kernel below this are reported as near-degenerate.
inline constexpr double kRowSumFloor = 1e-3;

// sqrt((1/N) sum_i ||O_hat_i - O_i||^2)
double output_rms_error(const Matrix& o_hat, const Matrix& o);

// Frobenius norm of race_kernel(Q, K, cfg) - S with S_ij = sim(Q_i, K_j)^gamma.
// Frobenius upper-bounds the spectral norm, so bound checks against it stay sound.
// Requires gamma = cfg.P and N <= 1024.
double kernel_deviation(const Matrix& q, const Matrix& k, const SketchConfig& cfg, unsigned gamma);

// 4 N / sqrt(L) * sqrt(log(2N / delta))
double kernel_deviation_bound(std::size_t n, std::size_t tables, double delta = kBoundDelta);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

// Ordinary least squares of y on x. Needs at least two distinct x.
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

struct ScalingExperiment {
    std::string name;
    std::vector<double> grid;
    std::vector<double> errors;      // seed-mean RMS error per grid point
    std::vector<double> std_errors;  // standard error of that mean
    std::vector<std::vector<double>> per_seed;  // [grid][seed]
    std::size_t seeds = 0;
    double slope = 0.0;  // log(error) against log(grid)
    double intercept = 0.0;
    double r2 = 0.0;
    double slope_stderr = 0.0;  // bootstrap over seeds

    // Strictly decreasing seed-mean errors along the grid.
    bool strictly_decreasing() const;
};

struct SweepOptions {
    std::size_t seeds = 20;
    std::uint64_t base_seed = 0;
    std::size_t bootstrap_resamples = 200;
    bool normalize = true;
    int workers = 1;
};

// RMS error of race_attention against angular_attention(gamma = P) as L varies,
// at fixed P and beta. The same seeds are used at every grid point.
ScalingExperiment variance_sweep(const AttnInputs& inp, std::size_t p, double beta,
                                 const std::vector<std::size_t>& l_grid, const SweepOptions& opt = {});

// Same, with L fixed and beta varying.
ScalingExperiment bias_sweep(const AttnInputs& inp, std::size_t p, std::size_t l,
                             const std::vector<double>& beta_grid, const SweepOptions& opt = {});

// Bootstrap standard error of the log-log slope, resampling seeds with replacement.
// Only the first `seeds` columns of per_seed are used.
double bootstrap_slope_stderr(const std::vector<double>& grid, const std::vector<std::vector<double>>& per_seed,
                              std::size_t seeds, std::size_t resamples, std::uint64_t seed);

struct SoftHardGap {
    double soft_error = 0.0;
    double hard_error = 0.0;
    double gap = 0.0;  // |soft - hard|, seed-averaged errors
};

// Seed-averaged RMS errors of soft and hard-bucket RACE on identical tables.
SoftHardGap soft_hard_gap(const AttnInputs& inp, std::size_t p, std::size_t l, double beta,
                          const SweepOptions& opt = {});

struct BiasPComparison {
    double median_error_p = 0.0;
    double median_error_2p = 0.0;
};

// Median over seeds of the RMS error at P and at 2P (each against gamma = its own P).
BiasPComparison bias_p_comparison(const AttnInputs& inp, std::size_t p, std::size_t l, double beta,
                                  const SweepOptions& opt = {});

struct CollisionRow {
    double theta = 0.0;
    double expected = 0.0;
    double observed = 0.0;
    double std_error = 0.0;
    bool pass = false;
};

struct CollisionReport {
    std::size_t p = 0;
    std::size_t trials = 0;
    std::vector<CollisionRow> rows;
    bool pass = false;
};

inline constexpr std::size_t kCollisionMinTrials = 10000;
inline constexpr std::size_t kCollisionDim = 16;

// Hard-hash collision rate of fixed unit pairs at angles pi/6, pi/3, pi/2, 2pi/3
// over `trials` independent tables, against (1 - theta/pi)^P within 4 binomial
// standard errors.
CollisionReport collision_identity_check(std::size_t p, std::size_t trials, SeededRng& rng);

struct RowSumReport {
    double min_row_sum = 0.0;  // exact kernel, gamma = P
    double min_den = 0.0;      // averaged sketch denominator
    double ratio = 0.0;        // min_den / min_row_sum
    bool den_positive = false;
    bool near_degenerate = false;  // min_row_sum < kRowSumFloor
};

RowSumReport row_sum_stability(const Matrix& q, const Matrix& k, const SketchConfig& cfg);

struct UnbiasednessReport {
    std::size_t row = 0;
    double estimate = 0.0;   // mean over tables of the hard bucket count
    double expected = 0.0;   // sum_j sim(q, k_j)^P
    double std_error = 0.0;
    bool pass = false;       // within 4 standard errors
};

// Monte-Carlo mean of the hard-bucket denominator of query `row` over cfg's tables.
UnbiasednessReport hard_denominator_unbiasedness(const Matrix& q, const Matrix& k, const SketchConfig& cfg,
                                                 std::size_t row);

}  // namespace race
