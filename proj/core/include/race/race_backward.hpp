#pragma once

#include <cstddef>
#include <string>

#include "race/race_attention.hpp"

namespace race {

template <typename T>
using BasicRaceGradients = BasicAttnGradients<T>;
using RaceGradients = BasicRaceGradients<double>;

// Vector-Jacobian product of race_attention against the cotangent d_out, with
// respect to Q, K and V. The path includes row normalization (when enabled),
// tanh, the softmax over corners, bucket aggregation, table averaging and the
// Num/Den ratio. Hyperplanes are constants. Degenerate rows pass no gradient.
//
// Features are recomputed rather than stored. The causal path mirrors the
// forward prefix scan with a reverse suffix scan over cotangent statistics.
template <typename T>
BasicRaceGradients<T> race_attention_vjp(const BasicAttnInputs<T>& inp, const SketchConfig& cfg,
                                         const BasicMatrix<T>& d_out);

// Same, reusing a forward result of race_attention(inp, cfg) instead of recomputing it.
template <typename T>
BasicRaceGradients<T> race_attention_vjp(const BasicAttnInputs<T>& inp, const SketchConfig& cfg,
                                         const BasicMatrix<T>& d_out, const BasicRaceOutput<T>& fwd);

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kRelErrorFloor = 1e-8;
// Above this temperature finite differences straddle near-discontinuities.
inline constexpr double kSmoothBetaLimit = 16.0;
inline constexpr std::size_t kGradCheckMaxLength = 64;

struct FiniteDiffReport {
    std::size_t probes = 0;
    std::size_t components = 0;  // per probe
    double h = 0.0;
    double tolerance = kGradTolerance;
    double max_rel_error = 0.0;
    std::string worst;  // e.g. "dK[3,1]"
    bool high_curvature = false;
    bool within_tolerance = false;

    // "pass", "fail", or "flagged" (out of tolerance in the high-curvature regime).
    std::string verdict() const;
};

// Compares race_attention_vjp with central differences of the scalar loss
// <dO, race_attention(Q, K, V)> for `probes` random cotangents dO, over every
// input component. Relative error uses max(|a|, |b|, 1e-8) as denominator.
// Requires N <= 64 and h in [1e-7, 1e-3].
FiniteDiffReport finite_diff_check(const AttnInputs& inp, const SketchConfig& cfg, std::size_t probes,
                                   double h, double tolerance = kGradTolerance);

}  // namespace race
