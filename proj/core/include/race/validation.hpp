#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "race/report.hpp"

namespace race {

inline constexpr int kCriterionCount = 9;
// The timing criterion; `quick` runs skip it.
inline constexpr int kTimingCriterion = 7;

// Pinned acceptance thresholds.
inline constexpr double kOracleRelTol = 1e-10;
inline constexpr double kPrefixTol = 1e-10;
inline constexpr double kCollisionSigmas = 4.0;
inline constexpr std::size_t kCollisionTrials = 100000;
inline constexpr double kVarianceSlopeLo = -0.65;
inline constexpr double kVarianceSlopeHi = -0.35;
inline constexpr double kVarianceMinR2 = 0.9;
inline constexpr double kSoftHardGapTol = 1e-3;
inline constexpr double kGradRelTol = 1e-4;
inline constexpr double kRaceRatioLo = 1.6;
inline constexpr double kRaceRatioHi = 2.6;
inline constexpr double kSoftmaxRatioLo = 3.0;
inline constexpr double kSoftmaxRatioHi = 5.5;
inline constexpr double kFeatureSumTol = 1e-10;
inline constexpr double kMassTol = 1e-8;
inline constexpr double kConstantOutputTol = 1e-10;

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    bool skipped = false;
    std::string detail;
    double seconds = 0.0;
    std::vector<ReportRow> rows;
};

struct ValidationOptions {
    bool quick = false;              // skip the timing criterion
    std::size_t bench_repeats = 5;   // timed runs per length in criterion 7
    int threads = 1;                 // worker count for criterion 7
    std::uint64_t seed = 0;          // base seed for every randomized criterion
    std::vector<int> only;           // run just these ids; empty means all
    std::ostream* progress = nullptr;  // result lines as they finish
};

CriterionResult run_criterion(int id, const ValidationOptions& opt);
std::vector<CriterionResult> run_acceptance(const ValidationOptions& opt);

// "[PASS] 3 collision identity: ... (1.2 s)"; skipped criteria print [SKIP].
std::string format_result_line(const CriterionResult& r);

// True when no criterion failed; skipped criteria do not fail the suite.
bool all_passed(const std::vector<CriterionResult>& results);

std::vector<ReportRow> collect_rows(const std::vector<CriterionResult>& results);

}  // namespace race
