#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "race/config.hpp"

namespace race {

enum class BenchMethod { race, softmax_exact, angular_exact };
enum class PassKind { forward, forward_backward };
enum class BenchStatus { ok, oom_guard, time_guard };
enum class DType { f32, f64 };

std::string to_string(BenchMethod m);
std::string to_string(PassKind p);
std::string to_string(BenchStatus s);
std::string to_string(DType t);
// Throw std::invalid_argument on unknown names.
BenchMethod parse_method(const std::string& s);
PassKind parse_pass_kind(const std::string& s);
DType parse_dtype(const std::string& s);

struct BenchRecord {
    BenchMethod method = BenchMethod::race;
    std::size_t n = 0;
    std::size_t d = 0;
    std::size_t heads = 0;
    // Sketch parameters; unset for exact methods.
    std::optional<std::size_t> p, l, m;
    std::optional<double> beta;
    bool causal = false;
    PassKind pass_kind = PassKind::forward_backward;
    std::optional<double> wall_seconds;  // set only when status is ok
    std::size_t peak_bytes = 0;          // analytic estimate
    std::uint64_t seed = 0;
    BenchStatus status = BenchStatus::ok;
    int threads = 1;
};

inline constexpr const char* kBenchHeader =
    "method,N,d,heads,P,L,M,beta,causal,pass_kind,wall_seconds,peak_bytes,seed,status";
inline constexpr std::size_t kMinRepeats = 3;
inline constexpr std::size_t kDefaultMemLimitBytes = 4'000'000'000;

struct BenchOptions {
    std::vector<std::size_t> lengths;
    std::vector<BenchMethod> methods{BenchMethod::race};
    std::size_t d = 128;
    std::size_t heads = 4;
    SketchConfig sketch;  // P, L, M, beta, block_rows; seeds come from `seed`
    unsigned gamma = 0;   // angular_exact sharpening; 0 means gamma = P
    bool causal = false;
    PassKind pass_kind = PassKind::forward_backward;
    std::size_t repeats = 5;
    double time_budget_s = 600.0;
    std::size_t mem_limit_bytes = kDefaultMemLimitBytes;
    int threads = 1;
    DType dtype = DType::f32;
    std::uint64_t seed = 0;

    void validate() const;
};

// Working-set estimate for one (method, N) measurement: inputs, cotangent,
// outputs, gradients and the method's own buffers.
std::size_t estimate_peak_bytes(BenchMethod method, std::size_t n, const BenchOptions& opt);

// Called after each record, e.g. to stream CSV rows.
using BenchObserver = std::function<void(const BenchRecord&)>;

// For each method and length: one warmup run, then the median of `repeats`
// timed runs. A run processes all heads sequentially on one shared input set
// (head h uses sketch seed + h). Input generation is not timed. Exact methods
// whose projected cost (quadratic extrapolation from the last measured length,
// times repeats + 1) exceeds the time budget are skipped with time_guard;
// any method whose estimated footprint exceeds the memory limit gets oom_guard.
std::vector<BenchRecord> bench_scaling(const BenchOptions& opt, const BenchObserver& observer = {});

void write_bench_header(std::ostream& os, bool extended);
void write_bench_row(std::ostream& os, const BenchRecord& r, bool extended);

// Angular kernel against rescaled exp over a correlation grid on [-1, 1].
// Columns: rho,exp_scaled,angular_g<gamma>...  Requires resolution >= 8.
void demo_kernel_heatmap(std::ostream& os, const std::vector<unsigned>& gammas, std::size_t resolution);

}  // namespace race
