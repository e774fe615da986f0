#include "race/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "race/exact_attention.hpp"
#include "race/race_attention.hpp"
#include "race/race_backward.hpp"
#include "race/rng.hpp"

namespace race {

namespace {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<E> values, const char* what) {
    for (E v : values) {
        if (to_string(v) == s) return v;
    }
    throw std::invalid_argument(std::string("unknown ") + what + ": " + s);
}

template <typename T>
BasicMatrix<T> gaussian(SeededRng& rng, std::size_t rows, std::size_t cols) {
    BasicMatrix<T> m(rows, cols);
    for (T& x : m.data()) x = static_cast<T>(rng.normal());
    return m;
}

template <typename T>
struct BenchInputs {
    BasicAttnInputs<T> attn;
    BasicMatrix<T> d_out;
};

template <typename T>
BenchInputs<T> make_inputs(std::size_t n, std::size_t d, std::uint64_t seed) {
    SeededRng rng(splitmix64(seed ^ (0x5bd1e995ULL * n)));
    BasicAttnInputs<T> attn{gaussian<T>(rng, n, d), gaussian<T>(rng, n, d), gaussian<T>(rng, n, d)};
    BasicMatrix<T> d_out = gaussian<T>(rng, n, d);
    return {std::move(attn), std::move(d_out)};
}

// One run: every head, sequentially.
template <typename T>
void run_once(BenchMethod method, const BenchInputs<T>& in, const BenchOptions& opt) {
    const bool backward = opt.pass_kind == PassKind::forward_backward;
    const unsigned gamma = opt.gamma ? opt.gamma : static_cast<unsigned>(opt.sketch.P);
    for (std::size_t h = 0; h < opt.heads; ++h) {
        switch (method) {
            case BenchMethod::race: {
                SketchConfig cfg = opt.sketch;
                cfg.seed = opt.seed + h;
                cfg.causal = opt.causal;
                cfg.workers = opt.threads;
                const auto fwd = race_attention(in.attn, cfg);
                if (backward) race_attention_vjp(in.attn, cfg, in.d_out, fwd);
                break;
            }
            case BenchMethod::softmax_exact:
                softmax_attention(in.attn, opt.causal, opt.threads);
                if (backward) softmax_attention_vjp(in.attn, opt.causal, in.d_out, opt.threads);
                break;
            case BenchMethod::angular_exact:
                angular_attention(in.attn, gamma, opt.causal, opt.threads);
                if (backward) angular_attention_vjp(in.attn, gamma, opt.causal, in.d_out, opt.threads);
                break;
        }
    }
}

template <typename T>
double time_median(BenchMethod method, const BenchInputs<T>& in, const BenchOptions& opt) {
    using clock = std::chrono::steady_clock;
    run_once(method, in, opt);  // warmup
    std::vector<double> times;
    for (std::size_t r = 0; r < opt.repeats; ++r) {
        const auto t0 = clock::now();
        run_once(method, in, opt);
        times.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    const std::size_t k = times.size();
    const double med = k % 2 ? times[k / 2] : 0.5 * (times[k / 2 - 1] + times[k / 2]);
    return std::max(med, 1e-9);
}

struct LastTiming {
    std::size_t n = 0;
    double seconds = 0.0;
};

template <typename T>
std::vector<BenchRecord> bench_typed(const BenchOptions& opt, const BenchObserver& observer) {
    std::vector<BenchRecord> out;
    std::map<BenchMethod, LastTiming> last;
    for (std::size_t n : opt.lengths) {
        std::optional<BenchInputs<T>> inputs;
        for (BenchMethod method : opt.methods) {
            BenchRecord rec;
            rec.method = method;
            rec.n = n;
            rec.d = opt.d;
            rec.heads = opt.heads;
            if (method == BenchMethod::race) {
                rec.p = opt.sketch.P;
                rec.l = opt.sketch.L;
                rec.m = opt.sketch.M;
                rec.beta = opt.sketch.beta;
            }
            rec.causal = opt.causal;
            rec.pass_kind = opt.pass_kind;
            rec.peak_bytes = estimate_peak_bytes(method, n, opt);
            rec.seed = opt.seed;
            rec.threads = opt.threads;

            const auto prev = last.find(method);
            if (rec.peak_bytes > opt.mem_limit_bytes) {
                rec.status = BenchStatus::oom_guard;
            } else if (method != BenchMethod::race && prev != last.end()) {
                const double ratio = static_cast<double>(n) / static_cast<double>(prev->second.n);
                const double projected = prev->second.seconds * ratio * ratio * static_cast<double>(opt.repeats + 1);
                if (projected > opt.time_budget_s) rec.status = BenchStatus::time_guard;
            }
            if (rec.status == BenchStatus::ok) {
                if (!inputs) inputs = make_inputs<T>(n, opt.d, opt.seed);
                rec.wall_seconds = time_median(method, *inputs, opt);
                last[method] = {n, *rec.wall_seconds};
            }
            if (observer) observer(rec);
            out.push_back(rec);
        }
    }
    return out;
}

std::string fmt(double x, int precision) {
    std::ostringstream os;
    os << std::setprecision(precision) << x;
    return os.str();
}

}  // namespace

std::string to_string(BenchMethod m) {
    switch (m) {
        case BenchMethod::race: return "race";
        case BenchMethod::softmax_exact: return "softmax_exact";
        case BenchMethod::angular_exact: return "angular_exact";
    }
    return "?";
}

std::string to_string(PassKind p) { return p == PassKind::forward ? "forward" : "forward_backward"; }

std::string to_string(BenchStatus s) {
    switch (s) {
        case BenchStatus::ok: return "ok";
        case BenchStatus::oom_guard: return "oom_guard";
        case BenchStatus::time_guard: return "time_guard";
    }
    return "?";
}

std::string to_string(DType t) { return t == DType::f32 ? "f32" : "f64"; }

BenchMethod parse_method(const std::string& s) {
    return parse_enum(s, {BenchMethod::race, BenchMethod::softmax_exact, BenchMethod::angular_exact}, "method");
}

PassKind parse_pass_kind(const std::string& s) {
    return parse_enum(s, {PassKind::forward, PassKind::forward_backward}, "pass kind");
}

DType parse_dtype(const std::string& s) { return parse_enum(s, {DType::f32, DType::f64}, "dtype"); }

void BenchOptions::validate() const {
    if (lengths.empty()) throw std::invalid_argument("bench: empty length grid");
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        if (lengths[i] == 0) throw std::invalid_argument("bench: lengths must be positive");
        if (i > 0 && lengths[i] <= lengths[i - 1]) throw std::invalid_argument("bench: lengths must increase");
    }
    if (methods.empty()) throw std::invalid_argument("bench: no methods");
    if (d == 0 || heads == 0) throw std::invalid_argument("bench: d and heads must be positive");
    if (repeats < kMinRepeats) throw std::invalid_argument("bench: repeats must be >= 3");
    if (!(time_budget_s > 0.0)) throw std::invalid_argument("bench: time budget must be positive");
    if (threads < 1) throw std::invalid_argument("bench: threads must be >= 1");
    sketch.validate();
}

std::size_t estimate_peak_bytes(BenchMethod method, std::size_t n, const BenchOptions& opt) {
    const std::size_t es = opt.dtype == DType::f32 ? 4 : 8;
    const bool backward = opt.pass_kind == PassKind::forward_backward;
    const std::size_t nd = n * opt.d;
    // q, k, v, out; plus d_out and three gradients for a backward pass.
    std::size_t bytes = (backward ? 8 : 4) * nd * es;
    switch (method) {
        case BenchMethod::race: {
            const std::size_t tables = opt.sketch.tables();
            const std::size_t stats = tables * opt.sketch.buckets() * (opt.d + 1) * 8;
            const std::size_t blk = std::min(opt.sketch.block_rows, n);
            const std::size_t blocks = (n + blk - 1) / blk;
            bytes += stats + n * 8;
            if (opt.causal) {
                bytes += 2 * tables * blk * (opt.d + 1) * 8;
            } else if (backward) {
                bytes += blocks * stats;
            }
            break;
        }
        case BenchMethod::softmax_exact:
            bytes += 3 * n * 8;
            break;
        case BenchMethod::angular_exact:
            bytes += 2 * nd * 8 + 4 * n * 8;
            break;
    }
    return bytes;
}

std::vector<BenchRecord> bench_scaling(const BenchOptions& opt, const BenchObserver& observer) {
    opt.validate();
    return opt.dtype == DType::f32 ? bench_typed<float>(opt, observer) : bench_typed<double>(opt, observer);
}

void write_bench_header(std::ostream& os, bool extended) {
    os << kBenchHeader << (extended ? ",threads" : "") << '\n';
}

void write_bench_row(std::ostream& os, const BenchRecord& r, bool extended) {
    const auto opt_count = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : ""; };
    os << to_string(r.method) << ',' << r.n << ',' << r.d << ',' << r.heads << ',' << opt_count(r.p) << ','
       << opt_count(r.l) << ',' << opt_count(r.m) << ',' << (r.beta ? fmt(*r.beta, 10) : "") << ','
       << (r.causal ? "true" : "false") << ',' << to_string(r.pass_kind) << ','
       << (r.wall_seconds ? fmt(*r.wall_seconds, 9) : "") << ',' << r.peak_bytes << ',' << r.seed << ','
       << to_string(r.status);
    if (extended) os << ',' << r.threads;
    os << '\n';
}

void demo_kernel_heatmap(std::ostream& os, const std::vector<unsigned>& gammas, std::size_t resolution) {
    if (resolution < 8) throw std::invalid_argument("demo: resolution must be >= 8");
    if (gammas.empty()) throw std::invalid_argument("demo: need at least one gamma");
    os << "rho,exp_scaled";
    for (unsigned g : gammas) os << ",angular_g" << g;
    os << '\n';
    const double lo = std::exp(-1.0), hi = std::exp(1.0);
    for (std::size_t k = 0; k < resolution; ++k) {
        const double rho = -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(resolution - 1);
        os << fmt(rho, 10) << ',' << fmt((std::exp(rho) - lo) / (hi - lo), 10);
        const double base = 1.0 - std::acos(std::clamp(rho, -1.0, 1.0)) / std::numbers::pi;
        for (unsigned g : gammas) os << ',' << fmt(std::pow(base, static_cast<double>(g)), 10);
        os << '\n';
    }
}

}  // namespace race
