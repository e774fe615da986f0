#include "race_cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <ostream>
#include <stdexcept>

#include "race/bench.hpp"
#include "race/race_backward.hpp"
#include "race/report.hpp"
#include "race/rng.hpp"
#include "race/validation.hpp"

namespace race::cli {

namespace {

// Thrown for argument problems detected after parsing; maps to exit code 2.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Writes to --out when given, otherwise to the caller's stream.
class Sink {
public:
    Sink(const std::string& path, std::ostream& fallback) : os_(&fallback) {
        if (path.empty()) return;
        file_ = std::make_unique<std::ofstream>(path);
        if (!*file_) throw UsageError("cannot open output file: " + path);
        os_ = file_.get();
    }
    std::ostream& stream() { return *os_; }

private:
    std::unique_ptr<std::ofstream> file_;
    std::ostream* os_;
};

std::vector<std::size_t> default_lengths() {
    std::vector<std::size_t> out;
    for (std::size_t n = std::size_t{1} << 12; n <= (std::size_t{1} << 20); n <<= 1) out.push_back(n);
    return out;
}

struct SketchFlags {
    std::size_t p = 2;
    std::size_t l = 2;
    std::size_t m = 1;
    double beta = kDefaultBeta;

    void add(CLI::App& app) {
        app.add_option("--P", p, "Hyperplanes per table")->capture_default_str();
        app.add_option("--L", l, "Tables per ensemble")->capture_default_str();
        app.add_option("--M", m, "Ensembles")->capture_default_str();
        app.add_option("--beta", beta, "Soft-assignment temperature")->capture_default_str();
    }
    SketchConfig config() const {
        SketchConfig cfg;
        cfg.P = p;
        cfg.L = l;
        cfg.M = m;
        cfg.beta = beta;
        return cfg;
    }
};

struct BenchFlags {
    std::vector<std::size_t> lengths = default_lengths();
    std::vector<std::string> methods{"race"};
    std::size_t dim = 128;
    std::size_t heads = 4;
    SketchFlags sketch;
    unsigned gamma = 0;
    bool causal = false;
    std::string pass = "forward_backward";
    std::size_t repeats = 5;
    double time_budget_s = 600.0;
    double mem_limit_bytes = static_cast<double>(kDefaultMemLimitBytes);
    int threads = 1;
    std::string dtype = "f32";
    bool extended = false;
    std::string out;
};

struct ValidateFlags {
    bool quick = false;
    std::size_t repeats = 5;
    int threads = 1;
    std::vector<int> only;
    std::string out;
};

struct GradFlags {
    std::size_t n = 12;
    std::size_t dim = 4;
    SketchFlags sketch{2, 2, 1, 4.0};
    bool causal = false;
    std::size_t probes = 3;
    double h = 1e-5;
    double tol = kGradTolerance;
};

struct DemoFlags {
    std::vector<unsigned> gammas{1, 2, 4, 8, 12};
    std::size_t resolution = 41;
    std::string out;
};

int run_bench(const BenchFlags& f, std::uint64_t seed, std::ostream& out) {
    BenchOptions opt;
    opt.lengths = f.lengths;
    opt.methods.clear();
    for (const std::string& m : f.methods) opt.methods.push_back(parse_method(m));
    opt.d = f.dim;
    opt.heads = f.heads;
    opt.sketch = f.sketch.config();
    opt.gamma = f.gamma;
    opt.causal = f.causal;
    opt.pass_kind = parse_pass_kind(f.pass);
    opt.repeats = f.repeats;
    opt.time_budget_s = f.time_budget_s;
    if (!(f.mem_limit_bytes > 0.0)) throw UsageError("--mem-limit-bytes must be positive");
    opt.mem_limit_bytes = static_cast<std::size_t>(f.mem_limit_bytes);
    opt.threads = f.threads;
    opt.dtype = parse_dtype(f.dtype);
    opt.seed = seed;
    try {
        opt.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    Sink sink(f.out, out);
    std::ostream& os = sink.stream();
    write_bench_header(os, f.extended);
    os.flush();
    // Rows stream as they finish so guarded or interrupted runs keep partial results.
    bench_scaling(opt, [&](const BenchRecord& r) {
        write_bench_row(os, r, f.extended);
        os.flush();
    });
    return kExitOk;
}

int run_validate(const ValidateFlags& f, std::uint64_t seed, std::ostream& out) {
    ValidationOptions opt;
    opt.quick = f.quick;
    opt.bench_repeats = f.repeats;
    opt.threads = f.threads;
    opt.seed = seed;
    opt.only = f.only;
    opt.progress = &out;
    if (opt.bench_repeats < kMinRepeats) throw UsageError("--repeats must be >= 3");
    if (opt.threads < 1) throw UsageError("--threads must be >= 1");
    for (int id : opt.only) {
        if (id < 1 || id > kCriterionCount) throw UsageError("--only ids must be in 1..9");
    }
    Sink sink(f.out, out);

    const auto results = run_acceptance(opt);
    const bool ok = all_passed(results);
    const auto passed = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.pass && !r.skipped; });
    const auto skipped = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.skipped; });
    out << "\nsummary: " << passed << " passed, " << (results.size() - static_cast<std::size_t>(passed + skipped))
        << " failed, " << skipped << " skipped\n\n";
    const auto rows = collect_rows(results);
    if (f.out.empty()) {
        write_report_text(out, rows);
    } else {
        write_report_csv(sink.stream(), rows);
    }
    out << (ok ? "validate: PASS" : "validate: FAIL") << '\n';
    return ok ? kExitOk : kExitFailure;
}

int run_gradcheck(const GradFlags& f, std::uint64_t seed, std::ostream& out) {
    if (f.n == 0 || f.n > kGradCheckMaxLength) throw UsageError("--N must be in [1, 64]");
    if (f.dim == 0) throw UsageError("--dim must be positive");
    SketchConfig cfg = f.sketch.config();
    cfg.seed = seed;
    cfg.causal = f.causal;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    SeededRng rng(splitmix64(seed));
    AttnInputs inp{gaussian_matrix(rng, f.n, f.dim), gaussian_matrix(rng, f.n, f.dim), gaussian_matrix(rng, f.n, f.dim)};
    FiniteDiffReport rep;
    try {
        rep = finite_diff_check(inp, cfg, f.probes, f.h, f.tol);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    out << "gradcheck N=" << f.n << " d=" << f.dim << " P=" << cfg.P << " L=" << cfg.L << " M=" << cfg.M
        << " beta=" << cfg.beta << (cfg.causal ? " causal" : " non-causal") << " seed=" << seed << '\n'
        << "probes " << rep.probes << ", components " << rep.components << ", h " << rep.h << '\n'
        << "max rel error " << std::scientific << std::setprecision(3) << rep.max_rel_error << " at " << rep.worst
        << " (tol " << rep.tolerance << ")\n"
        << "verdict: " << rep.verdict() << '\n';
    return rep.verdict() == "fail" ? kExitFailure : kExitOk;
}

int run_demo(const DemoFlags& f, std::ostream& out) {
    Sink sink(f.out, out);
    try {
        demo_kernel_heatmap(sink.stream(), f.gammas, f.resolution);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"RACE attention: benchmarks, validation and demos", "race_attn"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::uint64_t seed = 0;
    const auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, std::string("Base seed (default from ") + kSeedEnv + ", else 0)")
            ->envname(kSeedEnv);
    };

    BenchFlags bf;
    CLI::App* bench = app.add_subcommand("bench", "Wall-clock scaling benchmark; prints CSV");
    bench->add_option("--lengths", bf.lengths, "Increasing sequence lengths")->delimiter(',');
    bench->add_option("--method", bf.methods, "race, softmax_exact, angular_exact (comma separated)")
        ->delimiter(',')
        ->check(CLI::IsMember({"race", "softmax_exact", "angular_exact"}));
    bench->add_option("--dim", bf.dim, "Head dimension")->capture_default_str();
    bench->add_option("--heads", bf.heads, "Heads, run sequentially")->capture_default_str();
    bf.sketch.add(*bench);
    bench->add_option("--gamma", bf.gamma, "Sharpening for angular_exact; 0 means P")->capture_default_str();
    bench->add_flag("--causal", bf.causal, "Causal masking");
    bench->add_option("--pass", bf.pass, "forward or forward_backward")
        ->check(CLI::IsMember({"forward", "forward_backward"}))
        ->capture_default_str();
    bench->add_option("--repeats", bf.repeats, "Timed runs per point (>= 3)")->capture_default_str();
    bench->add_option("--time-budget-s", bf.time_budget_s, "Projected-cost budget for exact methods")
        ->capture_default_str();
    bench->add_option("--mem-limit-bytes", bf.mem_limit_bytes, "Footprint limit for the memory guard")
        ->capture_default_str();
    bench->add_option("--threads", bf.threads, "Worker threads")->capture_default_str();
    bench->add_option("--dtype", bf.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
    bench->add_flag("--extended", bf.extended, "Append the worker count column");
    bench->add_option("--out", bf.out, "CSV output path (default stdout)");
    add_seed(bench);

    ValidateFlags vf;
    CLI::App* validate = app.add_subcommand("validate", "Run the acceptance suites and print a pass/fail report");
    validate->add_flag("--quick", vf.quick, "Skip the timing criterion");
    validate->add_option("--repeats", vf.repeats, "Timed runs per length in the timing criterion")
        ->capture_default_str();
    validate->add_option("--threads", vf.threads, "Worker threads for the timing criterion")->capture_default_str();
    validate->add_option("--only", vf.only, "Criterion ids to run (comma separated)")->delimiter(',');
    validate->add_option("--out", vf.out, "Write the report as CSV to this path");
    add_seed(validate);

    GradFlags gf;
    CLI::App* grad = app.add_subcommand("gradcheck", "Compare the RACE VJP with finite differences");
    grad->add_option("--N", gf.n, "Sequence length (<= 64)")->capture_default_str();
    grad->add_option("--dim", gf.dim, "Head dimension")->capture_default_str();
    gf.sketch.add(*grad);
    grad->add_flag("--causal", gf.causal, "Causal masking");
    grad->add_option("--probes", gf.probes, "Random cotangents")->capture_default_str();
    grad->add_option("--step", gf.h, "Central-difference step")->capture_default_str();
    grad->add_option("--tol", gf.tol, "Relative error tolerance")->capture_default_str();
    add_seed(grad);

    DemoFlags df;
    CLI::App* demo = app.add_subcommand("demo", "Tabulate angular kernels against rescaled exp as CSV");
    demo->add_option("--gammas", df.gammas, "Sharpening powers (comma separated)")->delimiter(',');
    demo->add_option("--resolution", df.resolution, "Grid points on [-1, 1] (>= 8)")->capture_default_str();
    demo->add_option("--out", df.out, "CSV output path (default stdout)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (*bench) return run_bench(bf, seed, out);
        if (*validate) return run_validate(vf, seed, out);
        if (*grad) return run_gradcheck(gf, seed, out);
        if (*demo) return run_demo(df, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace race::cli
