#include "race/theory.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "race/race_attention.hpp"
#include "race/sketch.hpp"

namespace race {

namespace {

double mean(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

double sample_std(const std::vector<double>& x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double std_error(const std::vector<double>& x) {
    return x.empty() ? 0.0 : sample_std(x) / std::sqrt(static_cast<double>(x.size()));
}

double median(std::vector<double> x) {
    std::sort(x.begin(), x.end());
    const std::size_t n = x.size();
    return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

LinearFit fit_loglog(const std::vector<double>& grid, const std::vector<double>& errors) {
    std::vector<double> lx, ly;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        lx.push_back(std::log(grid[g]));
        ly.push_back(std::log(errors[g]));
    }
    return fit_line(lx, ly);
}

void check_grid(const std::vector<double>& grid, const char* who) {
    if (grid.size() < 3) throw std::invalid_argument(std::string(who) + ": grid needs at least 3 points");
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (!(grid[g] > 0.0) || !std::isfinite(grid[g])) {
            throw std::invalid_argument(std::string(who) + ": grid values must be positive");
        }
        if (g > 0 && !(grid[g] > grid[g - 1])) {
            throw std::invalid_argument(std::string(who) + ": grid must be strictly increasing");
        }
    }
}

void check_opts(const SweepOptions& opt, const char* who) {
    if (opt.seeds < 2) throw std::invalid_argument(std::string(who) + ": need at least 2 seeds");
}

Matrix angular_reference(const AttnInputs& inp, std::size_t p) {
    return angular_attention(inp, static_cast<unsigned>(p), false).out;
}

SketchConfig sweep_cfg(std::size_t p, std::size_t l, double beta, std::uint64_t seed, const SweepOptions& opt) {
    SketchConfig cfg;
    cfg.P = p;
    cfg.L = l;
    cfg.M = 1;
    cfg.beta = beta;
    cfg.seed = seed;
    cfg.normalize = opt.normalize;
    cfg.workers = opt.workers;
    return cfg;
}

template <typename MakeCfg>
ScalingExperiment run_sweep(const char* name, const AttnInputs& inp, std::size_t p, std::vector<double> grid,
                            const SweepOptions& opt, MakeCfg make_cfg) {
    inp.validate();
    const Matrix ref = angular_reference(inp, p);
    ScalingExperiment ex;
    ex.name = name;
    ex.grid = std::move(grid);
    ex.seeds = opt.seeds;
    for (double g : ex.grid) {
        std::vector<double> errs;
        for (std::size_t s = 0; s < opt.seeds; ++s) {
            const SketchConfig cfg = make_cfg(g, opt.base_seed + s);
            errs.push_back(output_rms_error(race_attention(inp, cfg).out, ref));
        }
        ex.errors.push_back(mean(errs));
        ex.std_errors.push_back(std_error(errs));
        ex.per_seed.push_back(std::move(errs));
    }
    const LinearFit fit = fit_loglog(ex.grid, ex.errors);
    ex.slope = fit.slope;
    ex.intercept = fit.intercept;
    ex.r2 = fit.r2;
    ex.slope_stderr = bootstrap_slope_stderr(ex.grid, ex.per_seed, opt.seeds, opt.bootstrap_resamples,
                                             opt.base_seed ^ 0x9e3779b97f4a7c15ULL);
    return ex;
}

}  // namespace

double output_rms_error(const Matrix& o_hat, const Matrix& o) {
    if (!o_hat.same_shape(o)) throw std::invalid_argument("output_rms_error: shape mismatch");
    if (o.rows() == 0) return 0.0;
    double s = 0.0;
    for (std::size_t e = 0; e < o.size(); ++e) {
        const double diff = o_hat.data()[e] - o.data()[e];
        s += diff * diff;
    }
    return std::sqrt(s / static_cast<double>(o.rows()));
}

double kernel_deviation(const Matrix& q, const Matrix& k, const SketchConfig& cfg, unsigned gamma) {
    if (gamma != cfg.P) throw std::invalid_argument("kernel_deviation: gamma must equal P");
    if (q.rows() > kDeviationMaxLength || k.rows() > kDeviationMaxLength) {
        throw std::invalid_argument("kernel_deviation: N must be <= " + std::to_string(kDeviationMaxLength));
    }
    const Matrix approx = race_kernel(q, k, cfg);
    const Matrix exact = angular_kernel_matrix(q, k, gamma);
    double s = 0.0;
    for (std::size_t e = 0; e < exact.size(); ++e) {
        const double diff = approx.data()[e] - exact.data()[e];
        s += diff * diff;
    }
    return std::sqrt(s);
}

double kernel_deviation_bound(std::size_t n, std::size_t tables, double delta) {
    if (n == 0 || tables == 0 || !(delta > 0.0 && delta < 1.0)) {
        throw std::invalid_argument("kernel_deviation_bound: need N, L >= 1 and delta in (0, 1)");
    }
    const double nn = static_cast<double>(n);
    return 4.0 * nn / std::sqrt(static_cast<double>(tables)) * std::sqrt(std::log(2.0 * nn / delta));
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: need >= 2 paired points");
    const double mx = mean(x), my = mean(y);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw std::invalid_argument("fit_line: x values are all equal");
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return fit;
}

bool ScalingExperiment::strictly_decreasing() const {
    for (std::size_t g = 1; g < errors.size(); ++g) {
        if (!(errors[g] < errors[g - 1])) return false;
    }
    return !errors.empty();
}

double bootstrap_slope_stderr(const std::vector<double>& grid, const std::vector<std::vector<double>>& per_seed,
                              std::size_t seeds, std::size_t resamples, std::uint64_t seed) {
    if (resamples < 2 || seeds == 0) return 0.0;
    for (const auto& row : per_seed) {
        if (row.size() < seeds) throw std::invalid_argument("bootstrap_slope_stderr: not enough seeds");
    }
    SeededRng rng(splitmix64(seed));
    std::uniform_int_distribution<std::size_t> pick(0, seeds - 1);
    std::vector<double> slopes;
    std::vector<std::size_t> idx(seeds);
    std::vector<double> errs(grid.size());
    for (std::size_t b = 0; b < resamples; ++b) {
        for (auto& i : idx) i = pick(rng.engine());
        for (std::size_t g = 0; g < grid.size(); ++g) {
            double s = 0.0;
            for (std::size_t i : idx) s += per_seed[g][i];
            errs[g] = s / static_cast<double>(seeds);
        }
        slopes.push_back(fit_loglog(grid, errs).slope);
    }
    return sample_std(slopes);
}

ScalingExperiment variance_sweep(const AttnInputs& inp, std::size_t p, double beta,
                                 const std::vector<std::size_t>& l_grid, const SweepOptions& opt) {
    std::vector<double> grid(l_grid.begin(), l_grid.end());
    check_grid(grid, "variance_sweep");
    check_opts(opt, "variance_sweep");
    return run_sweep("variance", inp, p, grid, opt, [&](double l, std::uint64_t seed) {
        return sweep_cfg(p, static_cast<std::size_t>(l), beta, seed, opt);
    });
}

ScalingExperiment bias_sweep(const AttnInputs& inp, std::size_t p, std::size_t l,
                             const std::vector<double>& beta_grid, const SweepOptions& opt) {
    check_grid(beta_grid, "bias_sweep");
    check_opts(opt, "bias_sweep");
    return run_sweep("bias", inp, p, beta_grid, opt,
                     [&](double beta, std::uint64_t seed) { return sweep_cfg(p, l, beta, seed, opt); });
}

SoftHardGap soft_hard_gap(const AttnInputs& inp, std::size_t p, std::size_t l, double beta,
                          const SweepOptions& opt) {
    inp.validate();
    check_opts(opt, "soft_hard_gap");
    const Matrix ref = angular_reference(inp, p);
    std::vector<double> soft, hard;
    for (std::size_t s = 0; s < opt.seeds; ++s) {
        const SketchConfig cfg = sweep_cfg(p, l, beta, opt.base_seed + s, opt);
        soft.push_back(output_rms_error(race_attention(inp, cfg).out, ref));
        hard.push_back(output_rms_error(hard_race_attention(inp, cfg).out, ref));
    }
    SoftHardGap res;
    res.soft_error = mean(soft);
    res.hard_error = mean(hard);
    res.gap = std::abs(res.soft_error - res.hard_error);
    return res;
}

BiasPComparison bias_p_comparison(const AttnInputs& inp, std::size_t p, std::size_t l, double beta,
                                  const SweepOptions& opt) {
    inp.validate();
    check_opts(opt, "bias_p_comparison");
    const auto median_error = [&](std::size_t bits) {
        const Matrix ref = angular_reference(inp, bits);
        std::vector<double> errs;
        for (std::size_t s = 0; s < opt.seeds; ++s) {
            errs.push_back(output_rms_error(race_attention(inp, sweep_cfg(bits, l, beta, opt.base_seed + s, opt)).out, ref));
        }
        return median(errs);
    };
    return {median_error(p), median_error(2 * p)};
}

CollisionReport collision_identity_check(std::size_t p, std::size_t trials, SeededRng& rng) {
    if (trials < kCollisionMinTrials) {
        throw std::invalid_argument("collision_identity_check: trials must be >= " +
                                    std::to_string(kCollisionMinTrials));
    }
    if (p == 0 || p > kMaxHyperplanes) throw std::invalid_argument("collision_identity_check: bad P");
    const std::size_t d = kCollisionDim;
    CollisionReport rep;
    rep.p = p;
    rep.trials = trials;
    rep.pass = true;
    for (double frac : {1.0 / 6.0, 1.0 / 3.0, 1.0 / 2.0, 2.0 / 3.0}) {
        const double theta = frac * std::numbers::pi;
        // k = cos(theta) q + sin(theta) q_perp for a random orthonormal pair.
        Matrix basis = row_normalize(gaussian_matrix(rng, 2, d));
        double proj = 0.0;
        for (std::size_t c = 0; c < d; ++c) proj += basis(0, c) * basis(1, c);
        for (std::size_t c = 0; c < d; ++c) basis(1, c) -= proj * basis(0, c);
        basis = row_normalize(basis);
        Matrix pair(2, d);
        for (std::size_t c = 0; c < d; ++c) {
            pair(0, c) = basis(0, c);
            pair(1, c) = std::cos(theta) * basis(0, c) + std::sin(theta) * basis(1, c);
        }
        std::size_t hits = 0;
        for (std::size_t t = 0; t < trials; ++t) {
            const auto h = hard_hash(pair, HashTable::sample(rng, p, d));
            hits += h[0] == h[1];
        }
        CollisionRow row;
        row.theta = theta;
        row.expected = std::pow(1.0 - frac, static_cast<double>(p));
        row.observed = static_cast<double>(hits) / static_cast<double>(trials);
        row.std_error = std::sqrt(row.expected * (1.0 - row.expected) / static_cast<double>(trials));
        row.pass = std::abs(row.observed - row.expected) <= 4.0 * row.std_error;
        rep.pass = rep.pass && row.pass;
        rep.rows.push_back(row);
    }
    return rep;
}

RowSumReport row_sum_stability(const Matrix& q, const Matrix& k, const SketchConfig& cfg) {
    if (q.rows() != k.rows() || q.rows() == 0) throw std::invalid_argument("row_sum_stability: need equal, nonzero N");
    const Matrix s = angular_kernel_matrix(q, k, static_cast<unsigned>(cfg.P));
    RowSumReport rep;
    rep.min_row_sum = INFINITY;
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double sum = 0.0;
        for (double v : s.row(i)) sum += v;
        rep.min_row_sum = std::min(rep.min_row_sum, sum);
    }
    SketchConfig nc = cfg;
    nc.causal = false;
    const RaceOutput out = race_attention(AttnInputs{q, k, Matrix(k.rows(), 1)}, nc);
    rep.min_den = *std::min_element(out.den.begin(), out.den.end());
    rep.ratio = rep.min_row_sum > 0.0 ? rep.min_den / rep.min_row_sum : INFINITY;
    rep.den_positive = rep.min_den > 0.0;
    rep.near_degenerate = rep.min_row_sum < kRowSumFloor;
    return rep;
}

UnbiasednessReport hard_denominator_unbiasedness(const Matrix& q, const Matrix& k, const SketchConfig& cfg,
                                                 std::size_t row) {
    if (row >= q.rows()) throw std::out_of_range("hard_denominator_unbiasedness: row out of range");
    const auto tables = sample_tables(cfg, q.cols());
    const Matrix qn = row_normalize(q);
    const Matrix kn = row_normalize(k);
    std::vector<double> counts;
    for (const HashTable& table : tables) {
        const auto hq = hard_hash(qn, table);
        const auto hk = hard_hash(kn, table);
        counts.push_back(static_cast<double>(std::count(hk.begin(), hk.end(), hq[row])));
    }
    UnbiasednessReport rep;
    rep.row = row;
    rep.estimate = mean(counts);
    rep.std_error = std_error(counts);
    for (std::size_t j = 0; j < k.rows(); ++j) {
        rep.expected += angular_similarity(q.row(row), k.row(j), static_cast<unsigned>(cfg.P));
    }
    rep.pass = std::abs(rep.estimate - rep.expected) <= 4.0 * rep.std_error + 1e-12;
    return rep;
}

}  // namespace race
