// Brute-force reference for race_attention. Shares only the table sampling
// and row normalization with the fast path; everything else is plain loops.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "race/race_attention.hpp"

namespace race {

namespace {

using FeatureRows = std::vector<std::vector<double>>;

std::vector<double> scalar_feature(const HashTable& table, std::span<const double> x, double beta) {
    const Matrix& w = table.projections();
    const std::size_t p = w.rows();
    const std::size_t r_count = std::size_t{1} << p;
    std::vector<double> u(p);
    for (std::size_t t = 0; t < p; ++t) {
        double z = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) z += w(t, c) * x[c];
        u[t] = std::tanh(z);
    }
    std::vector<double> logit(r_count);
    for (std::size_t r = 0; r < r_count; ++r) {
        const auto v = corner_vector(r, p);
        double s = 0.0;
        for (std::size_t t = 0; t < p; ++t) s += u[t] * v[t];
        logit[r] = beta * s;
    }
    const double mx = *std::max_element(logit.begin(), logit.end());
    double total = 0.0;
    for (double& l : logit) {
        l = std::exp(l - mx);
        total += l;
    }
    for (double& l : logit) l /= total;
    return logit;
}

FeatureRows scalar_features(const HashTable& table, const Matrix& x, double beta) {
    FeatureRows rows;
    rows.reserve(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) rows.push_back(scalar_feature(table, x.row(i), beta));
    return rows;
}

// Non-causal estimator over the first n rows of every table's features.
RaceOutput scalar_noncausal(const std::vector<FeatureRows>& fq, const std::vector<FeatureRows>& fk,
                            const Matrix& v, std::size_t n) {
    const std::size_t dv = v.cols();
    const double n_tables = static_cast<double>(fq.size());
    RaceOutput res{Matrix(n, dv), std::vector<double>(n, 0.0), {}};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> num(dv, 0.0);
        double den = 0.0;
        for (std::size_t tau = 0; tau < fq.size(); ++tau) {
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t r = 0; r < fq[tau][i].size(); ++r) s += fq[tau][i][r] * fk[tau][j][r];
                den += s;
                for (std::size_t c = 0; c < dv; ++c) num[c] += s * v(j, c);
            }
        }
        den /= n_tables;
        res.den[i] = den;
        if (den > kDegenerateDen) {
            for (std::size_t c = 0; c < dv; ++c) res.out(i, c) = (num[c] / n_tables) / den;
        } else {
            res.degenerate_rows.push_back(i);
        }
    }
    return res;
}

}  // namespace

RaceOutput race_attention_oracle(const AttnInputs& inp, const SketchConfig& cfg) {
    cfg.validate();
    inp.validate();
    const std::size_t n = inp.length();
    if (n > kOracleMaxLength) {
        throw std::invalid_argument("race_attention_oracle: N must be <= " + std::to_string(kOracleMaxLength));
    }
    const Matrix qn = cfg.normalize ? row_normalize(inp.q) : inp.q;
    const Matrix kn = cfg.normalize ? row_normalize(inp.k) : inp.k;
    const auto tables = sample_tables(cfg, inp.key_dim());

    std::vector<FeatureRows> fq, fk;
    for (const HashTable& table : tables) {
        fq.push_back(scalar_features(table, qn, cfg.beta));
        fk.push_back(scalar_features(table, kn, cfg.beta));
    }
    if (!cfg.causal) return scalar_noncausal(fq, fk, inp.v, n);

    // Causal row t is the last row of the non-causal estimate on rows 0..t.
    RaceOutput res{Matrix(n, inp.value_dim()), std::vector<double>(n, 0.0), {}};
    for (std::size_t t = 0; t < n; ++t) {
        const RaceOutput prefix = scalar_noncausal(fq, fk, inp.v, t + 1);
        res.den[t] = prefix.den[t];
        for (std::size_t c = 0; c < inp.value_dim(); ++c) res.out(t, c) = prefix.out(t, c);
        if (!(prefix.den[t] > kDegenerateDen)) res.degenerate_rows.push_back(t);
    }
    return res;
}

}  // namespace race
