#include "race/race_attention.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "kernels.hpp"
#include "parallel.hpp"
#include "race_common.hpp"

namespace race {

namespace {

using detail::TableStats;

template <typename T>
void race_noncausal(const BasicAttnInputs<T>& inp, const SketchConfig& cfg,
                    const std::vector<HashTable>& tables, BasicRaceOutput<T>& res) {
    const std::size_t n = inp.length();
    const std::size_t d = inp.key_dim();
    const std::size_t dv = inp.value_dim();
    const std::size_t r_count = cfg.buckets();
    const std::size_t n_tables = tables.size();

    std::vector<TableStats> stats(n_tables);
    detail::parallel_for(n_tables, cfg.workers, [&](std::size_t tau) {
        stats[tau] = detail::key_stats(inp.k, inp.v, tables[tau], cfg);
    });

    const double inv_tables = 1.0 / static_cast<double>(n_tables);
    detail::parallel_for(detail::block_count(n, cfg.block_rows), cfg.workers, [&](std::size_t b) {
        const auto blk = detail::row_block(b, n, cfg.block_rows);
        detail::FeatureScratch s(d, cfg.P);
        std::vector<double> phi(r_count), num(dv);
        for (std::size_t i = blk.begin; i < blk.end; ++i) {
            detail::load_row(inp.q.row(i), cfg.normalize, s);
            std::fill(num.begin(), num.end(), 0.0);
            double den = 0.0;
            for (std::size_t tau = 0; tau < n_tables; ++tau) {
                detail::feature_of_loaded(tables[tau], cfg.beta, s, phi);
                const TableStats& st = stats[tau];
                for (std::size_t r = 0; r < r_count; ++r) {
                    den += phi[r] * st.mass[r];
                    detail::axpy(phi[r], st.values.row(r).data(), num.data(), dv);
                }
            }
            den *= inv_tables;
            for (double& x : num) x *= inv_tables;
            res.den[i] = den;
            detail::write_ratio<T>(num, den, res.out.row(i));
        }
    });
}

template <typename T>
void race_causal(const BasicAttnInputs<T>& inp, const SketchConfig& cfg,
                 const std::vector<HashTable>& tables, BasicRaceOutput<T>& res) {
    const std::size_t n = inp.length();
    const std::size_t d = inp.key_dim();
    const std::size_t dv = inp.value_dim();
    const std::size_t r_count = cfg.buckets();
    const std::size_t n_tables = tables.size();
    const std::size_t blk_rows = std::min(cfg.block_rows, std::max<std::size_t>(n, 1));

    // Running prefix statistics, one private set per table.
    std::vector<TableStats> cum(n_tables, TableStats{std::vector<double>(r_count, 0.0), Matrix(r_count, dv)});
    // Per-table num/den for the current block, reduced in table order.
    std::vector<Matrix> num_buf(n_tables, Matrix(blk_rows, dv));
    std::vector<std::vector<double>> den_buf(n_tables, std::vector<double>(blk_rows));

    const double inv_tables = 1.0 / static_cast<double>(n_tables);
    for (std::size_t b = 0; b < detail::block_count(n, blk_rows); ++b) {
        const auto blk = detail::row_block(b, n, blk_rows);
        detail::parallel_for(n_tables, cfg.workers, [&](std::size_t tau) {
            TableStats& st = cum[tau];
            detail::FeatureScratch s(d, cfg.P);
            std::vector<double> phi(r_count);
            for (std::size_t t = blk.begin; t < blk.end; ++t) {
                detail::load_row(inp.k.row(t), cfg.normalize, s);
                detail::feature_of_loaded(tables[tau], cfg.beta, s, phi);
                const T* vt = inp.v.row(t).data();
                for (std::size_t r = 0; r < r_count; ++r) {
                    st.mass[r] += phi[r];
                    detail::axpy(phi[r], vt, st.values.row(r).data(), dv);
                }
                detail::load_row(inp.q.row(t), cfg.normalize, s);
                detail::feature_of_loaded(tables[tau], cfg.beta, s, phi);
                auto num = num_buf[tau].row(t - blk.begin);
                std::fill(num.begin(), num.end(), 0.0);
                double den = 0.0;
                for (std::size_t r = 0; r < r_count; ++r) {
                    den += phi[r] * st.mass[r];
                    detail::axpy(phi[r], st.values.row(r).data(), num.data(), dv);
                }
                den_buf[tau][t - blk.begin] = den;
            }
        });
        std::vector<double> num(dv);
        for (std::size_t t = blk.begin; t < blk.end; ++t) {
            std::fill(num.begin(), num.end(), 0.0);
            double den = 0.0;
            for (std::size_t tau = 0; tau < n_tables; ++tau) {
                den += den_buf[tau][t - blk.begin];
                const auto src = num_buf[tau].row(t - blk.begin);
                for (std::size_t c = 0; c < dv; ++c) num[c] += src[c];
            }
            den *= inv_tables;
            for (double& x : num) x *= inv_tables;
            res.den[t] = den;
            detail::write_ratio<T>(num, den, res.out.row(t));
        }
    }
}

}  // namespace

std::vector<HashTable> sample_tables(const SketchConfig& cfg, std::size_t d) {
    cfg.validate();
    std::vector<HashTable> tables;
    tables.reserve(cfg.tables());
    for (std::size_t m = 0; m < cfg.M; ++m) {
        for (std::size_t l = 0; l < cfg.L; ++l) {
            SeededRng rng = derive_table_rng(cfg.seed, static_cast<std::uint32_t>(m), static_cast<std::uint32_t>(l));
            tables.push_back(HashTable::sample(rng, cfg.P, d));
        }
    }
    return tables;
}

template <typename T>
BasicRaceOutput<T> race_attention(const BasicAttnInputs<T>& inp, const SketchConfig& cfg) {
    cfg.validate();
    inp.validate();
    const std::size_t n = inp.length();
    BasicRaceOutput<T> res{BasicMatrix<T>(n, inp.value_dim()), std::vector<double>(n, 0.0), {}};
    if (n == 0) return res;
    const auto tables = sample_tables(cfg, inp.key_dim());
    if (cfg.causal) {
        race_causal(inp, cfg, tables, res);
    } else {
        race_noncausal(inp, cfg, tables, res);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(res.den[i] > kDegenerateDen)) res.degenerate_rows.push_back(i);
    }
    return res;
}

Matrix race_kernel(const Matrix& q, const Matrix& k, const SketchConfig& cfg) {
    cfg.validate();
    if (q.cols() != k.cols()) throw std::invalid_argument("race_kernel: dimension mismatch");
    if (q.rows() > kKernelMaxLength || k.rows() > kKernelMaxLength) {
        throw std::invalid_argument("race_kernel: test-scale only, N <= " + std::to_string(kKernelMaxLength));
    }
    const Matrix qn = cfg.normalize ? row_normalize(q) : q;
    const Matrix kn = cfg.normalize ? row_normalize(k) : k;
    const auto tables = sample_tables(cfg, q.cols());
    Matrix s(q.rows(), k.rows());
    for (const HashTable& table : tables) {
        const FeatureMatrix fq = soft_features(qn, table, cfg.beta);
        const FeatureMatrix fk = soft_features(kn, table, cfg.beta);
        for (std::size_t i = 0; i < q.rows(); ++i) {
            for (std::size_t j = 0; j < k.rows(); ++j) {
                s(i, j) += detail::dot(fq.row(i).data(), fk.row(j).data(), fq.buckets());
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(tables.size());
    for (double& x : s.data()) x *= inv;
    return s;
}

AttentionOutput hard_race_attention(const AttnInputs& inp, const SketchConfig& cfg) {
    cfg.validate();
    inp.validate();
    const std::size_t n = inp.length();
    const std::size_t dv = inp.value_dim();
    const std::size_t r_count = cfg.buckets();
    const auto tables = sample_tables(cfg, inp.key_dim());
    const Matrix qn = cfg.normalize ? row_normalize(inp.q) : inp.q;
    const Matrix kn = cfg.normalize ? row_normalize(inp.k) : inp.k;

    Matrix num(n, dv);
    std::vector<double> den(n, 0.0);
    for (const HashTable& table : tables) {
        const auto hq = hard_hash(qn, table);
        const auto hk = hard_hash(kn, table);
        std::vector<double> count(r_count, 0.0);
        Matrix sums(r_count, dv);
        if (cfg.causal) {
            for (std::size_t t = 0; t < n; ++t) {
                count[hk[t]] += 1.0;
                detail::axpy(1.0, inp.v.row(t).data(), sums.row(hk[t]).data(), dv);
                den[t] += count[hq[t]];
                detail::axpy(1.0, sums.row(hq[t]).data(), num.row(t).data(), dv);
            }
        } else {
            for (std::size_t j = 0; j < n; ++j) {
                count[hk[j]] += 1.0;
                detail::axpy(1.0, inp.v.row(j).data(), sums.row(hk[j]).data(), dv);
            }
            for (std::size_t i = 0; i < n; ++i) {
                den[i] += count[hq[i]];
                detail::axpy(1.0, sums.row(hq[i]).data(), num.row(i).data(), dv);
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(tables.size());
    AttentionOutput res{Matrix(n, dv), std::vector<double>(n), {}};
    for (std::size_t i = 0; i < n; ++i) {
        res.den[i] = den[i] * inv;
        auto row = num.row(i);
        for (double& x : row) x *= inv;
        detail::write_ratio<double>(row, res.den[i], res.out.row(i));
        if (!(res.den[i] > kDegenerateDen)) res.degenerate_rows.push_back(i);
    }
    return res;
}

template BasicRaceOutput<float> race_attention(const BasicAttnInputs<float>&, const SketchConfig&);
template BasicRaceOutput<double> race_attention(const BasicAttnInputs<double>&, const SketchConfig&);

}  // namespace race
