#include "race/race_backward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "kernels.hpp"
#include "parallel.hpp"
#include "race_common.hpp"

namespace race {

namespace {

using detail::TableStats;

// Cotangents of the averaged Num_i and Den_i given dO_i:
//   dNum = dO / Den,  dDen = -(dO . O) / Den.
// Returns false (and leaves outputs untouched) for degenerate rows.
template <typename T>
bool ratio_cotangent(const BasicRaceOutput<T>& fwd, const BasicMatrix<T>& d_out, std::size_t i,
                     std::span<double> dnum, double& dden) {
    const double den = fwd.den[i];
    if (!(den > kDegenerateDen)) return false;
    const auto g = d_out.row(i);
    const auto o = fwd.out.row(i);
    double go = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
        dnum[c] = static_cast<double>(g[c]) / den;
        go += static_cast<double>(g[c]) * static_cast<double>(o[c]);
    }
    dden = -go / den;
    return true;
}

template <typename T>
void vjp_noncausal(const BasicAttnInputs<T>& inp, const SketchConfig& cfg,
                   const std::vector<HashTable>& tables, const BasicRaceOutput<T>& fwd,
                   const BasicMatrix<T>& d_out, BasicRaceGradients<T>& grads) {
    const std::size_t n = inp.length();
    const std::size_t d = inp.key_dim();
    const std::size_t dv = inp.value_dim();
    const std::size_t r_count = cfg.buckets();
    const std::size_t n_tables = tables.size();
    const double inv_tables = 1.0 / static_cast<double>(n_tables);

    std::vector<TableStats> stats(n_tables);
    detail::parallel_for(n_tables, cfg.workers, [&](std::size_t tau) {
        stats[tau] = detail::key_stats(inp.k, inp.v, tables[tau], cfg);
    });

    // Queries: dQ, plus per-block partial cotangents of A and B.
    const std::size_t n_blocks = detail::block_count(n, cfg.block_rows);
    std::vector<std::vector<TableStats>> partial(n_blocks);
    detail::parallel_for(n_blocks, cfg.workers, [&](std::size_t b) {
        const auto blk = detail::row_block(b, n, cfg.block_rows);
        auto& dstats = partial[b];
        dstats.assign(n_tables, TableStats{std::vector<double>(r_count, 0.0), Matrix(r_count, dv)});
        detail::FeatureScratch s(d, cfg.P);
        std::vector<double> phi(r_count), dphi(r_count), dnum(dv), dxh(d);
        for (std::size_t i = blk.begin; i < blk.end; ++i) {
            double dden = 0.0;
            const double norm = detail::load_row(inp.q.row(i), cfg.normalize, s);
            std::fill(dxh.begin(), dxh.end(), 0.0);
            if (ratio_cotangent(fwd, d_out, i, dnum, dden)) {
                for (std::size_t tau = 0; tau < n_tables; ++tau) {
                    detail::feature_of_loaded(tables[tau], cfg.beta, s, phi);
                    const TableStats& st = stats[tau];
                    TableStats& ds = dstats[tau];
                    for (std::size_t r = 0; r < r_count; ++r) {
                        dphi[r] = inv_tables *
                                  (detail::dot(st.values.row(r).data(), dnum.data(), dv) + st.mass[r] * dden);
                        const double w = inv_tables * phi[r];
                        ds.mass[r] += w * dden;
                        detail::axpy(w, dnum.data(), ds.values.row(r).data(), dv);
                    }
                    detail::feature_pullback(tables[tau], cfg.beta, s.u, phi, dphi, dxh);
                }
            }
            detail::normalize_pullback(cfg.normalize, s.x, norm, dxh, grads.dq.row(i));
        }
    });

    std::vector<TableStats> dstats(n_tables, TableStats{std::vector<double>(r_count, 0.0), Matrix(r_count, dv)});
    for (std::size_t b = 0; b < n_blocks; ++b) {
        for (std::size_t tau = 0; tau < n_tables; ++tau) {
            const TableStats& src = partial[b][tau];
            for (std::size_t r = 0; r < r_count; ++r) dstats[tau].mass[r] += src.mass[r];
            auto dst = dstats[tau].values.data();
            auto from = src.values.data();
            for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += from[e];
        }
    }
    partial.clear();

    // Keys: dV_j = sum_tables dB^T phi(k_j); dphi(k_j)_r = dB_r . V_j + dA_r.
    detail::parallel_for(n_blocks, cfg.workers, [&](std::size_t b) {
        const auto blk = detail::row_block(b, n, cfg.block_rows);
        detail::FeatureScratch s(d, cfg.P);
        std::vector<double> phi(r_count), dphi(r_count), dvj(dv), dxh(d);
        for (std::size_t j = blk.begin; j < blk.end; ++j) {
            const double norm = detail::load_row(inp.k.row(j), cfg.normalize, s);
            const T* vj = inp.v.row(j).data();
            std::fill(dxh.begin(), dxh.end(), 0.0);
            std::fill(dvj.begin(), dvj.end(), 0.0);
            for (std::size_t tau = 0; tau < n_tables; ++tau) {
                detail::feature_of_loaded(tables[tau], cfg.beta, s, phi);
                const TableStats& ds = dstats[tau];
                for (std::size_t r = 0; r < r_count; ++r) {
                    const double* dbr = ds.values.row(r).data();
                    dphi[r] = detail::dot(dbr, vj, dv) + ds.mass[r];
                    detail::axpy(phi[r], dbr, dvj.data(), dv);
                }
                detail::feature_pullback(tables[tau], cfg.beta, s.u, phi, dphi, dxh);
            }
            auto dvr = grads.dv.row(j);
            for (std::size_t c = 0; c < dv; ++c) dvr[c] = static_cast<T>(dvj[c]);
            detail::normalize_pullback(cfg.normalize, s.x, norm, dxh, grads.dk.row(j));
        }
    });
}

template <typename T>
void vjp_causal(const BasicAttnInputs<T>& inp, const SketchConfig& cfg,
                const std::vector<HashTable>& tables, const BasicRaceOutput<T>& fwd,
                const BasicMatrix<T>& d_out, BasicRaceGradients<T>& grads) {
    const std::size_t n = inp.length();
    const std::size_t d = inp.key_dim();
    const std::size_t dv = inp.value_dim();
    const std::size_t r_count = cfg.buckets();
    const std::size_t n_tables = tables.size();
    const double inv_tables = 1.0 / static_cast<double>(n_tables);
    const std::size_t blk_rows = std::min(cfg.block_rows, n);
    const std::size_t n_blocks = detail::block_count(n, blk_rows);
    const auto zero_stats = [&] {
        return TableStats{std::vector<double>(r_count, 0.0), Matrix(r_count, dv)};
    };

    std::vector<Matrix> dxh_buf(n_tables, Matrix(blk_rows, d));
    std::vector<Matrix> dv_buf(n_tables, Matrix(blk_rows, dv));

    // Prefix scan: query t reads the running statistics of keys 0..t.
    std::vector<TableStats> cum(n_tables, zero_stats());
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const auto blk = detail::row_block(b, n, blk_rows);
        detail::parallel_for(n_tables, cfg.workers, [&](std::size_t tau) {
            TableStats& st = cum[tau];
            detail::FeatureScratch s(d, cfg.P);
            std::vector<double> phi(r_count), dphi(r_count), dnum(dv);
            for (std::size_t t = blk.begin; t < blk.end; ++t) {
                detail::load_row(inp.k.row(t), cfg.normalize, s);
                detail::feature_of_loaded(tables[tau], cfg.beta, s, phi);
                const T* vt = inp.v.row(t).data();
                for (std::size_t r = 0; r < r_count; ++r) {
                    st.mass[r] += phi[r];
                    detail::axpy(phi[r], vt, st.values.row(r).data(), dv);
                }
                auto dxh = dxh_buf[tau].row(t - blk.begin);
                std::fill(dxh.begin(), dxh.end(), 0.0);
                double dden = 0.0;
                if (!ratio_cotangent(fwd, d_out, t, dnum, dden)) continue;
                detail::load_row(inp.q.row(t), cfg.normalize, s);
                detail::feature_of_loaded(tables[tau], cfg.beta, s, phi);
                for (std::size_t r = 0; r < r_count; ++r) {
                    dphi[r] = inv_tables *
                              (detail::dot(st.values.row(r).data(), dnum.data(), dv) + st.mass[r] * dden);
                }
                detail::feature_pullback(tables[tau], cfg.beta, s.u, phi, dphi, dxh);
            }
        });
        detail::FeatureScratch s(d, cfg.P);
        std::vector<double> dxh(d);
        for (std::size_t t = blk.begin; t < blk.end; ++t) {
            std::fill(dxh.begin(), dxh.end(), 0.0);
            for (std::size_t tau = 0; tau < n_tables; ++tau) {
                const auto src = dxh_buf[tau].row(t - blk.begin);
                for (std::size_t c = 0; c < d; ++c) dxh[c] += src[c];
            }
            const double norm = detail::load_row(inp.q.row(t), cfg.normalize, s);
            detail::normalize_pullback(cfg.normalize, s.x, norm, dxh, grads.dq.row(t));
        }
    }
    cum.clear();

    // Suffix scan: key t receives the cotangent statistics of queries t..N-1.
    std::vector<TableStats> suffix(n_tables, zero_stats());
    for (std::size_t b = n_blocks; b-- > 0;) {
        const auto blk = detail::row_block(b, n, blk_rows);
        detail::parallel_for(n_tables, cfg.workers, [&](std::size_t tau) {
            TableStats& sx = suffix[tau];
            detail::FeatureScratch s(d, cfg.P);
            std::vector<double> phi(r_count), dphi(r_count), dnum(dv);
            for (std::size_t t = blk.end; t-- > blk.begin;) {
                double dden = 0.0;
                if (ratio_cotangent(fwd, d_out, t, dnum, dden)) {
                    detail::load_row(inp.q.row(t), cfg.normalize, s);
                    detail::feature_of_loaded(tables[tau], cfg.beta, s, phi);
                    for (std::size_t r = 0; r < r_count; ++r) {
                        const double w = inv_tables * phi[r];
                        sx.mass[r] += w * dden;
                        detail::axpy(w, dnum.data(), sx.values.row(r).data(), dv);
                    }
                }
                detail::load_row(inp.k.row(t), cfg.normalize, s);
                detail::feature_of_loaded(tables[tau], cfg.beta, s, phi);
                const T* vt = inp.v.row(t).data();
                auto dvt = dv_buf[tau].row(t - blk.begin);
                auto dxh = dxh_buf[tau].row(t - blk.begin);
                std::fill(dvt.begin(), dvt.end(), 0.0);
                std::fill(dxh.begin(), dxh.end(), 0.0);
                for (std::size_t r = 0; r < r_count; ++r) {
                    const double* dbr = sx.values.row(r).data();
                    dphi[r] = detail::dot(dbr, vt, dv) + sx.mass[r];
                    detail::axpy(phi[r], dbr, dvt.data(), dv);
                }
                detail::feature_pullback(tables[tau], cfg.beta, s.u, phi, dphi, dxh);
            }
        });
        detail::FeatureScratch s(d, cfg.P);
        std::vector<double> dxh(d), dvt(dv);
        for (std::size_t t = blk.begin; t < blk.end; ++t) {
            std::fill(dxh.begin(), dxh.end(), 0.0);
            std::fill(dvt.begin(), dvt.end(), 0.0);
            for (std::size_t tau = 0; tau < n_tables; ++tau) {
                const auto sx = dxh_buf[tau].row(t - blk.begin);
                const auto sv = dv_buf[tau].row(t - blk.begin);
                for (std::size_t c = 0; c < d; ++c) dxh[c] += sx[c];
                for (std::size_t c = 0; c < dv; ++c) dvt[c] += sv[c];
            }
            auto dvr = grads.dv.row(t);
            for (std::size_t c = 0; c < dv; ++c) dvr[c] = static_cast<T>(dvt[c]);
            const double norm = detail::load_row(inp.k.row(t), cfg.normalize, s);
            detail::normalize_pullback(cfg.normalize, s.x, norm, dxh, grads.dk.row(t));
        }
    }
}

double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kRelErrorFloor});
}

// <dO, race_attention(inp)> evaluated in extended precision, so the central
// differences are limited by truncation rather than by forward roundoff.
// Same tables and the same map as the fast path: phi_r = prod_t sigma(2 beta u_t v_rt).
long double directional_loss(const AttnInputs& inp, const SketchConfig& cfg,
                             const std::vector<HashTable>& tables, const Matrix& d_out) {
    using ld = long double;
    const std::size_t n = inp.length();
    const std::size_t d = inp.key_dim();
    const std::size_t dv = inp.value_dim();
    const std::size_t r_count = cfg.buckets();

    const auto features = [&](const Matrix& x, const HashTable& table) {
        std::vector<ld> phi(n * r_count);
        std::vector<ld> xh(d), plus(cfg.P);
        for (std::size_t i = 0; i < n; ++i) {
            ld norm = 0.0L;
            for (std::size_t c = 0; c < d; ++c) norm += static_cast<ld>(x(i, c)) * x(i, c);
            norm = std::sqrt(norm);
            const bool scale = cfg.normalize && norm >= kZeroRowNorm;
            for (std::size_t c = 0; c < d; ++c) xh[c] = scale ? x(i, c) / norm : x(i, c);
            for (std::size_t t = 0; t < cfg.P; ++t) {
                ld z = 0.0L;
                for (std::size_t c = 0; c < d; ++c) z += table.projections()(t, c) * xh[c];
                plus[t] = 1.0L / (1.0L + std::exp(-2.0L * static_cast<ld>(cfg.beta) * std::tanh(z)));
            }
            for (std::size_t r = 0; r < r_count; ++r) {
                ld prob = 1.0L;
                for (std::size_t t = 0; t < cfg.P; ++t) prob *= ((r >> t) & 1U) ? 1.0L - plus[t] : plus[t];
                phi[i * r_count + r] = prob;
            }
        }
        return phi;
    };

    std::vector<ld> kern(n * n, 0.0L);
    for (const HashTable& table : tables) {
        const auto fq = features(inp.q, table);
        const auto fk = features(inp.k, table);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                ld s = 0.0L;
                for (std::size_t r = 0; r < r_count; ++r) s += fq[i * r_count + r] * fk[j * r_count + r];
                kern[i * n + j] += s;
            }
        }
    }
    const ld inv_tables = 1.0L / static_cast<ld>(tables.size());
    ld loss = 0.0L;
    std::vector<ld> num(dv);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(num.begin(), num.end(), 0.0L);
        ld den = 0.0L;
        const std::size_t visible = cfg.causal ? i + 1 : n;
        for (std::size_t j = 0; j < visible; ++j) {
            const ld s = kern[i * n + j] * inv_tables;
            den += s;
            for (std::size_t c = 0; c < dv; ++c) num[c] += s * inp.v(j, c);
        }
        if (!(den > kDegenerateDen)) continue;
        for (std::size_t c = 0; c < dv; ++c) loss += d_out(i, c) * (num[c] / den);
    }
    return loss;
}

}  // namespace

template <typename T>
BasicRaceGradients<T> race_attention_vjp(const BasicAttnInputs<T>& inp, const SketchConfig& cfg,
                                         const BasicMatrix<T>& d_out) {
    cfg.validate();
    inp.validate();
    const std::size_t n = inp.length();
    if (d_out.rows() != n || d_out.cols() != inp.value_dim()) {
        throw std::invalid_argument("race_attention_vjp: cotangent shape mismatch");
    }
    if (!d_out.all_finite()) throw std::invalid_argument("race_attention_vjp: non-finite cotangent");
    if (n == 0) {
        return {BasicMatrix<T>(0, inp.key_dim()), BasicMatrix<T>(0, inp.key_dim()), BasicMatrix<T>(0, inp.value_dim())};
    }
    return race_attention_vjp(inp, cfg, d_out, race_attention(inp, cfg));
}

template <typename T>
BasicRaceGradients<T> race_attention_vjp(const BasicAttnInputs<T>& inp, const SketchConfig& cfg,
                                         const BasicMatrix<T>& d_out, const BasicRaceOutput<T>& fwd) {
    cfg.validate();
    inp.validate();
    const std::size_t n = inp.length();
    if (d_out.rows() != n || d_out.cols() != inp.value_dim()) {
        throw std::invalid_argument("race_attention_vjp: cotangent shape mismatch");
    }
    if (fwd.out.rows() != n || fwd.out.cols() != inp.value_dim() || fwd.den.size() != n) {
        throw std::invalid_argument("race_attention_vjp: forward output shape mismatch");
    }
    BasicRaceGradients<T> grads{BasicMatrix<T>(n, inp.key_dim()), BasicMatrix<T>(n, inp.key_dim()),
                                BasicMatrix<T>(n, inp.value_dim())};
    if (n == 0) return grads;
    const auto tables = sample_tables(cfg, inp.key_dim());
    if (cfg.causal) {
        vjp_causal(inp, cfg, tables, fwd, d_out, grads);
    } else {
        vjp_noncausal(inp, cfg, tables, fwd, d_out, grads);
    }
    return grads;
}

std::string FiniteDiffReport::verdict() const {
    if (within_tolerance) return "pass";
    return high_curvature ? "flagged" : "fail";
}

FiniteDiffReport finite_diff_check(const AttnInputs& inp, const SketchConfig& cfg, std::size_t probes,
                                   double h, double tolerance) {
    cfg.validate();
    inp.validate();
    if (inp.length() > kGradCheckMaxLength) {
        throw std::invalid_argument("finite_diff_check: N must be <= " + std::to_string(kGradCheckMaxLength));
    }
    if (!(h >= 1e-7 && h <= 1e-3)) throw std::invalid_argument("finite_diff_check: h must be in [1e-7, 1e-3]");

    FiniteDiffReport rep;
    rep.probes = probes;
    rep.h = h;
    rep.tolerance = tolerance;
    rep.components = inp.q.size() + inp.k.size() + inp.v.size();
    rep.high_curvature = cfg.beta > kSmoothBetaLimit;

    SeededRng rng(splitmix64(cfg.seed ^ 0x6a09e667f3bcc908ULL));
    const auto tables = sample_tables(cfg, inp.key_dim());
    AttnInputs work = inp;
    for (std::size_t p = 0; p < probes; ++p) {
        Matrix d_out(inp.length(), inp.value_dim());
        for (double& x : d_out.data()) x = rng.normal();
        const RaceGradients grads = race_attention_vjp(inp, cfg, d_out);

        const auto probe = [&](Matrix& target, const Matrix& grad, const char* name) {
            for (std::size_t i = 0; i < target.rows(); ++i) {
                for (std::size_t c = 0; c < target.cols(); ++c) {
                    const double saved = target(i, c);
                    const double hi = saved + h;
                    const double lo = saved - h;
                    target(i, c) = hi;
                    const long double up = directional_loss(work, cfg, tables, d_out);
                    target(i, c) = lo;
                    const long double down = directional_loss(work, cfg, tables, d_out);
                    target(i, c) = saved;
                    // Divide by the step actually taken after rounding hi and lo.
                    const double fd = static_cast<double>((up - down) / (static_cast<long double>(hi) - lo));
                    const double err = rel_error(grad(i, c), fd);
                    if (rep.worst.empty() || err > rep.max_rel_error) {
                        rep.max_rel_error = err;
                        rep.worst = std::string(name) + "[" + std::to_string(i) + "," + std::to_string(c) + "]";
                    }
                }
            }
        };
        probe(work.q, grads.dq, "dQ");
        probe(work.k, grads.dk, "dK");
        probe(work.v, grads.dv, "dV");
    }
    rep.within_tolerance = rep.max_rel_error <= tolerance;
    return rep;
}

template BasicRaceGradients<float> race_attention_vjp(const BasicAttnInputs<float>&, const SketchConfig&,
                                                      const BasicMatrix<float>&);
template BasicRaceGradients<double> race_attention_vjp(const BasicAttnInputs<double>&, const SketchConfig&,
                                                       const BasicMatrix<double>&);
template BasicRaceGradients<float> race_attention_vjp(const BasicAttnInputs<float>&, const SketchConfig&,
                                                      const BasicMatrix<float>&, const BasicRaceOutput<float>&);
template BasicRaceGradients<double> race_attention_vjp(const BasicAttnInputs<double>&, const SketchConfig&,
                                                       const BasicMatrix<double>&, const BasicRaceOutput<double>&);

}  // namespace race
