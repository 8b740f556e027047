#include "vsr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "json.hpp"

using ordered_json = nlohmann::ordered_json;

namespace vsr {

InferResult infer_tile(const Tensor& coarse, const PatchAutoencoder& source_ae,
                       const PatchAutoencoder& target_ae, const UViT& model,
                       const DatasetStats& stats, const InferOptions& opt) {
    opt.integrator.validate();
    if (!source_ae.frozen() || !target_ae.frozen())
        throw UsageError("infer: both autoencoders must be frozen");

    Tensor cond = source_ae.encode(normalize_source(coarse, stats));
    const size_t cs = cond.dim(0), g = cond.dim(1);
    const size_t ct = target_ae.cfg.latent_channels;
    if (target_ae.cfg.latent_grid() != g)
        throw DimensionError("infer: latent grids disagree, source " + std::to_string(g) +
                             " vs target " + std::to_string(target_ae.cfg.latent_grid()));
    if (model.cfg.grid != g || model.cfg.state_channels != cs + ct)
        throw DimensionError("infer: velocity model expects grid " + std::to_string(model.cfg.grid) +
                             " with " + std::to_string(model.cfg.state_channels) +
                             " state channels, autoencoders produce grid " + std::to_string(g) +
                             " with " + std::to_string(cs + ct));

    Tensor noise = conditioned_noise(cond, ct);
    Tensor z0 = concat(cond, noise, 0);
    const Shape state_shape = z0.shape();
    const size_t n = z0.numel();
    const size_t cond_n = cs * g * g;

    VelocityFn<float> f = [&](const std::vector<float>& zv, float t, std::vector<float>& out) {
        Tensor state = Tensor::zeros(state_shape);
        std::copy(zv.begin(), zv.end(), state.data());
        // Adaptive stepping can land a hair outside [0,1] in float; the model
        // rejects such times, so nudge back onto the boundary.
        const float tc = std::min(1.0f, std::max(0.0f, t));
        Tensor v = model.forward(state, tc);
        std::copy(v.data(), v.data() + n, out.begin());
        if (opt.clamp_conditioning) std::fill(out.begin(), out.begin() + cond_n, 0.0f);
    };

    std::vector<float> z0v(z0.data(), z0.data() + n);
    IntegrateResult<float> res = integrate<float>(f, std::move(z0v), opt.integrator);

    double drift = 0.0;
    for (size_t i = 0; i < cond_n; ++i)
        drift = std::max(drift, std::fabs(double(res.z[i]) - double(z0.data()[i])));
    res.rec.cond_drift = drift;

    Tensor z1t = Tensor::zeros({ct, g, g});
    std::copy(res.z.begin() + ptrdiff_t(cond_n), res.z.end(), z1t.data());
    Tensor chm = denormalize_target(target_ae.decode(z1t), stats);
    return {std::move(chm), std::move(res.rec)};
}

namespace {

// Matches the binning rule of height_binned_residuals: [e_i, e_{i+1}) with
// the last bin right-closed; values outside [e_0, e_K] fall in no bin.
long bin_of(double y, const std::vector<double>& edges) {
    if (y < edges.front() || y > edges.back()) return -1;
    if (y == edges.back()) return long(edges.size()) - 2;
    return long(std::upper_bound(edges.begin(), edges.end(), y) - edges.begin()) - 1;
}

TileMetrics tile_metrics_or_empty(const Tensor& ref, const Tensor& pred,
                                  const MetricsConfig& cfg) {
    try {
        return compute_tile_metrics(ref, pred, cfg);
    } catch (const UndefinedMetricError&) {
        TileMetrics tm;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        tm.mae = tm.me = tm.ee = nan;
        return tm;
    }
}

struct PoolAcc {
    double sum_abs = 0, sum_diff = 0, sum_edge = 0;
    double num = 0, den = 0;
    bool den_any = false;
    size_t n = 0;
};

void pool_tile(PoolAcc& a, const Tensor& ref, const Tensor& pred, const TileMetrics& row,
               const MetricsConfig& cfg) {
    if (row.n == 0) return;
    Mask mask = make_mask(ref, cfg.mask_threshold);
    const float* r = ref.data();
    const float* p = pred.data();
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const double d = double(p[i]) - double(r[i]);
        a.sum_abs += std::fabs(d);
        a.sum_diff += d;
    }
    a.sum_edge += row.ee * double(row.n);
    BlockR2Terms t = block_r2_terms(ref, pred, mask, cfg.block);
    if (t.defined) {
        a.num += t.num;
        a.den += t.den;
        a.den_any = true;
    }
    a.n += row.n;
}

PooledMetrics finalize_pool(const PoolAcc& a, const char* what) {
    if (a.n == 0)
        throw UndefinedMetricError(std::string("evaluation: no masked pixels in any tile at ") +
                                   what + " resolution");
    PooledMetrics out;
    out.n = a.n;
    out.mae = a.sum_abs / double(a.n);
    out.me = a.sum_diff / double(a.n);
    out.ee = a.sum_edge / double(a.n);
    if (a.den_any && a.den > 0.0) {
        out.r2 = 1.0 - a.num / a.den;
        out.r2_defined = true;
    }
    return out;
}

std::string join_ids(const std::vector<uint32_t>& ids) {
    std::string s;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(ids[i]);
    }
    return s;
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

EvalReport evaluate_pairs(const std::vector<IdField>& refs, const std::vector<IdField>& preds,
                          const MetricsConfig& cfg) {
    if (cfg.bin_edges.size() < 2) throw ConfigError("need at least two bin edges");
    for (size_t i = 0; i + 1 < cfg.bin_edges.size(); ++i)
        if (!(cfg.bin_edges[i] < cfg.bin_edges[i + 1]))
            throw ConfigError("bin edges must be strictly increasing");
    for (double q : cfg.quantiles)
        if (q < 0.0 || q > 1.0) throw ConfigError("quantile levels must be in [0, 1]");

    std::map<uint32_t, const Tensor*> rmap, pmap;
    for (const auto& [id, t] : refs)
        if (!rmap.emplace(id, &t).second)
            throw DataError("evaluation: duplicate reference tile id " + std::to_string(id));
    for (const auto& [id, t] : preds)
        if (!pmap.emplace(id, &t).second)
            throw DataError("evaluation: duplicate prediction tile id " + std::to_string(id));
    std::vector<uint32_t> ref_only, pred_only;
    for (const auto& [id, t] : rmap) {
        (void)t;
        if (!pmap.count(id)) ref_only.push_back(id);
    }
    for (const auto& [id, t] : pmap) {
        (void)t;
        if (!rmap.count(id)) pred_only.push_back(id);
    }
    if (!ref_only.empty() || !pred_only.empty()) {
        std::string msg = "evaluation: tiles missing a counterpart:";
        if (!ref_only.empty()) msg += " reference-only [" + join_ids(ref_only) + "]";
        if (!pred_only.empty()) msg += " prediction-only [" + join_ids(pred_only) + "]";
        throw DataError(msg);
    }
    if (rmap.empty()) throw DataError("evaluation: no tiles given");

    const size_t nbins = cfg.bin_edges.size() - 1;
    EvalReport rep;
    rep.ref_hist.assign(nbins, 0);
    rep.pred_hist.assign(nbins, 0);
    std::vector<std::vector<double>> pooled_res(nbins);
    PoolAcc nat, agg;

    for (const auto& [id, rt] : rmap) {
        const Tensor& ref = *rt;
        const Tensor& pred = *pmap.at(id);

        TileReportRow row;
        row.id = id;
        row.native = tile_metrics_or_empty(ref, pred, cfg);
        HeightField ra = aggregate_to_resolution(HeightField{ref, 1.0}, cfg.agg_factor);
        HeightField pa = aggregate_to_resolution(HeightField{pred, 1.0}, cfg.agg_factor);
        row.aggregated = tile_metrics_or_empty(ra.values, pa.values, cfg);

        pool_tile(nat, ref, pred, row.native, cfg);
        pool_tile(agg, ra.values, pa.values, row.aggregated, cfg);

        Mask mask = make_mask(ref, cfg.mask_threshold);
        const float* r = ref.data();
        const float* p = pred.data();
        for (size_t i = 0; i < mask.size(); ++i) {
            if (!mask[i]) continue;
            const long b = bin_of(double(r[i]), cfg.bin_edges);
            if (b >= 0) pooled_res[size_t(b)].push_back(double(p[i]) - double(r[i]));
        }

        std::vector<size_t> rh = height_histogram(ref, cfg.bin_edges);
        std::vector<size_t> ph = height_histogram(pred, cfg.bin_edges);
        for (size_t b = 0; b < nbins; ++b) {
            rep.ref_hist[b] += rh[b];
            rep.pred_hist[b] += ph[b];
        }
        rep.hist_total += ref.numel();

        rep.rows.push_back(std::move(row));
    }

    rep.pooled_native = finalize_pool(nat, "native");
    rep.pooled_aggregated = finalize_pool(agg, "aggregated");

    rep.binned.resize(nbins);
    for (size_t b = 0; b < nbins; ++b) {
        HeightBinRow& hb = rep.binned[b];
        hb.lo = cfg.bin_edges[b];
        hb.hi = cfg.bin_edges[b + 1];
        hb.count = pooled_res[b].size();
        if (hb.count == 0) continue;
        std::sort(pooled_res[b].begin(), pooled_res[b].end());
        hb.quantiles.reserve(cfg.quantiles.size());
        for (double q : cfg.quantiles) hb.quantiles.push_back(quantile_sorted(pooled_res[b], q));
    }
    return rep;
}

std::string eval_report_csv(const EvalReport& rep) {
    std::string out = "id,n,mae,me,ee,r2,n_agg,mae_agg,me_agg,ee_agg,r2_agg\n";
    for (const auto& row : rep.rows) {
        out += std::to_string(row.id) + "," + std::to_string(row.native.n) + "," +
               fmt_g(row.native.mae) + "," + fmt_g(row.native.me) + "," + fmt_g(row.native.ee) +
               "," + (row.native.r2_defined ? fmt_g(row.native.r2) : std::string()) + "," +
               std::to_string(row.aggregated.n) + "," + fmt_g(row.aggregated.mae) + "," +
               fmt_g(row.aggregated.me) + "," + fmt_g(row.aggregated.ee) + "," +
               (row.aggregated.r2_defined ? fmt_g(row.aggregated.r2) : std::string()) + "\n";
    }
    return out;
}

namespace {

ordered_json pooled_json(const PooledMetrics& p) {
    ordered_json j;
    j["n"] = p.n;
    j["mae"] = p.mae;
    j["me"] = p.me;
    j["ee"] = p.ee;
    if (p.r2_defined)
        j["r2"] = p.r2;
    else
        j["r2"] = nullptr;
    return j;
}

}  // namespace

std::string eval_report_json(const EvalReport& rep, const MetricsConfig& cfg) {
    ordered_json j;
    j["tiles"] = rep.rows.size();
    j["pooled"]["native"] = pooled_json(rep.pooled_native);
    j["pooled"]["aggregated"] = pooled_json(rep.pooled_aggregated);
    ordered_json bins = ordered_json::array();
    for (const auto& hb : rep.binned) {
        ordered_json jb;
        jb["lo"] = hb.lo;
        jb["hi"] = hb.hi;
        jb["count"] = hb.count;
        if (hb.count == 0) {
            jb["quantiles"] = nullptr;
        } else {
            ordered_json qs = ordered_json::array();
            for (double v : hb.quantiles) qs.push_back(v);
            jb["quantiles"] = std::move(qs);
        }
        bins.push_back(std::move(jb));
    }
    j["quantile_levels"] = cfg.quantiles;
    j["height_bins"] = std::move(bins);
    j["histogram"]["edges"] = cfg.bin_edges;
    j["histogram"]["ref_counts"] = rep.ref_hist;
    j["histogram"]["pred_counts"] = rep.pred_hist;
    j["histogram"]["total_pixels"] = rep.hist_total;
    return j.dump(2) + "\n";
}

}  // namespace vsr
