#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vsr/autoencoder.hpp"
#include "vsr/flow.hpp"
#include "vsr/metrics.hpp"
#include "vsr/ode.hpp"
#include "vsr/scene.hpp"
#include "vsr/uvit.hpp"

namespace vsr {

struct InferOptions {
    IntegratorConfig integrator;      // fixed-grid dopri5, 100 steps by default
    bool clamp_conditioning = false;  // hold the conditioning slice exactly fixed
};

struct InferResult {
    Tensor chm;            // [1, H, W] meters, clamped to [0, stats.chm_max]
    TrajectoryRecord rec;  // cond_drift = max |z1.cond - z0.cond| (exactly 0 when clamped)
};

// Deterministic end-to-end inference for one raw coarse tile: standardize,
// encode, stack input-conditioned noise, integrate the learned velocity field
// from t=0 to t=1, decode the transported slice, denormalize with clamping.
InferResult infer_tile(const Tensor& coarse, const PatchAutoencoder& source_ae,
                       const PatchAutoencoder& target_ae, const UViT& model,
                       const DatasetStats& stats, const InferOptions& opt = {});

using IdField = std::pair<uint32_t, Tensor>;  // tile id, [H, W] field in meters

struct TileReportRow {
    uint32_t id = 0;
    TileMetrics native;
    TileMetrics aggregated;  // block-mean downsampled by cfg.agg_factor
};

struct PooledMetrics {
    size_t n = 0;  // masked pixels across all tiles
    double mae = 0, me = 0, ee = 0;
    double r2 = 0;
    bool r2_defined = false;
};

struct EvalReport {
    std::vector<TileReportRow> rows;  // ordered by tile id
    PooledMetrics pooled_native;
    PooledMetrics pooled_aggregated;
    std::vector<HeightBinRow> binned;         // residual quantiles per height bin, pooled
    std::vector<size_t> ref_hist, pred_hist;  // height histograms over all pixels, pooled
    size_t hist_total = 0;                    // pixels per histogram
};

// Per-tile metrics plus pixel-pooled aggregates at native resolution and at
// cfg.agg_factor-times-coarser resolution. Sides are aligned by tile id; any
// id present on one side only is a pairing error listing the offenders.
EvalReport evaluate_pairs(const std::vector<IdField>& refs, const std::vector<IdField>& preds,
                          const MetricsConfig& cfg);

// Per-tile rows as CSV (native + aggregated columns).
std::string eval_report_csv(const EvalReport& rep);

// Pooled aggregates, bins, and histograms as a JSON document.
std::string eval_report_json(const EvalReport& rep, const MetricsConfig& cfg);

}  // namespace vsr
