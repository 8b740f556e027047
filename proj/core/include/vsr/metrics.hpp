#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vsr/errors.hpp"
#include "vsr/tensor.hpp"

namespace vsr {

// Raised when a metric has no defined value on the given inputs (empty mask,
// all-degenerate blocks, ...).
struct UndefinedMetricError : NumericError {
    explicit UndefinedMetricError(const std::string& m) : NumericError(m) {}
};

// Order-canonical summation: sorts by (|v|, v) before accumulating, so the
// result depends only on the multiset of contributions. This is what makes
// the dihedral-invariance and antisymmetry contracts hold bit-exactly.
double canonical_sum(std::vector<double> vals);

using Mask = std::vector<uint8_t>;

// mask(i) = ref(i) >= threshold; derived from the reference only.
Mask make_mask(const Tensor& ref, float threshold);
size_t mask_count(const Mask& m);

struct HeightField {
    Tensor values;       // [H, W] meters
    double resolution;   // meters per pixel
};

// Mean |y - yhat| over masked pixels.
double mae(const Tensor& ref, const Tensor& pred, const Mask& mask);
// Mean (yhat - y) over masked pixels; negative means underestimation.
double mean_error(const Tensor& ref, const Tensor& pred, const Mask& mask);

// 1 - sum_b sum_{i in b} (y_i - yhat_i)^2 / sum_b sum_{i in b} (y_i - ybar_b)^2
// over non-overlapping block x block windows (partial edge blocks included);
// blocks with < 2 masked pixels or zero reference variance join neither sum.
double block_r2(const Tensor& ref, const Tensor& pred, const Mask& mask, size_t block);

struct BlockR2Terms {
    double num = 0.0, den = 0.0;
    bool defined = false;  // at least one non-degenerate block
};

// The two sums behind block_r2, exposed so multi-tile evaluation can pool
// them before dividing.
BlockR2Terms block_r2_terms(const Tensor& ref, const Tensor& pred, const Mask& mask, size_t block);

// Prose variant: R^2 of block-mean aggregates (masked means per block) against
// the grand mean of reference block means.
double block_r2_blockmean(const Tensor& ref, const Tensor& pred, const Mask& mask, size_t block);

// Sobel gradient magnitude with replicate padding; f is used as-is.
Tensor sobel_magnitude(const Tensor& f);
// Mean |E(pred/120) - E(ref/120)| over masked pixels.
double edge_error(const Tensor& ref, const Tensor& pred, const Mask& mask);

struct HeightBinRow {
    double lo = 0, hi = 0;
    size_t count = 0;
    std::vector<double> quantiles;  // empty when count == 0
};

// Residual (yhat - y) quantiles per reference-height bin. Bin edges must be
// strictly increasing and start at the mask threshold (2 m by default usage);
// the last bin includes its right edge.
std::vector<HeightBinRow> height_binned_residuals(const Tensor& ref, const Tensor& pred,
                                                  const Mask& mask,
                                                  const std::vector<double>& edges,
                                                  const std::vector<double>& quantiles);

// Linear-interpolation quantile on sorted data at position q * (n - 1).
double quantile_sorted(const std::vector<double>& sorted_vals, double q);

// Block-mean downsampling with partial-window means at the edges.
HeightField aggregate_to_resolution(const HeightField& f, size_t factor);

// Counts of field values falling in [e_i, e_{i+1}) (last bin right-closed).
std::vector<size_t> height_histogram(const Tensor& field, const std::vector<double>& edges);

struct MetricsConfig {
    float mask_threshold = 2.0f;
    size_t block = 30;
    bool block_mean_variant = false;
    std::vector<double> bin_edges = {2, 5, 10, 15, 20, 30, 45, 60, 120};
    std::vector<double> quantiles = {0.05, 0.25, 0.5, 0.75, 0.95};
    size_t agg_factor = 8;
};

struct TileMetrics {
    size_t n = 0;  // masked pixel count
    double mae = 0, me = 0, ee = 0;
    double r2 = 0;
    bool r2_defined = false;
};

// All per-tile metrics at native resolution (2-D [H,W] fields in meters).
TileMetrics compute_tile_metrics(const Tensor& ref, const Tensor& pred, const MetricsConfig& cfg);

}  // namespace vsr
