#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vsr/errors.hpp"
#include "vsr/tensor.hpp"

namespace vsr {

constexpr size_t kBands = 12;

enum class CrownShape { cone, paraboloid };

struct SceneParams {
    size_t fine_size = 128;       // fine pixels per side
    double density = 0.005;       // trees per fine-pixel area; count = ceil(density * area)
    double bare_fraction = 0.15;  // probability a drawn tree is skipped (bare ground)
    double tree_hmax = 60.0;      // height law support is [2, tree_hmax] meters
    CrownShape crown = CrownShape::cone;
    double kappa = 0.45;          // crown radius in pixels per meter of height
    double clamp_max = 120.0;
    uint64_t seed = 0;
};

// Radially decaying crowns placed at pixel centers; overlaps resolve by
// pointwise maximum; result clamped to [0, clamp_max]. Returns [1, N, N].
Tensor gen_highres_chm(const SceneParams& params);

// One crown of the given apex height centered at pixel (cx, cy), merged into
// the field by pointwise maximum.
void splat_tree(Tensor& field, long cx, long cy, double height, CrownShape crown, double kappa);

// Saturating per-band height response g_k(h) = base_k + amp_k * (1 - exp(-h / s_k)).
// Monotone in h with band-distinct direction, slope, and saturation scale.
double band_response(size_t band, double height);
// Per-band acquisition noise sigma given the scene-level base sigma.
double band_sigma(size_t band, double base_sigma);

struct RenderParams {
    size_t scale = 8;          // fine pixels per coarse pixel, per axis
    size_t dates = 6;
    double noise_sigma = 0.02;
    double cloud_rate = 0.35;  // expected fraction of coarse pixels lost per date
    uint64_t seed = 0;
};

struct AcquisitionStack {
    size_t dates = 0, bands = 0, h = 0, w = 0;
    std::vector<float> values;  // [date][band][i][j]
    std::vector<uint8_t> valid; // [date][i][j]

    size_t vidx(size_t d, size_t k, size_t i, size_t j) const {
        return ((d * bands + k) * h + i) * w + j;
    }
    size_t midx(size_t d, size_t i, size_t j) const { return (d * h + i) * w + j; }
};

// Coarse multi-date reflectances from a fine CHM: per-band response, exact
// block-mean to the coarse grid (double accumulation), additive Gaussian
// noise per date, and cloudy blobs that invalidate + corrupt pixels. Every
// pixel stays valid on at least one date.
AcquisitionStack render_acquisitions(const Tensor& chm, const RenderParams& params);

// Per-pixel per-band median over valid dates; even count averages the two
// middle values. A pixel with no valid date is a data error naming it.
Tensor median_composite(const AcquisitionStack& stack);

struct DatasetStats {
    std::vector<float> band_mean;  // per band, training fold only
    std::vector<float> band_std;
    float chm_min = 0.0f;          // fixed min-max range for target normalization
    float chm_max = 120.0f;

    uint64_t digest() const;
};

Tensor normalize_source(const Tensor& composite, const DatasetStats& stats);
Tensor denormalize_source(const Tensor& standardized, const DatasetStats& stats);
// [chm_min, chm_max] -> [0, 1]
Tensor normalize_target(const Tensor& chm, const DatasetStats& stats);
// inverse map, clamped to [0, chm_max]
Tensor denormalize_target(const Tensor& normed, const DatasetStats& stats);

enum class Fold : uint8_t { train = 0, validation = 1 };

struct TilePair {
    uint32_t id = 0;
    uint32_t gi = 0, gj = 0;  // grid coordinates
    Tensor coarse;            // [12, H_s, W_s], raw composite reflectance
    Tensor fine;              // [1, H_t, W_t], raw meters
    Fold fold = Fold::train;
    bool water = false;       // synthetic water flag (tile is excluded downstream)
};

struct FilterResult {
    std::vector<TilePair> kept;
    std::vector<std::pair<uint32_t, std::string>> rejected;  // id, reason
};

// Drops tiles containing negative heights or flagged as water, logging why.
FilterResult filter_tiles(std::vector<TilePair> tiles);

// Dihedral-group transform code: (code & 3) quarter-turns, then a horizontal
// flip if (code & 4). Same geometry applied to both members.
TilePair augment_pair(const TilePair& pair, int code);
Tensor transform_square(const Tensor& chw, int code);
int augment_inverse(int code);

// fold(i, j) = train iff (floor(i/cell) + floor(j/cell)) is even.
std::vector<Fold> checkerboard_split(const std::vector<std::pair<uint32_t, uint32_t>>& coords,
                                     uint32_t cell);

// Band statistics over the coarse members of the given tiles (training fold).
DatasetStats compute_stats(const std::vector<TilePair>& train_tiles, float chm_max);

}  // namespace vsr
