#include "vsr/scene.hpp"

#include <algorithm>

#include "vsr/rng.hpp"

namespace vsr {

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

void splat_tree(Tensor& field, long cx, long cy, double height, CrownShape crown, double kappa) {
    const size_t n = field.dim(1);
    const double radius = kappa * height;
    const long r = long(std::ceil(radius));
    for (long i = std::max(0L, cx - r); i <= std::min(long(n) - 1, cx + r); ++i) {
        for (long j = std::max(0L, cy - r); j <= std::min(long(n) - 1, cy + r); ++j) {
            const double d = std::hypot(double(i - cx), double(j - cy));
            if (d > radius) continue;
            const double frac = radius > 0 ? d / radius : 0.0;
            const double h = crown == CrownShape::cone ? height * (1.0 - frac)
                                                       : height * (1.0 - frac * frac);
            float& cell = field.data()[size_t(i) * n + size_t(j)];
            cell = std::max(cell, float(h));
        }
    }
}

Tensor gen_highres_chm(const SceneParams& p) {
    const size_t n = p.fine_size;
    Tensor field = Tensor::zeros({1, n, n});
    const size_t trees = size_t(std::ceil(p.density * double(n) * double(n)));
    Rng rng(derive_seed(p.seed, 0x7265657321ULL));
    for (size_t t = 0; t < trees; ++t) {
        const size_t px = size_t(rng.below(n));
        const size_t py = size_t(rng.below(n));
        const double bare = rng.uniform();
        const double z = rng.normal();
        if (bare < p.bare_fraction) continue;
        // right-skewed height law on [2, tree_hmax]: clamped log-normal, median 12 m
        const double h = std::min(std::max(std::exp(std::log(12.0) + 0.55 * z), 2.0), p.tree_hmax);
        splat_tree(field, long(px), long(py), h, p.crown, p.kappa);
    }
    for (size_t i = 0; i < field.numel(); ++i)
        field.data()[i] = std::min(std::max(field.data()[i], 0.0f), float(p.clamp_max));
    return field;
}

// ---------------------------------------------------------------------------
// Band forward model
// ---------------------------------------------------------------------------

namespace {

struct BandLaw {
    double base, amp, sat;
};

// Distinct monotone saturating responses, mixing brightening and darkening
// bands, all staying inside (0, 1) for heights in [0, 120].
constexpr BandLaw kBandLaws[kBands] = {
    {0.08, 0.35, 8.0},  {0.30, -0.22, 12.0}, {0.12, 0.30, 18.0}, {0.10, 0.45, 25.0},
    {0.35, -0.18, 6.0}, {0.09, 0.40, 10.0},  {0.15, 0.25, 15.0}, {0.40, -0.30, 22.0},
    {0.07, 0.50, 30.0}, {0.20, 0.20, 9.0},   {0.33, -0.25, 14.0}, {0.11, 0.38, 20.0},
};

constexpr double kSigmaScale[kBands] = {1.0,  0.8, 1.2, 0.9, 1.1, 0.85,
                                        1.05, 0.95, 1.15, 0.9, 1.0, 1.1};

}  // namespace

double band_response(size_t band, double height) {
    const BandLaw& b = kBandLaws[band % kBands];
    return b.base + b.amp * (1.0 - std::exp(-height / b.sat));
}

double band_sigma(size_t band, double base_sigma) { return base_sigma * kSigmaScale[band % kBands]; }

// ---------------------------------------------------------------------------
// Acquisition rendering
// ---------------------------------------------------------------------------

AcquisitionStack render_acquisitions(const Tensor& chm, const RenderParams& p) {
    if (chm.ndim() != 3 || chm.dim(0) != 1)
        throw DimensionError("render: chm must be [1,N,N], got " + shape_str(chm.shape()));
    const size_t fine = chm.dim(1);
    if (chm.dim(2) != fine) throw DimensionError("render: chm must be square");
    if (p.scale == 0 || fine % p.scale != 0)
        throw DimensionError("render: fine size " + std::to_string(fine) +
                             " is not a multiple of scale " + std::to_string(p.scale));
    if (p.dates == 0) throw ConfigError("render: need at least one date");
    const size_t hs = fine / p.scale, ws = fine / p.scale;

    AcquisitionStack st;
    st.dates = p.dates;
    st.bands = kBands;
    st.h = hs;
    st.w = ws;
    st.values.assign(p.dates * kBands * hs * ws, 0.0f);
    st.valid.assign(p.dates * hs * ws, 1);

    // Clean per-band coarse image: block-mean of g_k(height), double accumulation.
    std::vector<double> clean(kBands * hs * ws, 0.0);
    const double inv_area = 1.0 / (double(p.scale) * double(p.scale));
    for (size_t k = 0; k < kBands; ++k)
        for (size_t bi = 0; bi < hs; ++bi)
            for (size_t bj = 0; bj < ws; ++bj) {
                double acc = 0.0;
                for (size_t i = bi * p.scale; i < (bi + 1) * p.scale; ++i)
                    for (size_t j = bj * p.scale; j < (bj + 1) * p.scale; ++j)
                        acc += band_response(k, double(chm.data()[i * fine + j]));
                clean[(k * hs + bi) * ws + bj] = acc * inv_area;
            }

    // Cloud blobs: per date, roughly cloud_rate of the grid lost, as disks.
    const uint64_t noise_seed = derive_seed(p.seed, 0x6e6f697365ULL);
    for (size_t d = 0; d < p.dates; ++d) {
        Rng crng(derive_seed(p.seed, 0xc10d0000ULL + d));
        const double avg_blob_area = 30.0;  // E[pi r^2] for r ~ U(1.5, 4.5)
        const double expected = p.cloud_rate * double(hs * ws) / avg_blob_area;
        const size_t nblobs = size_t(std::floor(expected * (0.5 + crng.uniform())));
        for (size_t b = 0; b < nblobs; ++b) {
            const double cx = crng.uniform() * double(hs);
            const double cy = crng.uniform() * double(ws);
            const double r = 1.5 + 3.0 * crng.uniform();
            for (size_t i = 0; i < hs; ++i)
                for (size_t j = 0; j < ws; ++j)
                    if (std::hypot(double(i) + 0.5 - cx, double(j) + 0.5 - cy) <= r)
                        st.valid[st.midx(d, i, j)] = 0;
        }
    }
    // Compositing coverage guarantee: each pixel valid on >= 1 date.
    for (size_t i = 0; i < hs; ++i)
        for (size_t j = 0; j < ws; ++j) {
            bool any = false;
            for (size_t d = 0; d < p.dates; ++d) any = any || st.valid[st.midx(d, i, j)];
            if (!any) {
                const size_t d = size_t(hash_counter(p.seed, 0xF0000000ULL + i * ws + j) % p.dates);
                st.valid[st.midx(d, i, j)] = 1;
            }
        }

    // Values: clean + per-date noise; cloudy pixels get a bright corrupt value.
    for (size_t d = 0; d < p.dates; ++d)
        for (size_t k = 0; k < kBands; ++k) {
            const double sigma = band_sigma(k, p.noise_sigma);
            for (size_t i = 0; i < hs; ++i)
                for (size_t j = 0; j < ws; ++j) {
                    const size_t vi = st.vidx(d, k, i, j);
                    const double eps = normal_at(noise_seed, vi);
                    if (st.valid[st.midx(d, i, j)]) {
                        st.values[vi] = float(clean[(k * hs + i) * ws + j] + sigma * eps);
                    } else {
                        st.values[vi] = float(0.55 + 0.1 * eps);  // cloud top
                    }
                }
        }
    return st;
}

// ---------------------------------------------------------------------------
// Median compositing
// ---------------------------------------------------------------------------

Tensor median_composite(const AcquisitionStack& st) {
    Tensor out = Tensor::zeros({st.bands, st.h, st.w});
    std::vector<float> vals;
    vals.reserve(st.dates);
    for (size_t k = 0; k < st.bands; ++k)
        for (size_t i = 0; i < st.h; ++i)
            for (size_t j = 0; j < st.w; ++j) {
                vals.clear();
                for (size_t d = 0; d < st.dates; ++d)
                    if (st.valid[st.midx(d, i, j)]) vals.push_back(st.values[st.vidx(d, k, i, j)]);
                if (vals.empty())
                    throw DataError("compositing: pixel (" + std::to_string(i) + ", " +
                                    std::to_string(j) + ") has zero valid dates");
                std::sort(vals.begin(), vals.end());
                const size_t m = vals.size();
                out.data()[(k * st.h + i) * st.w + j] =
                    (m % 2 == 1) ? vals[m / 2] : 0.5f * (vals[m / 2 - 1] + vals[m / 2]);
            }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

uint64_t DatasetStats::digest() const {
    std::vector<float> packed;
    packed.reserve(band_mean.size() + band_std.size() + 2);
    packed.insert(packed.end(), band_mean.begin(), band_mean.end());
    packed.insert(packed.end(), band_std.begin(), band_std.end());
    packed.push_back(chm_min);
    packed.push_back(chm_max);
    return digest_f32(packed.data(), packed.size());
}

Tensor normalize_source(const Tensor& composite, const DatasetStats& stats) {
    if (composite.ndim() != 3 || composite.dim(0) != stats.band_mean.size())
        throw DimensionError("normalize_source: band count mismatch");
    for (float s : stats.band_std)
        if (!(s > 0)) throw DataError("stats: band std must be positive");
    const size_t hw = composite.dim(1) * composite.dim(2);
    Tensor out = Tensor::zeros(composite.shape());
    for (size_t k = 0; k < stats.band_mean.size(); ++k)
        for (size_t i = 0; i < hw; ++i)
            out.data()[k * hw + i] = (composite.data()[k * hw + i] - stats.band_mean[k]) / stats.band_std[k];
    return out;
}

Tensor denormalize_source(const Tensor& standardized, const DatasetStats& stats) {
    if (standardized.ndim() != 3 || standardized.dim(0) != stats.band_mean.size())
        throw DimensionError("denormalize_source: band count mismatch");
    const size_t hw = standardized.dim(1) * standardized.dim(2);
    Tensor out = Tensor::zeros(standardized.shape());
    for (size_t k = 0; k < stats.band_mean.size(); ++k)
        for (size_t i = 0; i < hw; ++i)
            out.data()[k * hw + i] = standardized.data()[k * hw + i] * stats.band_std[k] + stats.band_mean[k];
    return out;
}

Tensor normalize_target(const Tensor& chm, const DatasetStats& stats) {
    if (!(stats.chm_max > stats.chm_min)) throw DataError("stats: chm_max must exceed chm_min");
    const float span = stats.chm_max - stats.chm_min;
    Tensor out = Tensor::zeros(chm.shape());
    for (size_t i = 0; i < chm.numel(); ++i) out.data()[i] = (chm.data()[i] - stats.chm_min) / span;
    return out;
}

Tensor denormalize_target(const Tensor& normed, const DatasetStats& stats) {
    if (!(stats.chm_max > stats.chm_min)) throw DataError("stats: chm_max must exceed chm_min");
    const float span = stats.chm_max - stats.chm_min;
    Tensor out = Tensor::zeros(normed.shape());
    for (size_t i = 0; i < normed.numel(); ++i) {
        const float v = normed.data()[i] * span + stats.chm_min;
        out.data()[i] = std::min(std::max(v, 0.0f), stats.chm_max);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Filtering, augmentation, splitting, stats
// ---------------------------------------------------------------------------

FilterResult filter_tiles(std::vector<TilePair> tiles) {
    FilterResult res;
    for (auto& t : tiles) {
        if (t.water) {
            res.rejected.emplace_back(t.id, "water");
            continue;
        }
        bool negative = false;
        for (size_t i = 0; i < t.fine.numel() && !negative; ++i) negative = t.fine.data()[i] < 0.0f;
        if (negative) {
            res.rejected.emplace_back(t.id, "negative-height");
            continue;
        }
        res.kept.push_back(std::move(t));
    }
    return res;
}

Tensor transform_square(const Tensor& chw, int code) {
    if (chw.ndim() != 3) throw DimensionError("augment: expected [C,H,W], got " + shape_str(chw.shape()));
    const size_t c = chw.dim(0), n = chw.dim(1);
    const int rot = code & 3;
    if (chw.dim(2) != n) {
        if (rot != 0) throw DimensionError("augment: rotation requires square tiles");
        throw DimensionError("augment: expected square tiles");
    }
    if (code < 0 || code > 7) throw RangeError("augment: code must be in [0, 7]");
    const bool flip = (code & 4) != 0;
    Tensor out = Tensor::zeros(chw.shape());
    for (size_t ch = 0; ch < c; ++ch) {
        const float* src = chw.data() + ch * n * n;
        float* dst = out.data() + ch * n * n;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) {
                size_t si = i, sj = j;
                // inverse horizontal flip first (it was applied last)
                if (flip) sj = n - 1 - sj;
                // inverse of rot quarter-turns: out(i,j) = in applied rot times
                for (int r = 0; r < rot; ++r) {
                    const size_t ti = si, tj = sj;
                    si = n - 1 - tj;  // one clockwise quarter-turn, inverted
                    sj = ti;
                }
                dst[i * n + j] = src[si * n + sj];
            }
    }
    return out;
}

TilePair augment_pair(const TilePair& pair, int code) {
    TilePair out = pair;
    out.coarse = transform_square(pair.coarse, code);
    out.fine = transform_square(pair.fine, code);
    return out;
}

int augment_inverse(int code) {
    if (code < 0 || code > 7) throw RangeError("augment: code must be in [0, 7]");
    if (code & 4) return code;           // reflections are involutions
    return (4 - (code & 3)) & 3;         // pure rotation inverts its turn count
}

std::vector<Fold> checkerboard_split(const std::vector<std::pair<uint32_t, uint32_t>>& coords,
                                     uint32_t cell) {
    if (cell < 1) throw ConfigError("split: cell must be >= 1");
    std::vector<std::pair<uint32_t, uint32_t>> seen(coords);
    std::sort(seen.begin(), seen.end());
    for (size_t i = 1; i < seen.size(); ++i)
        if (seen[i] == seen[i - 1])
            throw DataError("split: duplicate tile coordinates (" + std::to_string(seen[i].first) +
                            ", " + std::to_string(seen[i].second) + ")");
    std::vector<Fold> folds(coords.size());
    for (size_t t = 0; t < coords.size(); ++t) {
        const uint32_t ci = coords[t].first / cell, cj = coords[t].second / cell;
        folds[t] = ((ci + cj) % 2 == 0) ? Fold::train : Fold::validation;
    }
    return folds;
}

DatasetStats compute_stats(const std::vector<TilePair>& train_tiles, float chm_max) {
    if (train_tiles.empty()) throw DataError("stats: empty training fold");
    const size_t bands = train_tiles.front().coarse.dim(0);
    DatasetStats stats;
    stats.band_mean.assign(bands, 0.0f);
    stats.band_std.assign(bands, 0.0f);
    stats.chm_min = 0.0f;
    stats.chm_max = chm_max;
    std::vector<double> sum(bands, 0.0), sum2(bands, 0.0);
    size_t per_band = 0;
    for (const auto& t : train_tiles) {
        const size_t hw = t.coarse.dim(1) * t.coarse.dim(2);
        per_band += hw;
        for (size_t k = 0; k < bands; ++k)
            for (size_t i = 0; i < hw; ++i) {
                const double v = t.coarse.data()[k * hw + i];
                sum[k] += v;
                sum2[k] += v * v;
            }
    }
    for (size_t k = 0; k < bands; ++k) {
        const double mean = sum[k] / double(per_band);
        const double var = std::max(sum2[k] / double(per_band) - mean * mean, 0.0);
        stats.band_mean[k] = float(mean);
        stats.band_std[k] = float(std::sqrt(var));
        if (!(stats.band_std[k] > 0)) throw DataError("stats: band " + std::to_string(k) + " has zero variance");
    }
    return stats;
}

}  // namespace vsr
