#include "vsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vsr {
namespace {

void require_2d(const Tensor& t, const char* name) {
    if (t.shape().size() != 2)
        throw DimensionError(std::string(name) + " must be 2-D [H, W], got rank " +
                             std::to_string(t.shape().size()));
}

void require_same_shape(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        std::ostringstream os;
        os << "field shape mismatch: [" << a.shape()[0] << ", " << a.shape()[1] << "] vs ["
           << b.shape()[0] << ", " << b.shape()[1] << "]";
        throw DimensionError(os.str());
    }
}

void require_mask(const Mask& m, const Tensor& ref) {
    if (m.size() != ref.numel())
        throw DimensionError("mask size " + std::to_string(m.size()) +
                             " does not match field size " + std::to_string(ref.numel()));
}

}  // namespace

double canonical_sum(std::vector<double> vals) {
    std::sort(vals.begin(), vals.end(), [](double a, double b) {
        double fa = std::fabs(a), fb = std::fabs(b);
        if (fa != fb) return fa < fb;
        return a < b;
    });
    double acc = 0.0;
    for (double v : vals) acc += v;
    return acc;
}

Mask make_mask(const Tensor& ref, float threshold) {
    require_2d(ref, "reference");
    Mask m(ref.numel());
    const float* r = ref.data();
    for (size_t i = 0; i < m.size(); ++i) m[i] = r[i] >= threshold ? 1 : 0;
    return m;
}

size_t mask_count(const Mask& m) {
    size_t n = 0;
    for (uint8_t v : m) n += v;
    return n;
}

double mae(const Tensor& ref, const Tensor& pred, const Mask& mask) {
    require_2d(ref, "reference");
    require_2d(pred, "prediction");
    require_same_shape(ref, pred);
    require_mask(mask, ref);
    std::vector<double> contrib;
    contrib.reserve(mask.size());
    const float* r = ref.data();
    const float* p = pred.data();
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) contrib.push_back(std::fabs(double(p[i]) - double(r[i])));
    if (contrib.empty()) throw UndefinedMetricError("mae undefined: no masked pixels");
    size_t n = contrib.size();
    return canonical_sum(std::move(contrib)) / double(n);
}

double mean_error(const Tensor& ref, const Tensor& pred, const Mask& mask) {
    require_2d(ref, "reference");
    require_2d(pred, "prediction");
    require_same_shape(ref, pred);
    require_mask(mask, ref);
    std::vector<double> contrib;
    contrib.reserve(mask.size());
    const float* r = ref.data();
    const float* p = pred.data();
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) contrib.push_back(double(p[i]) - double(r[i]));
    if (contrib.empty()) throw UndefinedMetricError("mean_error undefined: no masked pixels");
    size_t n = contrib.size();
    return canonical_sum(std::move(contrib)) / double(n);
}

BlockR2Terms block_r2_terms(const Tensor& ref, const Tensor& pred, const Mask& mask,
                            size_t block) {
    require_2d(ref, "reference");
    require_2d(pred, "prediction");
    require_same_shape(ref, pred);
    require_mask(mask, ref);
    if (block < 1) throw RangeError("block size must be >= 1");
    const size_t h = ref.shape()[0], w = ref.shape()[1];
    const float* r = ref.data();
    const float* p = pred.data();
    std::vector<double> nums, dens;
    for (size_t bi = 0; bi < h; bi += block) {
        for (size_t bj = 0; bj < w; bj += block) {
            std::vector<double> ys, yhats;
            for (size_t i = bi; i < std::min(bi + block, h); ++i)
                for (size_t j = bj; j < std::min(bj + block, w); ++j) {
                    size_t idx = i * w + j;
                    if (!mask[idx]) continue;
                    ys.push_back(double(r[idx]));
                    yhats.push_back(double(p[idx]));
                }
            if (ys.size() < 2) continue;
            double ybar = canonical_sum(ys) / double(ys.size());
            std::vector<double> dev2(ys.size()), err2(ys.size());
            for (size_t k = 0; k < ys.size(); ++k) {
                double d = ys[k] - ybar;
                dev2[k] = d * d;
                double e = ys[k] - yhats[k];
                err2[k] = e * e;
            }
            double den_b = canonical_sum(std::move(dev2));
            if (den_b == 0.0) continue;  // constant reference within the block
            nums.push_back(canonical_sum(std::move(err2)));
            dens.push_back(den_b);
        }
    }
    if (dens.empty()) return {};
    BlockR2Terms terms;
    terms.num = canonical_sum(std::move(nums));
    terms.den = canonical_sum(std::move(dens));
    terms.defined = true;
    return terms;
}

double block_r2(const Tensor& ref, const Tensor& pred, const Mask& mask, size_t block) {
    BlockR2Terms t = block_r2_terms(ref, pred, mask, block);
    if (!t.defined)
        throw UndefinedMetricError("block_r2 undefined: every block is degenerate");
    return 1.0 - t.num / t.den;
}

double block_r2_blockmean(const Tensor& ref, const Tensor& pred, const Mask& mask, size_t block) {
    require_2d(ref, "reference");
    require_2d(pred, "prediction");
    require_same_shape(ref, pred);
    require_mask(mask, ref);
    if (block < 1) throw RangeError("block size must be >= 1");
    const size_t h = ref.shape()[0], w = ref.shape()[1];
    const float* r = ref.data();
    const float* p = pred.data();
    std::vector<double> ref_means, pred_means;
    for (size_t bi = 0; bi < h; bi += block) {
        for (size_t bj = 0; bj < w; bj += block) {
            std::vector<double> ys, yhats;
            for (size_t i = bi; i < std::min(bi + block, h); ++i)
                for (size_t j = bj; j < std::min(bj + block, w); ++j) {
                    size_t idx = i * w + j;
                    if (!mask[idx]) continue;
                    ys.push_back(double(r[idx]));
                    yhats.push_back(double(p[idx]));
                }
            if (ys.empty()) continue;
            const double n = double(ys.size());
            ref_means.push_back(canonical_sum(std::move(ys)) / n);
            pred_means.push_back(canonical_sum(std::move(yhats)) / n);
        }
    }
    if (ref_means.size() < 2)
        throw UndefinedMetricError("block_r2 (block-mean variant) undefined: fewer than 2 blocks with masked pixels");
    double grand = canonical_sum(ref_means) / double(ref_means.size());
    std::vector<double> dev2(ref_means.size()), err2(ref_means.size());
    for (size_t k = 0; k < ref_means.size(); ++k) {
        double d = ref_means[k] - grand;
        dev2[k] = d * d;
        double e = ref_means[k] - pred_means[k];
        err2[k] = e * e;
    }
    double den = canonical_sum(std::move(dev2));
    if (den == 0.0)
        throw UndefinedMetricError("block_r2 (block-mean variant) undefined: zero variance of block means");
    return 1.0 - canonical_sum(std::move(err2)) / den;
}

namespace {

// Gradient magnitude of a 3x3 Sobel pair with replicate padding, computed in
// double. Each directional response sums its six weighted taps in canonical
// order so the result is invariant under grid symmetries.
std::vector<double> sobel_mag_raw(const float* f, size_t h, size_t w) {
    auto at = [&](long i, long j) -> double {
        i = std::clamp<long>(i, 0, long(h) - 1);
        j = std::clamp<long>(j, 0, long(w) - 1);
        return double(f[size_t(i) * w + size_t(j)]);
    };
    std::vector<double> mag(h * w);
    std::vector<double> taps;
    taps.reserve(6);
    for (long i = 0; i < long(h); ++i) {
        for (long j = 0; j < long(w); ++j) {
            taps.clear();
            taps.push_back(-at(i - 1, j - 1));
            taps.push_back(at(i - 1, j + 1));
            taps.push_back(-2.0 * at(i, j - 1));
            taps.push_back(2.0 * at(i, j + 1));
            taps.push_back(-at(i + 1, j - 1));
            taps.push_back(at(i + 1, j + 1));
            double gx = canonical_sum(taps);
            taps.clear();
            taps.push_back(-at(i - 1, j - 1));
            taps.push_back(-2.0 * at(i - 1, j));
            taps.push_back(-at(i - 1, j + 1));
            taps.push_back(at(i + 1, j - 1));
            taps.push_back(2.0 * at(i + 1, j));
            taps.push_back(at(i + 1, j + 1));
            double gy = canonical_sum(taps);
            mag[size_t(i) * w + size_t(j)] = std::sqrt(gx * gx + gy * gy);
        }
    }
    return mag;
}

}  // namespace

Tensor sobel_magnitude(const Tensor& f) {
    require_2d(f, "field");
    const size_t h = f.shape()[0], w = f.shape()[1];
    if (h < 3 || w < 3)
        throw DimensionError("sobel_magnitude needs at least a 3x3 field, got " +
                             std::to_string(h) + "x" + std::to_string(w));
    auto mag = sobel_mag_raw(f.data(), h, w);
    Tensor out = Tensor::zeros({h, w});
    float* o = out.data();
    for (size_t i = 0; i < mag.size(); ++i) o[i] = float(mag[i]);
    return out;
}

double edge_error(const Tensor& ref, const Tensor& pred, const Mask& mask) {
    require_2d(ref, "reference");
    require_2d(pred, "prediction");
    require_same_shape(ref, pred);
    require_mask(mask, ref);
    const size_t h = ref.shape()[0], w = ref.shape()[1];
    if (h < 3 || w < 3)
        throw DimensionError("edge_error needs at least a 3x3 field, got " + std::to_string(h) +
                             "x" + std::to_string(w));
    // Rescale both fields by 1/120 so the metric is height-range independent.
    std::vector<float> rs(h * w), ps(h * w);
    const float* r = ref.data();
    const float* p = pred.data();
    for (size_t i = 0; i < h * w; ++i) {
        rs[i] = float(double(r[i]) / 120.0);
        ps[i] = float(double(p[i]) / 120.0);
    }
    auto er = sobel_mag_raw(rs.data(), h, w);
    auto ep = sobel_mag_raw(ps.data(), h, w);
    std::vector<double> contrib;
    contrib.reserve(h * w);
    for (size_t i = 0; i < h * w; ++i)
        if (mask[i]) contrib.push_back(std::fabs(ep[i] - er[i]));
    if (contrib.empty()) throw UndefinedMetricError("edge_error undefined: no masked pixels");
    size_t n = contrib.size();
    return canonical_sum(std::move(contrib)) / double(n);
}

double quantile_sorted(const std::vector<double>& sorted_vals, double q) {
    if (sorted_vals.empty()) throw UndefinedMetricError("quantile of empty sample");
    if (q < 0.0 || q > 1.0) throw RangeError("quantile level must be in [0, 1]");
    if (sorted_vals.size() == 1) return sorted_vals[0];
    double pos = q * double(sorted_vals.size() - 1);
    size_t lo = size_t(pos);
    if (lo >= sorted_vals.size() - 1) return sorted_vals.back();
    double frac = pos - double(lo);
    return sorted_vals[lo] * (1.0 - frac) + sorted_vals[lo + 1] * frac;
}

std::vector<HeightBinRow> height_binned_residuals(const Tensor& ref, const Tensor& pred,
                                                  const Mask& mask,
                                                  const std::vector<double>& edges,
                                                  const std::vector<double>& quantiles) {
    require_2d(ref, "reference");
    require_2d(pred, "prediction");
    require_same_shape(ref, pred);
    require_mask(mask, ref);
    if (edges.size() < 2) throw ConfigError("need at least two bin edges");
    for (size_t i = 0; i + 1 < edges.size(); ++i)
        if (!(edges[i] < edges[i + 1]))
            throw ConfigError("bin edges must be strictly increasing");
    for (double q : quantiles)
        if (q < 0.0 || q > 1.0) throw ConfigError("quantile levels must be in [0, 1]");

    const size_t nbins = edges.size() - 1;
    std::vector<std::vector<double>> residuals(nbins);
    const float* r = ref.data();
    const float* p = pred.data();
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        double y = double(r[i]);
        if (y < edges.front() || y > edges.back()) continue;
        size_t b = nbins - 1;
        if (y < edges.back()) {
            b = size_t(std::upper_bound(edges.begin(), edges.end(), y) - edges.begin()) - 1;
        }
        residuals[b].push_back(double(p[i]) - y);
    }

    std::vector<HeightBinRow> rows(nbins);
    for (size_t b = 0; b < nbins; ++b) {
        rows[b].lo = edges[b];
        rows[b].hi = edges[b + 1];
        rows[b].count = residuals[b].size();
        if (rows[b].count == 0) continue;
        std::sort(residuals[b].begin(), residuals[b].end());
        rows[b].quantiles.reserve(quantiles.size());
        for (double q : quantiles) rows[b].quantiles.push_back(quantile_sorted(residuals[b], q));
    }
    return rows;
}

HeightField aggregate_to_resolution(const HeightField& f, size_t factor) {
    require_2d(f.values, "field");
    if (factor < 1) throw RangeError("aggregation factor must be >= 1");
    const size_t h = f.values.shape()[0], w = f.values.shape()[1];
    const size_t oh = (h + factor - 1) / factor, ow = (w + factor - 1) / factor;
    Tensor out = Tensor::zeros({oh, ow});
    const float* src = f.values.data();
    float* dst = out.data();
    for (size_t bi = 0; bi < oh; ++bi) {
        for (size_t bj = 0; bj < ow; ++bj) {
            double acc = 0.0;
            size_t cnt = 0;
            for (size_t i = bi * factor; i < std::min((bi + 1) * factor, h); ++i)
                for (size_t j = bj * factor; j < std::min((bj + 1) * factor, w); ++j) {
                    acc += double(src[i * w + j]);
                    ++cnt;
                }
            dst[bi * ow + bj] = float(acc / double(cnt));
        }
    }
    return HeightField{out, f.resolution * double(factor)};
}

std::vector<size_t> height_histogram(const Tensor& field, const std::vector<double>& edges) {
    require_2d(field, "field");
    if (edges.size() < 2) throw ConfigError("need at least two bin edges");
    for (size_t i = 0; i + 1 < edges.size(); ++i)
        if (!(edges[i] < edges[i + 1]))
            throw ConfigError("bin edges must be strictly increasing");
    std::vector<size_t> counts(edges.size() - 1, 0);
    const float* v = field.data();
    for (size_t i = 0; i < field.numel(); ++i) {
        double x = double(v[i]);
        if (x < edges.front() || x > edges.back()) continue;
        size_t b = counts.size() - 1;
        if (x < edges.back())
            b = size_t(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin()) - 1;
        counts[b]++;
    }
    return counts;
}

TileMetrics compute_tile_metrics(const Tensor& ref, const Tensor& pred, const MetricsConfig& cfg) {
    Mask mask = make_mask(ref, cfg.mask_threshold);
    TileMetrics tm;
    tm.n = mask_count(mask);
    if (tm.n == 0) throw UndefinedMetricError("tile has no masked pixels");
    tm.mae = mae(ref, pred, mask);
    tm.me = mean_error(ref, pred, mask);
    tm.ee = edge_error(ref, pred, mask);
    try {
        tm.r2 = cfg.block_mean_variant ? block_r2_blockmean(ref, pred, mask, cfg.block)
                                       : block_r2(ref, pred, mask, cfg.block);
        tm.r2_defined = true;
    } catch (const UndefinedMetricError&) {
        tm.r2 = 0.0;
        tm.r2_defined = false;
    }
    return tm;
}

}  // namespace vsr
