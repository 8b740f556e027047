#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "vsr/metrics.hpp"
#include "vsr/rng.hpp"
#include "vsr/scene.hpp"

using namespace vsr;

namespace {

Tensor field2(size_t h, size_t w, const std::vector<float>& v) {
    Tensor t = Tensor::from({h, w}, v);
    return t;
}

Tensor random_field(size_t h, size_t w, Rng& rng, double lo, double hi) {
    Tensor t = Tensor::zeros({h, w});
    float* d = t.data();
    for (size_t i = 0; i < t.numel(); ++i) d[i] = float(rng.uniform(lo, hi));
    return t;
}

Tensor perturbed(const Tensor& ref, Rng& rng, double sigma) {
    Tensor t = ref.clone();
    float* d = t.data();
    for (size_t i = 0; i < t.numel(); ++i) d[i] += float(sigma * rng.normal());
    return t;
}

// ---- independent naive oracles (plain loops, natural accumulation order) ----

double naive_mae(const Tensor& r, const Tensor& p, const Mask& m) {
    double s = 0;
    size_t n = 0;
    for (size_t i = 0; i < m.size(); ++i)
        if (m[i]) {
            s += std::fabs(double(p.data()[i]) - double(r.data()[i]));
            ++n;
        }
    return s / double(n);
}

double naive_me(const Tensor& r, const Tensor& p, const Mask& m) {
    double s = 0;
    size_t n = 0;
    for (size_t i = 0; i < m.size(); ++i)
        if (m[i]) {
            s += double(p.data()[i]) - double(r.data()[i]);
            ++n;
        }
    return s / double(n);
}

double naive_block_r2(const Tensor& r, const Tensor& p, const Mask& m, size_t block) {
    size_t h = r.shape()[0], w = r.shape()[1];
    double num = 0, den = 0;
    bool any = false;
    for (size_t bi = 0; bi < h; bi += block)
        for (size_t bj = 0; bj < w; bj += block) {
            double sy = 0;
            size_t n = 0;
            for (size_t i = bi; i < std::min(bi + block, h); ++i)
                for (size_t j = bj; j < std::min(bj + block, w); ++j)
                    if (m[i * w + j]) {
                        sy += double(r.data()[i * w + j]);
                        ++n;
                    }
            if (n < 2) continue;
            double mean = sy / double(n);
            double nb = 0, db = 0;
            for (size_t i = bi; i < std::min(bi + block, h); ++i)
                for (size_t j = bj; j < std::min(bj + block, w); ++j)
                    if (m[i * w + j]) {
                        double y = double(r.data()[i * w + j]);
                        double yh = double(p.data()[i * w + j]);
                        nb += (y - yh) * (y - yh);
                        db += (y - mean) * (y - mean);
                    }
            if (db == 0) continue;
            num += nb;
            den += db;
            any = true;
        }
    REQUIRE(any);
    return 1.0 - num / den;
}

std::vector<double> naive_sobel(const std::vector<double>& f, size_t h, size_t w) {
    auto at = [&](long i, long j) {
        i = std::clamp<long>(i, 0, long(h) - 1);
        j = std::clamp<long>(j, 0, long(w) - 1);
        return f[size_t(i) * w + size_t(j)];
    };
    std::vector<double> e(h * w);
    for (long i = 0; i < long(h); ++i)
        for (long j = 0; j < long(w); ++j) {
            double gx = -at(i - 1, j - 1) + at(i - 1, j + 1) - 2 * at(i, j - 1) +
                        2 * at(i, j + 1) - at(i + 1, j - 1) + at(i + 1, j + 1);
            double gy = -at(i - 1, j - 1) - 2 * at(i - 1, j) - at(i - 1, j + 1) +
                        at(i + 1, j - 1) + 2 * at(i + 1, j) + at(i + 1, j + 1);
            e[size_t(i) * w + size_t(j)] = std::sqrt(gx * gx + gy * gy);
        }
    return e;
}

double naive_ee(const Tensor& r, const Tensor& p, const Mask& m) {
    size_t h = r.shape()[0], w = r.shape()[1];
    std::vector<double> rs(h * w), ps(h * w);
    for (size_t i = 0; i < h * w; ++i) {
        rs[i] = double(float(double(r.data()[i]) / 120.0));
        ps[i] = double(float(double(p.data()[i]) / 120.0));
    }
    auto er = naive_sobel(rs, h, w);
    auto ep = naive_sobel(ps, h, w);
    double s = 0;
    size_t n = 0;
    for (size_t i = 0; i < h * w; ++i)
        if (m[i]) {
            s += std::fabs(ep[i] - er[i]);
            ++n;
        }
    return s / double(n);
}

double naive_quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    double pos = q * double(v.size() - 1);
    size_t lo = size_t(pos);
    if (lo + 1 >= v.size()) return v.back();
    double f = pos - double(lo);
    return v[lo] * (1.0 - f) + v[lo + 1] * f;
}

bool close_rel(double a, double b, double tol) {
    return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

Tensor dihedral2(const Tensor& f, int code) {
    size_t h = f.shape()[0], w = f.shape()[1];
    Tensor c = Tensor::from({1, h, w}, std::vector<float>(f.data(), f.data() + f.numel()));
    Tensor t = transform_square(c, code);
    return Tensor::from({t.shape()[1], t.shape()[2]},
                        std::vector<float>(t.data(), t.data() + t.numel()));
}

}  // namespace

TEST_CASE("mae matches direct evaluation") {
    Tensor ref = field2(1, 2, {3, 5});
    Tensor pred = field2(1, 2, {4, 7});
    Mask all(2, 1);
    CHECK(mae(ref, pred, all) == 1.5);
    CHECK(mae(ref, ref, all) == 0.0);

    // 2 m threshold drops the first pixel.
    Tensor ref2 = field2(1, 2, {1, 5});
    Tensor pred2 = field2(1, 2, {9, 7});
    Mask m = make_mask(ref2, 2.0f);
    CHECK(m[0] == 0);
    CHECK(m[1] == 1);
    CHECK(mae(ref2, pred2, m) == 2.0);

    Mask none(2, 0);
    CHECK_THROWS_AS(mae(ref, pred, none), UndefinedMetricError);
    CHECK_THROWS_AS(mae(ref, field2(2, 1, {4, 7}), all), DimensionError);
    CHECK_THROWS_AS(mae(ref, pred, Mask(3, 1)), DimensionError);
}

TEST_CASE("mean_error sign convention and bound") {
    Tensor ref = field2(1, 2, {10, 10});
    Tensor pred = field2(1, 2, {8, 6});
    Mask all(2, 1);
    CHECK(mean_error(ref, pred, all) == -3.0);
    CHECK(mean_error(ref, ref, all) == 0.0);
    CHECK_THROWS_AS(mean_error(ref, pred, Mask(2, 0)), UndefinedMetricError);

    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_field(6, 7, rng, 0, 40);
        Tensor b = perturbed(a, rng, 4.0);
        Mask m = make_mask(a, 2.0f);
        if (mask_count(m) == 0) continue;
        CHECK(std::fabs(mean_error(a, b, m)) <= mae(a, b, m) + 1e-15);
    }
}

TEST_CASE("block_r2 worked example and fixed points") {
    Tensor ref = field2(2, 2, {2, 4, 6, 8});
    Tensor pred = field2(2, 2, {3, 3, 7, 7});
    Mask all(4, 1);
    CHECK(block_r2(ref, pred, all, 30) == 0.8);  // 1 - 4/20, single partial block
    CHECK(block_r2(ref, ref, all, 30) == 1.0);

    // Prediction equal to per-block reference means scores exactly zero.
    Rng rng(5);
    Tensor r = random_field(8, 8, rng, 2, 50);
    Mask m(64, 1);
    Tensor p = r.clone();
    const size_t block = 4;
    for (size_t bi = 0; bi < 8; bi += block)
        for (size_t bj = 0; bj < 8; bj += block) {
            std::vector<double> ys;
            for (size_t i = bi; i < bi + block; ++i)
                for (size_t j = bj; j < bj + block; ++j) ys.push_back(double(r.data()[i * 8 + j]));
            double mean = canonical_sum(ys) / double(ys.size());
            for (size_t i = bi; i < bi + block; ++i)
                for (size_t j = bj; j < bj + block; ++j) p.data()[i * 8 + j] = float(mean);
        }
    // Means are float-rounded, so allow the resulting tiny numerator.
    CHECK(std::fabs(block_r2(r, p, m, block)) < 1e-9);

    // Constant reference: every block degenerate.
    Tensor flat = Tensor::full({4, 4}, 10.0f);
    CHECK_THROWS_AS(block_r2(flat, flat, Mask(16, 1), 2), UndefinedMetricError);
}

TEST_CASE("block_r2 skips blocks that cannot support the statistic") {
    // Left 2x2 block has one masked pixel (skipped); right block is live.
    Tensor ref = field2(2, 4, {10, 1, 8, 12, 1, 1, 16, 4});
    Tensor pred = field2(2, 4, {30, 30, 9, 11, 30, 30, 15, 5});
    Mask m = make_mask(ref, 2.0f);
    double got = block_r2(ref, pred, m, 2);
    double want = naive_block_r2(ref, pred, m, 2);
    CHECK(close_rel(got, want, 1e-12));
    // The skipped block's wild predictions must not matter.
    Tensor pred2 = pred.clone();
    pred2.data()[1] = 9999.0f;
    CHECK(block_r2(ref, pred2, m, 2) == got);
}

TEST_CASE("block-mean variant behaves like R2 over block aggregates") {
    Rng rng(77);
    Tensor ref = random_field(9, 9, rng, 2, 60);
    Tensor pred = perturbed(ref, rng, 5.0);
    Mask m = make_mask(ref, 2.0f);
    const size_t block = 3;
    // Oracle: masked block means, R2 against grand mean.
    std::vector<double> rm, pm;
    for (size_t bi = 0; bi < 9; bi += block)
        for (size_t bj = 0; bj < 9; bj += block) {
            double sr = 0, sp = 0;
            size_t n = 0;
            for (size_t i = bi; i < bi + block; ++i)
                for (size_t j = bj; j < bj + block; ++j)
                    if (m[i * 9 + j]) {
                        sr += double(ref.data()[i * 9 + j]);
                        sp += double(pred.data()[i * 9 + j]);
                        ++n;
                    }
            if (n == 0) continue;
            rm.push_back(sr / double(n));
            pm.push_back(sp / double(n));
        }
    double grand = 0;
    for (double v : rm) grand += v;
    grand /= double(rm.size());
    double num = 0, den = 0;
    for (size_t k = 0; k < rm.size(); ++k) {
        num += (rm[k] - pm[k]) * (rm[k] - pm[k]);
        den += (rm[k] - grand) * (rm[k] - grand);
    }
    double want = 1.0 - num / den;
    CHECK(close_rel(block_r2_blockmean(ref, pred, m, block), want, 1e-9));

    Tensor flat = Tensor::full({4, 4}, 10.0f);
    CHECK_THROWS_AS(block_r2_blockmean(flat, flat, Mask(16, 1), 2), UndefinedMetricError);
    Tensor tiny = field2(2, 2, {3, 4, 5, 6});
    CHECK_THROWS_AS(block_r2_blockmean(tiny, tiny, Mask(4, 1), 2), UndefinedMetricError);
}

TEST_CASE("edge_error on identities, constants and a step edge") {
    Rng rng(3);
    Tensor ref = random_field(6, 6, rng, 2, 80);
    Mask m = make_mask(ref, 2.0f);
    CHECK(edge_error(ref, ref, m) == 0.0);

    Tensor a = Tensor::full({5, 5}, 30.0f);
    Tensor b = Tensor::full({5, 5}, 80.0f);
    CHECK(edge_error(a, b, Mask(25, 1)) == 0.0);

    // Vertical step against a flat prediction: EE is the masked mean Sobel
    // magnitude of the rescaled step, per the brute-force oracle.
    Tensor step = Tensor::zeros({8, 8});
    for (size_t i = 0; i < 8; ++i)
        for (size_t j = 4; j < 8; ++j) step.data()[i * 8 + j] = 60.0f;
    Tensor flat = Tensor::zeros({8, 8});
    Mask sm = make_mask(step, 2.0f);
    CHECK(close_rel(edge_error(step, flat, sm), naive_ee(step, flat, sm), 1e-9));

    Tensor small = Tensor::zeros({2, 5});
    CHECK_THROWS_AS(edge_error(small, small, Mask(10, 1)), DimensionError);
}

TEST_CASE("sobel_magnitude matches a brute-force convolution") {
    Rng rng(9);
    Tensor f = random_field(7, 9, rng, -3, 3);
    std::vector<double> fd(f.data(), f.data() + f.numel());
    auto want = naive_sobel(fd, 7, 9);
    Tensor got = sobel_magnitude(f);
    for (size_t i = 0; i < want.size(); ++i)
        CHECK(close_rel(double(got.data()[i]), want[i], 1e-6));
    CHECK_THROWS_AS(sobel_magnitude(Tensor::zeros({2, 2})), DimensionError);
}

TEST_CASE("height-binned residuals: binning, identity, empty bins") {
    std::vector<double> edges{2, 10, 30};
    std::vector<double> qs{0.05, 0.25, 0.5, 0.75, 0.95};
    Tensor ref = field2(1, 2, {3, 12});
    Tensor pred = field2(1, 2, {4, 10});
    Mask all(2, 1);
    auto rows = height_binned_residuals(ref, pred, all, edges, qs);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].count == 1);
    CHECK(rows[1].count == 1);
    CHECK(rows[0].quantiles[2] == 1.0);
    CHECK(rows[1].quantiles[2] == -2.0);

    // Identity: all defined medians are zero.
    auto idrows = height_binned_residuals(ref, ref, all, edges, qs);
    for (auto& r : idrows)
        if (r.count > 0) CHECK(r.quantiles[2] == 0.0);

    // Empty bin: count 0 and no quantiles.
    Tensor lo = field2(1, 2, {3, 4});
    auto rows2 = height_binned_residuals(lo, lo, all, edges, qs);
    CHECK(rows2[0].count == 2);
    CHECK(rows2[1].count == 0);
    CHECK(rows2[1].quantiles.empty());

    CHECK_THROWS_AS(height_binned_residuals(ref, pred, all, {5, 5, 10}, qs), ConfigError);
    CHECK_THROWS_AS(height_binned_residuals(ref, pred, all, {5}, qs), ConfigError);
}

TEST_CASE("height-binned residual quantiles match the sort oracle exactly") {
    Rng rng(21);
    std::vector<double> edges{2, 5, 10, 15, 20, 30, 45, 60, 120};
    std::vector<double> qs{0.05, 0.25, 0.5, 0.75, 0.95};
    Tensor ref = random_field(16, 16, rng, 0, 70);
    Tensor pred = perturbed(ref, rng, 6.0);
    Mask m = make_mask(ref, 2.0f);
    auto rows = height_binned_residuals(ref, pred, m, edges, qs);
    REQUIRE(rows.size() == edges.size() - 1);

    for (size_t b = 0; b < rows.size(); ++b) {
        std::vector<double> res;
        for (size_t i = 0; i < m.size(); ++i) {
            if (!m[i]) continue;
            double y = double(ref.data()[i]);
            bool last = b + 2 == edges.size();
            bool in = last ? (y >= edges[b] && y <= edges[b + 1])
                           : (y >= edges[b] && y < edges[b + 1]);
            if (in) res.push_back(double(pred.data()[i]) - y);
        }
        CHECK(rows[b].count == res.size());
        if (res.empty()) continue;
        for (size_t k = 0; k < qs.size(); ++k)
            CHECK(rows[b].quantiles[k] == naive_quantile(res, qs[k]));
        // Monotone within the bin.
        for (size_t k = 1; k < qs.size(); ++k)
            CHECK(rows[b].quantiles[k] >= rows[b].quantiles[k - 1]);
    }
}

TEST_CASE("aggregate_to_resolution block means") {
    HeightField f{field2(2, 2, {1, 3, 5, 7}), 10.0};
    HeightField g = aggregate_to_resolution(f, 2);
    CHECK(g.values.shape() == std::vector<size_t>{1, 1});
    CHECK(g.values.data()[0] == 4.0f);
    CHECK(g.resolution == 20.0);

    HeightField id = aggregate_to_resolution(f, 1);
    CHECK(id.resolution == 10.0);
    for (size_t i = 0; i < 4; ++i) CHECK(id.values.data()[i] == f.values.data()[i]);

    // Partial edge windows on a constant field preserve the constant.
    HeightField c{Tensor::full({7, 7}, 5.5f), 1.0};
    HeightField ca = aggregate_to_resolution(c, 3);
    CHECK(ca.values.shape() == std::vector<size_t>{3, 3});
    for (size_t i = 0; i < ca.values.numel(); ++i) CHECK(ca.values.data()[i] == 5.5f);

    CHECK_THROWS_AS(aggregate_to_resolution(f, 0), RangeError);
}

TEST_CASE("height_histogram bin assignment") {
    std::vector<double> edges{2, 5, 10};
    Tensor f = field2(1, 6, {1.0f, 2.0f, 4.9f, 5.0f, 10.0f, 11.0f});
    auto h = height_histogram(f, edges);
    REQUIRE(h.size() == 2);
    CHECK(h[0] == 2);  // 2.0, 4.9
    CHECK(h[1] == 2);  // 5.0, 10.0 (last bin right-closed); 1.0 and 11.0 fall outside
}

TEST_CASE("every metric matches brute force on 200 random masked pairs") {
    Rng rng(20240601);
    for (int trial = 0; trial < 200; ++trial) {
        size_t h = 4 + rng.below(12);
        size_t w = 4 + rng.below(12);
        if (h < 3) h = 3;
        Tensor ref = random_field(h, w, rng, 0, 35);
        Tensor pred = perturbed(ref, rng, 3.0);
        Mask m = make_mask(ref, 2.0f);
        if (mask_count(m) < 4) {
            --trial;
            continue;
        }
        CHECK(close_rel(mae(ref, pred, m), naive_mae(ref, pred, m), 1e-9));
        CHECK(close_rel(mean_error(ref, pred, m), naive_me(ref, pred, m), 1e-9));
        CHECK(close_rel(block_r2(ref, pred, m, 5), naive_block_r2(ref, pred, m, 5), 1e-9));
        CHECK(close_rel(edge_error(ref, pred, m), naive_ee(ref, pred, m), 1e-9));
    }
}

TEST_CASE("mae is symmetric and mean_error antisymmetric") {
    Rng rng(100);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor a = random_field(7, 9, rng, 0, 40);
        Tensor b = random_field(7, 9, rng, 0, 40);
        Mask m = make_mask(a, 2.0f);
        if (mask_count(m) == 0) continue;
        CHECK(mae(a, b, m) == mae(b, a, m));
        CHECK(mean_error(a, b, m) == -mean_error(b, a, m));
    }
}

TEST_CASE("dihedral transforms leave metrics unchanged") {
    Rng rng(40);
    const size_t n = 12;  // block 6 divides the side, so blocks map onto blocks
    Tensor ref = random_field(n, n, rng, 0, 50);
    Tensor pred = perturbed(ref, rng, 4.0);
    Mask m0 = make_mask(ref, 2.0f);
    REQUIRE(mask_count(m0) > 10);
    double mae0 = mae(ref, pred, m0);
    double me0 = mean_error(ref, pred, m0);
    double r20 = block_r2(ref, pred, m0, 6);
    double ee0 = edge_error(ref, pred, m0);

    // Interior mask: one-pixel ring removed, where replicate padding never acts.
    auto interior_of = [&](const Tensor& r) {
        Mask m = make_mask(r, 2.0f);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j)
                if (i == 0 || j == 0 || i + 1 == n || j + 1 == n) m[i * n + j] = 0;
        return m;
    };
    double eei0 = edge_error(ref, pred, interior_of(ref));

    for (int code = 0; code < 8; ++code) {
        Tensor rt = dihedral2(ref, code);
        Tensor pt = dihedral2(pred, code);
        Mask mt = make_mask(rt, 2.0f);
        CHECK(mask_count(mt) == mask_count(m0));
        CHECK(mae(rt, pt, mt) == mae0);
        CHECK(mean_error(rt, pt, mt) == me0);
        CHECK(block_r2(rt, pt, mt, 6) == r20);
        CHECK(std::fabs(edge_error(rt, pt, mt) - ee0) <= 1e-9);
        CHECK(edge_error(rt, pt, interior_of(rt)) == eei0);
    }
}

TEST_CASE("prediction values at mask-false pixels never affect metrics") {
    Rng rng(60);
    const size_t n = 10;
    Tensor ref = random_field(n, n, rng, 0, 40);
    Tensor pred = perturbed(ref, rng, 3.0);
    Mask m = make_mask(ref, 2.0f);
    REQUIRE(mask_count(m) > 10);
    REQUIRE(mask_count(m) < n * n);

    std::vector<double> edges{2, 10, 20, 40};
    std::vector<double> qs{0.05, 0.5, 0.95};
    double mae0 = mae(ref, pred, m);
    double me0 = mean_error(ref, pred, m);
    double r20 = block_r2(ref, pred, m, 5);
    auto bins0 = height_binned_residuals(ref, pred, m, edges, qs);

    // EE reads a 3x3 window, so provenance there covers pixels whose whole
    // window is mask-false.
    auto far_from_mask = [&](size_t i, size_t j) {
        for (long di = -1; di <= 1; ++di)
            for (long dj = -1; dj <= 1; ++dj) {
                long ii = std::clamp<long>(long(i) + di, 0, long(n) - 1);
                long jj = std::clamp<long>(long(j) + dj, 0, long(n) - 1);
                if (m[size_t(ii) * n + size_t(jj)]) return false;
            }
        return true;
    };
    double ee0 = edge_error(ref, pred, m);

    Tensor vandal = pred.clone();
    bool touched_far = false;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j)
            if (!m[i * n + j]) {
                bool far = far_from_mask(i, j);
                touched_far = touched_far || far;
                // Pointwise metrics ignore every mask-false pixel; EE only
                // guarantees it for pixels outside all masked windows.
                if (far) vandal.data()[i * n + j] = 1e6f;
            }
    if (touched_far) CHECK(edge_error(ref, vandal, m) == ee0);

    Tensor vandal2 = pred.clone();
    for (size_t i = 0; i < n * n; ++i)
        if (!m[i]) vandal2.data()[i] = -555.0f;
    CHECK(mae(ref, vandal2, m) == mae0);
    CHECK(mean_error(ref, vandal2, m) == me0);
    CHECK(block_r2(ref, vandal2, m, 5) == r20);
    auto bins1 = height_binned_residuals(ref, vandal2, m, edges, qs);
    for (size_t b = 0; b < bins0.size(); ++b) {
        CHECK(bins1[b].count == bins0[b].count);
        for (size_t k = 0; k < bins0[b].quantiles.size(); ++k)
            CHECK(bins1[b].quantiles[k] == bins0[b].quantiles[k]);
    }
}

TEST_CASE("compute_tile_metrics bundles the per-tile row") {
    Rng rng(8);
    Tensor ref = random_field(12, 12, rng, 0, 50);
    MetricsConfig cfg;
    cfg.block = 6;
    TileMetrics tm = compute_tile_metrics(ref, ref, cfg);
    CHECK(tm.n == mask_count(make_mask(ref, cfg.mask_threshold)));
    CHECK(tm.mae == 0.0);
    CHECK(tm.me == 0.0);
    CHECK(tm.ee == 0.0);
    CHECK(tm.r2_defined);
    CHECK(tm.r2 == 1.0);

    Tensor low = Tensor::full({4, 4}, 1.0f);
    CHECK_THROWS_AS(compute_tile_metrics(low, low, cfg), UndefinedMetricError);
}
