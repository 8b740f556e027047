#pragma once

#include <cmath>

#include "vsr/errors.hpp"
#include "vsr/scene.hpp"
#include "vsr/tensor.hpp"

namespace vsr {

// Height that best explains the observed band vector under the known band
// response model: coarse grid search over [0, h_max] then local refinement.
inline double invert_band_response(const float* bands, double h_max = 120.0) {
    auto sse = [&](double h) {
        double s = 0;
        for (size_t k = 0; k < kBands; ++k) {
            double d = double(bands[k]) - double(band_response(k, float(h)));
            s += d * d;
        }
        return s;
    };
    double best_h = 0, best = sse(0);
    for (double h = 0.5; h <= h_max + 1e-9; h += 0.5) {
        double s = sse(h);
        if (s < best) {
            best = s;
            best_h = h;
        }
    }
    double lo = std::max(0.0, best_h - 0.5), hi = std::min(h_max, best_h + 0.5);
    for (double h = lo; h <= hi + 1e-12; h += 0.01) {
        double s = sse(h);
        if (s < best) {
            best = s;
            best_h = h;
        }
    }
    return best_h;
}

// Per-coarse-pixel inversion of the band response followed by nearest-neighbor
// upsampling: the reference point the generative model has to beat.
inline Tensor baseline_predict(const Tensor& coarse, size_t scale, double h_max = 120.0) {
    if (coarse.ndim() != 3 || coarse.dim(0) != kBands)
        throw DimensionError("baseline: composite must be [12, H, W], got " +
                             shape_str(coarse.shape()));
    if (scale < 1) throw RangeError("baseline: scale must be >= 1");
    const size_t hs = coarse.dim(1), ws = coarse.dim(2);
    Tensor out = Tensor::zeros({1, hs * scale, ws * scale});
    std::vector<float> pix(kBands);
    for (size_t i = 0; i < hs; ++i)
        for (size_t j = 0; j < ws; ++j) {
            for (size_t k = 0; k < kBands; ++k) pix[k] = coarse.data()[(k * hs + i) * ws + j];
            const float h = float(invert_band_response(pix.data(), h_max));
            for (size_t di = 0; di < scale; ++di) {
                float* row = out.data() + (i * scale + di) * ws * scale + j * scale;
                for (size_t dj = 0; dj < scale; ++dj) row[dj] = h;
            }
        }
    return out;
}

}  // namespace vsr
