#pragma once

#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vsr/errors.hpp"
#include "vsr/io.hpp"
#include "vsr/optim.hpp"
#include "vsr/rng.hpp"
#include "vsr/tensor.hpp"

namespace vsr {

struct AutoencoderConfig {
    size_t in_channels = 1;
    size_t in_size = 128;         // square input, pixels per axis
    size_t patch = 16;            // pixels per latent cell per axis
    size_t latent_channels = 4;
    size_t hidden = 128;

    void validate() const {
        if (in_channels < 1 || in_size < 1 || hidden < 1)
            throw ConfigError("autoencoder: channels, size and hidden width must be >= 1");
        if (latent_channels < 1) throw ConfigError("autoencoder: latent channels must be >= 1");
        if (patch < 1 || in_size % patch != 0)
            throw ConfigError("autoencoder: input size " + std::to_string(in_size) +
                              " is not divisible by patch size " + std::to_string(patch));
    }
    size_t latent_grid() const { return in_size / patch; }
    size_t patch_dim() const { return in_channels * patch * patch; }
};

namespace detail {

// y = x W + b for x:[n, d], W:[d, h], b:[h]
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    return add(matmul(x, w), repeat_rows(b, x.dim(0)));
}

// [C, H, W] -> [tokens, C*P*P] with tokens walked row-major over the cell grid.
template <typename T>
TensorT<T> patchify(const TensorT<T>& image, size_t patch) {
    const size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    TensorT<T> r = reshape(image, {c, h / patch, patch, w / patch, patch});
    TensorT<T> p = permute(r, {1, 3, 0, 2, 4});
    return reshape(p, {(h / patch) * (w / patch), c * patch * patch});
}

// Inverse of patchify: [tokens, C*P*P] -> [C, g*P, g*P] on a g x g cell grid.
template <typename T>
TensorT<T> unpatchify(const TensorT<T>& tokens, size_t grid, size_t channels, size_t patch) {
    TensorT<T> r = reshape(tokens, {grid, grid, channels, patch, patch});
    TensorT<T> p = permute(r, {2, 0, 3, 1, 4});
    return reshape(p, {channels, grid * patch, grid * patch});
}

// [C, g, g] grid -> [g*g, C] token rows.
template <typename T>
TensorT<T> grid_to_tokens(const TensorT<T>& grid) {
    const size_t c = grid.dim(0), g = grid.dim(1);
    return reshape(permute(grid, {1, 2, 0}), {g * grid.dim(2), c});
}

// [n, C] tokens -> [C, g, g].
template <typename T>
TensorT<T> tokens_to_grid(const TensorT<T>& tokens, size_t g) {
    return permute(reshape(tokens, {g, g, tokens.dim(1)}), {2, 0, 1});
}

}  // namespace detail

// Patch MLP autoencoder: per-patch flatten -> 2-layer MLP -> latent channel
// vector per cell, and the mirrored decoder.
template <typename T>
struct PatchAutoencoderT {
    AutoencoderConfig cfg;
    TensorT<T> ew1, eb1, ew2, eb2;  // encoder
    TensorT<T> dw1, db1, dw2, db2;  // decoder

    static PatchAutoencoderT init(const AutoencoderConfig& cfg, uint64_t seed) {
        cfg.validate();
        PatchAutoencoderT ae;
        ae.cfg = cfg;
        const size_t pd = cfg.patch_dim(), hd = cfg.hidden, lc = cfg.latent_channels;
        auto win = [&](Shape s, uint64_t k, size_t fan_in) {
            return TensorT<T>::randn(std::move(s), derive_seed(seed, k),
                                     T(1) / std::sqrt(T(fan_in)));
        };
        ae.ew1 = win({pd, hd}, 1, pd);
        ae.eb1 = TensorT<T>::zeros({hd});
        ae.ew2 = win({hd, lc}, 2, hd);
        ae.eb2 = TensorT<T>::zeros({lc});
        ae.dw1 = win({lc, hd}, 3, lc);
        ae.db1 = TensorT<T>::zeros({hd});
        ae.dw2 = win({hd, pd}, 4, hd);
        ae.db2 = TensorT<T>::zeros({pd});
        for (auto& np : ae.named_params()) np.second.set_requires_grad(true);
        return ae;
    }

    std::vector<std::pair<std::string, TensorT<T>>> named_params() {
        return {{"enc.w1", ew1}, {"enc.b1", eb1}, {"enc.w2", ew2}, {"enc.b2", eb2},
                {"dec.w1", dw1}, {"dec.b1", db1}, {"dec.w2", dw2}, {"dec.b2", db2}};
    }
    std::vector<std::pair<std::string, TensorT<T>>> named_params() const {
        return const_cast<PatchAutoencoderT*>(this)->named_params();
    }

    // [C, S, S] -> [latent_channels, g, g]
    TensorT<T> encode(const TensorT<T>& image) const {
        check_input(image);
        TensorT<T> tok = detail::patchify(image, cfg.patch);
        TensorT<T> h = gelu(detail::linear(tok, ew1, eb1));
        TensorT<T> lat = detail::linear(h, ew2, eb2);
        return detail::tokens_to_grid(lat, cfg.latent_grid());
    }

    // [latent_channels, g, g] -> [C, S, S]
    TensorT<T> decode(const TensorT<T>& latent) const {
        const size_t g = cfg.latent_grid();
        if (latent.shape() != Shape{cfg.latent_channels, g, g})
            throw DimensionError("decode: latent shape " + shape_str(latent.shape()) +
                                 " does not match config " +
                                 shape_str({cfg.latent_channels, g, g}));
        TensorT<T> tok = detail::grid_to_tokens(latent);
        TensorT<T> h = gelu(detail::linear(tok, dw1, db1));
        TensorT<T> out = detail::linear(h, dw2, db2);
        return detail::unpatchify(out, g, cfg.in_channels, cfg.patch);
    }

    void freeze() {
        for (auto& np : named_params()) np.second.set_frozen(true);
    }
    bool frozen() const {
        auto ps = named_params();
        for (auto& np : ps)
            if (!np.second.frozen()) return false;
        return true;
    }

   private:
    void check_input(const TensorT<T>& image) const {
        if (image.shape() != Shape{cfg.in_channels, cfg.in_size, cfg.in_size})
            throw DimensionError("encode: image shape " + shape_str(image.shape()) +
                                 " does not match config " +
                                 shape_str({cfg.in_channels, cfg.in_size, cfg.in_size}));
    }
};

using PatchAutoencoder = PatchAutoencoderT<float>;

// Digest over parameter contents in name order; detects any weight mutation.
template <typename T>
uint64_t params_digest(const std::vector<std::pair<std::string, TensorT<T>>>& params) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& np : params) {
        h = fnv1a64(np.first.data(), np.first.size(), h);
        for (size_t i = 0; i < np.second.numel(); ++i) {
            float v = float(np.second.data()[i]);
            uint32_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, 4);
            uint8_t le[4] = {uint8_t(bits), uint8_t(bits >> 8), uint8_t(bits >> 16),
                             uint8_t(bits >> 24)};
            h = fnv1a64(le, 4, h);
        }
    }
    return h;
}

inline Checkpoint autoencoder_to_checkpoint(const PatchAutoencoder& ae,
                                            std::map<std::string, std::string> metadata) {
    Checkpoint ck;
    ck.frozen = ae.frozen();
    metadata["in_channels"] = std::to_string(ae.cfg.in_channels);
    metadata["in_size"] = std::to_string(ae.cfg.in_size);
    metadata["patch"] = std::to_string(ae.cfg.patch);
    metadata["latent_channels"] = std::to_string(ae.cfg.latent_channels);
    metadata["hidden"] = std::to_string(ae.cfg.hidden);
    ck.metadata = std::move(metadata);
    auto ps = ae.named_params();
    for (auto& np : ps) ck.add(np.first, np.second);
    return ck;
}

inline PatchAutoencoder autoencoder_from_checkpoint(const Checkpoint& ck) {
    AutoencoderConfig cfg;
    auto geti = [&](const char* k) -> size_t {
        auto it = ck.metadata.find(k);
        if (it == ck.metadata.end())
            throw DataError(std::string("checkpoint missing metadata key '") + k + "'");
        return size_t(std::stoull(it->second));
    };
    cfg.in_channels = geti("in_channels");
    cfg.in_size = geti("in_size");
    cfg.patch = geti("patch");
    cfg.latent_channels = geti("latent_channels");
    cfg.hidden = geti("hidden");
    PatchAutoencoder ae = PatchAutoencoder::init(cfg, 0);
    auto ps = ae.named_params();
    for (auto& np : ps) {
        Tensor loaded = ck.tensor(np.first);
        if (loaded.shape() != np.second.shape())
            throw DataError("checkpoint tensor '" + np.first + "' has shape " +
                            shape_str(loaded.shape()) + ", expected " +
                            shape_str(np.second.shape()));
        std::copy(loaded.data(), loaded.data() + loaded.numel(), np.second.data());
        if (ck.frozen) np.second.set_frozen(true);
    }
    return ae;
}

struct AeTrainConfig {
    size_t steps = 3000;
    size_t batch = 16;
    AdamWConfig opt;
    uint64_t seed = 1;
    size_t log_every = 50;
};

struct TrainCurve {
    std::vector<size_t> steps;
    std::vector<double> losses;
    bool aborted = false;        // true when a non-finite loss/gradient stopped the run
    size_t steps_done = 0;
};

// Minimizes reconstruction MSE over the given (already normalized) inputs.
// On a non-finite loss or gradient the last healthy parameters are restored.
template <typename T>
TrainCurve train_autoencoder(PatchAutoencoderT<T>& ae, const std::vector<TensorT<T>>& inputs,
                             const AeTrainConfig& tc) {
    if (inputs.empty()) throw DataError("autoencoder training set is empty");
    if (tc.batch < 1) throw ConfigError("batch size must be >= 1");
    AdamWT<T> opt(tc.opt);
    auto params = ae.named_params();
    for (auto& np : params) opt.add_param(np.first, np.second);

    Rng rng(tc.seed);
    TrainCurve curve;
    std::vector<std::vector<T>> snapshot(params.size());

    for (size_t step = 0; step < tc.steps; ++step) {
        for (size_t i = 0; i < params.size(); ++i)
            snapshot[i].assign(params[i].second.data(),
                               params[i].second.data() + params[i].second.numel());
        opt.zero_grad();
        double loss_acc = 0.0;
        for (size_t b = 0; b < tc.batch; ++b) {
            const TensorT<T>& x = inputs[rng.below(inputs.size())];
            Tape<T> tape;
            typename Tape<T>::Scope scope(tape);
            TensorT<T> recon = ae.decode(ae.encode(x));
            TensorT<T> loss = scale(mse(recon, x), T(1) / T(tc.batch));
            loss_acc += double(loss.item());
            tape.backward(loss);
        }
        bool bad = !std::isfinite(loss_acc);
        if (!bad) {
            try {
                opt.step();
            } catch (const NumericError&) {
                bad = true;
            }
        }
        if (bad) {
            for (size_t i = 0; i < params.size(); ++i)
                std::copy(snapshot[i].begin(), snapshot[i].end(), params[i].second.data());
            curve.aborted = true;
            break;
        }
        curve.steps_done = step + 1;
        if (step % tc.log_every == 0 || step + 1 == tc.steps) {
            curve.steps.push_back(step);
            curve.losses.push_back(loss_acc);
        }
    }
    return curve;
}

}  // namespace vsr
