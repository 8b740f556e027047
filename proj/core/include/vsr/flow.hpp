#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vsr/autoencoder.hpp"
#include "vsr/errors.hpp"
#include "vsr/optim.hpp"
#include "vsr/rng.hpp"
#include "vsr/scene.hpp"
#include "vsr/tensor.hpp"
#include "vsr/uvit.hpp"

namespace vsr {

// Standard-normal field drawn from a counter-based generator seeded by the
// digest of the conditioning latent's canonical serialization: the same
// conditioning always yields bit-identical noise.
inline Tensor conditioned_noise(const Tensor& cond, size_t channels) {
    if (cond.ndim() != 3) throw DimensionError("conditioning latent must be [C, g, g]");
    for (size_t i = 0; i < cond.numel(); ++i)
        if (!std::isfinite(cond.data()[i]))
            throw NumericError("conditioning latent contains a non-finite value");
    const uint64_t seed = digest_f32(cond.data(), cond.numel());
    Tensor out = Tensor::zeros({channels, cond.dim(1), cond.dim(2)});
    for (size_t i = 0; i < out.numel(); ++i) out.data()[i] = float(normal_at(seed, i));
    return out;
}

struct LatentState {
    size_t cond_channels = 0;
    Tensor stacked;  // [(C_s + C_t), g, g], conditioning channels first

    Tensor conditioning() const { return slice(stacked, 0, 0, cond_channels); }
    Tensor transported() const {
        return slice(stacked, 0, cond_channels, stacked.dim(0) - cond_channels);
    }
};

// z0 = stack(cond, conditioned_noise(cond)); z1 = stack(cond, target).
inline std::pair<LatentState, LatentState> build_state_pair(const Tensor& cond,
                                                            const Tensor& target) {
    if (cond.ndim() != 3 || target.ndim() != 3 || cond.dim(1) != target.dim(1) ||
        cond.dim(2) != target.dim(2))
        throw DimensionError("latent grids disagree: conditioning " + shape_str(cond.shape()) +
                             " vs target " + shape_str(target.shape()));
    Tensor noise = conditioned_noise(cond, target.dim(0));
    LatentState z0{cond.dim(0), concat(cond, noise, 0)};
    LatentState z1{cond.dim(0), concat(cond, target, 0)};
    return {z0, z1};
}

// Linear path z_t = (1-t) z0 + t z1.
inline Tensor interpolate(const Tensor& z0, const Tensor& z1, float t) {
    if (z0.shape() != z1.shape())
        throw DimensionError("interpolate: endpoint shapes differ: " + shape_str(z0.shape()) +
                             " vs " + shape_str(z1.shape()));
    if (!(t >= 0.0f && t <= 1.0f))
        throw RangeError("interpolation time must lie in [0, 1], got " + std::to_string(t));
    Tensor out = Tensor::zeros(z0.shape());
    for (size_t i = 0; i < out.numel(); ++i)
        out.data()[i] = (1.0f - t) * z0.data()[i] + t * z1.data()[i];
    return out;
}

struct FlowSample {
    LatentState z0, z1;
    float t = 0;
    Tensor zt;        // interpolant
    Tensor v_target;  // z1 - z0; conditioning slice identically zero
};

inline FlowSample make_flow_sample(const Tensor& cond, const Tensor& target, float t) {
    auto [z0, z1] = build_state_pair(cond, target);
    FlowSample s;
    s.t = t;
    s.zt = interpolate(z0.stacked, z1.stacked, t);
    Tensor v = Tensor::zeros(z0.stacked.shape());
    for (size_t i = 0; i < v.numel(); ++i)
        v.data()[i] = z1.stacked.data()[i] - z0.stacked.data()[i];
    // Conditioning channels are shared between the endpoints; make the zero
    // slice exact rather than trusting float cancellation.
    const size_t per = cond.dim(1) * cond.dim(2);
    std::fill(v.data(), v.data() + cond.dim(0) * per, 0.0f);
    s.v_target = v;
    s.z0 = std::move(z0);
    s.z1 = std::move(z1);
    return s;
}

// Velocity-matching MSE over all state channels (conditioning included; its
// target is zero). When on_conditioning is false, only the transported slice
// enters the loss.
inline Tensor fm_loss(const Tensor& v_pred, const FlowSample& sample, bool on_conditioning = true) {
    if (v_pred.shape() != sample.v_target.shape())
        throw DimensionError("fm_loss: prediction shape " + shape_str(v_pred.shape()) +
                             " does not match target " + shape_str(sample.v_target.shape()));
    if (on_conditioning) return mse(v_pred, sample.v_target);
    const size_t cs = sample.z0.cond_channels;
    const size_t ct = sample.v_target.dim(0) - cs;
    return mse(slice(v_pred, 0, cs, ct), slice(sample.v_target, 0, cs, ct));
}

struct FlowTrainConfig {
    size_t steps = 8000;
    size_t batch = 16;
    AdamWConfig opt;
    uint64_t seed = 1;
    size_t log_every = 50;
    bool loss_on_conditioning = true;
    bool augment = true;
};

// Trains the velocity network against frozen autoencoders on raw tile pairs.
// Per item: paired dihedral augmentation, normalization, frozen encoding,
// t ~ U(0,1), velocity-matching MSE. Aborts on non-finite loss/gradients,
// restoring the last healthy weights.
template <typename T = float>
TrainCurve train_flow(UViT& model, const std::vector<TilePair>& train_tiles,
                      const PatchAutoencoder& source_ae, const PatchAutoencoder& target_ae,
                      const DatasetStats& stats, const FlowTrainConfig& tc) {
    static_assert(std::is_same_v<T, float>, "flow training runs in float");
    if (!source_ae.frozen() || !target_ae.frozen())
        throw UsageError("flow training requires frozen autoencoders");
    if (train_tiles.empty()) throw DataError("flow training set is empty");
    if (tc.batch < 1) throw ConfigError("batch size must be >= 1");
    if (source_ae.cfg.latent_grid() != target_ae.cfg.latent_grid())
        throw DimensionError("autoencoder latent grids disagree");
    const size_t expect_state = source_ae.cfg.latent_channels + target_ae.cfg.latent_channels;
    if (model.cfg.state_channels != expect_state || model.cfg.grid != source_ae.cfg.latent_grid())
        throw DimensionError("velocity model expects state [" +
                             std::to_string(model.cfg.state_channels) + ", " +
                             std::to_string(model.cfg.grid) + ", " + std::to_string(model.cfg.grid) +
                             "], autoencoders produce [" + std::to_string(expect_state) + ", " +
                             std::to_string(source_ae.cfg.latent_grid()) + ", " +
                             std::to_string(source_ae.cfg.latent_grid()) + "]");

    const uint64_t src_digest = params_digest(source_ae.named_params());
    const uint64_t tgt_digest = params_digest(target_ae.named_params());

    AdamW opt(tc.opt);
    auto params = model.named_params();
    for (auto& np : params) opt.add_param(np.first, np.second);

    Rng rng(tc.seed);
    TrainCurve curve;
    std::vector<std::vector<float>> snapshot(params.size());

    for (size_t step = 0; step < tc.steps; ++step) {
        for (size_t i = 0; i < params.size(); ++i)
            snapshot[i].assign(params[i].second.data(),
                               params[i].second.data() + params[i].second.numel());
        opt.zero_grad();
        double loss_acc = 0.0;
        for (size_t b = 0; b < tc.batch; ++b) {
            const TilePair& raw = train_tiles[rng.below(train_tiles.size())];
            const int code = tc.augment ? int(rng.below(8)) : 0;
            TilePair pair = code == 0 ? raw : augment_pair(raw, code);
            Tensor cond = source_ae.encode(normalize_source(pair.coarse, stats));
            Tensor tlat = target_ae.encode(normalize_target(pair.fine, stats));
            const float t = float(rng.uniform());
            FlowSample sample = make_flow_sample(cond, tlat, t);

            Tape<float> tape;
            Tape<float>::Scope scope(tape);
            Tensor v_pred = model.forward(sample.zt, t);
            Tensor loss = scale(fm_loss(v_pred, sample, tc.loss_on_conditioning),
                                1.0f / float(tc.batch));
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

    if (params_digest(source_ae.named_params()) != src_digest ||
        params_digest(target_ae.named_params()) != tgt_digest)
        throw UsageError("frozen autoencoder weights changed during flow training");
    return curve;
}

}  // namespace vsr
