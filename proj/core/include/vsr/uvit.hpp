#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vsr/autoencoder.hpp"  // detail::linear / grid_to_tokens / tokens_to_grid
#include "vsr/errors.hpp"
#include "vsr/io.hpp"
#include "vsr/rng.hpp"
#include "vsr/tensor.hpp"

namespace vsr {

struct UViTConfig {
    size_t depth = 6;          // transformer blocks, even: half down-path, half up-path
    size_t heads = 4;
    size_t dim = 64;           // token width, divisible by heads
    size_t mlp_ratio = 2;
    size_t grid = 8;           // latent cells per axis; tokens = grid^2
    size_t state_channels = 8;

    void validate() const {
        if (depth < 2 || depth % 2 != 0)
            throw ConfigError("uvit: depth must be even and >= 2, got " + std::to_string(depth));
        if (heads < 1 || dim % heads != 0)
            throw ConfigError("uvit: width " + std::to_string(dim) +
                              " must be divisible by heads " + std::to_string(heads));
        if (mlp_ratio < 1 || grid < 1 || state_channels < 1)
            throw ConfigError("uvit: mlp_ratio, grid and state channels must be >= 1");
    }
    size_t tokens() const { return grid * grid; }
};

// Sinusoidal time features: interleaved [sin(w0 t), cos(w0 t), sin(w1 t), ...]
// over geometrically spaced frequencies 1..1000. Pure function of t.
template <typename T>
TensorT<T> time_features(T t, size_t dim) {
    if (!(t >= T(0) && t <= T(1)))
        throw RangeError("time must lie in [0, 1], got " + std::to_string(double(t)));
    if (dim < 2 || dim % 2 != 0) throw ConfigError("time feature width must be even and >= 2");
    const size_t k = dim / 2;
    TensorT<T> out = TensorT<T>::zeros({dim});
    for (size_t i = 0; i < k; ++i) {
        double w = k == 1 ? 1.0 : std::exp(std::log(1000.0) * double(i) / double(k - 1));
        out.data()[2 * i] = T(std::sin(w * double(t)));
        out.data()[2 * i + 1] = T(std::cos(w * double(t)));
    }
    return out;
}

template <typename T>
struct UViTT {
    struct Block {
        TensorT<T> ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
        TensorT<T> ln2_g, ln2_b, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
        TensorT<T> fuse_w, fuse_b;  // up-path blocks only
        bool has_fuse = false;
    };

    UViTConfig cfg;
    TensorT<T> embed_w, embed_b;               // [C, D], [D]
    TensorT<T> pos;                            // [N, D] learned positions
    TensorT<T> tw1, tb1, tw2, tb2;             // time-embedding MLP
    std::vector<Block> blocks;
    TensorT<T> head_ln_g, head_ln_b, head_w, head_b;
    // Diagnostic switch: replaces the stored down-path activations with zeros
    // at the fusion points, to demonstrate the long skips are live.
    bool debug_zero_skips = false;

    static UViTT init(const UViTConfig& cfg, uint64_t seed) {
        cfg.validate();
        UViTT m;
        m.cfg = cfg;
        uint64_t key = 0;
        auto w = [&](Shape s, size_t fan_in) {
            return TensorT<T>::randn(std::move(s), derive_seed(seed, ++key),
                                     T(1) / std::sqrt(T(fan_in)));
        };
        const size_t d = cfg.dim, c = cfg.state_channels, n = cfg.tokens(), r = cfg.mlp_ratio;
        m.embed_w = w({c, d}, c);
        m.embed_b = TensorT<T>::zeros({d});
        m.pos = TensorT<T>::randn({n, d}, derive_seed(seed, ++key), T(0.02));
        m.tw1 = w({d, d}, d);
        m.tb1 = TensorT<T>::zeros({d});
        m.tw2 = w({d, d}, d);
        m.tb2 = TensorT<T>::zeros({d});
        for (size_t l = 0; l < cfg.depth; ++l) {
            Block b;
            b.ln1_g = TensorT<T>::full({d}, T(1));
            b.ln1_b = TensorT<T>::zeros({d});
            b.qkv_w = w({d, 3 * d}, d);
            b.qkv_b = TensorT<T>::zeros({3 * d});
            b.proj_w = w({d, d}, d);
            b.proj_b = TensorT<T>::zeros({d});
            b.ln2_g = TensorT<T>::full({d}, T(1));
            b.ln2_b = TensorT<T>::zeros({d});
            b.mlp_w1 = w({d, r * d}, d);
            b.mlp_b1 = TensorT<T>::zeros({r * d});
            b.mlp_w2 = w({r * d, d}, r * d);
            b.mlp_b2 = TensorT<T>::zeros({d});
            if (l >= cfg.depth / 2) {
                b.has_fuse = true;
                // Identity on the running tokens, zero on the skip: the up-path
                // starts as a plain stack and learns how much skip to admit.
                b.fuse_w = TensorT<T>::zeros({2 * d, d});
                for (size_t i = 0; i < d; ++i) b.fuse_w.data()[i * d + i] = T(1);
                b.fuse_b = TensorT<T>::zeros({d});
            }
            m.blocks.push_back(std::move(b));
        }
        m.head_ln_g = TensorT<T>::full({d}, T(1));
        m.head_ln_b = TensorT<T>::zeros({d});
        m.head_w = TensorT<T>::zeros({d, c});  // zero head: initial velocity is zero
        m.head_b = TensorT<T>::zeros({c});
        for (auto& np : m.named_params()) np.second.set_requires_grad(true);
        return m;
    }

    std::vector<std::pair<std::string, TensorT<T>>> named_params() {
        std::vector<std::pair<std::string, TensorT<T>>> ps = {
            {"embed.w", embed_w}, {"embed.b", embed_b}, {"pos", pos},
            {"time.w1", tw1},     {"time.b1", tb1},     {"time.w2", tw2},
            {"time.b2", tb2}};
        for (size_t l = 0; l < blocks.size(); ++l) {
            Block& b = blocks[l];
            std::string p = "blk" + std::to_string(l) + ".";
            ps.emplace_back(p + "ln1.g", b.ln1_g);
            ps.emplace_back(p + "ln1.b", b.ln1_b);
            ps.emplace_back(p + "qkv.w", b.qkv_w);
            ps.emplace_back(p + "qkv.b", b.qkv_b);
            ps.emplace_back(p + "proj.w", b.proj_w);
            ps.emplace_back(p + "proj.b", b.proj_b);
            ps.emplace_back(p + "ln2.g", b.ln2_g);
            ps.emplace_back(p + "ln2.b", b.ln2_b);
            ps.emplace_back(p + "mlp.w1", b.mlp_w1);
            ps.emplace_back(p + "mlp.b1", b.mlp_b1);
            ps.emplace_back(p + "mlp.w2", b.mlp_w2);
            ps.emplace_back(p + "mlp.b2", b.mlp_b2);
            if (b.has_fuse) {
                ps.emplace_back(p + "fuse.w", b.fuse_w);
                ps.emplace_back(p + "fuse.b", b.fuse_b);
            }
        }
        ps.emplace_back("head.ln.g", head_ln_g);
        ps.emplace_back("head.ln.b", head_ln_b);
        ps.emplace_back("head.w", head_w);
        ps.emplace_back("head.b", head_b);
        return ps;
    }
    std::vector<std::pair<std::string, TensorT<T>>> named_params() const {
        return const_cast<UViTT*>(this)->named_params();
    }

    // state: [C_state, grid, grid], t in [0,1] -> same-shape velocity.
    TensorT<T> forward(const TensorT<T>& state, T t) const {
        if (state.shape() != Shape{cfg.state_channels, cfg.grid, cfg.grid})
            throw DimensionError("uvit: state shape " + shape_str(state.shape()) +
                                 " does not match config " +
                                 shape_str({cfg.state_channels, cfg.grid, cfg.grid}));
        const size_t n = cfg.tokens();
        TensorT<T> x = detail::linear(detail::grid_to_tokens(state), embed_w, embed_b);
        x = add(x, pos);
        TensorT<T> te = time_embed(t);
        x = add(x, repeat_rows(te, n));

        std::vector<TensorT<T>> saved;
        for (size_t l = 0; l < cfg.depth; ++l) {
            const Block& b = blocks[l];
            if (b.has_fuse) {
                TensorT<T> skip = saved[cfg.depth - 1 - l];
                if (debug_zero_skips) skip = TensorT<T>::zeros(skip.shape());
                x = detail::linear(concat(x, skip, 1), b.fuse_w, b.fuse_b);
            }
            TensorT<T> a = layernorm(x, b.ln1_g, b.ln1_b, T(1e-5));
            x = add(x, attention(a, b));
            TensorT<T> mlp_in = layernorm(x, b.ln2_g, b.ln2_b, T(1e-5));
            TensorT<T> h = gelu(detail::linear(mlp_in, b.mlp_w1, b.mlp_b1));
            x = add(x, detail::linear(h, b.mlp_w2, b.mlp_b2));
            if (l < cfg.depth / 2) saved.push_back(x);
        }
        x = layernorm(x, head_ln_g, head_ln_b, T(1e-5));
        TensorT<T> out = detail::linear(x, head_w, head_b);
        return detail::tokens_to_grid(out, cfg.grid);
    }

    // Sinusoidal features through the learned 2-layer MLP; [dim] vector.
    TensorT<T> time_embed(T t) const {
        TensorT<T> s = reshape(time_features(t, cfg.dim), {size_t(1), cfg.dim});
        TensorT<T> h = gelu(detail::linear(s, tw1, tb1));
        TensorT<T> e = detail::linear(h, tw2, tb2);
        return reshape(e, {cfg.dim});
    }

    void freeze() {
        for (auto& np : named_params()) np.second.set_frozen(true);
    }

   private:
    TensorT<T> attention(const TensorT<T>& x, const Block& b) const {
        const size_t n = x.dim(0), d = cfg.dim, dh = d / cfg.heads;
        TensorT<T> qkv = detail::linear(x, b.qkv_w, b.qkv_b);
        TensorT<T> q = slice(qkv, 1, 0, d);
        TensorT<T> k = slice(qkv, 1, d, d);
        TensorT<T> v = slice(qkv, 1, 2 * d, d);
        TensorT<T> merged;
        for (size_t hh = 0; hh < cfg.heads; ++hh) {
            TensorT<T> qh = slice(q, 1, hh * dh, dh);
            TensorT<T> kh = slice(k, 1, hh * dh, dh);
            TensorT<T> vh = slice(v, 1, hh * dh, dh);
            TensorT<T> scores = scale(matmul(qh, permute(kh, {1, 0})), T(1) / std::sqrt(T(dh)));
            TensorT<T> att = softmax_rows(scores);
            TensorT<T> oh = matmul(att, vh);
            merged = hh == 0 ? oh : concat(merged, oh, 1);
        }
        (void)n;
        return detail::linear(merged, b.proj_w, b.proj_b);
    }
};

using UViT = UViTT<float>;

inline Checkpoint uvit_to_checkpoint(const UViT& model,
                                     std::map<std::string, std::string> metadata) {
    Checkpoint ck;
    metadata["depth"] = std::to_string(model.cfg.depth);
    metadata["heads"] = std::to_string(model.cfg.heads);
    metadata["dim"] = std::to_string(model.cfg.dim);
    metadata["mlp_ratio"] = std::to_string(model.cfg.mlp_ratio);
    metadata["grid"] = std::to_string(model.cfg.grid);
    metadata["state_channels"] = std::to_string(model.cfg.state_channels);
    ck.metadata = std::move(metadata);
    auto ps = model.named_params();
    for (auto& np : ps) ck.add(np.first, np.second);
    return ck;
}

inline UViT uvit_from_checkpoint(const Checkpoint& ck) {
    auto geti = [&](const char* k) -> size_t {
        auto it = ck.metadata.find(k);
        if (it == ck.metadata.end())
            throw DataError(std::string("checkpoint missing metadata key '") + k + "'");
        return size_t(std::stoull(it->second));
    };
    UViTConfig cfg;
    cfg.depth = geti("depth");
    cfg.heads = geti("heads");
    cfg.dim = geti("dim");
    cfg.mlp_ratio = geti("mlp_ratio");
    cfg.grid = geti("grid");
    cfg.state_channels = geti("state_channels");
    UViT m = UViT::init(cfg, 0);
    auto ps = m.named_params();
    for (auto& np : ps) {
        Tensor loaded = ck.tensor(np.first);
        if (loaded.shape() != np.second.shape())
            throw DataError("checkpoint tensor '" + np.first + "' has shape " +
                            shape_str(loaded.shape()) + ", expected " +
                            shape_str(np.second.shape()));
        std::copy(loaded.data(), loaded.data() + loaded.numel(), np.second.data());
    }
    return m;
}

}  // namespace vsr
