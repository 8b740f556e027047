#include <cmath>
#include <vector>

#include "doctest.h"
#include "vsr/flow.hpp"

using namespace vsr;

namespace {

DatasetStats toy_stats() {
    DatasetStats st;
    st.band_mean.assign(kBands, 0.2f);
    st.band_std.assign(kBands, 0.1f);
    return st;
}

TilePair toy_tile(uint32_t id, uint64_t seed) {
    TilePair p;
    p.id = id;
    p.gi = id;
    p.gj = id + 1;
    p.coarse = Tensor::zeros({kBands, 4, 4});
    for (size_t i = 0; i < p.coarse.numel(); ++i)
        p.coarse.data()[i] = float(0.15 + 0.1 * normal_at(seed, i));
    p.fine = Tensor::zeros({1, 16, 16});
    for (size_t i = 0; i < p.fine.numel(); ++i)
        p.fine.data()[i] = float(std::fabs(20.0 + 8.0 * normal_at(seed + 1, i)));
    return p;
}

struct ToySetup {
    PatchAutoencoder src, tgt;
    UViT model;
    std::vector<TilePair> tiles;
    DatasetStats stats = toy_stats();

    ToySetup() :
        src(PatchAutoencoder::init({kBands, 4, 2, 2, 16}, 101)),
        tgt(PatchAutoencoder::init({1, 16, 8, 2, 16}, 102)),
        model(UViT::init(small_uvit(), 103)) {
        src.freeze();
        tgt.freeze();
        for (uint32_t i = 0; i < 6; ++i) tiles.push_back(toy_tile(i, 1000 + 17 * i));
    }
    static UViTConfig small_uvit() {
        UViTConfig c;
        c.depth = 2;
        c.heads = 2;
        c.dim = 16;
        c.mlp_ratio = 2;
        c.grid = 2;
        c.state_channels = 4;
        return c;
    }
};

}  // namespace

TEST_CASE("conditioned noise is a pure function of the conditioning") {
    Tensor cond = Tensor::randn({2, 3, 3}, 5, 1.0f);
    Tensor n1 = conditioned_noise(cond, 3);
    Tensor n2 = conditioned_noise(cond, 3);
    CHECK(n1.shape() == Shape{3, 3, 3});
    for (size_t i = 0; i < n1.numel(); ++i) CHECK(n1.data()[i] == n2.data()[i]);

    Tensor cond2 = cond.clone();
    cond2.data()[4] += 1e-3f;
    Tensor n3 = conditioned_noise(cond2, 3);
    size_t differing = 0;
    for (size_t i = 0; i < n1.numel(); ++i)
        if (n1.data()[i] != n3.data()[i]) ++differing;
    CHECK(differing > 0);

    Tensor bad = cond.clone();
    bad.data()[0] = std::nanf("");
    CHECK_THROWS_AS(conditioned_noise(bad, 3), NumericError);
}

TEST_CASE("conditioned noise passes the moment sanity check") {
    Tensor cond = Tensor::randn({1, 2, 2}, 9, 1.0f);
    Tensor n = conditioned_noise(cond, 2500);  // 10^4 samples
    double mean = 0;
    for (size_t i = 0; i < n.numel(); ++i) mean += double(n.data()[i]);
    mean /= double(n.numel());
    double var = 0;
    for (size_t i = 0; i < n.numel(); ++i) {
        double d = double(n.data()[i]) - mean;
        var += d * d;
    }
    var /= double(n.numel());
    CHECK(std::fabs(mean) < 0.05);
    CHECK(std::fabs(var - 1.0) < 0.1);
}

TEST_CASE("state pairs share conditioning and carry the target exactly") {
    Tensor cond = Tensor::randn({2, 3, 3}, 11, 1.0f);
    Tensor target = Tensor::randn({3, 3, 3}, 13, 1.0f);
    auto [z0, z1] = build_state_pair(cond, target);
    CHECK(z0.stacked.shape() == Shape{5, 3, 3});

    Tensor c0 = z0.conditioning();
    Tensor c1 = z1.conditioning();
    for (size_t i = 0; i < c0.numel(); ++i) {
        CHECK(c0.data()[i] == c1.data()[i]);
        CHECK(c0.data()[i] == cond.data()[i]);
    }
    Tensor t1 = z1.transported();
    for (size_t i = 0; i < t1.numel(); ++i) CHECK(t1.data()[i] == target.data()[i]);

    FlowSample s = make_flow_sample(cond, target, 0.3f);
    Tensor vc = slice(s.v_target, 0, 0, 2);
    for (size_t i = 0; i < vc.numel(); ++i) CHECK(vc.data()[i] == 0.0f);

    CHECK_THROWS_AS(build_state_pair(cond, Tensor::zeros({3, 4, 4})), DimensionError);
}

TEST_CASE("linear path endpoints and constant velocity") {
    Tensor z0 = Tensor::from({1, 1, 1}, {0.0f});
    Tensor z1 = Tensor::from({1, 1, 1}, {4.0f});
    CHECK(interpolate(z0, z1, 0.5f).data()[0] == 2.0f);
    CHECK_THROWS_AS(interpolate(z0, z1, -0.1f), RangeError);
    CHECK_THROWS_AS(interpolate(z0, z1, 1.1f), RangeError);

    Tensor cond = Tensor::randn({2, 2, 2}, 17, 1.0f);
    Tensor target = Tensor::randn({2, 2, 2}, 19, 1.0f);
    auto [a, b] = build_state_pair(cond, target);
    Tensor at0 = interpolate(a.stacked, b.stacked, 0.0f);
    Tensor at1 = interpolate(a.stacked, b.stacked, 1.0f);
    for (size_t i = 0; i < at0.numel(); ++i) {
        CHECK(at0.data()[i] == a.stacked.data()[i]);
        CHECK(at1.data()[i] == b.stacked.data()[i]);
    }

    // (z_u - z_s) / (u - s) equals z1 - z0 for any 0 <= s < u <= 1.
    FlowSample ref = make_flow_sample(cond, target, 0.0f);
    for (auto [s, u] : {std::pair<float, float>{0.0f, 1.0f}, {0.25f, 0.75f}, {0.1f, 0.4f}}) {
        Tensor zs = interpolate(a.stacked, b.stacked, s);
        Tensor zu = interpolate(a.stacked, b.stacked, u);
        for (size_t i = 0; i < zs.numel(); ++i) {
            double v = (double(zu.data()[i]) - double(zs.data()[i])) / double(u - s);
            CHECK(std::fabs(v - double(ref.v_target.data()[i])) < 1e-5);
        }
    }
}

TEST_CASE("velocity-matching loss closed forms") {
    Tensor cond = Tensor::randn({1, 2, 2}, 23, 1.0f);
    Tensor target = Tensor::randn({2, 2, 2}, 29, 1.0f);
    FlowSample s = make_flow_sample(cond, target, 0.5f);

    CHECK(fm_loss(s.v_target, s).item() == 0.0f);

    Tensor zero = Tensor::zeros(s.v_target.shape());
    double want = 0;
    for (size_t i = 0; i < s.v_target.numel(); ++i)
        want += double(s.v_target.data()[i]) * double(s.v_target.data()[i]);
    want /= double(s.v_target.numel());
    CHECK(std::fabs(double(fm_loss(zero, s).item()) - want) < 1e-6);
    CHECK(fm_loss(zero, s).item() >= 0.0f);

    // Transported-only variant: MSE over the transported slice alone.
    Tensor vt = slice(s.v_target, 0, 1, 2);
    double want2 = 0;
    for (size_t i = 0; i < vt.numel(); ++i)
        want2 += double(vt.data()[i]) * double(vt.data()[i]);
    want2 /= double(vt.numel());
    CHECK(std::fabs(double(fm_loss(zero, s, false).item()) - want2) < 1e-6);

    CHECK_THROWS_AS(fm_loss(Tensor::zeros({1, 2, 2}), s), DimensionError);
}

TEST_CASE("flow training runs deterministically against frozen encoders") {
    ToySetup a;
    FlowTrainConfig tc;
    tc.steps = 25;
    tc.batch = 2;
    tc.opt.lr = 1e-3f;
    tc.seed = 7;
    tc.log_every = 5;
    TrainCurve c1 = train_flow(a.model, a.tiles, a.src, a.tgt, a.stats, tc);
    CHECK(!c1.aborted);
    CHECK(c1.steps_done == 25);
    for (double l : c1.losses) CHECK(std::isfinite(l));

    ToySetup b;
    TrainCurve c2 = train_flow(b.model, b.tiles, b.src, b.tgt, b.stats, tc);
    REQUIRE(c2.losses.size() == c1.losses.size());
    for (size_t i = 0; i < c1.losses.size(); ++i) CHECK(c1.losses[i] == c2.losses[i]);
    CHECK(params_digest(a.model.named_params()) == params_digest(b.model.named_params()));
}

TEST_CASE("unfrozen autoencoders are rejected") {
    ToySetup s;
    PatchAutoencoder loose = PatchAutoencoder::init({kBands, 4, 2, 2, 16}, 999);
    FlowTrainConfig tc;
    tc.steps = 1;
    tc.batch = 1;
    CHECK_THROWS_AS(train_flow(s.model, s.tiles, loose, s.tgt, s.stats, tc), UsageError);
}

TEST_CASE("non-finite loss aborts flow training with weights restored") {
    ToySetup s;
    s.tiles.resize(1);
    s.tiles[0].fine.data()[0] = std::nanf("");
    uint64_t d0 = params_digest(s.model.named_params());
    FlowTrainConfig tc;
    tc.steps = 5;
    tc.batch = 1;
    TrainCurve c = train_flow(s.model, s.tiles, s.src, s.tgt, s.stats, tc);
    CHECK(c.aborted);
    CHECK(params_digest(s.model.named_params()) == d0);
}
