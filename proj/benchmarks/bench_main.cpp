#include <benchmark/benchmark.h>

#include "vsr/ode.hpp"
#include "vsr/scene.hpp"
#include "vsr/tensor.hpp"
#include "vsr/uvit.hpp"

namespace {

void BM_matmul(benchmark::State& state) {
    const size_t n = size_t(state.range(0));
    vsr::Tensor a = vsr::Tensor::randn({n, n}, 1);
    vsr::Tensor b = vsr::Tensor::randn({n, n}, 2);
    for (auto _ : state) {
        vsr::Tensor c = vsr::matmul(a, b);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(2 * n * n * n));
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_softmax_rows(benchmark::State& state) {
    const size_t n = size_t(state.range(0));
    vsr::Tensor x = vsr::Tensor::randn({n, n}, 3);
    for (auto _ : state) {
        vsr::Tensor y = vsr::softmax_rows(x);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_softmax_rows)->Arg(64)->Arg(256);

// One forward pass of the production-size velocity model (inference path).
void BM_uvit_forward(benchmark::State& state) {
    vsr::UViTConfig cfg;
    cfg.depth = 6;
    cfg.heads = 4;
    cfg.dim = 64;
    cfg.mlp_ratio = 2;
    cfg.grid = 8;
    cfg.state_channels = 8;
    vsr::UViT model = vsr::UViT::init(cfg, 7);
    vsr::Tensor z = vsr::Tensor::randn({8, 8, 8}, 8);
    for (auto _ : state) {
        vsr::Tensor v = model.forward(z, 0.5f);
        benchmark::DoNotOptimize(v.data());
    }
}
BENCHMARK(BM_uvit_forward);

// Full fixed-grid integration as run during inference (nfev = 1 + 6 N).
void BM_integrate_dopri5(benchmark::State& state) {
    const int steps = int(state.range(0));
    vsr::IntegratorConfig cfg;
    cfg.steps = steps;
    const vsr::VelocityFn<float> decay = [](const std::vector<float>& z, float,
                                            std::vector<float>& out) {
        for (size_t i = 0; i < z.size(); ++i) out[i] = -z[i];
    };
    std::vector<float> z0(512, 1.0f);
    for (auto _ : state) {
        auto res = vsr::integrate<float>(decay, z0, cfg);
        benchmark::DoNotOptimize(res.z.data());
    }
}
BENCHMARK(BM_integrate_dopri5)->Arg(20)->Arg(100);

// Cloud-masked median compositing of one tile's acquisition stack.
void BM_median_composite(benchmark::State& state) {
    vsr::SceneParams sp;
    sp.fine_size = 128;
    sp.density = 80.0 / (128.0 * 128.0);
    sp.seed = 99;
    vsr::Tensor chm = vsr::gen_highres_chm(sp);
    vsr::RenderParams rp;
    rp.scale = 8;
    rp.dates = 6;
    rp.seed = 99;
    vsr::AcquisitionStack stack = vsr::render_acquisitions(chm, rp);
    for (auto _ : state) {
        vsr::Tensor composite = vsr::median_composite(stack);
        benchmark::DoNotOptimize(composite.data());
    }
}
BENCHMARK(BM_median_composite);

}  // namespace

BENCHMARK_MAIN();
