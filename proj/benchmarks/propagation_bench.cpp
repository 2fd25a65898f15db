// Microbenchmarks of the propagation refinement path at the evaluation
// resolution from the runtime comparison (192x256).
#include <benchmark/benchmark.h>

#include "emdc/fcspn.hpp"
#include "emdc/rng.hpp"

namespace {

constexpr int kH = 192;
constexpr int kW = 256;
constexpr int kFeatCh = 16;

struct BenchInputs {
    emdc::Tensor features{{1, kFeatCh, kH, kW}};
    emdc::Tensor depth{{1, 1, kH, kW}};
    emdc::Tensor anchor_depth{{1, 1, kH, kW}};
    emdc::Tensor anchor_mask{{1, 1, kH, kW}};

    BenchInputs() {
        emdc::Rng rng(7);
        for (std::int64_t i = 0; i < features.numel(); ++i) features[i] = rng.normal(0.0, 0.5);
        for (std::int64_t i = 0; i < depth.numel(); ++i) depth[i] = rng.uniform(0.5, 5.0);
        for (int i = 0; i < kH; i += 8)
            for (int j = 0; j < kW; j += 8) {
                anchor_depth.at(0, 0, i, j) = rng.uniform(0.5, 5.0);
                anchor_mask.at(0, 0, i, j) = 1.0;
            }
    }
};

const BenchInputs& inputs() {
    static BenchInputs in;
    return in;
}

void run_refine(benchmark::State& state, const char* preset, bool anchors) {
    emdc::FcspnConfig cfg;
    cfg.preset = preset;
    cfg.anchor = anchors;
    emdc::nn::ParamInit init(11);
    emdc::FcspnModule module(kFeatCh, cfg, init);

    emdc::ag::NoGradGuard no_grad;
    const emdc::ag::Var fused = emdc::ag::constant(inputs().depth);
    const emdc::ag::Var feats = emdc::ag::constant(inputs().features);
    const emdc::Tensor* ad = anchors ? &inputs().anchor_depth : nullptr;
    const emdc::Tensor* am = anchors ? &inputs().anchor_mask : nullptr;

    for (auto _ : state) {
        emdc::ag::Var out = module.refine(fused, feats, ad, am);
        benchmark::DoNotOptimize(out.value().data());
    }
}

void BM_FcspnRefine_s6(benchmark::State& state) { run_refine(state, "s6", true); }
void BM_FcspnRefine_s9(benchmark::State& state) { run_refine(state, "s9", true); }
void BM_FcspnRefine_s6_no_anchor(benchmark::State& state) { run_refine(state, "s6", false); }

void BM_PropagateOnce(benchmark::State& state) {
    const int dilation = static_cast<int>(state.range(0));
    emdc::Rng rng(13);
    emdc::Tensor w({1, 8, kH, kW});
    emdc::Tensor c({1, 1, kH, kW});
    for (int i = 0; i < kH; ++i)
        for (int j = 0; j < kW; ++j) {
            double s = 0;
            for (int k = 0; k < 8; ++k) {
                const double v = rng.uniform(0.0, 0.12);
                w.at(0, k, i, j) = v;
                s += v;
            }
            c.at(0, 0, i, j) = 1.0 - s;
        }
    emdc::ag::NoGradGuard no_grad;
    const emdc::ag::Var depth = emdc::ag::constant(inputs().depth);
    const emdc::ag::Var wv = emdc::ag::constant(w);
    const emdc::ag::Var cv = emdc::ag::constant(c);
    for (auto _ : state) {
        emdc::ag::Var out = emdc::propagate_once(depth, wv, cv, dilation);
        benchmark::DoNotOptimize(out.value().data());
    }
}

BENCHMARK(BM_PropagateOnce)->Arg(1)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FcspnRefine_s6)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FcspnRefine_s9)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FcspnRefine_s6_no_anchor)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
