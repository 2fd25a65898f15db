#include "emdc/bench.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "emdc/fcspn.hpp"
#include "emdc/rng.hpp"

namespace emdc {

std::vector<BenchRow> benchmark_propagation(const std::vector<std::string>& presets, int height,
                                            int width, int repeats, std::uint64_t seed) {
    if (repeats < 5)
        throw std::invalid_argument("benchmark_propagation: need >= 5 repeats for a std, got " +
                                    std::to_string(repeats));
    if (presets.empty()) throw std::invalid_argument("benchmark_propagation: no presets");

    constexpr int kFeatCh = 16;
    Rng rng(mix_seed(seed, 0xbe4c4));
    Tensor features({1, kFeatCh, height, width});
    for (std::int64_t i = 0; i < features.numel(); ++i) features[i] = rng.normal(0.0, 0.5);
    Tensor depth({1, 1, height, width});
    for (std::int64_t i = 0; i < depth.numel(); ++i) depth[i] = rng.uniform(0.5, 5.0);
    Tensor anchor_depth({1, 1, height, width});
    Tensor anchor_mask({1, 1, height, width});
    for (int i = 0; i < height; i += 8)
        for (int j = 0; j < width; j += 8) {
            anchor_depth.at(0, 0, i, j) = rng.uniform(0.5, 5.0);
            anchor_mask.at(0, 0, i, j) = 1.0;
        }

    std::vector<BenchRow> rows;
    for (const auto& preset : presets) {
        FcspnConfig cfg;
        cfg.preset = preset;
        nn::ParamInit init(mix_seed(seed, 0x11));
        FcspnModule module(kFeatCh, cfg, init);

        ag::NoGradGuard no_grad;
        const ag::Var fused = ag::constant(depth);
        const ag::Var feats = ag::constant(features);

        int iterations = 0;
        auto run_once = [&]() {
            iterations = 0;
            ag::Var out = module.refine(fused, feats, &anchor_depth, &anchor_mask, &iterations);
            return out.value()[0];  // keep the result alive
        };

        double acc = 0;
        for (int w = 0; w < 2; ++w) acc += run_once();  // warmup

        std::vector<double> times;
        for (int r = 0; r < repeats; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            acc += run_once();
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        volatile double sink = acc;
        (void)sink;

        double mean = 0;
        for (double t : times) mean += t;
        mean /= static_cast<double>(times.size());
        double var = 0;
        for (double t : times) var += (t - mean) * (t - mean);
        var /= static_cast<double>(times.size());

        rows.push_back({preset, iterations, mean, std::sqrt(var)});
    }
    return rows;
}

}  // namespace emdc
