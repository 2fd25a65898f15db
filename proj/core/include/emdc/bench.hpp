#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace emdc {

struct BenchRow {
    std::string preset;
    int iterations = 0;
    double mean_ms = 0;
    double std_ms = 0;
};

/// Wall-clock of the propagation refinement (affinity init, per-stage
/// diffusion, kernel reweighting) at the given resolution, inference mode.
/// Two warmup runs are discarded; repeats must be >= 5 so a std is
/// meaningful. Absolute times are hardware-bound; only trends are asserted
/// by callers.
std::vector<BenchRow> benchmark_propagation(const std::vector<std::string>& presets, int height,
                                            int width, int repeats, std::uint64_t seed = 0);

}  // namespace emdc
