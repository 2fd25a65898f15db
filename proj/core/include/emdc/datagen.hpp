#pragma once

#include <cstdint>
#include <vector>

#include "emdc/grid.hpp"

namespace emdc {

/// RGB + ground-truth depth over one synthetic indoor view. Depth is in
/// meters; pixels outside the measurable range carry gt_depth == 0 and
/// valid_mask == false.
struct Scene {
    RgbImage rgb;
    DepthGrid gt_depth;
    Mask valid_mask;
};

/// Spot-sampled depth. depth[p] > 0 iff sample_mask[p].
struct SparseDepthMap {
    DepthGrid depth;
    Mask sample_mask;
};

struct SceneGenParams {
    int plane_count = 5;   // back wall always; floor/ceiling/left/right enabled in that order
    int object_count = 4;  // boxes and spheres, at least 1 so a depth discontinuity exists
    double d_min = 0.3;
    double d_max = 8.0;
    double hole_prob = 0.3;  // chance of carving one unreachable (zero-depth) region
};

struct SpotParams {
    int rows = 24;
    int cols = 24;
    double jitter_px = 2.0;
    double noise_sigma_rel = 0.01;
};

/// Frames share one scene; spot positions and noise vary per frame.
struct SceneSequence {
    std::vector<SparseDepthMap> frames;
};

/// Deterministic in (seed, dims, params). Dims must be >= 32 and divisible
/// by 32 (network stride requirement).
Scene generate_scene(std::uint64_t seed, int height, int width, const SceneGenParams& params);

SparseDepthMap sample_spots(const Scene& scene, int rows, int cols, double jitter_px,
                            double noise_sigma_rel, std::uint64_t seed);

inline SparseDepthMap sample_spots(const Scene& scene, const SpotParams& p, std::uint64_t seed) {
    return sample_spots(scene, p.rows, p.cols, p.jitter_px, p.noise_sigma_rel, seed);
}

/// seeds.size() >= 2 frames over a fixed scene (RGB and GT unchanged).
SceneSequence make_sequence(const Scene& scene, const SpotParams& spots,
                            const std::vector<std::uint64_t>& seeds);

}  // namespace emdc
