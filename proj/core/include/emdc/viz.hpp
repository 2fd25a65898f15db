#pragma once

#include <string>

#include "emdc/grid.hpp"

namespace emdc {

/// Depth map as a turbo-colormapped PNG; range [lo, hi] maps the colormap,
/// zero/missing pixels render black.
void save_depth_viz(const std::string& path, const DepthGrid& depth, double lo, double hi);

}  // namespace emdc
