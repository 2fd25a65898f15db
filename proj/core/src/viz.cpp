#include "emdc/viz.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <stdexcept>

namespace emdc {

void save_depth_viz(const std::string& path, const DepthGrid& depth, double lo, double hi) {
    if (!(hi > lo)) throw std::invalid_argument("save_depth_viz: need lo < hi");
    cv::Mat idx(depth.h, depth.w, CV_8UC1);
    for (int r = 0; r < depth.h; ++r)
        for (int c = 0; c < depth.w; ++c) {
            const double v = depth.at(r, c);
            idx.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(
                std::lround(std::clamp((v - lo) / (hi - lo), 0.0, 1.0) * 255.0));
        }
    cv::Mat colored;
    cv::applyColorMap(idx, colored, cv::COLORMAP_TURBO);
    for (int r = 0; r < depth.h; ++r)
        for (int c = 0; c < depth.w; ++c)
            if (depth.at(r, c) == 0.0) colored.at<cv::Vec3b>(r, c) = {0, 0, 0};
    if (!cv::imwrite(path, colored)) throw std::runtime_error("save_depth_viz: cannot write " + path);
}

}  // namespace emdc
