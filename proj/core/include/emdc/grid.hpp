#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace emdc {

/// Row-major h x w grid of T. Plain storage for images, depth maps and masks
/// outside the autodiff graph.
template <typename T>
struct Grid {
    int h = 0;
    int w = 0;
    std::vector<T> v;

    Grid() = default;
    Grid(int h_, int w_, T fill = T{}) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {
        if (h_ <= 0 || w_ <= 0) throw std::invalid_argument("Grid: nonpositive dimensions");
    }

    T& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
    T at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
    bool same_shape_as(int hh, int ww) const { return h == hh && w == ww; }
};

using DepthGrid = Grid<double>;
using Mask = Grid<std::uint8_t>;

/// Interleaved RGB in [0,1], row-major, 3 doubles per pixel.
struct RgbImage {
    int h = 0;
    int w = 0;
    std::vector<double> data;

    RgbImage() = default;
    RgbImage(int h_, int w_) : h(h_), w(w_), data(static_cast<size_t>(h_) * w_ * 3, 0.0) {
        if (h_ <= 0 || w_ <= 0) throw std::invalid_argument("RgbImage: nonpositive dimensions");
    }

    double& at(int r, int c, int ch) { return data[(static_cast<size_t>(r) * w + c) * 3 + ch]; }
    double at(int r, int c, int ch) const { return data[(static_cast<size_t>(r) * w + c) * 3 + ch]; }
};

inline int count_true(const Mask& m) {
    int n = 0;
    for (auto b : m.v) n += (b != 0);
    return n;
}

}  // namespace emdc
