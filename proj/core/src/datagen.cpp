#include "emdc/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "emdc/rng.hpp"

namespace emdc {

namespace {

struct Vec3 {
    double x, y, z;
};

Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 normalized(Vec3 a) {
    const double n = std::sqrt(dot(a, a));
    return {a.x / n, a.y / n, a.z / n};
}

struct SceneObject {
    bool is_sphere = true;
    Vec3 center{0, 0, 0};
    double radius = 0.2;       // sphere
    Vec3 half{0.2, 0.2, 0.2};  // box half extents
    int surface_id = 0;
};

// Smallest positive t with |t*dir - c| == r, or +inf.
double intersect_sphere(Vec3 dir, Vec3 c, double r) {
    const double a = dot(dir, dir);
    const double b = -2.0 * dot(dir, c);
    const double q = dot(c, c) - r * r;
    const double disc = b * b - 4.0 * a * q;
    if (disc < 0) return std::numeric_limits<double>::infinity();
    const double s = std::sqrt(disc);
    const double t0 = (-b - s) / (2.0 * a);
    if (t0 > 1e-6) return t0;
    const double t1 = (-b + s) / (2.0 * a);
    if (t1 > 1e-6) return t1;
    return std::numeric_limits<double>::infinity();
}

// Entry t of the slab intersection, or +inf. normal_axis receives the hit face axis.
double intersect_box(Vec3 dir, Vec3 c, Vec3 half, int* normal_axis, double* normal_sign) {
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    int axis = 0;
    double sign = 1.0;
    const double d[3] = {dir.x, dir.y, dir.z};
    const double lo[3] = {c.x - half.x, c.y - half.y, c.z - half.z};
    const double hi[3] = {c.x + half.x, c.y + half.y, c.z + half.z};
    for (int i = 0; i < 3; ++i) {
        if (std::fabs(d[i]) < 1e-12) {
            if (0.0 < lo[i] || 0.0 > hi[i]) return std::numeric_limits<double>::infinity();
            continue;
        }
        double t0 = lo[i] / d[i];
        double t1 = hi[i] / d[i];
        double s = -1.0;
        if (t0 > t1) {
            std::swap(t0, t1);
            s = 1.0;
        }
        if (t0 > tmin) {
            tmin = t0;
            axis = i;
            sign = s;
        }
        tmax = std::min(tmax, t1);
    }
    if (tmax < tmin || tmin <= 1e-6) return std::numeric_limits<double>::infinity();
    *normal_axis = axis;
    *normal_sign = sign;
    return tmin;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = x;
    } else if (hp < 2) {
        r = x; g = c;
    } else if (hp < 3) {
        g = c; b = x;
    } else if (hp < 4) {
        g = x; b = c;
    } else if (hp < 5) {
        r = x; b = c;
    } else {
        r = c; b = x;
    }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

struct Decal {
    bool is_stripe = true;
    double r0 = 0, c0 = 0;     // anchor (pixels)
    double nr = 0, nc = 1;     // stripe normal
    double width = 10;         // stripe half width / disc radius
    double alpha = 0.8;
    std::array<double, 3> color{0.5, 0.5, 0.5};

    bool covers(double r, double c) const {
        if (is_stripe) return std::fabs((r - r0) * nr + (c - c0) * nc) <= width;
        const double dr = r - r0, dc = c - c0;
        return dr * dr + dc * dc <= width * width;
    }
};

}  // namespace

Scene generate_scene(std::uint64_t seed, int height, int width, const SceneGenParams& params) {
    if (height < 32 || width < 32 || height % 32 != 0 || width % 32 != 0)
        throw std::invalid_argument("generate_scene: dims must be >= 32 and divisible by 32 "
                                    "(network stride requirement), got " +
                                    std::to_string(height) + "x" + std::to_string(width));
    if (params.plane_count < 1 || params.plane_count > 5)
        throw std::invalid_argument("generate_scene: plane_count must be in [1,5]");
    if (params.object_count < 1)
        throw std::invalid_argument("generate_scene: object_count must be >= 1");
    if (!(params.d_min > 0.0) || !(params.d_max > params.d_min))
        throw std::invalid_argument("generate_scene: need 0 < d_min < d_max");

    Rng rng(mix_seed(seed, 0x5ce9e));

    const double fx = 0.6 * width;
    const double fy = fx;
    const double cx = 0.5 * width;
    const double cy = 0.5 * height;

    // room planes: distances sampled once; order: back, floor, ceiling, left, right
    const double zb = rng.uniform(0.55, 0.85) * params.d_max;
    const double yf = rng.uniform(0.8, 1.6);    // floor at y = +yf (y points down)
    const double yc = rng.uniform(0.8, 1.6);    // ceiling at y = -yc
    const double xr = rng.uniform(1.0, 2.5);    // right wall at x = +xr
    const double xl = rng.uniform(1.0, 2.5);    // left wall at x = -xl
    const bool has_floor = params.plane_count >= 2;
    const bool has_ceiling = params.plane_count >= 3;
    const bool has_left = params.plane_count >= 4;
    const bool has_right = params.plane_count >= 5;

    std::vector<SceneObject> objects;
    for (int i = 0; i < params.object_count; ++i) {
        SceneObject o;
        o.is_sphere = rng.bernoulli(0.5);
        // aim at a pixel in the central 80% of the view so the object is visible
        const double pr = rng.uniform(0.1, 0.9) * height;
        const double pc = rng.uniform(0.1, 0.9) * width;
        const Vec3 dir{(pc - cx) / fx, (pr - cy) / fy, 1.0};
        const double t = rng.uniform(std::max(1.5 * params.d_min, 0.2 * zb), 0.8 * zb);
        o.center = dir * t;
        o.radius = rng.uniform(0.1, 0.4);
        o.half = {rng.uniform(0.1, 0.45), rng.uniform(0.1, 0.45), rng.uniform(0.1, 0.45)};
        o.surface_id = 5 + i;
        objects.push_back(o);
    }

    // albedo palette: 5 planes + objects
    std::vector<std::array<double, 3>> albedo(5 + objects.size());
    for (auto& a : albedo) a = hsv_to_rgb(rng.uniform(), rng.uniform(0.15, 0.7), rng.uniform(0.4, 0.95));

    // image-space decals; color edges that need not follow depth edges
    const int n_decals = rng.uniform_int(2, 4);
    std::vector<Decal> decals;
    const double diag = std::sqrt(static_cast<double>(height) * height + static_cast<double>(width) * width);
    for (int i = 0; i < n_decals; ++i) {
        Decal d;
        d.is_stripe = rng.bernoulli(0.5);
        d.r0 = rng.uniform(0.0, height);
        d.c0 = rng.uniform(0.0, width);
        const double ang = rng.uniform(0.0, 6.283185307179586);
        d.nr = std::cos(ang);
        d.nc = std::sin(ang);
        d.width = rng.uniform(0.03, 0.1) * diag;
        d.alpha = rng.uniform(0.6, 1.0);
        d.color = hsv_to_rgb(rng.uniform(), rng.uniform(0.2, 0.8), rng.uniform(0.3, 0.95));
        decals.push_back(d);
    }

    const Vec3 light = normalized({rng.uniform(-0.5, 0.5), rng.uniform(-0.9, -0.3), rng.uniform(-0.5, 0.2)});
    const double ambient = 0.35;

    // optional unreachable hole (zero depth, invalid)
    const bool carve_hole = rng.bernoulli(params.hole_prob);
    const double hole_r0 = rng.uniform(0.15, 0.85) * height;
    const double hole_c0 = rng.uniform(0.15, 0.85) * width;
    const double hole_a = rng.uniform(0.06, 0.2) * height;
    const double hole_b = rng.uniform(0.06, 0.2) * width;

    Scene scene;
    scene.rgb = RgbImage(height, width);
    scene.gt_depth = DepthGrid(height, width);
    scene.valid_mask = Mask(height, width, 1);

    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const Vec3 dir{(c + 0.5 - cx) / fx, (r + 0.5 - cy) / fy, 1.0};

            double best_t = zb;  // back wall: dir.z == 1 so t == z
            int surf = 0;
            Vec3 normal{0, 0, -1};
            if (has_floor && dir.y > 1e-12) {
                const double t = yf / dir.y;
                if (t < best_t) { best_t = t; surf = 1; normal = {0, -1, 0}; }
            }
            if (has_ceiling && dir.y < -1e-12) {
                const double t = -yc / dir.y;
                if (t < best_t) { best_t = t; surf = 2; normal = {0, 1, 0}; }
            }
            if (has_left && dir.x < -1e-12) {
                const double t = -xl / dir.x;
                if (t < best_t) { best_t = t; surf = 3; normal = {1, 0, 0}; }
            }
            if (has_right && dir.x > 1e-12) {
                const double t = xr / dir.x;
                if (t < best_t) { best_t = t; surf = 4; normal = {-1, 0, 0}; }
            }
            for (const auto& o : objects) {
                if (o.is_sphere) {
                    const double t = intersect_sphere(dir, o.center, o.radius);
                    if (t < best_t) {
                        best_t = t;
                        surf = o.surface_id;
                        normal = normalized(dir * t - o.center);
                    }
                } else {
                    int axis = 0;
                    double sign = 1.0;
                    const double t = intersect_box(dir, o.center, o.half, &axis, &sign);
                    if (t < best_t) {
                        best_t = t;
                        surf = o.surface_id;
                        normal = {0, 0, 0};
                        (axis == 0 ? normal.x : axis == 1 ? normal.y : normal.z) = sign;
                    }
                }
            }

            const double depth = std::clamp(best_t, params.d_min, params.d_max);

            std::array<double, 3> col = albedo[static_cast<size_t>(surf)];
            for (const auto& d : decals)
                if (d.covers(r + 0.5, c + 0.5))
                    for (int k = 0; k < 3; ++k) col[static_cast<size_t>(k)] =
                        (1.0 - d.alpha) * col[static_cast<size_t>(k)] + d.alpha * d.color[static_cast<size_t>(k)];
            const double lambert = std::max(0.0, dot(normal, light * -1.0));
            const double shade = ambient + (1.0 - ambient) * lambert;
            for (int k = 0; k < 3; ++k)
                scene.rgb.at(r, c, k) = std::clamp(col[static_cast<size_t>(k)] * shade, 0.0, 1.0);

            bool valid = true;
            if (carve_hole) {
                const double dr = (r + 0.5 - hole_r0) / hole_a;
                const double dc = (c + 0.5 - hole_c0) / hole_b;
                if (dr * dr + dc * dc <= 1.0) valid = false;
            }
            scene.gt_depth.at(r, c) = valid ? depth : 0.0;
            scene.valid_mask.at(r, c) = valid ? 1 : 0;
        }
    }
    return scene;
}

SparseDepthMap sample_spots(const Scene& scene, int rows, int cols, double jitter_px,
                            double noise_sigma_rel, std::uint64_t seed) {
    const int h = scene.gt_depth.h;
    const int w = scene.gt_depth.w;
    if (rows <= 0 || cols <= 0 || rows > h || cols > w)
        throw std::invalid_argument("sample_spots: spot grid " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + " does not fit image " + std::to_string(h) +
                                    "x" + std::to_string(w));
    if (jitter_px < 0 || noise_sigma_rel < 0)
        throw std::invalid_argument("sample_spots: jitter and noise must be nonnegative");

    Rng rng(mix_seed(seed, 0x59075));
    SparseDepthMap out;
    out.depth = DepthGrid(h, w);
    out.sample_mask = Mask(h, w, 0);

    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const double base_r = (i + 0.5) * h / rows;
            const double base_c = (j + 0.5) * w / cols;
            const double jr = jitter_px > 0 ? rng.uniform(-jitter_px, jitter_px) : 0.0;
            const double jc = jitter_px > 0 ? rng.uniform(-jitter_px, jitter_px) : 0.0;
            const double noise = noise_sigma_rel > 0 ? rng.normal(0.0, noise_sigma_rel) : 0.0;
            const int r = std::clamp(static_cast<int>(std::lround(base_r + jr)), 0, h - 1);
            const int c = std::clamp(static_cast<int>(std::lround(base_c + jc)), 0, w - 1);
            if (!scene.valid_mask.at(r, c)) continue;  // spot lands on an unreachable region
            const double v = scene.gt_depth.at(r, c) * (1.0 + noise);
            out.depth.at(r, c) = std::max(v, 1e-3);
            out.sample_mask.at(r, c) = 1;
        }
    }
    return out;
}

SceneSequence make_sequence(const Scene& scene, const SpotParams& spots,
                            const std::vector<std::uint64_t>& seeds) {
    if (seeds.size() < 2)
        throw std::invalid_argument("make_sequence: need at least 2 frames, got " +
                                    std::to_string(seeds.size()));
    SceneSequence seq;
    seq.frames.reserve(seeds.size());
    for (const auto s : seeds) seq.frames.push_back(sample_spots(scene, spots, s));
    return seq;
}

}  // namespace emdc
