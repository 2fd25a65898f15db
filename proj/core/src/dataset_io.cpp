#include "emdc/dataset_io.hpp"

#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "emdc/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace emdc {

void save_depth_png16(const std::string& path, const DepthGrid& depth) {
    cv::Mat m(depth.h, depth.w, CV_16UC1);
    for (int r = 0; r < depth.h; ++r)
        for (int c = 0; c < depth.w; ++c) {
            const double mm = std::round(depth.at(r, c) * 1000.0);
            if (mm < 0.0 || mm > 65535.0)
                throw std::invalid_argument("save_depth_png16: depth " +
                                            std::to_string(depth.at(r, c)) +
                                            " m does not fit 16-bit millimeters (max 65.535 m)");
            m.at<std::uint16_t>(r, c) = static_cast<std::uint16_t>(mm);
        }
    if (!cv::imwrite(path, m)) throw std::runtime_error("save_depth_png16: cannot write " + path);
}

DepthGrid load_depth_png16(const std::string& path, Mask* valid) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw std::runtime_error("load_depth_png16: cannot read " + path);
    if (m.type() != CV_16UC1)
        throw std::runtime_error("load_depth_png16: expected 16-bit grayscale PNG at " + path);
    DepthGrid out(m.rows, m.cols);
    if (valid) *valid = Mask(m.rows, m.cols, 0);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            const std::uint16_t v = m.at<std::uint16_t>(r, c);
            out.at(r, c) = v / 1000.0;
            if (valid && v != 0) valid->at(r, c) = 1;
        }
    return out;
}

void save_rgb_png(const std::string& path, const RgbImage& img) {
    cv::Mat m(img.h, img.w, CV_8UC3);
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c) {
            auto& px = m.at<cv::Vec3b>(r, c);
            // OpenCV stores BGR
            for (int k = 0; k < 3; ++k)
                px[2 - k] = static_cast<std::uint8_t>(
                    std::lround(std::clamp(img.at(r, c, k), 0.0, 1.0) * 255.0));
        }
    if (!cv::imwrite(path, m)) throw std::runtime_error("save_rgb_png: cannot write " + path);
}

RgbImage load_rgb_png(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("load_rgb_png: cannot read " + path);
    RgbImage out(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            const auto& px = m.at<cv::Vec3b>(r, c);
            for (int k = 0; k < 3; ++k) out.at(r, c, k) = px[2 - k] / 255.0;
        }
    return out;
}

std::string sample_id(int index) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << index;
    return os.str();
}

void save_sample(const std::string& dir, const DatasetSample& sample) {
    const fs::path base(dir);
    fs::create_directories(base);
    save_rgb_png((base / (sample.id + "_rgb.png")).string(), sample.scene.rgb);
    save_depth_png16((base / (sample.id + "_gt.png")).string(), sample.scene.gt_depth);
    save_depth_png16((base / (sample.id + "_sparse.png")).string(), sample.sparse.depth);
    if (!sample.frames.empty()) {
        const fs::path sub = base / sample.id;
        fs::create_directories(sub);
        for (size_t t = 0; t < sample.frames.size(); ++t)
            save_depth_png16((sub / ("frame_" + std::to_string(t) + "_sparse.png")).string(),
                             sample.frames[t].depth);
    }
}

DatasetSample load_sample(const std::string& dir, const std::string& id, int seq_len) {
    const fs::path base(dir);
    DatasetSample s;
    s.id = id;
    s.scene.rgb = load_rgb_png((base / (id + "_rgb.png")).string());
    s.scene.gt_depth = load_depth_png16((base / (id + "_gt.png")).string(), &s.scene.valid_mask);
    s.sparse.depth = load_depth_png16((base / (id + "_sparse.png")).string(), &s.sparse.sample_mask);
    if (seq_len >= 2) {
        for (int t = 0; t < seq_len; ++t) {
            SparseDepthMap f;
            f.depth = load_depth_png16(
                (base / id / ("frame_" + std::to_string(t) + "_sparse.png")).string(),
                &f.sample_mask);
            s.frames.push_back(std::move(f));
        }
    }
    return s;
}

std::vector<DatasetSample> generate_dataset(const DatasetMeta& meta) {
    std::vector<DatasetSample> out;
    out.reserve(static_cast<size_t>(meta.count));
    for (int i = 0; i < meta.count; ++i) {
        DatasetSample s;
        s.id = sample_id(i);
        s.scene = generate_scene(mix_seed(meta.seed, static_cast<std::uint64_t>(i)), meta.height,
                                 meta.width, meta.gen);
        if (meta.seq_len >= 2) {
            std::vector<std::uint64_t> seeds;
            for (int t = 0; t < meta.seq_len; ++t)
                seeds.push_back(mix_seed(meta.seed, static_cast<std::uint64_t>(i),
                                         static_cast<std::uint64_t>(t) + 1));
            auto seq = make_sequence(s.scene, meta.spots, seeds);
            s.frames = std::move(seq.frames);
            s.sparse = s.frames[0];
        } else {
            s.sparse = sample_spots(s.scene, meta.spots, mix_seed(meta.seed, static_cast<std::uint64_t>(i), 1));
        }
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

json meta_to_json(const DatasetMeta& m) {
    return json{{"height", m.height},
                {"width", m.width},
                {"count", m.count},
                {"seq_len", m.seq_len},
                {"seed", m.seed},
                {"gen",
                 {{"plane_count", m.gen.plane_count},
                  {"object_count", m.gen.object_count},
                  {"d_min", m.gen.d_min},
                  {"d_max", m.gen.d_max},
                  {"hole_prob", m.gen.hole_prob}}},
                {"spots",
                 {{"rows", m.spots.rows},
                  {"cols", m.spots.cols},
                  {"jitter_px", m.spots.jitter_px},
                  {"noise_sigma_rel", m.spots.noise_sigma_rel}}}};
}

DatasetMeta meta_from_json(const json& j) {
    DatasetMeta m;
    m.height = j.at("height");
    m.width = j.at("width");
    m.count = j.at("count");
    m.seq_len = j.at("seq_len");
    m.seed = j.at("seed");
    const auto& g = j.at("gen");
    m.gen.plane_count = g.at("plane_count");
    m.gen.object_count = g.at("object_count");
    m.gen.d_min = g.at("d_min");
    m.gen.d_max = g.at("d_max");
    m.gen.hole_prob = g.at("hole_prob");
    const auto& s = j.at("spots");
    m.spots.rows = s.at("rows");
    m.spots.cols = s.at("cols");
    m.spots.jitter_px = s.at("jitter_px");
    m.spots.noise_sigma_rel = s.at("noise_sigma_rel");
    return m;
}

}  // namespace

void write_dataset(const std::string& dir, const DatasetMeta& meta) {
    fs::create_directories(dir);
    auto samples = generate_dataset(meta);
    json manifest = meta_to_json(meta);
    manifest["samples"] = json::array();
    for (const auto& s : samples) {
        save_sample(dir, s);
        manifest["samples"].push_back(s.id);
    }
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw std::runtime_error("write_dataset: cannot write manifest in " + dir);
    f << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw std::runtime_error("load_dataset: no manifest.json in " + dir);
    json manifest = json::parse(f);
    Dataset ds;
    ds.meta = meta_from_json(manifest);
    for (const auto& id : manifest.at("samples"))
        ds.samples.push_back(load_sample(dir, id.get<std::string>(), ds.meta.seq_len));
    return ds;
}

}  // namespace emdc
