#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emdc/datagen.hpp"

namespace emdc {

/// Millimeter-scaled 16-bit grayscale PNG; 0 encodes "missing".
/// Values above 65.535 m do not fit and raise.
void save_depth_png16(const std::string& path, const DepthGrid& depth);
DepthGrid load_depth_png16(const std::string& path, Mask* valid = nullptr);

void save_rgb_png(const std::string& path, const RgbImage& img);
RgbImage load_rgb_png(const std::string& path);

struct DatasetSample {
    std::string id;
    Scene scene;
    SparseDepthMap sparse;
    std::vector<SparseDepthMap> frames;  // empty when the sample has no sequence
};

struct DatasetMeta {
    int height = 192;
    int width = 256;
    int count = 8;
    int seq_len = 1;  // >= 2 adds per-sample frame sequences
    std::uint64_t seed = 0;
    SceneGenParams gen;
    SpotParams spots;
};

/// Layout: {id}_rgb.png, {id}_gt.png, {id}_sparse.png and, for sequences,
/// {id}/frame_{t}_sparse.png.
void save_sample(const std::string& dir, const DatasetSample& sample);
DatasetSample load_sample(const std::string& dir, const std::string& id, int seq_len);

std::string sample_id(int index);

/// Deterministic in meta.seed; sample i is independent of count.
std::vector<DatasetSample> generate_dataset(const DatasetMeta& meta);

/// generate_dataset + save_sample for each + manifest.json.
void write_dataset(const std::string& dir, const DatasetMeta& meta);

struct Dataset {
    DatasetMeta meta;
    std::vector<DatasetSample> samples;
};

Dataset load_dataset(const std::string& dir);

}  // namespace emdc
