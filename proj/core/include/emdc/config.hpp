#pragma once

#include <cstdint>
#include <string>

#include "emdc/losses.hpp"
#include "emdc/model.hpp"

namespace emdc {

struct TrainConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-2;
    double adam_eps = 1e-8;
    int warmup_epochs = 10;
    int total_epochs = 150;
    int batch_size = 10;
    double ema_decay = 0.99;
    std::uint64_t seed = 0;
    bool augment_flip = true;
    bool augment_color_jitter = true;
    double jitter_amount = 0.2;  // brightness/contrast/saturation range

    void validate() const;
};

struct ExperimentConfig {
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;
};

ExperimentConfig default_config();

ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& cfg);

}  // namespace emdc
