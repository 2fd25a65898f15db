#pragma once

#include <string>
#include <vector>

#include "emdc/eval.hpp"
#include "emdc/train.hpp"

namespace emdc {

struct AblationArm {
    std::string name;
    std::string description;
    ExperimentConfig config;
};

/// The eight-arm grid: propagation preset, pixel shuffle, local batch-norm
/// removal, relative-certainty fusion, zero-init gate, and the gradient
/// loss are toggled cumulatively from arm (a) to the full model (h).
std::vector<AblationArm> table3_arms(const ExperimentConfig& base);

struct AblationResult {
    std::string name;
    std::string description;
    MetricReport report;
};

/// Trains each arm from scratch with the identical seed and data, then
/// evaluates the EMA weights on the held-out samples. train_steps < 0 runs
/// each arm's full schedule.
std::vector<AblationResult> run_ablation(const std::vector<AblationArm>& arms,
                                         const std::vector<TrainSample>& train_data,
                                         const std::vector<DatasetSample>& eval_data,
                                         int train_steps);

std::string ablation_table_text(const std::vector<AblationResult>& results);

}  // namespace emdc
