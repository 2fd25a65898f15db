#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emdc/config.hpp"
#include "emdc/dataset_io.hpp"
#include "emdc/losses.hpp"
#include "emdc/model.hpp"

namespace emdc {

/// Linear warmup from 0 to base_lr over warmup_steps, then a single cosine
/// period down to 0 at total_steps. Continuous at the junction.
double lr_at(int step, int warmup_steps, int total_steps, double base_lr);

/// ema' = decay * ema + (1 - decay) * params, element-wise.
void ema_update(Tensor& ema, const Tensor& params, double decay);

/// Model-ready tensors of one sample: rgb (3,H,W), rest (1,H,W).
struct TrainSample {
    Tensor rgb, sparse, mask, gt, valid;
};
TrainSample to_train_sample(const DatasetSample& s);

struct StepRecord {
    int step = 0;
    double lr = 0;
    LossBreakdown loss;
};

struct Checkpoint {
    ExperimentConfig config;
    int step = 0;
    int dataset_size = 0;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> ema;
    std::vector<std::pair<std::string, Tensor>> opt_m;
    std::vector<std::pair<std::string, Tensor>> opt_v;
    std::vector<std::pair<std::string, Tensor>> buffers;
    std::vector<StepRecord> history;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

/// Builds a fresh model from a checkpoint, optionally with the EMA weights
/// swapped in.
EmdcModel model_from_checkpoint(const Checkpoint& ck, bool use_ema);

/// Deterministic AdamW training loop over an in-memory dataset. All
/// randomness (batch order, augmentation) is derived statelessly from
/// (seed, step), so resuming from a checkpoint continues the exact
/// uninterrupted trajectory.
class Trainer {
public:
    Trainer(const ExperimentConfig& cfg, std::vector<TrainSample> data);
    Trainer(const Checkpoint& ck, std::vector<TrainSample> data);

    /// Runs n steps (capped at the schedule's total). Returns records of
    /// the executed steps. Throws on non-finite loss after writing a
    /// diagnostic dump when a dump directory is set.
    std::vector<StepRecord> steps(int n);
    void run_all() { steps(total_steps() - step_); }

    int total_steps() const;
    int steps_per_epoch() const;
    int current_step() const { return step_; }
    const std::vector<StepRecord>& history() const { return history_; }
    const ExperimentConfig& config() const { return cfg_; }
    EmdcModel& model() { return model_; }

    Checkpoint make_checkpoint() const;
    /// Copy of the model carrying EMA weights (for evaluation).
    EmdcModel ema_model() const;

    void set_dump_dir(std::string dir) { dump_dir_ = std::move(dir); }

private:
    void init_opt_state();
    void apply_state(const Checkpoint& ck);
    std::vector<int> batch_indices(int step) const;

    ExperimentConfig cfg_;
    std::vector<TrainSample> data_;
    EmdcModel model_;
    std::vector<nn::ParamRef> params_;
    std::vector<Tensor> m_, v_, ema_;
    int step_ = 0;
    std::vector<StepRecord> history_;
    std::optional<std::string> dump_dir_;
};

}  // namespace emdc
