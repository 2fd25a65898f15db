#pragma once

#include <string>
#include <vector>

#include "emdc/autograd.hpp"
#include "emdc/nn.hpp"

namespace emdc {

struct Stage {
    std::vector<int> dilations;  // descending
    int iterations = 1;
};

struct StageSchedule {
    std::vector<Stage> stages;

    /// Rejects schedules whose maximum dilation grows between stages
    /// (funnel rule), malformed dilation lists, or nonpositive iteration
    /// counts. An empty schedule (identity refinement) is allowed.
    void validate() const;
    int total_iterations() const;

    static StageSchedule none();
    static StageSchedule preset_s6();  // 6 stages, 15 iterations
    static StageSchedule preset_s9();  // 9 stages, 21 iterations
};

struct FcspnConfig {
    std::string preset = "s9";  // s6 | s9 | none | custom
    StageSchedule custom;
    bool anchor = true;  // re-inject sparse measurements every iteration
    int hidden = 16;     // width of the affinity and reweighting heads
    double epsilon = 1e-2;

    StageSchedule schedule() const;
};

/// Kernels of one propagation stage. Normalized neighbor weights are
/// nonnegative with per-pixel sum <= 1 - epsilon; the center weight closes
/// the sum to exactly 1, so every propagation step is a convex combination.
struct AffinityField {
    std::vector<int> dilations;
    std::vector<ag::Var> raw_kernels;  // per dilation, (N,8,H,W)
    std::vector<ag::Var> weights;      // per dilation, (N,8,H,W), normalized
    std::vector<ag::Var> centers;      // per dilation, (N,1,H,W)
    ag::Var raw_logits;                // (N,K,H,W)
    ag::Var mixing;                    // (N,K,H,W), softmax across dilations
    double epsilon = 1e-2;
};

/// Fills weights/centers/mixing from raw_kernels/raw_logits.
void normalize_affinity(AffinityField& field);

/// One diffusion step: out = center*x + sum_k w_k * x[neighbor_k] over the
/// 8-neighborhood at the given dilation, replicate borders. With anchors,
/// sampled pixels are overwritten by the measurement. The field is checked
/// for convexity; an unnormalized field raises.
ag::Var propagate_once(const ag::Var& depth, const ag::Var& weights, const ag::Var& center,
                       int dilation, const Tensor* anchor_depth = nullptr,
                       const Tensor* anchor_mask = nullptr);

/// One stage: per iteration, propagate at every dilation and blend the
/// results with the stage's mixing weights.
ag::Var stage_fuse(const ag::Var& depth, const AffinityField& field, const Stage& stage,
                   const Tensor* anchor_depth = nullptr, const Tensor* anchor_mask = nullptr,
                   int* iteration_counter = nullptr);

struct FcspnModule {
    FcspnConfig cfg;
    StageSchedule schedule;
    nn::Conv2d init_conv1, init_conv2;
    struct ReweightHead {
        nn::Conv2d conv1, conv2;
    };
    std::vector<ReweightHead> reweight_heads;  // one per stage transition

    FcspnModule() = default;
    FcspnModule(int feature_channels, const FcspnConfig& cfg_, nn::ParamInit& init);

    AffinityField init_affinities(const ag::Var& features) const;

    /// Next-stage kernels from (current depth, previous raw kernels,
    /// previous logits) only; backbone features are not an input.
    AffinityField reweight_kernels(int transition, const AffinityField& prev,
                                   const ag::Var& current_depth) const;

    ag::Var refine(const ag::Var& fused, const ag::Var& features, const Tensor* anchor_depth,
                   const Tensor* anchor_mask, int* iterations_executed = nullptr) const;

    void collect(const std::string& prefix, std::vector<nn::ParamRef>& out) const;
};

}  // namespace emdc
