#pragma once

#include <string>
#include <vector>

#include "emdc/autograd.hpp"
#include "emdc/nn.hpp"

namespace emdc {

struct FusionConfig {
    bool relative = true;  // false selects the absolute-confidence baseline
    bool rezero = true;    // zero-initialize the local confidence gate
};

/// Per-pixel blending weights plus the logits they came from. weight_g +
/// weight_l == 1 everywhere by construction.
struct ConfidencePair {
    ag::Var weight_g;
    ag::Var weight_l;
    ag::Var logit_g;
    ag::Var logit_l;
    ag::Var alpha;  // undefined in legacy mode
};

/// Relative fusion: the local logit is gated by a learnable scalar alpha,
/// then the pair is softmaxed per pixel. At alpha == 0 the fused output is
/// independent of the local logit.
ag::Var fuse(const ag::Var& pred_g, const ag::Var& pred_l, const ag::Var& logit_g,
             const ag::Var& logit_l, const ag::Var& alpha, ConfidencePair* pair = nullptr);

/// Baseline late fusion over independently produced absolute confidences
/// (no gate). Ablation arm for fusion.relative = false.
ag::Var fuse_legacy(const ag::Var& pred_g, const ag::Var& pred_l, const ag::Var& conf_g,
                    const ag::Var& conf_l, ConfidencePair* pair = nullptr);

struct FusionModule {
    FusionConfig cfg;
    ag::Var alpha;

    FusionModule() = default;
    explicit FusionModule(const FusionConfig& cfg_);

    ag::Var forward(const ag::Var& pred_g, const ag::Var& pred_l, const ag::Var& logit_g,
                    const ag::Var& logit_l, ConfidencePair* pair = nullptr) const;
    void collect(const std::string& prefix, std::vector<nn::ParamRef>& out) const;
};

}  // namespace emdc
