#include "emdc/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace emdc {

using ag::Var;

namespace {

void check_same(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                                    " vs " + b.value().shape_str());
}

Var blend(const Var& pred_g, const Var& pred_l, const Var& weight_g, ConfidencePair* pair) {
    Var weight_l = ag::add_const(ag::neg(weight_g), 1.0);
    if (pair) {
        pair->weight_g = weight_g;
        pair->weight_l = weight_l;
    }
    return ag::add(ag::mul(weight_g, pred_g), ag::mul(weight_l, pred_l));
}

}  // namespace

Var fuse(const Var& pred_g, const Var& pred_l, const Var& logit_g, const Var& logit_l,
         const Var& alpha, ConfidencePair* pair) {
    check_same(pred_g, pred_l, "fuse");
    check_same(pred_g, logit_g, "fuse");
    check_same(pred_g, logit_l, "fuse");
    if (alpha.value().numel() != 1 || !std::isfinite(alpha.value()[0]))
        throw std::invalid_argument("fuse: alpha must be a finite scalar");
    // two-way softmax over (logit_g, alpha*logit_l), expressed via sigmoid
    Var gated = ag::mul(alpha, logit_l);
    Var weight_g = ag::sigmoid(ag::sub(logit_g, gated));
    if (pair) {
        pair->logit_g = logit_g;
        pair->logit_l = logit_l;
        pair->alpha = alpha;
    }
    return blend(pred_g, pred_l, weight_g, pair);
}

Var fuse_legacy(const Var& pred_g, const Var& pred_l, const Var& conf_g, const Var& conf_l,
                ConfidencePair* pair) {
    check_same(pred_g, pred_l, "fuse_legacy");
    check_same(pred_g, conf_g, "fuse_legacy");
    check_same(pred_g, conf_l, "fuse_legacy");
    Var weight_g = ag::sigmoid(ag::sub(conf_g, conf_l));
    if (pair) {
        pair->logit_g = conf_g;
        pair->logit_l = conf_l;
    }
    return blend(pred_g, pred_l, weight_g, pair);
}

FusionModule::FusionModule(const FusionConfig& cfg_) : cfg(cfg_) {
    if (cfg.relative) alpha = ag::leaf(Tensor::scalar(cfg.rezero ? 0.0 : 1.0));
}

Var FusionModule::forward(const Var& pred_g, const Var& pred_l, const Var& logit_g,
                          const Var& logit_l, ConfidencePair* pair) const {
    if (cfg.relative) return fuse(pred_g, pred_l, logit_g, logit_l, alpha, pair);
    return fuse_legacy(pred_g, pred_l, logit_g, logit_l, pair);
}

void FusionModule::collect(const std::string& prefix, std::vector<nn::ParamRef>& out) const {
    if (alpha.defined()) out.push_back({prefix + ".alpha", alpha});
}

}  // namespace emdc
