#pragma once

#include <string>
#include <utility>
#include <vector>

#include "emdc/autograd.hpp"
#include "emdc/nn.hpp"

namespace emdc {

struct GldpConfig {
    std::vector<int> encoder_widths = {16, 24, 32, 64, 96};
    int local_width = 16;
    int local_blocks = 3;
    int expand_ratio = 2;
    bool use_pixel_shuffle = true;
    bool use_batchnorm_local = false;
    std::vector<int> exchange_points = {1, 2};  // encoder stride levels

    int levels() const { return static_cast<int>(encoder_widths.size()); }
    void validate() const;
};

struct BranchOutput {
    ag::Var depth;       // (N,1,H,W), nonnegative via softplus
    ag::Var conf_logit;  // (N,1,H,W)
    std::vector<ag::Var> features;
};

/// Mobile-style residual block: 1x1 expand, 3x3 depthwise (optionally
/// strided), 1x1 linear projection, skip when shapes allow.
struct InvertedBottleneck {
    nn::Conv2d expand_conv, dw_conv, project_conv;
    bool residual = false;

    InvertedBottleneck() = default;
    InvertedBottleneck(int cin, int cout, int stride, int expand, nn::ParamInit& init);
    ag::Var forward(const ag::Var& x) const;
    void collect(const std::string& prefix, std::vector<nn::ParamRef>& out) const;
};

/// Bidirectional 1x1-projected additive coupling of two feature streams.
/// The local stream is average-pooled down to the global resolution and
/// the projected global features are nearest-upsampled back; with equal
/// resolutions both resamplings are no-ops.
struct ExchangeBlock {
    nn::Conv2d proj_l2g, proj_g2l;

    ExchangeBlock() = default;
    ExchangeBlock(int global_width, int local_width, nn::ParamInit& init);
    std::pair<ag::Var, ag::Var> forward(const ag::Var& features_g, const ag::Var& features_l) const;
    void collect(const std::string& prefix, std::vector<nn::ParamRef>& out) const;
};

struct GldpOutput {
    BranchOutput global;
    BranchOutput local;
};

class GldpNetwork {
public:
    GldpNetwork() = default;
    GldpNetwork(const GldpConfig& cfg, nn::ParamInit& init);

    /// Coupled two-branch forward with feature exchange at the configured
    /// encoder levels. rgb (N,3,H,W); sparse/mask (N,1,H,W).
    GldpOutput forward(const ag::Var& rgb, const ag::Var& sparse, const ag::Var& mask, bool train);

    /// Branch-only paths (no exchange).
    BranchOutput forward_global(const ag::Var& rgb, const ag::Var& sparse, const ag::Var& mask) const;
    BranchOutput forward_local(const ag::Var& sparse, const ag::Var& mask, bool train);

    const GldpConfig& config() const { return cfg_; }
    int feature_channels() const { return cfg_.encoder_widths[0]; }
    bool local_has_batchnorm() const { return !local_bn_.empty(); }

    void collect(const std::string& prefix, std::vector<nn::ParamRef>& out) const;
    void collect_buffers(const std::string& prefix, std::vector<nn::BufferRef>& out);

private:
    void check_input_dims(int h, int w) const;
    ag::Var decode(std::vector<ag::Var>& skips) const;
    ag::Var local_stack(const ag::Var& sparse, const ag::Var& mask, bool train, size_t upto_block,
                        size_t* cursor);

    GldpConfig cfg_;

    nn::Conv2d g_stem_;
    std::vector<InvertedBottleneck> enc_down_, enc_res_;
    struct Upsampler {
        nn::Conv2d conv;  // ps: 1x1 to 4*w; nn: 3x3 after nearest upsample
        bool pixel_shuffle = true;
    };
    std::vector<Upsampler> dec_up_;
    std::vector<nn::Conv2d> dec_merge_;
    nn::Conv2d g_depth_head_, g_conf_head_;

    nn::Conv2d l_stem_;
    std::vector<nn::Conv2d> local_convs_;
    std::vector<nn::BatchNorm2d> local_bn_;
    nn::Conv2d l_depth_head_, l_conf_head_;

    std::vector<ExchangeBlock> exchange_blocks_;  // parallel to cfg.exchange_points
};

}  // namespace emdc
