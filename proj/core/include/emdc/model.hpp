#pragma once

#include <cstdint>
#include <vector>

#include "emdc/fcspn.hpp"
#include "emdc/fusion.hpp"
#include "emdc/gldp.hpp"

namespace emdc {

struct ModelConfig {
    GldpConfig gldp;
    FusionConfig fusion;
    FcspnConfig fcspn;
    std::uint64_t init_seed = 42;
};

struct ModelOutput {
    BranchOutput global;
    BranchOutput local;
    ag::Var fused;
    ag::Var refined;
    ConfidencePair pair;
    int fcspn_iterations = 0;
};

/// Full pipeline: two-branch prediction, confidence fusion, propagation
/// refinement. Inputs are plain tensors; rgb (N,3,H,W), sparse and mask
/// (N,1,H,W), mask entries 0/1.
class EmdcModel {
public:
    EmdcModel() = default;
    explicit EmdcModel(const ModelConfig& cfg);

    ModelOutput forward(const Tensor& rgb, const Tensor& sparse, const Tensor& mask, bool train);

    std::vector<nn::ParamRef> named_parameters() const;
    std::vector<nn::BufferRef> named_buffers();

    const ModelConfig& config() const { return cfg_; }
    GldpNetwork& gldp() { return gldp_; }
    FusionModule& fusion() { return fusion_; }
    const FcspnModule& fcspn() const { return fcspn_; }

private:
    ModelConfig cfg_;
    GldpNetwork gldp_;
    FusionModule fusion_;
    FcspnModule fcspn_;
};

std::int64_t param_count(const std::vector<nn::ParamRef>& params);

}  // namespace emdc
