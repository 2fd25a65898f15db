#include "emdc/model.hpp"

namespace emdc {

EmdcModel::EmdcModel(const ModelConfig& cfg) : cfg_(cfg) {
    nn::ParamInit init(cfg.init_seed);
    gldp_ = GldpNetwork(cfg.gldp, init);
    fusion_ = FusionModule(cfg.fusion);
    fcspn_ = FcspnModule(gldp_.feature_channels(), cfg.fcspn, init);
}

ModelOutput EmdcModel::forward(const Tensor& rgb, const Tensor& sparse, const Tensor& mask,
                               bool train) {
    ModelOutput out;
    GldpOutput branches =
        gldp_.forward(ag::constant(rgb), ag::constant(sparse), ag::constant(mask), train);
    out.global = branches.global;
    out.local = branches.local;
    out.fused = fusion_.forward(out.global.depth, out.local.depth, out.global.conf_logit,
                                out.local.conf_logit, &out.pair);
    out.refined = fcspn_.refine(out.fused, out.global.features[0], &sparse, &mask,
                                &out.fcspn_iterations);
    return out;
}

std::vector<nn::ParamRef> EmdcModel::named_parameters() const {
    std::vector<nn::ParamRef> out;
    gldp_.collect("gldp", out);
    fusion_.collect("fusion", out);
    fcspn_.collect("fcspn", out);
    return out;
}

std::vector<nn::BufferRef> EmdcModel::named_buffers() {
    std::vector<nn::BufferRef> out;
    gldp_.collect_buffers("gldp", out);
    return out;
}

std::int64_t param_count(const std::vector<nn::ParamRef>& params) {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.var.value().numel();
    return n;
}

}  // namespace emdc
