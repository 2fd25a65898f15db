#include "emdc/gldp.hpp"

#include <algorithm>
#include <stdexcept>

namespace emdc {

using ag::Var;

void GldpConfig::validate() const {
    if (levels() < 3) throw std::invalid_argument("GldpConfig: need >= 3 encoder levels");
    for (int w : encoder_widths)
        if (w < 4) throw std::invalid_argument("GldpConfig: encoder widths must be >= 4");
    if (local_width < 4) throw std::invalid_argument("GldpConfig: local_width must be >= 4");
    if (local_blocks < 1) throw std::invalid_argument("GldpConfig: local_blocks must be >= 1");
    if (expand_ratio < 1) throw std::invalid_argument("GldpConfig: expand_ratio must be >= 1");
    int prev = -1;
    for (int p : exchange_points) {
        if (p < 0 || p >= levels())
            throw std::invalid_argument("GldpConfig: exchange point " + std::to_string(p) +
                                        " outside encoder levels [0," + std::to_string(levels() - 1) + "]");
        if (p <= prev) throw std::invalid_argument("GldpConfig: exchange points must be increasing");
        prev = p;
    }
}

InvertedBottleneck::InvertedBottleneck(int cin, int cout, int stride, int expand, nn::ParamInit& init) {
    const int cmid = cin * expand;
    expand_conv = nn::Conv2d(cin, cmid, 1, 1, 0, init);
    dw_conv = nn::Conv2d(cmid, cmid, 3, stride, 1, init, 1, cmid);
    project_conv = nn::Conv2d(cmid, cout, 1, 1, 0, init);
    residual = (cin == cout && stride == 1);
}

Var InvertedBottleneck::forward(const Var& x) const {
    Var y = ag::relu(expand_conv.forward(x));
    y = ag::relu(dw_conv.forward(y));
    y = project_conv.forward(y);
    return residual ? ag::add(y, x) : y;
}

void InvertedBottleneck::collect(const std::string& prefix, std::vector<nn::ParamRef>& out) const {
    expand_conv.collect(prefix + ".expand", out);
    dw_conv.collect(prefix + ".dw", out);
    project_conv.collect(prefix + ".project", out);
}

ExchangeBlock::ExchangeBlock(int global_width, int local_width, nn::ParamInit& init) {
    proj_l2g = nn::Conv2d(local_width, global_width, 1, 1, 0, init);
    proj_g2l = nn::Conv2d(global_width, local_width, 1, 1, 0, init);
}

std::pair<Var, Var> ExchangeBlock::forward(const Var& features_g, const Var& features_l) const {
    const int gh = features_g.value().dim(2), gw = features_g.value().dim(3);
    const int lh = features_l.value().dim(2), lw = features_l.value().dim(3);
    if (lh % gh != 0 || lw % gw != 0 || lh / gh != lw / gw)
        throw std::invalid_argument("ExchangeBlock: resolutions " + features_l.value().shape_str() +
                                    " and " + features_g.value().shape_str() +
                                    " are not related by an integer factor");
    const int factor = lh / gh;
    Var l_down = factor > 1 ? ag::avg_pool(features_l, factor) : features_l;
    Var g_out = ag::add(features_g, proj_l2g.forward(l_down));
    Var g_proj = proj_g2l.forward(features_g);
    if (factor > 1) g_proj = ag::upsample_nearest(g_proj, factor);
    Var l_out = ag::add(features_l, g_proj);
    return {g_out, l_out};
}

void ExchangeBlock::collect(const std::string& prefix, std::vector<nn::ParamRef>& out) const {
    proj_l2g.collect(prefix + ".l2g", out);
    proj_g2l.collect(prefix + ".g2l", out);
}

GldpNetwork::GldpNetwork(const GldpConfig& cfg, nn::ParamInit& init) : cfg_(cfg) {
    cfg_.validate();
    const auto& w = cfg_.encoder_widths;
    const int levels = cfg_.levels();

    g_stem_ = nn::Conv2d(5, w[0], 3, 1, 1, init);
    for (int i = 1; i < levels; ++i) {
        enc_down_.emplace_back(w[static_cast<size_t>(i) - 1], w[static_cast<size_t>(i)], 2, cfg_.expand_ratio, init);
        enc_res_.emplace_back(w[static_cast<size_t>(i)], w[static_cast<size_t>(i)], 1, cfg_.expand_ratio, init);
    }
    for (int i = levels - 1; i >= 1; --i) {
        Upsampler up;
        up.pixel_shuffle = cfg_.use_pixel_shuffle;
        if (cfg_.use_pixel_shuffle)
            up.conv = nn::Conv2d(w[static_cast<size_t>(i)], 4 * w[static_cast<size_t>(i) - 1], 1, 1, 0, init);
        else
            up.conv = nn::Conv2d(w[static_cast<size_t>(i)], w[static_cast<size_t>(i) - 1], 3, 1, 1, init);
        dec_up_.push_back(std::move(up));
        dec_merge_.push_back(nn::Conv2d(2 * w[static_cast<size_t>(i) - 1], w[static_cast<size_t>(i) - 1], 3, 1, 1, init));
    }
    g_depth_head_ = nn::Conv2d(w[0], 1, 3, 1, 1, init);
    g_conf_head_ = nn::Conv2d(w[0], 1, 3, 1, 1, init);
    g_depth_head_.bias.mutable_value().fill(1.0);  // softplus(1) ~ 1.3 m starting depth

    l_stem_ = nn::Conv2d(2, cfg_.local_width, 3, 1, 1, init);
    for (int b = 0; b < cfg_.local_blocks; ++b) {
        local_convs_.push_back(nn::Conv2d(cfg_.local_width, cfg_.local_width, 3, 1, 1, init));
        if (cfg_.use_batchnorm_local) local_bn_.push_back(nn::BatchNorm2d(cfg_.local_width));
    }
    l_depth_head_ = nn::Conv2d(cfg_.local_width, 1, 3, 1, 1, init);
    l_conf_head_ = nn::Conv2d(cfg_.local_width, 1, 3, 1, 1, init);
    l_depth_head_.bias.mutable_value().fill(1.0);

    for (int p : cfg_.exchange_points)
        exchange_blocks_.emplace_back(w[static_cast<size_t>(p)], cfg_.local_width, init);
}

void GldpNetwork::check_input_dims(int h, int w) const {
    const int div = 1 << cfg_.levels();
    if (h % div != 0 || w % div != 0)
        throw std::invalid_argument("GldpNetwork: input " + std::to_string(h) + "x" +
                                    std::to_string(w) + " must be divisible by 2^" +
                                    std::to_string(cfg_.levels()) + " = " + std::to_string(div) +
                                    " (" + std::to_string(cfg_.levels()) + " encoder levels)");
}

Var GldpNetwork::decode(std::vector<Var>& skips) const {
    Var x = skips.back();
    for (size_t d = 0; d < dec_up_.size(); ++d) {
        const auto& up = dec_up_[d];
        if (up.pixel_shuffle)
            x = ag::pixel_shuffle(up.conv.forward(x), 2);
        else
            x = up.conv.forward(ag::upsample_nearest(x, 2));
        const Var& skip = skips[skips.size() - 2 - d];
        x = ag::relu(dec_merge_[d].forward(ag::concat_channels({x, skip})));
    }
    return x;
}

Var GldpNetwork::local_stack(const Var& sparse, const Var& mask, bool train, size_t upto_block,
                             size_t* cursor) {
    Var lx = ag::relu(l_stem_.forward(ag::concat_channels({sparse, mask})));
    for (size_t b = 0; b < upto_block && b < local_convs_.size(); ++b) {
        lx = local_convs_[b].forward(lx);
        if (!local_bn_.empty()) lx = local_bn_[b].forward(lx, train);
        lx = ag::relu(lx);
    }
    if (cursor) *cursor = std::min(upto_block, local_convs_.size());
    return lx;
}

GldpOutput GldpNetwork::forward(const Var& rgb, const Var& sparse, const Var& mask, bool train) {
    check_input_dims(rgb.value().dim(2), rgb.value().dim(3));
    Var gx = ag::relu(g_stem_.forward(ag::concat_channels({rgb, sparse, mask})));
    Var lx = ag::relu(l_stem_.forward(ag::concat_channels({sparse, mask})));

    size_t local_cursor = 0;
    size_t ex_idx = 0;
    auto run_local_block = [&]() {
        if (local_cursor >= local_convs_.size()) return;
        lx = local_convs_[local_cursor].forward(lx);
        if (!local_bn_.empty()) lx = local_bn_[local_cursor].forward(lx, train);
        lx = ag::relu(lx);
        ++local_cursor;
    };
    auto maybe_exchange = [&](int level) {
        if (ex_idx < cfg_.exchange_points.size() && cfg_.exchange_points[ex_idx] == level) {
            auto [g2, l2] = exchange_blocks_[ex_idx].forward(gx, lx);
            gx = g2;
            lx = l2;
            ++ex_idx;
            run_local_block();
        }
    };

    maybe_exchange(0);
    std::vector<Var> skips{gx};
    for (size_t i = 0; i < enc_down_.size(); ++i) {
        gx = enc_res_[i].forward(enc_down_[i].forward(gx));
        maybe_exchange(static_cast<int>(i) + 1);
        skips.push_back(gx);
    }
    while (local_cursor < local_convs_.size()) run_local_block();

    Var g_feat = decode(skips);

    GldpOutput out;
    out.global.depth = ag::softplus(g_depth_head_.forward(g_feat));
    out.global.conf_logit = g_conf_head_.forward(g_feat);
    out.global.features = {g_feat};
    out.local.depth = ag::softplus(l_depth_head_.forward(lx));
    out.local.conf_logit = l_conf_head_.forward(lx);
    out.local.features = {lx};
    return out;
}

BranchOutput GldpNetwork::forward_global(const Var& rgb, const Var& sparse, const Var& mask) const {
    check_input_dims(rgb.value().dim(2), rgb.value().dim(3));
    Var gx = ag::relu(g_stem_.forward(ag::concat_channels({rgb, sparse, mask})));
    std::vector<Var> skips{gx};
    for (size_t i = 0; i < enc_down_.size(); ++i) {
        gx = enc_res_[i].forward(enc_down_[i].forward(gx));
        skips.push_back(gx);
    }
    Var feat = decode(skips);
    BranchOutput out;
    out.depth = ag::softplus(g_depth_head_.forward(feat));
    out.conf_logit = g_conf_head_.forward(feat);
    out.features = {feat};
    return out;
}

BranchOutput GldpNetwork::forward_local(const Var& sparse, const Var& mask, bool train) {
    size_t cursor = 0;
    Var lx = local_stack(sparse, mask, train, local_convs_.size(), &cursor);
    BranchOutput out;
    out.depth = ag::softplus(l_depth_head_.forward(lx));
    out.conf_logit = l_conf_head_.forward(lx);
    out.features = {lx};
    return out;
}

void GldpNetwork::collect(const std::string& prefix, std::vector<nn::ParamRef>& out) const {
    g_stem_.collect(prefix + ".global.encoder.stem", out);
    for (size_t i = 0; i < enc_down_.size(); ++i) {
        enc_down_[i].collect(prefix + ".global.encoder.l" + std::to_string(i + 1) + ".down", out);
        enc_res_[i].collect(prefix + ".global.encoder.l" + std::to_string(i + 1) + ".res", out);
    }
    for (size_t d = 0; d < dec_up_.size(); ++d) {
        const std::string up_name = dec_up_[d].pixel_shuffle ? ".ps_conv" : ".nn_conv";
        dec_up_[d].conv.collect(prefix + ".global.decoder.up" + std::to_string(d) + up_name, out);
        dec_merge_[d].collect(prefix + ".global.decoder.merge" + std::to_string(d), out);
    }
    g_depth_head_.collect(prefix + ".global.depth_head", out);
    g_conf_head_.collect(prefix + ".global.conf_head", out);

    l_stem_.collect(prefix + ".local.stem", out);
    for (size_t b = 0; b < local_convs_.size(); ++b) {
        local_convs_[b].collect(prefix + ".local.block" + std::to_string(b) + ".conv", out);
        if (!local_bn_.empty()) local_bn_[b].collect(prefix + ".local.block" + std::to_string(b) + ".bn", out);
    }
    l_depth_head_.collect(prefix + ".local.depth_head", out);
    l_conf_head_.collect(prefix + ".local.conf_head", out);

    for (size_t e = 0; e < exchange_blocks_.size(); ++e)
        exchange_blocks_[e].collect(
            prefix + ".exchange" + std::to_string(cfg_.exchange_points[e]), out);
}

void GldpNetwork::collect_buffers(const std::string& prefix, std::vector<nn::BufferRef>& out) {
    for (size_t b = 0; b < local_bn_.size(); ++b)
        local_bn_[b].collect_buffers(prefix + ".local.block" + std::to_string(b) + ".bn", out);
}

}  // namespace emdc
