#include "emdc/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace emdc::nn {

Conv2d::Conv2d(int cin, int cout, int k, int stride_, int pad_, ParamInit& init, int dilation_,
               int groups_, bool with_bias)
    : stride(stride_), pad(pad_), dilation(dilation_), groups(groups_) {
    if (cin % groups_ != 0) throw std::invalid_argument("Conv2d: cin not divisible by groups");
    const int fan_in = (cin / groups_) * k * k;
    weight = ag::leaf(init.normal({cout, cin / groups_, k, k}, std::sqrt(2.0 / fan_in)));
    if (with_bias) bias = ag::leaf(Tensor::zeros({cout}));
}

Var Conv2d::forward(const Var& x) const {
    return ag::conv2d(x, weight, bias.defined() ? &bias : nullptr, stride, pad, dilation, groups);
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

BatchNorm2d::BatchNorm2d(int c) : channels(c) {
    gamma = ag::leaf(Tensor::full({1, c, 1, 1}, 1.0));
    beta = ag::leaf(Tensor::zeros({1, c, 1, 1}));
    running_mean = Tensor::zeros({1, c, 1, 1});
    running_var = Tensor::full({1, c, 1, 1}, 1.0);
}

Var BatchNorm2d::forward(const Var& x, bool train) {
    using namespace ag;
    const auto& s = x.value().shape();
    if (s.size() != 4 || s[1] != channels) throw std::invalid_argument("BatchNorm2d: bad input shape");
    Var y;
    if (train) {
        const double cnt = static_cast<double>(s[0]) * s[2] * s[3];
        Var mu = mul_const(reduce_sum(x, {true, false, true, true}), 1.0 / cnt);
        Var xc = sub(x, mu);
        Var var = mul_const(reduce_sum(mul(xc, xc), {true, false, true, true}), 1.0 / cnt);
        y = divide(xc, sqrt(add_const(var, eps)));
        // running statistics track detached batch moments
        const Tensor mu_v = mu.value();
        const Tensor var_v = var.value();
        for (std::int64_t i = 0; i < running_mean.numel(); ++i) {
            running_mean[i] = (1.0 - momentum) * running_mean[i] + momentum * mu_v[i];
            running_var[i] = (1.0 - momentum) * running_var[i] + momentum * var_v[i];
        }
    } else {
        Var mu = constant(running_mean);
        Tensor denom = running_var;
        for (std::int64_t i = 0; i < denom.numel(); ++i) denom[i] = std::sqrt(denom[i] + eps);
        y = divide(sub(x, mu), constant(denom));
    }
    return add(mul(y, gamma), beta);
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<ParamRef>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
}

}  // namespace emdc::nn
