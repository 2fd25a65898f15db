#pragma once

#include <string>
#include <vector>

#include "emdc/autograd.hpp"
#include "emdc/rng.hpp"
#include "emdc/tensor.hpp"

namespace emdc::nn {

using ag::Var;

struct ParamRef {
    std::string name;
    Var var;
};

/// Named non-trainable state (batch-norm running statistics).
struct BufferRef {
    std::string name;
    Tensor* tensor;
};

/// Deterministic He-style initializer; one instance per model build.
class ParamInit {
public:
    explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

    Tensor normal(std::vector<int> shape, double stddev) {
        Tensor t(shape);
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng_.normal(0.0, stddev);
        return t;
    }

private:
    Rng rng_;
};

struct Conv2d {
    Var weight;
    Var bias;
    int stride = 1;
    int pad = 0;
    int dilation = 1;
    int groups = 1;

    Conv2d() = default;
    Conv2d(int cin, int cout, int k, int stride, int pad, ParamInit& init, int dilation = 1,
           int groups = 1, bool with_bias = true);

    Var forward(const Var& x) const;
    void collect(const std::string& prefix, std::vector<ParamRef>& out) const;
};

struct BatchNorm2d {
    Var gamma;  // (1,C,1,1)
    Var beta;   // (1,C,1,1)
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;
    int channels = 0;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int c);

    Var forward(const Var& x, bool train);
    void collect(const std::string& prefix, std::vector<ParamRef>& out) const;
    void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out);
};

}  // namespace emdc::nn
