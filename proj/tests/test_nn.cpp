#include <doctest.h>

#include "emdc/nn.hpp"
#include "testutil.hpp"

using namespace emdc;
using testutil::random_tensor;

TEST_SUITE_BEGIN("nn");

TEST_CASE("conv2d module shapes and naming") {
    nn::ParamInit init(1);
    nn::Conv2d conv(3, 8, 3, 1, 1, init);
    Rng rng(2);
    ag::Var x = ag::constant(random_tensor({2, 3, 8, 8}, rng));
    CHECK(conv.forward(x).value().shape() == std::vector<int>{2, 8, 8, 8});
    std::vector<nn::ParamRef> params;
    conv.collect("enc.conv", params);
    REQUIRE(params.size() == 2);
    CHECK(params[0].name == "enc.conv.weight");
    CHECK(params[1].name == "enc.conv.bias");
    CHECK(params[0].var.requires_grad());
}

TEST_CASE("batchnorm train mode normalizes batch statistics") {
    nn::ParamInit init(1);
    nn::BatchNorm2d bn(4);
    Rng rng(3);
    ag::Var x = ag::constant(random_tensor({4, 4, 6, 6}, rng, -3.0, 5.0));
    Tensor y = bn.forward(x, /*train=*/true).value();
    // gamma=1, beta=0 at init: per-channel output mean ~0, var ~1
    const int cnt = 4 * 6 * 6;
    for (int c = 0; c < 4; ++c) {
        double mean = 0;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 6; ++i)
                for (int j = 0; j < 6; ++j) mean += y.at(n, c, i, j);
        mean /= cnt;
        double var = 0;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 6; ++i)
                for (int j = 0; j < 6; ++j) var += (y.at(n, c, i, j) - mean) * (y.at(n, c, i, j) - mean);
        var /= cnt;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("batchnorm eval mode uses running statistics") {
    nn::ParamInit init(1);
    nn::BatchNorm2d bn(2);
    Rng rng(5);
    // drive running stats toward the batch distribution
    Tensor batch = random_tensor({8, 2, 4, 4}, rng, 1.0, 3.0);
    for (int it = 0; it < 200; ++it) bn.forward(ag::constant(batch), true);
    Tensor y_eval = bn.forward(ag::constant(batch), false).value();
    Tensor y_train = bn.forward(ag::constant(batch), true).value();
    for (std::int64_t i = 0; i < y_eval.numel(); ++i)
        CHECK(y_eval[i] == doctest::Approx(y_train[i]).epsilon(1e-2));
}

TEST_CASE("batchnorm gradients") {
    nn::ParamInit init(7);
    nn::BatchNorm2d bn(2);
    Rng rng(7);
    ag::Var x = ag::leaf(random_tensor({2, 2, 3, 3}, rng));
    testutil::check_gradients([&] {
        ag::Var y = bn.forward(x, true);
        return ag::sum_all(ag::mul(y, y));
    }, {x, bn.gamma, bn.beta}, 1e-3, 1e-6, 1e-7);
}

TEST_SUITE_END();
