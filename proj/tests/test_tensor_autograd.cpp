#include <doctest.h>

#include "emdc/autograd.hpp"
#include "emdc/rng.hpp"
#include "emdc/tensor.hpp"
#include "testutil.hpp"

using namespace emdc;
using testutil::check_gradients;
using testutil::random_tensor;

TEST_SUITE_BEGIN("autograd");

TEST_CASE("tensor basics") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t[5] == 1.5);
    CHECK_THROWS(Tensor({0, 3}));
    CHECK_THROWS(Tensor::from_vector({2, 2}, {1.0}));
    CHECK(Tensor::scalar(3.0).item() == 3.0);
    CHECK_THROWS(Tensor({2, 2}).item());
}

TEST_CASE("scalar chain backward") {
    ag::Var x = ag::leaf(Tensor::scalar(2.0));
    ag::Var y = ag::mul(x, x);           // x^2
    ag::Var z = ag::add(y, ag::mul_const(x, 3.0));  // x^2 + 3x
    ag::backward(z);
    CHECK(z.value().item() == doctest::Approx(10.0));
    CHECK(x.grad_or_zeros()[0] == doctest::Approx(7.0));  // 2x + 3
}

TEST_CASE("diamond reuse accumulates") {
    ag::Var x = ag::leaf(Tensor::scalar(3.0));
    ag::Var y = ag::add(ag::mul(x, x), ag::mul(x, x));
    ag::backward(y);
    CHECK(x.grad_or_zeros()[0] == doctest::Approx(12.0));
}

TEST_CASE("no-grad mode records nothing") {
    ag::Var x = ag::leaf(Tensor::scalar(2.0));
    ag::NoGradGuard guard;
    ag::Var y = ag::mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("broadcast shapes and reductions") {
    Rng rng(7);
    Tensor a = random_tensor({2, 3, 4, 5}, rng);
    Tensor b = random_tensor({1, 3, 1, 1}, rng);
    ag::Var va = ag::constant(a), vb = ag::constant(b);
    ag::Var s = ag::add(va, vb);
    CHECK(s.value().shape() == std::vector<int>{2, 3, 4, 5});
    CHECK(s.value().at(1, 2, 3, 4) == doctest::Approx(a.at(1, 2, 3, 4) + b.at(0, 2, 0, 0)));

    ag::Var r = ag::reduce_sum(va, {true, false, true, true});
    CHECK(r.value().shape() == std::vector<int>{1, 3, 1, 1});
    double manual = 0;
    for (int n = 0; n < 2; ++n)
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 5; ++w) manual += a.at(n, 1, h, w);
    CHECK(r.value().at(0, 1, 0, 0) == doctest::Approx(manual));
}

TEST_CASE("elementwise gradients") {
    Rng rng(11);
    ag::Var a = ag::leaf(random_tensor({2, 2, 3, 3}, rng, 0.5, 2.0));
    ag::Var b = ag::leaf(random_tensor({1, 2, 1, 1}, rng, 0.5, 2.0));
    check_gradients([&] { return ag::sum_all(ag::mul(a, b)); }, {a, b}, 1e-5);
    check_gradients([&] { return ag::sum_all(ag::divide(a, b)); }, {a, b}, 1e-5);
    check_gradients([&] { return ag::sum_all(ag::sub(a, b)); }, {a, b}, 1e-5);
    check_gradients([&] { return ag::sum_all(ag::sqrt(a)); }, {a}, 1e-5);
    check_gradients([&] { return ag::sum_all(ag::softplus(a)); }, {a}, 1e-5);
    check_gradients([&] { return ag::sum_all(ag::sigmoid(a)); }, {a}, 1e-5);
    check_gradients([&] { return ag::sum_all(ag::exp(a)); }, {a}, 1e-5);
    check_gradients([&] { return ag::sum_all(ag::pow_const(a, 1.7)); }, {a}, 1e-5);
    // stay away from the relu/abs/clamp kinks: values in [0.5, 2]
    check_gradients([&] { return ag::sum_all(ag::relu(a)); }, {a}, 1e-5);
    check_gradients([&] { return ag::sum_all(ag::abs(a)); }, {a}, 1e-5);
    check_gradients([&] { return ag::sum_all(ag::clamp_min(a, 1.0)); }, {a}, 1e-4);
    check_gradients([&] { return ag::mean_all(ag::mul(a, a)); }, {a}, 1e-5);
    check_gradients([&] { return ag::sum_all(ag::reduce_sum(ag::mul(a, a), {false, true, false, false})); },
                    {a}, 1e-5);
}

TEST_CASE("structural op gradients") {
    Rng rng(13);
    ag::Var a = ag::leaf(random_tensor({1, 2, 4, 4}, rng));
    ag::Var b = ag::leaf(random_tensor({1, 3, 4, 4}, rng));
    check_gradients([&] { return ag::sum_all(ag::mul(ag::concat_channels({a, b}),
                                                     ag::concat_channels({b, a}))); },
                    {a, b}, 1e-5);
    check_gradients([&] { return ag::sum_all(ag::mul(ag::slice_channels(b, 1, 3),
                                                     ag::slice_channels(b, 0, 2))); },
                    {b}, 1e-5);
    ag::Var c = ag::leaf(random_tensor({1, 1, 3, 3}, rng));
    check_gradients([&] {
        ag::Var p = ag::pad_replicate(c, 2);
        return ag::sum_all(ag::mul(p, p));
    }, {c}, 1e-5);
    check_gradients([&] {
        ag::Var cr = ag::crop(ag::pad_replicate(c, 1), 1, 2, 3, 2);
        return ag::sum_all(ag::mul(cr, cr));
    }, {c}, 1e-5);

    ag::Var d = ag::leaf(random_tensor({1, 8, 2, 2}, rng));
    check_gradients([&] {
        ag::Var ps = ag::pixel_shuffle(d, 2);
        return ag::sum_all(ag::mul(ps, ps));
    }, {d}, 1e-5);
    check_gradients([&] {
        ag::Var up = ag::upsample_nearest(ag::avg_pool(d, 2), 2);
        return ag::sum_all(ag::mul(up, up));
    }, {d}, 1e-5);
    const ag::Var sm_target = ag::constant(random_tensor({1, 8, 2, 2}, rng));
    check_gradients([&] { return ag::sum_all(ag::mul(ag::softmax_channels(d), sm_target)); }, {d},
                    1e-5);
}

TEST_CASE("pixel shuffle rearrangement") {
    // channel-to-space: C*r^2 x h x w -> C x rh x rw
    ag::Var x = ag::constant(Tensor::zeros({1, 64, 24, 32}));
    ag::Var y = ag::pixel_shuffle(x, 2);
    CHECK(y.value().shape() == std::vector<int>{1, 16, 48, 64});

    Tensor t({1, 4, 1, 1});
    t[0] = 10;
    t[1] = 20;
    t[2] = 30;
    t[3] = 40;
    ag::Var z = ag::pixel_shuffle(ag::constant(t), 2);
    CHECK(z.value().at(0, 0, 0, 0) == 10);
    CHECK(z.value().at(0, 0, 0, 1) == 20);
    CHECK(z.value().at(0, 0, 1, 0) == 30);
    CHECK(z.value().at(0, 0, 1, 1) == 40);
}

TEST_CASE("softmax channels sums to one") {
    Rng rng(17);
    ag::Var x = ag::constant(random_tensor({2, 5, 3, 3}, rng, -4, 4));
    Tensor y = ag::softmax_channels(x).value();
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int c = 0; c < 5; ++c) s += y.at(n, c, i, j);
                CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
            }
}

TEST_CASE("conv2d matches direct computation") {
    Rng rng(19);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    ag::Var vx = ag::constant(x), vw = ag::constant(w), vb = ag::constant(b);
    Tensor y = ag::conv2d(vx, vw, &vb, 1, 1).value();
    CHECK(y.shape() == std::vector<int>{1, 3, 5, 5});
    // direct correlation at an interior pixel
    for (int co = 0; co < 3; ++co) {
        double acc = b[co];
        for (int ci = 0; ci < 2; ++ci)
            for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj)
                    acc += w.at(co, ci, ki, kj) * x.at(0, ci, 2 + ki - 1, 2 + kj - 1);
        CHECK(y.at(0, co, 2, 2) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("conv2d gradients incl. stride, dilation, groups") {
    Rng rng(23);
    ag::Var x = ag::leaf(random_tensor({2, 4, 6, 6}, rng));
    ag::Var w = ag::leaf(random_tensor({6, 4, 3, 3}, rng));
    ag::Var b = ag::leaf(random_tensor({6}, rng));
    check_gradients([&] {
        ag::Var y = ag::conv2d(x, w, &b, 1, 1);
        return ag::sum_all(ag::mul(y, y));
    }, {x, w, b}, 1e-5);

    ag::Var w2 = ag::leaf(random_tensor({6, 4, 3, 3}, rng));
    check_gradients([&] {
        ag::Var y = ag::conv2d(x, w2, nullptr, 2, 1);
        return ag::sum_all(ag::mul(y, y));
    }, {x, w2}, 1e-5);

    ag::Var wd = ag::leaf(random_tensor({4, 1, 3, 3}, rng));  // depthwise
    check_gradients([&] {
        ag::Var y = ag::conv2d(x, wd, nullptr, 1, 2, 2, 4);
        return ag::sum_all(ag::mul(y, y));
    }, {x, wd}, 1e-5);

    CHECK_THROWS(ag::conv2d(x, ag::constant(random_tensor({6, 3, 3, 3}, rng)), nullptr, 1, 1));
}

TEST_SUITE_END();
