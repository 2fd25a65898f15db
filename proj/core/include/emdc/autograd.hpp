#pragma once

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "emdc/tensor.hpp"

namespace emdc::ag {

struct Node;

/// Handle to a node of the dynamically-recorded computation graph.
/// Value semantics; copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    bool defined() const { return static_cast<bool>(n_); }
    const Tensor& value() const;
    /// In-place access for leaves (optimizer steps, EMA swaps, init tweaks).
    Tensor& mutable_value();
    const std::vector<int>& shape() const { return value().shape(); }
    bool requires_grad() const;

    /// Gradient accumulated by backward(); zeros-shaped if never touched.
    Tensor grad_or_zeros() const;
    bool has_grad() const;
    void zero_grad();

    const std::shared_ptr<Node>& node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& grad_buffer();             // allocates zeros on first use
    void accumulate(const Tensor& g);  // elementwise add, shape-checked
};

bool grad_enabled();

/// Disables graph recording in scope (inference / detached evaluation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

Var constant(Tensor t);
Var leaf(Tensor t, bool requires_grad = true);
Var scalar(double v);

/// Registers a custom op node. If recording is off or no parent requires
/// grad, the parents and closure are dropped.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Reverse-mode sweep from a scalar root.
void backward(const Var& root);

// ---- elementwise (numpy-style broadcasting over rank <= 4) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_const(const Var& a, double c);
Var mul_const(const Var& a, double c);
Var abs(const Var& a);
Var relu(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var sqrt(const Var& a);
Var pow_const(const Var& a, double p);
Var clamp_min(const Var& a, double c);
Var detach(const Var& a);

// ---- reductions ----
Var sum_all(const Var& a);   // -> shape {1}
Var mean_all(const Var& a);  // -> shape {1}
/// Sum over the rank-4 axes flagged true; kept as size-1 dims.
Var reduce_sum(const Var& a, std::array<bool, 4> axes);

// ---- structural (rank-4 NCHW) ----
Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, int c0, int c1);
Var pad_replicate(const Var& x, int m);
Var crop(const Var& x, int y0, int x0, int h, int w);
Var pixel_shuffle(const Var& x, int r);
Var upsample_nearest(const Var& x, int r);
Var avg_pool(const Var& x, int k);
Var softmax_channels(const Var& x);

/// 2-D convolution, NCHW, zero padding. weight (Cout, Cin/groups, kh, kw),
/// optional bias (Cout).
Var conv2d(const Var& x, const Var& weight, const Var* bias, int stride, int pad,
           int dilation = 1, int groups = 1);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return divide(a, b); }
inline Var operator-(const Var& a) { return neg(a); }

// Raw broadcasting helpers shared with custom ops.
Tensor bcast_apply(const Tensor& a, const Tensor& b, double (*f)(double, double));
Tensor reduce_to_shape(const Tensor& g, const std::vector<int>& target);

}  // namespace emdc::ag
