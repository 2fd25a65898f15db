#include "emdc/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace emdc::ag {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::array<int, 4> pad4(const std::vector<int>& s) {
    std::array<int, 4> out{1, 1, 1, 1};
    const int off = 4 - static_cast<int>(s.size());
    for (size_t i = 0; i < s.size(); ++i) out[static_cast<size_t>(off) + i] = s[i];
    return out;
}

void require_rank4(const Var& x, const char* op) {
    if (x.value().rank() != 4)
        throw std::invalid_argument(std::string(op) + ": expected rank-4 tensor, got " + x.value().shape_str());
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

const Tensor& Var::value() const {
    if (!n_) throw std::logic_error("Var: undefined");
    return n_->value;
}

Tensor& Var::mutable_value() {
    if (!n_) throw std::logic_error("Var: undefined");
    return n_->value;
}

bool Var::requires_grad() const { return n_ && n_->requires_grad; }

bool Var::has_grad() const { return n_ && !n_->grad.empty(); }

Tensor Var::grad_or_zeros() const {
    if (!n_) throw std::logic_error("Var: undefined");
    if (n_->grad.empty()) return Tensor::zeros(n_->value.shape());
    return n_->grad;
}

void Var::zero_grad() {
    if (n_) n_->grad = Tensor();
}

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
}

void Node::accumulate(const Tensor& g) {
    Tensor& buf = grad_buffer();
    if (!buf.same_shape(g)) throw std::logic_error("Node::accumulate: shape mismatch");
    double* d = buf.data();
    const double* s = g.data();
    const std::int64_t n = g.numel();
    for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
}

Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return Var(std::move(n));
}

Var leaf(Tensor t, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

Var scalar(double v) { return constant(Tensor::scalar(v)); }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (auto& p : parents) n->parents.push_back(p.node());
            n->backward_fn = std::move(backward_fn);
        }
    }
    return Var(std::move(n));
}

void backward(const Var& root) {
    if (!root.defined()) throw std::logic_error("backward: undefined root");
    if (root.value().numel() != 1) throw std::logic_error("backward: root must be scalar");
    if (!root.requires_grad()) return;

    // iterative post-order topological sort
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer().fill(1.0);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------- broadcast

Tensor bcast_apply(const Tensor& a, const Tensor& b, double (*f)(double, double)) {
    if (a.same_shape(b)) {
        Tensor out = Tensor::zeros(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    const auto sa = pad4(a.shape());
    const auto sb = pad4(b.shape());
    std::vector<int> oshape4(4);
    for (int i = 0; i < 4; ++i) {
        if (sa[i] != sb[i] && sa[i] != 1 && sb[i] != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + a.shape_str() + " vs " + b.shape_str());
        oshape4[static_cast<size_t>(i)] = std::max(sa[i], sb[i]);
    }
    // result keeps the larger rank of the operands
    const size_t orank = std::max(a.shape().size(), b.shape().size());
    std::vector<int> oshape(oshape4.end() - static_cast<std::ptrdiff_t>(orank), oshape4.end());
    Tensor out = Tensor::zeros(oshape);

    std::int64_t stra[4], strb[4];
    std::int64_t acc_a = 1, acc_b = 1;
    for (int i = 3; i >= 0; --i) {
        stra[i] = (sa[i] == 1) ? 0 : acc_a;
        strb[i] = (sb[i] == 1) ? 0 : acc_b;
        acc_a *= sa[i];
        acc_b *= sb[i];
    }
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    std::int64_t o = 0;
    for (int n = 0; n < oshape4[0]; ++n)
        for (int c = 0; c < oshape4[1]; ++c)
            for (int h = 0; h < oshape4[2]; ++h) {
                const std::int64_t base_a = n * stra[0] + c * stra[1] + h * stra[2];
                const std::int64_t base_b = n * strb[0] + c * strb[1] + h * strb[2];
                for (int w = 0; w < oshape4[3]; ++w)
                    po[o++] = f(pa[base_a + w * stra[3]], pb[base_b + w * strb[3]]);
            }
    return out;
}

Tensor reduce_to_shape(const Tensor& g, const std::vector<int>& target) {
    if (g.shape() == target) return g;
    const auto sg = pad4(g.shape());
    const auto st = pad4(target);
    Tensor out = Tensor::zeros(target);
    std::int64_t strt[4];
    std::int64_t acc = 1;
    for (int i = 3; i >= 0; --i) {
        strt[i] = (st[i] == 1) ? 0 : acc;
        acc *= st[i];
    }
    const double* pg = g.data();
    double* po = out.data();
    std::int64_t idx = 0;
    for (int n = 0; n < sg[0]; ++n)
        for (int c = 0; c < sg[1]; ++c)
            for (int h = 0; h < sg[2]; ++h) {
                const std::int64_t base = (n % st[0]) * strt[0] + (c % st[1]) * strt[1] + (h % st[2]) * strt[2];
                for (int w = 0; w < sg[3]; ++w) po[base + (w % st[3]) * strt[3]] += pg[idx++];
            }
    return out;
}

Var add(const Var& a, const Var& b) {
    Tensor out = bcast_apply(a.value(), b.value(), [](double x, double y) { return x + y; });
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(reduce_to_shape(n.grad, n.parents[0]->value.shape()));
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(reduce_to_shape(n.grad, n.parents[1]->value.shape()));
    });
}

Var sub(const Var& a, const Var& b) {
    Tensor out = bcast_apply(a.value(), b.value(), [](double x, double y) { return x - y; });
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(reduce_to_shape(n.grad, n.parents[0]->value.shape()));
        if (n.parents[1]->requires_grad) {
            Tensor gneg = n.grad;
            for (std::int64_t i = 0; i < gneg.numel(); ++i) gneg[i] = -gneg[i];
            n.parents[1]->accumulate(reduce_to_shape(gneg, n.parents[1]->value.shape()));
        }
    });
}

Var mul(const Var& a, const Var& b) {
    Tensor out = bcast_apply(a.value(), b.value(), [](double x, double y) { return x * y; });
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad)
            n.parents[0]->accumulate(
                reduce_to_shape(bcast_apply(n.grad, bv, [](double g, double y) { return g * y; }), av.shape()));
        if (n.parents[1]->requires_grad)
            n.parents[1]->accumulate(
                reduce_to_shape(bcast_apply(n.grad, av, [](double g, double x) { return g * x; }), bv.shape()));
    });
}

Var divide(const Var& a, const Var& b) {
    Tensor out = bcast_apply(a.value(), b.value(), [](double x, double y) { return x / y; });
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad)
            n.parents[0]->accumulate(
                reduce_to_shape(bcast_apply(n.grad, bv, [](double g, double y) { return g / y; }), av.shape()));
        if (n.parents[1]->requires_grad) {
            Tensor t = bcast_apply(av, bv, [](double x, double y) { return -x / (y * y); });
            n.parents[1]->accumulate(
                reduce_to_shape(bcast_apply(n.grad, t, [](double g, double d) { return g * d; }), bv.shape()));
        }
    });
}

namespace {

Var unary_op(const Var& a, double (*fwd)(double), double (*dfd)(double)) {
    const Tensor& av = a.value();
    Tensor out = Tensor::zeros(av.shape());
    for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = fwd(av[i]);
    return make_op(std::move(out), {a}, [dfd](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Tensor& av = n.parents[0]->value;
        Tensor g = Tensor::zeros(av.shape());
        for (std::int64_t i = 0; i < av.numel(); ++i) g[i] = n.grad[i] * dfd(av[i]);
        n.parents[0]->accumulate(g);
    });
}

double sigmoid_scalar(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

Var neg(const Var& a) {
    return unary_op(a, [](double x) { return -x; }, [](double) { return -1.0; });
}

Var abs(const Var& a) {
    return unary_op(a, [](double x) { return std::fabs(x); },
                    [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var relu(const Var& a) {
    return unary_op(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Var softplus(const Var& a) {
    return unary_op(a, [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }, &sigmoid_scalar);
}

Var sigmoid(const Var& a) {
    return unary_op(a, &sigmoid_scalar, [](double x) {
        const double s = sigmoid_scalar(x);
        return s * (1.0 - s);
    });
}

Var exp(const Var& a) {
    return unary_op(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var sqrt(const Var& a) {
    return unary_op(a, [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); });
}

Var add_const(const Var& a, double c) {
    const Tensor& av = a.value();
    Tensor out = av;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += c;
    return make_op(std::move(out), {a}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    });
}

Var mul_const(const Var& a, double c) {
    const Tensor& av = a.value();
    Tensor out = av;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    return make_op(std::move(out), {a}, [c](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor g = n.grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= c;
        n.parents[0]->accumulate(g);
    });
}

Var pow_const(const Var& a, double p) {
    const Tensor& av = a.value();
    Tensor out = Tensor::zeros(av.shape());
    for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = std::pow(av[i], p);
    return make_op(std::move(out), {a}, [p](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Tensor& av = n.parents[0]->value;
        Tensor g = Tensor::zeros(av.shape());
        for (std::int64_t i = 0; i < av.numel(); ++i) g[i] = n.grad[i] * p * std::pow(av[i], p - 1.0);
        n.parents[0]->accumulate(g);
    });
}

Var clamp_min(const Var& a, double c) {
    const Tensor& av = a.value();
    Tensor out = av;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], c);
    return make_op(std::move(out), {a}, [c](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Tensor& av = n.parents[0]->value;
        Tensor g = Tensor::zeros(av.shape());
        for (std::int64_t i = 0; i < av.numel(); ++i) g[i] = av[i] > c ? n.grad[i] : 0.0;
        n.parents[0]->accumulate(g);
    });
}

Var detach(const Var& a) { return constant(a.value()); }

Var sum_all(const Var& a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (std::int64_t i = 0; i < av.numel(); ++i) s += av[i];
    return make_op(Tensor::scalar(s), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor g = Tensor::full(n.parents[0]->value.shape(), n.grad[0]);
        n.parents[0]->accumulate(g);
    });
}

Var mean_all(const Var& a) { return mul_const(sum_all(a), 1.0 / static_cast<double>(a.value().numel())); }

Var reduce_sum(const Var& a, std::array<bool, 4> axes) {
    require_rank4(a, "reduce_sum");
    const Tensor& av = a.value();
    std::vector<int> oshape = av.shape();
    for (int i = 0; i < 4; ++i)
        if (axes[static_cast<size_t>(i)]) oshape[static_cast<size_t>(i)] = 1;
    Tensor out = reduce_to_shape(av, oshape);
    const std::vector<int> ishape = av.shape();
    return make_op(std::move(out), {a}, [ishape](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        // broadcast grad back to input shape
        Tensor g = bcast_apply(n.grad, Tensor::zeros(ishape), [](double x, double) { return x; });
        n.parents[0]->accumulate(g);
    });
}

// ---------------------------------------------------------------- structural

Var concat_channels(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: empty input");
    for (const auto& x : xs) require_rank4(x, "concat_channels");
    const int n = xs[0].value().dim(0), h = xs[0].value().dim(2), w = xs[0].value().dim(3);
    int ctot = 0;
    for (const auto& x : xs) {
        const auto& s = x.value().shape();
        if (s[0] != n || s[2] != h || s[3] != w)
            throw std::invalid_argument("concat_channels: mismatched shapes");
        ctot += s[1];
    }
    Tensor out({n, ctot, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int b = 0; b < n; ++b) {
        std::int64_t coff = 0;
        for (const auto& x : xs) {
            const int cx = x.value().dim(1);
            const double* src = x.value().data() + static_cast<std::int64_t>(b) * cx * plane;
            double* dst = out.data() + (static_cast<std::int64_t>(b) * ctot + coff) * plane;
            std::copy(src, src + static_cast<std::int64_t>(cx) * plane, dst);
            coff += cx;
        }
    }
    std::vector<int> channels;
    for (const auto& x : xs) channels.push_back(x.value().dim(1));
    std::vector<Var> parents = xs;
    return make_op(std::move(out), parents, [channels, n, h, w, ctot](Node& nd) {
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        for (int b = 0; b < n; ++b) {
            std::int64_t coff = 0;
            for (size_t i = 0; i < channels.size(); ++i) {
                const int cx = channels[i];
                if (nd.parents[i]->requires_grad) {
                    Tensor& pg = nd.parents[i]->grad_buffer();
                    double* dst = pg.data() + static_cast<std::int64_t>(b) * cx * plane;
                    const double* src = nd.grad.data() + (static_cast<std::int64_t>(b) * ctot + coff) * plane;
                    for (std::int64_t k = 0; k < static_cast<std::int64_t>(cx) * plane; ++k) dst[k] += src[k];
                }
                coff += cx;
            }
        }
    });
}

Var slice_channels(const Var& x, int c0, int c1) {
    require_rank4(x, "slice_channels");
    const auto& s = x.value().shape();
    if (c0 < 0 || c1 > s[1] || c0 >= c1) throw std::invalid_argument("slice_channels: bad range");
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    const int cs = c1 - c0;
    Tensor out({n, cs, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int b = 0; b < n; ++b) {
        const double* src = x.value().data() + (static_cast<std::int64_t>(b) * c + c0) * plane;
        double* dst = out.data() + static_cast<std::int64_t>(b) * cs * plane;
        std::copy(src, src + static_cast<std::int64_t>(cs) * plane, dst);
    }
    return make_op(std::move(out), {x}, [n, c, h, w, c0, cs](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor& pg = nd.parents[0]->grad_buffer();
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        for (int b = 0; b < n; ++b) {
            double* dst = pg.data() + (static_cast<std::int64_t>(b) * c + c0) * plane;
            const double* src = nd.grad.data() + static_cast<std::int64_t>(b) * cs * plane;
            for (std::int64_t k = 0; k < static_cast<std::int64_t>(cs) * plane; ++k) dst[k] += src[k];
        }
    });
}

Var pad_replicate(const Var& x, int m) {
    require_rank4(x, "pad_replicate");
    if (m < 0) throw std::invalid_argument("pad_replicate: negative margin");
    if (m == 0) return x;
    const auto& s = x.value().shape();
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    Tensor out({n, c, h + 2 * m, w + 2 * m});
    const Tensor& xv = x.value();
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h + 2 * m; ++i) {
                const int si = std::clamp(i - m, 0, h - 1);
                for (int j = 0; j < w + 2 * m; ++j) {
                    const int sj = std::clamp(j - m, 0, w - 1);
                    out.at(b, ch, i, j) = xv.at(b, ch, si, sj);
                }
            }
    return make_op(std::move(out), {x}, [n, c, h, w, m](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < h + 2 * m; ++i) {
                    const int si = std::clamp(i - m, 0, h - 1);
                    for (int j = 0; j < w + 2 * m; ++j) {
                        const int sj = std::clamp(j - m, 0, w - 1);
                        pg.at(b, ch, si, sj) += nd.grad.at(b, ch, i, j);
                    }
                }
    });
}

Var crop(const Var& x, int y0, int x0, int h, int w) {
    require_rank4(x, "crop");
    const auto& s = x.value().shape();
    if (y0 < 0 || x0 < 0 || y0 + h > s[2] || x0 + w > s[3]) throw std::invalid_argument("crop: out of bounds");
    const int n = s[0], c = s[1];
    Tensor out({n, c, h, w});
    const Tensor& xv = x.value();
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) out.at(b, ch, i, j) = xv.at(b, ch, y0 + i, x0 + j);
    return make_op(std::move(out), {x}, [n, c, h, w, y0, x0](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) pg.at(b, ch, y0 + i, x0 + j) += nd.grad.at(b, ch, i, j);
    });
}

Var pixel_shuffle(const Var& x, int r) {
    require_rank4(x, "pixel_shuffle");
    const auto& s = x.value().shape();
    if (s[1] % (r * r) != 0) throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");
    const int n = s[0], cin = s[1], h = s[2], w = s[3];
    const int cout = cin / (r * r);
    Tensor out({n, cout, h * r, w * r});
    const Tensor& xv = x.value();
    for (int b = 0; b < n; ++b)
        for (int c = 0; c < cout; ++c)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    for (int di = 0; di < r; ++di)
                        for (int dj = 0; dj < r; ++dj)
                            out.at(b, c, i * r + di, j * r + dj) = xv.at(b, (c * r + di) * r + dj, i, j);
    return make_op(std::move(out), {x}, [n, cout, h, w, r](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < cout; ++c)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j)
                        for (int di = 0; di < r; ++di)
                            for (int dj = 0; dj < r; ++dj)
                                pg.at(b, (c * r + di) * r + dj, i, j) += nd.grad.at(b, c, i * r + di, j * r + dj);
    });
}

Var upsample_nearest(const Var& x, int r) {
    require_rank4(x, "upsample_nearest");
    const auto& s = x.value().shape();
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    Tensor out({n, c, h * r, w * r});
    const Tensor& xv = x.value();
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h * r; ++i)
                for (int j = 0; j < w * r; ++j) out.at(b, ch, i, j) = xv.at(b, ch, i / r, j / r);
    return make_op(std::move(out), {x}, [n, c, h, w, r](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < h * r; ++i)
                    for (int j = 0; j < w * r; ++j) pg.at(b, ch, i / r, j / r) += nd.grad.at(b, ch, i, j);
    });
}

Var avg_pool(const Var& x, int k) {
    require_rank4(x, "avg_pool");
    const auto& s = x.value().shape();
    if (s[2] % k != 0 || s[3] % k != 0) throw std::invalid_argument("avg_pool: dims not divisible by kernel");
    const int n = s[0], c = s[1], h = s[2] / k, w = s[3] / k;
    Tensor out({n, c, h, w});
    const Tensor& xv = x.value();
    const double inv = 1.0 / (k * k);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    double acc = 0.0;
                    for (int di = 0; di < k; ++di)
                        for (int dj = 0; dj < k; ++dj) acc += xv.at(b, ch, i * k + di, j * k + dj);
                    out.at(b, ch, i, j) = acc * inv;
                }
    return make_op(std::move(out), {x}, [n, c, h, w, k, inv](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor& pg = nd.parents[0]->grad_buffer();
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) {
                        const double g = nd.grad.at(b, ch, i, j) * inv;
                        for (int di = 0; di < k; ++di)
                            for (int dj = 0; dj < k; ++dj) pg.at(b, ch, i * k + di, j * k + dj) += g;
                    }
    });
}

Var softmax_channels(const Var& x) {
    require_rank4(x, "softmax_channels");
    const auto& s = x.value().shape();
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    Tensor out({n, c, h, w});
    const Tensor& xv = x.value();
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double mx = -1e300;
                for (int ch = 0; ch < c; ++ch) mx = std::max(mx, xv.at(b, ch, i, j));
                double denom = 0.0;
                for (int ch = 0; ch < c; ++ch) denom += std::exp(xv.at(b, ch, i, j) - mx);
                for (int ch = 0; ch < c; ++ch) out.at(b, ch, i, j) = std::exp(xv.at(b, ch, i, j) - mx) / denom;
            }
    return make_op(std::move(out), {x}, [n, c, h, w](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        const Tensor& y = nd.value;
        Tensor g = Tensor::zeros(y.shape());
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    double dot = 0.0;
                    for (int ch = 0; ch < c; ++ch) dot += nd.grad.at(b, ch, i, j) * y.at(b, ch, i, j);
                    for (int ch = 0; ch < c; ++ch)
                        g.at(b, ch, i, j) = y.at(b, ch, i, j) * (nd.grad.at(b, ch, i, j) - dot);
                }
        nd.parents[0]->accumulate(g);
    });
}

// ---------------------------------------------------------------- conv2d

namespace {

struct ConvDims {
    int n, cin, hin, win;
    int cout, kh, kw;
    int stride, pad, dilation, groups;
    int hout, wout;
    int cin_g, cout_g;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, int dilation, int groups) {
    ConvDims d;
    d.n = x.dim(0);
    d.cin = x.dim(1);
    d.hin = x.dim(2);
    d.win = x.dim(3);
    d.cout = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = pad;
    d.dilation = dilation;
    d.groups = groups;
    if (d.cin % groups != 0 || d.cout % groups != 0)
        throw std::invalid_argument("conv2d: channels not divisible by groups");
    d.cin_g = d.cin / groups;
    d.cout_g = d.cout / groups;
    if (w.dim(1) != d.cin_g) throw std::invalid_argument("conv2d: weight in-channels mismatch");
    const int eff_kh = dilation * (d.kh - 1) + 1;
    const int eff_kw = dilation * (d.kw - 1) + 1;
    d.hout = (d.hin + 2 * pad - eff_kh) / stride + 1;
    d.wout = (d.win + 2 * pad - eff_kw) / stride + 1;
    if (d.hout <= 0 || d.wout <= 0) throw std::invalid_argument("conv2d: output would be empty");
    return d;
}

// col layout: (cin_g*kh*kw) x (hout*wout), row-major
void im2col(const double* x, const ConvDims& d, int c0, double* col) {
    const std::int64_t plane_out = static_cast<std::int64_t>(d.hout) * d.wout;
    std::int64_t row = 0;
    for (int c = 0; c < d.cin_g; ++c) {
        const double* xp = x + static_cast<std::int64_t>(c0 + c) * d.hin * d.win;
        for (int ki = 0; ki < d.kh; ++ki)
            for (int kj = 0; kj < d.kw; ++kj) {
                double* out = col + row * plane_out;
                for (int oh = 0; oh < d.hout; ++oh) {
                    const int ih = oh * d.stride - d.pad + ki * d.dilation;
                    if (ih < 0 || ih >= d.hin) {
                        std::fill(out, out + d.wout, 0.0);
                        out += d.wout;
                        continue;
                    }
                    const double* xrow = xp + static_cast<std::int64_t>(ih) * d.win;
                    for (int ow = 0; ow < d.wout; ++ow) {
                        const int iw = ow * d.stride - d.pad + kj * d.dilation;
                        *out++ = (iw >= 0 && iw < d.win) ? xrow[iw] : 0.0;
                    }
                }
                ++row;
            }
    }
}

void col2im_accum(const double* col, const ConvDims& d, int c0, double* dx) {
    const std::int64_t plane_out = static_cast<std::int64_t>(d.hout) * d.wout;
    std::int64_t row = 0;
    for (int c = 0; c < d.cin_g; ++c) {
        double* xp = dx + static_cast<std::int64_t>(c0 + c) * d.hin * d.win;
        for (int ki = 0; ki < d.kh; ++ki)
            for (int kj = 0; kj < d.kw; ++kj) {
                const double* in = col + row * plane_out;
                for (int oh = 0; oh < d.hout; ++oh) {
                    const int ih = oh * d.stride - d.pad + ki * d.dilation;
                    if (ih < 0 || ih >= d.hin) {
                        in += d.wout;
                        continue;
                    }
                    double* xrow = xp + static_cast<std::int64_t>(ih) * d.win;
                    for (int ow = 0; ow < d.wout; ++ow) {
                        const int iw = ow * d.stride - d.pad + kj * d.dilation;
                        if (iw >= 0 && iw < d.win) xrow[iw] += in[ow];
                    }
                    in += d.wout;
                }
                ++row;
            }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var* bias, int stride, int pad, int dilation, int groups) {
    require_rank4(x, "conv2d");
    if (weight.value().rank() != 4) throw std::invalid_argument("conv2d: weight must be rank 4");
    const ConvDims d = conv_dims(x.value(), weight.value(), stride, pad, dilation, groups);
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const bool has_bias = bias != nullptr && bias->defined();
    if (has_bias && bias->value().numel() != d.cout) throw std::invalid_argument("conv2d: bias size mismatch");

    Tensor out({d.n, d.cout, d.hout, d.wout});
    const std::int64_t k = static_cast<std::int64_t>(d.cin_g) * d.kh * d.kw;
    const std::int64_t plane_out = static_cast<std::int64_t>(d.hout) * d.wout;
    std::vector<double> col(static_cast<size_t>(k * plane_out));

    for (int b = 0; b < d.n; ++b) {
        const double* xb = xv.data() + static_cast<std::int64_t>(b) * d.cin * d.hin * d.win;
        double* ob = out.data() + static_cast<std::int64_t>(b) * d.cout * plane_out;
        for (int g = 0; g < d.groups; ++g) {
            im2col(xb, d, g * d.cin_g, col.data());
            ConstMapMat W(wv.data() + static_cast<std::int64_t>(g) * d.cout_g * k, d.cout_g, k);
            ConstMapMat C(col.data(), k, plane_out);
            MapMat O(ob + static_cast<std::int64_t>(g) * d.cout_g * plane_out, d.cout_g, plane_out);
            O.noalias() = W * C;
        }
        if (has_bias) {
            const double* bv = bias->value().data();
            for (int c = 0; c < d.cout; ++c) {
                double* row = ob + static_cast<std::int64_t>(c) * plane_out;
                const double bc = bv[c];
                for (std::int64_t i = 0; i < plane_out; ++i) row[i] += bc;
            }
        }
    }

    std::vector<Var> parents = has_bias ? std::vector<Var>{x, weight, *bias} : std::vector<Var>{x, weight};
    return make_op(std::move(out), parents, [d, has_bias](Node& nd) {
        const Tensor& xv = nd.parents[0]->value;
        const Tensor& wv = nd.parents[1]->value;
        const std::int64_t k = static_cast<std::int64_t>(d.cin_g) * d.kh * d.kw;
        const std::int64_t plane_out = static_cast<std::int64_t>(d.hout) * d.wout;
        const bool need_dx = nd.parents[0]->requires_grad;
        const bool need_dw = nd.parents[1]->requires_grad;
        const bool need_db = has_bias && nd.parents[2]->requires_grad;

        Tensor* dx = need_dx ? &nd.parents[0]->grad_buffer() : nullptr;
        Tensor* dw = need_dw ? &nd.parents[1]->grad_buffer() : nullptr;
        Tensor* db = need_db ? &nd.parents[2]->grad_buffer() : nullptr;

        std::vector<double> col(static_cast<size_t>(k * plane_out));
        std::vector<double> dcol(static_cast<size_t>(k * plane_out));

        for (int b = 0; b < d.n; ++b) {
            const double* xb = xv.data() + static_cast<std::int64_t>(b) * d.cin * d.hin * d.win;
            const double* gb = nd.grad.data() + static_cast<std::int64_t>(b) * d.cout * plane_out;
            for (int g = 0; g < d.groups; ++g) {
                ConstMapMat G(gb + static_cast<std::int64_t>(g) * d.cout_g * plane_out, d.cout_g, plane_out);
                if (need_dw) {
                    im2col(xb, d, g * d.cin_g, col.data());
                    ConstMapMat C(col.data(), k, plane_out);
                    MapMat DW(dw->data() + static_cast<std::int64_t>(g) * d.cout_g * k, d.cout_g, k);
                    DW.noalias() += G * C.transpose();
                }
                if (need_dx) {
                    ConstMapMat W(wv.data() + static_cast<std::int64_t>(g) * d.cout_g * k, d.cout_g, k);
                    MapMat DC(dcol.data(), k, plane_out);
                    DC.noalias() = W.transpose() * G;
                    col2im_accum(dcol.data(), d, g * d.cin_g,
                                 dx->data() + static_cast<std::int64_t>(b) * d.cin * d.hin * d.win);
                }
            }
            if (need_db) {
                double* dbp = db->data();
                for (int c = 0; c < d.cout; ++c) {
                    const double* row = gb + static_cast<std::int64_t>(c) * plane_out;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < plane_out; ++i) acc += row[i];
                    dbp[c] += acc;
                }
            }
        }
    });
}

}  // namespace emdc::ag
