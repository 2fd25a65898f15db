#include "emdc/fcspn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emdc {

using ag::Var;

void StageSchedule::validate() const {
    int prev_max = 1 << 30;
    for (size_t si = 0; si < stages.size(); ++si) {
        const Stage& st = stages[si];
        if (st.dilations.empty())
            throw std::invalid_argument("StageSchedule: stage " + std::to_string(si) +
                                        " has no dilations");
        if (st.iterations < 1)
            throw std::invalid_argument("StageSchedule: stage " + std::to_string(si) +
                                        " has nonpositive iterations");
        for (size_t k = 0; k < st.dilations.size(); ++k) {
            if (st.dilations[k] < 1)
                throw std::invalid_argument("StageSchedule: dilation must be >= 1");
            if (k > 0 && st.dilations[k] >= st.dilations[k - 1])
                throw std::invalid_argument("StageSchedule: dilations must be strictly descending");
        }
        const int mx = st.dilations.front();
        if (mx > prev_max)
            throw std::invalid_argument("StageSchedule: max dilation grows at stage " +
                                        std::to_string(si) + " (" + std::to_string(mx) + " > " +
                                        std::to_string(prev_max) + "), violating the funnel rule");
        prev_max = mx;
    }
}

int StageSchedule::total_iterations() const {
    int n = 0;
    for (const auto& s : stages) n += s.iterations;
    return n;
}

StageSchedule StageSchedule::none() { return {}; }

StageSchedule StageSchedule::preset_s6() {
    StageSchedule s;
    s.stages = {{{8, 4, 2, 1}, 3}, {{8, 4, 2, 1}, 3}, {{4, 2, 1}, 3},
                {{4, 2, 1}, 2},   {{2, 1}, 2},       {{1}, 2}};
    return s;
}

StageSchedule StageSchedule::preset_s9() {
    StageSchedule s;
    s.stages = {{{8, 4, 2, 1}, 3}, {{8, 4, 2, 1}, 3}, {{8, 4, 2, 1}, 3},
                {{4, 2, 1}, 2},   {{4, 2, 1}, 2},   {{4, 2, 1}, 2},
                {{2, 1}, 2},      {{2, 1}, 2},      {{1}, 2}};
    return s;
}

StageSchedule FcspnConfig::schedule() const {
    StageSchedule s;
    if (preset == "s6")
        s = StageSchedule::preset_s6();
    else if (preset == "s9")
        s = StageSchedule::preset_s9();
    else if (preset == "none")
        s = StageSchedule::none();
    else if (preset == "custom")
        s = custom;
    else
        throw std::invalid_argument("FcspnConfig: unknown preset '" + preset + "'");
    s.validate();
    return s;
}

void normalize_affinity(AffinityField& field) {
    const double eps = field.epsilon;
    field.weights.clear();
    field.centers.clear();
    for (const auto& raw : field.raw_kernels) {
        Var absk = ag::abs(raw);
        Var s = ag::reduce_sum(absk, {false, true, false, false});
        Var denom = ag::clamp_min(s, 1.0 - eps);
        Var w = ag::mul_const(ag::divide(absk, denom), 1.0 - eps);
        Var sumw = ag::reduce_sum(w, {false, true, false, false});
        Var center = ag::add_const(ag::neg(sumw), 1.0);
        field.weights.push_back(w);
        field.centers.push_back(center);
    }
    field.mixing = ag::softmax_channels(field.raw_logits);
}

namespace {

constexpr int kNeighborOffsets[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                        {0, 1},   {1, -1}, {1, 0},  {1, 1}};

void check_field(const Tensor& w, const Tensor& c) {
    const int n = w.dim(0), h = w.dim(2), wd = w.dim(3);
    constexpr double tol = 1e-4;
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < wd; ++j) {
                double s = 0.0;
                for (int k = 0; k < 8; ++k) {
                    const double v = w.at(b, k, i, j);
                    if (v < -tol)
                        throw std::invalid_argument("propagate_once: negative neighbor weight; "
                                                    "field is not normalized");
                    s += v;
                }
                if (s > 1.0 + tol || std::fabs(c.at(b, 0, i, j) - (1.0 - s)) > tol)
                    throw std::invalid_argument("propagate_once: weights do not form a convex "
                                                "combination; field is not normalized");
            }
}

}  // namespace

Var propagate_once(const Var& depth, const Var& weights, const Var& center, int dilation,
                   const Tensor* anchor_depth, const Tensor* anchor_mask) {
    const auto& ds = depth.value().shape();
    if (ds.size() != 4 || ds[1] != 1)
        throw std::invalid_argument("propagate_once: depth must be (N,1,H,W)");
    const int n = ds[0], h = ds[2], w = ds[3];
    const auto& ws = weights.value().shape();
    if (ws.size() != 4 || ws[0] != n || ws[1] != 8 || ws[2] != h || ws[3] != w)
        throw std::invalid_argument("propagate_once: weights must be (N,8,H,W)");
    if (!center.value().same_shape(depth.value()))
        throw std::invalid_argument("propagate_once: center must match depth shape");
    if (dilation < 1) throw std::invalid_argument("propagate_once: dilation must be >= 1");
    const bool anchored = anchor_depth != nullptr && anchor_mask != nullptr;
    if (anchored && (!anchor_depth->same_shape(depth.value()) || !anchor_mask->same_shape(depth.value())))
        throw std::invalid_argument("propagate_once: anchor shape mismatch");

    check_field(weights.value(), center.value());

    const Tensor& xv = depth.value();
    const Tensor& wv = weights.value();
    const Tensor& cv = center.value();
    Tensor out({n, 1, h, w});
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double acc = cv.at(b, 0, i, j) * xv.at(b, 0, i, j);
                for (int k = 0; k < 8; ++k) {
                    const int ni = std::clamp(i + kNeighborOffsets[k][0] * dilation, 0, h - 1);
                    const int nj = std::clamp(j + kNeighborOffsets[k][1] * dilation, 0, w - 1);
                    acc += wv.at(b, k, i, j) * xv.at(b, 0, ni, nj);
                }
                if (anchored && anchor_mask->at(b, 0, i, j) != 0.0)
                    acc = anchor_depth->at(b, 0, i, j);
                out.at(b, 0, i, j) = acc;
            }

    Tensor amask;
    if (anchored) amask = *anchor_mask;
    return ag::make_op(std::move(out), {depth, weights, center},
                       [n, h, w, dilation, anchored, amask](ag::Node& nd) {
        const Tensor& xv = nd.parents[0]->value;
        const Tensor& wv = nd.parents[1]->value;
        const Tensor& cv = nd.parents[2]->value;
        const bool need_dx = nd.parents[0]->requires_grad;
        const bool need_dw = nd.parents[1]->requires_grad;
        const bool need_dc = nd.parents[2]->requires_grad;
        Tensor* dx = need_dx ? &nd.parents[0]->grad_buffer() : nullptr;
        Tensor* dw = need_dw ? &nd.parents[1]->grad_buffer() : nullptr;
        Tensor* dc = need_dc ? &nd.parents[2]->grad_buffer() : nullptr;
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    double go = nd.grad.at(b, 0, i, j);
                    if (anchored && amask.at(b, 0, i, j) != 0.0) continue;  // output pinned
                    if (go == 0.0) continue;
                    if (need_dc) dc->at(b, 0, i, j) += go * xv.at(b, 0, i, j);
                    if (need_dx) dx->at(b, 0, i, j) += go * cv.at(b, 0, i, j);
                    for (int k = 0; k < 8; ++k) {
                        const int ni = std::clamp(i + kNeighborOffsets[k][0] * dilation, 0, h - 1);
                        const int nj = std::clamp(j + kNeighborOffsets[k][1] * dilation, 0, w - 1);
                        if (need_dw) dw->at(b, k, i, j) += go * xv.at(b, 0, ni, nj);
                        if (need_dx) dx->at(b, 0, ni, nj) += go * wv.at(b, k, i, j);
                    }
                }
    });
}

Var stage_fuse(const Var& depth, const AffinityField& field, const Stage& stage,
               const Tensor* anchor_depth, const Tensor* anchor_mask, int* iteration_counter) {
    if (field.dilations != stage.dilations)
        throw std::invalid_argument("stage_fuse: field dilations do not match the stage");
    const int k = static_cast<int>(stage.dilations.size());
    const bool anchored = anchor_depth != nullptr && anchor_mask != nullptr;

    // blending multiplies by mixing weights whose sum is 1 only up to
    // rounding; measurements are re-pinned after the blend so anchored
    // pixels stay exact under any schedule
    Var keep, pinned;
    if (anchored && k > 1) {
        Tensor km = *anchor_mask;
        Tensor pv = *anchor_mask;
        for (std::int64_t i = 0; i < km.numel(); ++i) {
            pv[i] = km[i] != 0.0 ? (*anchor_depth)[i] : 0.0;
            km[i] = km[i] != 0.0 ? 0.0 : 1.0;
        }
        keep = ag::constant(std::move(km));
        pinned = ag::constant(std::move(pv));
    }

    Var x = depth;
    for (int it = 0; it < stage.iterations; ++it) {
        if (k == 1) {
            x = propagate_once(x, field.weights[0], field.centers[0], stage.dilations[0],
                               anchor_depth, anchor_mask);
        } else {
            Var blended;
            for (int d = 0; d < k; ++d) {
                Var prop = propagate_once(x, field.weights[static_cast<size_t>(d)],
                                          field.centers[static_cast<size_t>(d)], stage.dilations[static_cast<size_t>(d)],
                                          anchor_depth, anchor_mask);
                Var term = ag::mul(ag::slice_channels(field.mixing, d, d + 1), prop);
                blended = blended.defined() ? ag::add(blended, term) : term;
            }
            x = anchored ? ag::add(ag::mul(keep, blended), pinned) : blended;
        }
        if (iteration_counter) ++(*iteration_counter);
    }
    return x;
}

FcspnModule::FcspnModule(int feature_channels, const FcspnConfig& cfg_, nn::ParamInit& init)
    : cfg(cfg_), schedule(cfg_.schedule()) {
    if (schedule.stages.empty()) return;
    const int k1 = static_cast<int>(schedule.stages[0].dilations.size());
    init_conv1 = nn::Conv2d(feature_channels, cfg.hidden, 3, 1, 1, init);
    init_conv2 = nn::Conv2d(cfg.hidden, 9 * k1, 3, 1, 1, init);
    for (size_t t = 0; t + 1 < schedule.stages.size(); ++t) {
        const int kp = static_cast<int>(schedule.stages[t].dilations.size());
        const int kn = static_cast<int>(schedule.stages[t + 1].dilations.size());
        ReweightHead head;
        head.conv1 = nn::Conv2d(1 + 9 * kp, cfg.hidden, 3, 1, 1, init);
        head.conv2 = nn::Conv2d(cfg.hidden, 9 * kn, 3, 1, 1, init);
        reweight_heads.push_back(std::move(head));
    }
}

AffinityField FcspnModule::init_affinities(const Var& features) const {
    if (schedule.stages.empty())
        throw std::logic_error("FcspnModule::init_affinities: empty schedule");
    const auto& dil = schedule.stages[0].dilations;
    const int k = static_cast<int>(dil.size());
    Var raw = init_conv2.forward(ag::relu(init_conv1.forward(features)));
    AffinityField field;
    field.epsilon = cfg.epsilon;
    field.dilations = dil;
    for (int d = 0; d < k; ++d)
        field.raw_kernels.push_back(ag::slice_channels(raw, 8 * d, 8 * d + 8));
    field.raw_logits = ag::slice_channels(raw, 8 * k, 9 * k);
    normalize_affinity(field);
    return field;
}

AffinityField FcspnModule::reweight_kernels(int transition, const AffinityField& prev,
                                            const Var& current_depth) const {
    if (transition < 0 || transition >= static_cast<int>(reweight_heads.size()))
        throw std::invalid_argument("reweight_kernels: bad transition index");
    const auto& next_dil = schedule.stages[static_cast<size_t>(transition) + 1].dilations;
    const int kn = static_cast<int>(next_dil.size());

    std::vector<Var> inputs;
    inputs.push_back(current_depth);
    for (const auto& rk : prev.raw_kernels) inputs.push_back(rk);
    inputs.push_back(prev.raw_logits);
    Var stacked = ag::concat_channels(inputs);

    const auto& head = reweight_heads[static_cast<size_t>(transition)];
    // corrections bounded in (0, 2), exactly 1 at a zero pre-activation
    Var corr = ag::mul_const(
        ag::sigmoid(head.conv2.forward(ag::relu(head.conv1.forward(stacked)))), 2.0);

    AffinityField next;
    next.epsilon = prev.epsilon;
    next.dilations = next_dil;
    std::vector<Var> logit_terms;
    for (int d = 0; d < kn; ++d) {
        // carry kernels over from the nearest dilation of the previous stage
        size_t src = 0;
        int best = 1 << 30;
        for (size_t p = 0; p < prev.dilations.size(); ++p) {
            const int delta = std::abs(prev.dilations[p] - next_dil[static_cast<size_t>(d)]);
            if (delta < best) {
                best = delta;
                src = p;
            }
        }
        Var kcorr = ag::slice_channels(corr, 8 * d, 8 * d + 8);
        next.raw_kernels.push_back(ag::mul(prev.raw_kernels[src], kcorr));
        Var lcorr = ag::slice_channels(corr, 8 * kn + d, 8 * kn + d + 1);
        logit_terms.push_back(ag::mul(ag::slice_channels(prev.raw_logits, static_cast<int>(src), static_cast<int>(src) + 1), lcorr));
    }
    next.raw_logits = kn == 1 ? logit_terms[0] : ag::concat_channels(logit_terms);
    normalize_affinity(next);
    return next;
}

Var FcspnModule::refine(const Var& fused, const Var& features, const Tensor* anchor_depth,
                        const Tensor* anchor_mask, int* iterations_executed) const {
    if (iterations_executed) *iterations_executed = 0;
    if (schedule.stages.empty()) return fused;
    const Tensor* ad = cfg.anchor ? anchor_depth : nullptr;
    const Tensor* am = cfg.anchor ? anchor_mask : nullptr;
    AffinityField field = init_affinities(features);
    Var x = fused;
    for (size_t si = 0; si < schedule.stages.size(); ++si) {
        x = stage_fuse(x, field, schedule.stages[si], ad, am, iterations_executed);
        if (si + 1 < schedule.stages.size())
            field = reweight_kernels(static_cast<int>(si), field, x);
    }
    return x;
}

void FcspnModule::collect(const std::string& prefix, std::vector<nn::ParamRef>& out) const {
    if (schedule.stages.empty()) return;
    init_conv1.collect(prefix + ".init.conv1", out);
    init_conv2.collect(prefix + ".init.conv2", out);
    for (size_t t = 0; t < reweight_heads.size(); ++t) {
        reweight_heads[t].conv1.collect(prefix + ".reweight" + std::to_string(t) + ".conv1", out);
        reweight_heads[t].conv2.collect(prefix + ".reweight" + std::to_string(t) + ".conv2", out);
    }
}

}  // namespace emdc
