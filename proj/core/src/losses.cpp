#include "emdc/losses.hpp"

#include <cmath>

namespace emdc {

using ag::Var;

Var masked_l1(const Var& pred, const Tensor& gt, const Tensor& mask) {
    if (!pred.value().same_shape(gt) || !gt.same_shape(mask))
        throw std::invalid_argument("masked_l1: shape mismatch pred=" + pred.value().shape_str() +
                                    " gt=" + shape_to_string(gt.shape()) +
                                    " mask=" + shape_to_string(mask.shape()));
    double count = 0;
    for (std::int64_t i = 0; i < mask.numel(); ++i) count += mask[i];
    if (count == 0) throw std::invalid_argument("masked_l1: mask has no valid pixels");
    Var diff = ag::abs(ag::sub(pred, ag::constant(gt)));
    Var masked = ag::mul(diff, ag::constant(mask));
    return ag::mul_const(ag::sum_all(masked), 1.0 / count);
}

Mask erode(const Mask& mask, int se_radius) {
    if (se_radius < 1) throw std::invalid_argument("erode: se_radius must be >= 1");
    const int h = mask.h, w = mask.w, r = se_radius;
    // separable: rows, then columns; out-of-image counts as false
    Mask tmp(h, w, 0);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            std::uint8_t all = 1;
            for (int dj = -r; dj <= r && all; ++dj) {
                const int jj = j + dj;
                if (jj < 0 || jj >= w || !mask.at(i, jj)) all = 0;
            }
            tmp.at(i, j) = all;
        }
    Mask out(h, w, 0);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            std::uint8_t all = 1;
            for (int di = -r; di <= r && all; ++di) {
                const int ii = i + di;
                if (ii < 0 || ii >= h || !tmp.at(ii, j)) all = 0;
            }
            out.at(i, j) = all;
        }
    return out;
}

namespace {

Var sobel_pair(const Var& x, Var* gy_out) {
    static const Tensor kx = Tensor::from_vector({1, 1, 3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
    static const Tensor ky = Tensor::from_vector({1, 1, 3, 3}, {-1, -2, -1, 0, 0, 0, 1, 2, 1});
    Var padded = ag::pad_replicate(x, 1);
    Var gx = ag::conv2d(padded, ag::constant(kx), nullptr, 1, 0);
    *gy_out = ag::conv2d(padded, ag::constant(ky), nullptr, 1, 0);
    return gx;
}

}  // namespace

Var corrected_gradient_loss(const Var& pred, const Tensor& gt, double valid_lo, double valid_hi,
                            int p_norm, int se_radius) {
    const auto& s = pred.value().shape();
    if (s.size() != 4 || s[1] != 1)
        throw std::invalid_argument("corrected_gradient_loss: expected (N,1,H,W), got " +
                                    pred.value().shape_str());
    if (!pred.value().same_shape(gt))
        throw std::invalid_argument("corrected_gradient_loss: pred/gt shape mismatch");
    if (!(valid_lo < valid_hi))
        throw std::invalid_argument("corrected_gradient_loss: need valid_lo < valid_hi");
    if (p_norm != 1 && p_norm != 2)
        throw std::invalid_argument("corrected_gradient_loss: p_norm must be 1 or 2");

    const int n = s[0], h = s[2], w = s[3];

    // per-sample eroded in-range mask of the ground truth
    Tensor mask({n, 1, h, w});
    double count = 0;
    for (int b = 0; b < n; ++b) {
        Mask raw(h, w, 0);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const double v = gt.at(b, 0, i, j);
                raw.at(i, j) = (v >= valid_lo && v <= valid_hi) ? 1 : 0;
            }
        const Mask er = erode(raw, se_radius);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                mask.at(b, 0, i, j) = er.at(i, j);
                count += er.at(i, j);
            }
    }
    if (count == 0)
        throw EmptyErodedMaskError(
            "corrected_gradient_loss: eroded validity mask is empty; skip this term for the sample");

    Var gy_p, gy_g;
    Var gx_p = sobel_pair(pred, &gy_p);
    Var gx_g = sobel_pair(ag::constant(gt), &gy_g);
    Var dx = ag::sub(gx_p, gx_g);
    Var dy = ag::sub(gy_p, gy_g);
    Var mag;
    if (p_norm == 1) {
        mag = ag::add(ag::abs(dx), ag::abs(dy));
    } else {
        mag = ag::sqrt(ag::add_const(ag::add(ag::mul(dx, dx), ag::mul(dy, dy)), 1e-12));
    }
    Var masked = ag::mul(mag, ag::constant(mask));
    return ag::mul_const(ag::sum_all(masked), 1.0 / count);
}

AdaptiveWeights adaptive_weights(double l1_final, double l1_global, double l1_local, double cgdl,
                                 double cgdl_weight) {
    if (l1_final < 0 || l1_global < 0 || l1_local < 0 || cgdl < 0)
        throw std::invalid_argument("adaptive_weights: losses must be nonnegative");
    AdaptiveWeights w;
    w.lambda1 = l1_global > 0 ? l1_final / l1_global : 0.0;
    w.lambda2 = l1_local > 0 ? l1_final / l1_local : 0.0;
    w.lambda3 = cgdl > 0 ? cgdl_weight * l1_final / cgdl : 0.0;
    return w;
}

Var total_loss(const Var& pred_final, const Var& pred_g, const Var& pred_l, const Tensor& gt,
               const Tensor& valid_mask, const LossConfig& cfg, LossBreakdown* breakdown) {
    Var l1f = masked_l1(pred_final, gt, valid_mask);
    Var l1g = masked_l1(pred_g, gt, valid_mask);
    Var l1l = masked_l1(pred_l, gt, valid_mask);

    Var cg;
    bool has_cg = false;
    bool skipped = false;
    if (cfg.cgdl) {
        try {
            cg = corrected_gradient_loss(pred_final, gt, cfg.valid_lo, cfg.valid_hi, cfg.p_norm,
                                         cfg.se_radius);
            has_cg = true;
        } catch (const EmptyErodedMaskError&) {
            skipped = true;
        }
    }

    // weights from detached scalars; the ratios carry no gradient
    const AdaptiveWeights w = adaptive_weights(l1f.value().item(), l1g.value().item(),
                                               l1l.value().item(), has_cg ? cg.value().item() : 0.0,
                                               cfg.cgdl_weight);

    Var total = ag::add(l1f, ag::add(ag::mul_const(l1g, w.lambda1), ag::mul_const(l1l, w.lambda2)));
    if (has_cg) total = ag::add(total, ag::mul_const(cg, w.lambda3));

    if (breakdown) {
        breakdown->l1_final = l1f.value().item();
        breakdown->l1_global = l1g.value().item();
        breakdown->l1_local = l1l.value().item();
        breakdown->cgdl = has_cg ? cg.value().item() : 0.0;
        breakdown->lambda1 = w.lambda1;
        breakdown->lambda2 = w.lambda2;
        breakdown->lambda3 = has_cg ? w.lambda3 : 0.0;
        breakdown->total = total.value().item();
        breakdown->cgdl_skipped = skipped;
    }
    return total;
}

}  // namespace emdc
