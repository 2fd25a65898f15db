#pragma once

#include <stdexcept>

#include "emdc/autograd.hpp"
#include "emdc/grid.hpp"
#include "emdc/tensor.hpp"

namespace emdc {

struct LossConfig {
    bool cgdl = true;
    double cgdl_weight = 0.7;
    int se_radius = 1;
    int p_norm = 1;  // 1 or 2
    double valid_lo = 0.3;
    double valid_hi = 8.0;
};

/// Named components of the training objective. total carries the graph;
/// the scalar mirrors are trace/reporting values.
struct LossBreakdown {
    double l1_final = 0, l1_global = 0, l1_local = 0, cgdl = 0;
    double lambda1 = 0, lambda2 = 0, lambda3 = 0;
    double total = 0;
    bool cgdl_skipped = false;  // eroded validity mask had no pixels
};

struct AdaptiveWeights {
    double lambda1 = 0, lambda2 = 0, lambda3 = 0;
};

/// Thrown when erosion removes every valid pixel; callers skip the
/// gradient term for the sample instead of dividing by zero.
class EmptyErodedMaskError : public std::runtime_error {
public:
    explicit EmptyErodedMaskError(const std::string& what) : std::runtime_error(what) {}
};

/// Mean |pred - gt| over mask (mask entries 0/1). Throws on empty mask.
ag::Var masked_l1(const ag::Var& pred, const Tensor& gt, const Tensor& mask);

/// Morphological erosion with a (2r+1)^2 square; outside pixels count as
/// false, so the border ring is never fully valid.
Mask erode(const Mask& mask, int se_radius);

/// Sobel-Feldman gradient difference between pred and gt, masked by the
/// eroded in-range validity of gt, mean over surviving pixels.
/// pred/gt shaped (N,1,H,W).
ag::Var corrected_gradient_loss(const ag::Var& pred, const Tensor& gt, double valid_lo,
                                double valid_hi, int p_norm = 1, int se_radius = 1);

/// Ratios that tie each branch loss to the final loss; a zero denominator
/// maps its weight to zero.
AdaptiveWeights adaptive_weights(double l1_final, double l1_global, double l1_local, double cgdl,
                                 double cgdl_weight = 0.7);

/// Full objective. The adaptive weights are computed from detached scalar
/// values, so no gradient flows through the ratios.
ag::Var total_loss(const ag::Var& pred_final, const ag::Var& pred_g, const ag::Var& pred_l,
                   const Tensor& gt, const Tensor& valid_mask, const LossConfig& cfg,
                   LossBreakdown* breakdown = nullptr);

}  // namespace emdc
