#include "emdc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emdc {

namespace {

void check_shapes(const DepthGrid& pred, const DepthGrid& gt, const Mask& mask, const char* op) {
    if (pred.h != gt.h || pred.w != gt.w || mask.h != gt.h || mask.w != gt.w)
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    if (count_true(mask) == 0) throw std::invalid_argument(std::string(op) + ": empty mask");
}

double mean_over_mask(const DepthGrid& g, const Mask& mask) {
    double s = 0;
    int n = 0;
    for (int i = 0; i < g.h; ++i)
        for (int j = 0; j < g.w; ++j)
            if (mask.at(i, j)) {
                s += g.at(i, j);
                ++n;
            }
    return s / n;
}

}  // namespace

DepthGrid sobel_magnitude(const DepthGrid& g) {
    DepthGrid out(g.h, g.w);
    auto sample = [&](int i, int j) {
        return g.at(std::clamp(i, 0, g.h - 1), std::clamp(j, 0, g.w - 1));
    };
    for (int i = 0; i < g.h; ++i)
        for (int j = 0; j < g.w; ++j) {
            const double gx = -sample(i - 1, j - 1) + sample(i - 1, j + 1) - 2 * sample(i, j - 1) +
                              2 * sample(i, j + 1) - sample(i + 1, j - 1) + sample(i + 1, j + 1);
            const double gy = -sample(i - 1, j - 1) - 2 * sample(i - 1, j) - sample(i - 1, j + 1) +
                              sample(i + 1, j - 1) + 2 * sample(i + 1, j) + sample(i + 1, j + 1);
            out.at(i, j) = std::fabs(gx) + std::fabs(gy);
        }
    return out;
}

double rmae(const DepthGrid& pred, const DepthGrid& gt, const Mask& mask) {
    check_shapes(pred, gt, mask, "rmae");
    double s = 0;
    int n = 0;
    for (int i = 0; i < gt.h; ++i)
        for (int j = 0; j < gt.w; ++j)
            if (mask.at(i, j)) {
                if (!(gt.at(i, j) > 0)) throw std::invalid_argument("rmae: gt must be > 0 on mask");
                s += std::fabs(pred.at(i, j) - gt.at(i, j)) / gt.at(i, j);
                ++n;
            }
    return s / n;
}

double ewmae(const DepthGrid& pred, const DepthGrid& gt, const Mask& mask) {
    check_shapes(pred, gt, mask, "ewmae");
    const DepthGrid mag = sobel_magnitude(gt);
    const double mean_mag = mean_over_mask(mag, mask);
    double num = 0, den = 0;
    for (int i = 0; i < gt.h; ++i)
        for (int j = 0; j < gt.w; ++j)
            if (mask.at(i, j)) {
                const double w = mean_mag > 1e-300 ? 1.0 + mag.at(i, j) / mean_mag : 1.0;
                num += w * std::fabs(pred.at(i, j) - gt.at(i, j));
                den += w;
            }
    return num / den;
}

double rds(const DepthGrid& pred, const DepthGrid& gt, const Mask& mask) {
    check_shapes(pred, gt, mask, "rds");
    double diff = 0, gsum = 0;
    int n = 0;
    for (int i = 0; i < gt.h; ++i)
        for (int j = 0; j < gt.w; ++j)
            if (mask.at(i, j)) {
                diff += pred.at(i, j) - gt.at(i, j);
                gsum += gt.at(i, j);
                ++n;
            }
    return std::fabs(diff / n) / (gsum / n);
}

double rtsd(const std::vector<DepthGrid>& preds, const DepthGrid& gt, const Mask& mask) {
    if (preds.size() < 2) throw std::invalid_argument("rtsd: need at least 2 frames");
    for (const auto& p : preds)
        if (p.h != gt.h || p.w != gt.w) throw std::invalid_argument("rtsd: frame shape mismatch");
    if (count_true(mask) == 0) throw std::invalid_argument("rtsd: empty mask");
    const double t = static_cast<double>(preds.size());
    double s = 0;
    int n = 0;
    for (int i = 0; i < gt.h; ++i)
        for (int j = 0; j < gt.w; ++j) {
            if (!mask.at(i, j)) continue;
            double mean = 0;
            for (const auto& p : preds) mean += p.at(i, j);
            mean /= t;
            double var = 0;
            for (const auto& p : preds) {
                const double d = p.at(i, j) - mean;
                var += d * d;
            }
            // population convention (divide by T)
            s += std::sqrt(var / t);
            ++n;
        }
    return (s / n) / mean_over_mask(gt, mask);
}

double overall_score(double rmae_v, double ewmae_v, double rds_v, double rtsd_v) {
    return 1.0 - 1.8 * rmae_v - 0.6 * ewmae_v - 3.0 * rds_v - 4.6 * rtsd_v;
}

MetricReport assemble_report(std::vector<MetricReport::Row> rows) {
    if (rows.empty()) throw std::invalid_argument("assemble_report: no samples");
    MetricReport rep;
    int n_seq = 0;
    for (const auto& r : rows) {
        rep.rmae += r.rmae;
        rep.ewmae += r.ewmae;
        rep.rds += r.rds;
        if (r.rtsd >= 0) {
            rep.rtsd += r.rtsd;
            ++n_seq;
        }
    }
    const double n = static_cast<double>(rows.size());
    rep.rmae /= n;
    rep.ewmae /= n;
    rep.rds /= n;
    rep.rtsd = n_seq > 0 ? rep.rtsd / n_seq : 0.0;
    rep.score = overall_score(rep.rmae, rep.ewmae, rep.rds, rep.rtsd);
    rep.per_sample = std::move(rows);
    return rep;
}

}  // namespace emdc
