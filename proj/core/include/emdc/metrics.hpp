#pragma once

#include <string>
#include <vector>

#include "emdc/grid.hpp"

namespace emdc {

/// Four-metric summary. The score combines the aggregate
/// metrics as 1 - 1.8*RMAE - 0.6*EWMAE - 3*RDS - 4.6*RTSD.
struct MetricReport {
    double rmae = 0, ewmae = 0, rds = 0, rtsd = 0;
    double score = 0;
    struct Row {
        std::string id;
        double rmae = 0, ewmae = 0, rds = 0;
        double rtsd = -1;  // -1 when the sample has no frame sequence
    };
    std::vector<Row> per_sample;
};

/// Mean relative absolute error: mean over mask of |pred - gt| / gt.
double rmae(const DepthGrid& pred, const DepthGrid& gt, const Mask& mask);

/// Edge-weighted MAE: weights 1 + |sobel(gt)| / mean(|sobel(gt)|), so edge
/// pixels count roughly double. Equals plain MAE when gt has no gradient.
double ewmae(const DepthGrid& pred, const DepthGrid& gt, const Mask& mask);

/// Relative depth shift: |mean(pred - gt)| / mean(gt), a global bias measure.
double rds(const DepthGrid& pred, const DepthGrid& gt, const Mask& mask);

/// Relative temporal standard deviation across >= 2 frames of one scene:
/// mean over mask of the per-pixel population std, divided by mean gt.
double rtsd(const std::vector<DepthGrid>& preds, const DepthGrid& gt, const Mask& mask);

double overall_score(double rmae, double ewmae, double rds, double rtsd);

/// Aggregates per-sample rows into dataset-level metrics (plain means;
/// rtsd averaged over sequence samples only, 0 when there are none) and
/// fills in the combined score.
MetricReport assemble_report(std::vector<MetricReport::Row> rows);

/// L1 Sobel magnitude |gx| + |gy| with replicate borders; shared by ewmae
/// and the report tooling.
DepthGrid sobel_magnitude(const DepthGrid& g);

}  // namespace emdc
