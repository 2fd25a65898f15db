#pragma once

#include <string>
#include <vector>

#include "emdc/dataset_io.hpp"
#include "emdc/metrics.hpp"
#include "emdc/model.hpp"

namespace emdc {

/// Refined depth for one (scene, sparse) pair; inference mode, no graph.
DepthGrid predict_depth_grid(EmdcModel& model, const Scene& scene, const SparseDepthMap& sparse);

/// Per-sample metrics on the scene's validity mask; sequence samples also
/// get a temporal row from per-frame predictions.
MetricReport evaluate_model(EmdcModel& model, const std::vector<DatasetSample>& samples);

/// Metrics for precomputed predictions stored next to the dataset layout:
/// {id}_pred.png and {id}/frame_{t}_pred.png.
MetricReport evaluate_predictions(const std::string& pred_dir, const Dataset& data);

/// Writes {id}_pred.png (and per-frame predictions for sequence samples)
/// in the layout evaluate_predictions expects.
void dump_predictions(EmdcModel& model, const std::vector<DatasetSample>& samples,
                      const std::string& out_dir);

void write_report_json(const std::string& path, const MetricReport& report);

}  // namespace emdc
