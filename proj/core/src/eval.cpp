#include "emdc/eval.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace emdc {

namespace {

void fill_inputs(const Scene& scene, const SparseDepthMap& sparse, Tensor& rgb, Tensor& sd,
                 Tensor& mask) {
    const int h = scene.gt_depth.h, w = scene.gt_depth.w;
    rgb = Tensor({1, 3, h, w});
    sd = Tensor({1, 1, h, w});
    mask = Tensor({1, 1, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            for (int k = 0; k < 3; ++k) rgb.at(0, k, i, j) = scene.rgb.at(i, j, k);
            sd.at(0, 0, i, j) = sparse.depth.at(i, j);
            mask.at(0, 0, i, j) = sparse.sample_mask.at(i, j) ? 1.0 : 0.0;
        }
}

}  // namespace

DepthGrid predict_depth_grid(EmdcModel& model, const Scene& scene, const SparseDepthMap& sparse) {
    ag::NoGradGuard no_grad;
    Tensor rgb, sd, mask;
    fill_inputs(scene, sparse, rgb, sd, mask);
    ModelOutput out = model.forward(rgb, sd, mask, /*train=*/false);
    const Tensor& refined = out.refined.value();
    DepthGrid grid(scene.gt_depth.h, scene.gt_depth.w);
    for (int i = 0; i < grid.h; ++i)
        for (int j = 0; j < grid.w; ++j) grid.at(i, j) = refined.at(0, 0, i, j);
    return grid;
}

MetricReport evaluate_model(EmdcModel& model, const std::vector<DatasetSample>& samples) {
    std::vector<MetricReport::Row> rows;
    for (const auto& s : samples) {
        MetricReport::Row row;
        row.id = s.id;
        const DepthGrid pred = predict_depth_grid(model, s.scene, s.sparse);
        row.rmae = rmae(pred, s.scene.gt_depth, s.scene.valid_mask);
        row.ewmae = ewmae(pred, s.scene.gt_depth, s.scene.valid_mask);
        row.rds = rds(pred, s.scene.gt_depth, s.scene.valid_mask);
        if (s.frames.size() >= 2) {
            std::vector<DepthGrid> frame_preds;
            for (const auto& f : s.frames) frame_preds.push_back(predict_depth_grid(model, s.scene, f));
            row.rtsd = rtsd(frame_preds, s.scene.gt_depth, s.scene.valid_mask);
        }
        rows.push_back(std::move(row));
    }
    return assemble_report(std::move(rows));
}

MetricReport evaluate_predictions(const std::string& pred_dir, const Dataset& data) {
    const fs::path base(pred_dir);
    std::vector<MetricReport::Row> rows;
    for (const auto& s : data.samples) {
        MetricReport::Row row;
        row.id = s.id;
        const DepthGrid pred = load_depth_png16((base / (s.id + "_pred.png")).string());
        row.rmae = rmae(pred, s.scene.gt_depth, s.scene.valid_mask);
        row.ewmae = ewmae(pred, s.scene.gt_depth, s.scene.valid_mask);
        row.rds = rds(pred, s.scene.gt_depth, s.scene.valid_mask);
        if (s.frames.size() >= 2) {
            std::vector<DepthGrid> frame_preds;
            bool all_present = true;
            for (size_t t = 0; t < s.frames.size(); ++t) {
                const fs::path p = base / s.id / ("frame_" + std::to_string(t) + "_pred.png");
                if (!fs::exists(p)) {
                    all_present = false;
                    break;
                }
                frame_preds.push_back(load_depth_png16(p.string()));
            }
            if (all_present) row.rtsd = rtsd(frame_preds, s.scene.gt_depth, s.scene.valid_mask);
        }
        rows.push_back(std::move(row));
    }
    return assemble_report(std::move(rows));
}

void dump_predictions(EmdcModel& model, const std::vector<DatasetSample>& samples,
                      const std::string& out_dir) {
    fs::create_directories(out_dir);
    for (const auto& s : samples) {
        const DepthGrid pred = predict_depth_grid(model, s.scene, s.sparse);
        save_depth_png16((fs::path(out_dir) / (s.id + "_pred.png")).string(), pred);
        if (s.frames.size() >= 2) {
            fs::create_directories(fs::path(out_dir) / s.id);
            for (size_t t = 0; t < s.frames.size(); ++t) {
                const DepthGrid fp = predict_depth_grid(model, s.scene, s.frames[t]);
                save_depth_png16(
                    (fs::path(out_dir) / s.id / ("frame_" + std::to_string(t) + "_pred.png")).string(), fp);
            }
        }
    }
}

void write_report_json(const std::string& path, const MetricReport& report) {
    json j;
    j["rmae"] = report.rmae;
    j["ewmae"] = report.ewmae;
    j["rds"] = report.rds;
    j["rtsd"] = report.rtsd;
    j["score"] = report.score;
    j["per_sample"] = json::array();
    for (const auto& r : report.per_sample) {
        json row = {{"id", r.id}, {"rmae", r.rmae}, {"ewmae", r.ewmae}, {"rds", r.rds}};
        if (r.rtsd >= 0) row["rtsd"] = r.rtsd;
        j["per_sample"].push_back(std::move(row));
    }
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_report_json: cannot write " + path);
    f << j.dump(2) << "\n";
}

}  // namespace emdc
