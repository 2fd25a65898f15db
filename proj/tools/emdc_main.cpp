// emdc: synthetic data generation, training, evaluation, benchmarking and
// ablation for the depth completion pipeline.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "emdc/ablation.hpp"
#include "emdc/bench.hpp"
#include "emdc/config.hpp"
#include "emdc/dataset_io.hpp"
#include "emdc/eval.hpp"
#include "emdc/train.hpp"
#include "emdc/viz.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::pair<int, int> parse_pair(const std::string& text, char sep, const std::string& what) {
    const auto pos = text.find(sep);
    if (pos == std::string::npos)
        throw CLI::ValidationError(what, "expected <a>" + std::string(1, sep) + "<b>, got " + text);
    return {std::stoi(text.substr(0, pos)), std::stoi(text.substr(pos + 1))};
}

std::vector<emdc::TrainSample> to_train_samples(const std::vector<emdc::DatasetSample>& samples) {
    std::vector<emdc::TrainSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(emdc::to_train_sample(s));
    return out;
}

void write_history_json(const std::string& path, const std::vector<emdc::StepRecord>& history) {
    json arr = json::array();
    for (const auto& r : history)
        arr.push_back({{"step", r.step},
                       {"lr", r.lr},
                       {"l1_final", r.loss.l1_final},
                       {"l1_global", r.loss.l1_global},
                       {"l1_local", r.loss.l1_local},
                       {"cgdl", r.loss.cgdl},
                       {"total", r.loss.total}});
    std::ofstream f(path);
    f << arr.dump(2) << "\n";
}

int cmd_gen(const std::string& out_dir, int count, const std::string& size, std::uint64_t seed,
            const std::string& spots, double noise, double jitter, double holes, int seq_len) {
    emdc::DatasetMeta meta;
    std::tie(meta.height, meta.width) = parse_pair(size, 'x', "--size");
    std::tie(meta.spots.rows, meta.spots.cols) = parse_pair(spots, 'x', "--spots");
    meta.count = count;
    meta.seed = seed;
    meta.seq_len = seq_len;
    meta.spots.noise_sigma_rel = noise;
    meta.spots.jitter_px = jitter;
    meta.gen.hole_prob = holes;
    emdc::write_dataset(out_dir, meta);
    std::cout << "wrote " << count << " samples (" << meta.height << "x" << meta.width << ", spots "
              << meta.spots.rows << "x" << meta.spots.cols << ", seq_len " << seq_len << ") to "
              << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, std::int64_t seed, int steps,
              const std::string& resume_path) {
    emdc::ExperimentConfig cfg =
        config_path.empty() ? emdc::default_config() : emdc::load_config(config_path);
    if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);

    emdc::Dataset ds = emdc::load_dataset(data_dir);
    auto train_data = to_train_samples(ds.samples);

    fs::create_directories(out_dir);
    std::unique_ptr<emdc::Trainer> trainer;
    if (!resume_path.empty()) {
        emdc::Checkpoint ck = emdc::load_checkpoint(resume_path);
        trainer = std::make_unique<emdc::Trainer>(ck, std::move(train_data));
    } else {
        trainer = std::make_unique<emdc::Trainer>(cfg, std::move(train_data));
    }
    trainer->set_dump_dir(out_dir);

    const int todo = steps > 0 ? steps : trainer->total_steps() - trainer->current_step();
    std::cout << "training " << todo << " steps (" << trainer->steps_per_epoch()
              << " steps/epoch, dataset " << ds.samples.size() << " samples)\n";
    int remaining = todo;
    while (remaining > 0) {
        auto recs = trainer->steps(std::min(50, remaining));
        if (recs.empty()) break;
        remaining -= static_cast<int>(recs.size());
        const auto& last = recs.back();
        std::cout << "step " << last.step << "  lr " << last.lr << "  l1_final "
                  << last.loss.l1_final << "  total " << last.loss.total << "\n";
    }

    const std::string ck_path = (fs::path(out_dir) / "checkpoint.emdc").string();
    emdc::save_checkpoint(ck_path, trainer->make_checkpoint());
    emdc::save_config((fs::path(out_dir) / "config.json").string(), trainer->config());
    write_history_json((fs::path(out_dir) / "history.json").string(), trainer->history());

    // a couple of colormapped predictions for eyeballing
    emdc::EmdcModel ema = trainer->ema_model();
    for (size_t i = 0; i < std::min<size_t>(2, ds.samples.size()); ++i) {
        const auto& s = ds.samples[i];
        emdc::DepthGrid pred = emdc::predict_depth_grid(ema, s.scene, s.sparse);
        emdc::save_depth_viz((fs::path(out_dir) / (s.id + "_pred_viz.png")).string(), pred,
                             ds.meta.gen.d_min, ds.meta.gen.d_max);
        emdc::save_depth_viz((fs::path(out_dir) / (s.id + "_gt_viz.png")).string(),
                             s.scene.gt_depth, ds.meta.gen.d_min, ds.meta.gen.d_max);
    }
    std::cout << "checkpoint: " << ck_path << "\n";
    return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& ckpt, bool use_ema,
             const std::string& dump_pred, const std::string& data_dir,
             const std::string& report_path) {
    emdc::Dataset ds = emdc::load_dataset(data_dir);
    emdc::MetricReport report;
    if (!pred_dir.empty()) {
        report = emdc::evaluate_predictions(pred_dir, ds);
    } else {
        emdc::Checkpoint ck = emdc::load_checkpoint(ckpt);
        emdc::EmdcModel model = emdc::model_from_checkpoint(ck, use_ema);
        if (!dump_pred.empty()) {
            emdc::dump_predictions(model, ds.samples, dump_pred);
            report = emdc::evaluate_predictions(dump_pred, ds);
        } else {
            report = emdc::evaluate_model(model, ds.samples);
        }
    }
    std::cout << "rmae " << report.rmae << "  ewmae " << report.ewmae << "  rds " << report.rds
              << "  rtsd " << report.rtsd << "\nscore " << report.score << "\n";
    if (!report_path.empty()) {
        emdc::write_report_json(report_path, report);
        std::cout << "report: " << report_path << "\n";
    }
    return 0;
}

int cmd_bench(const std::string& size, int repeats, const std::string& presets_csv,
              std::uint64_t seed) {
    auto [h, w] = parse_pair(size, 'x', "--size");
    std::vector<std::string> presets;
    std::stringstream ss(presets_csv);
    std::string item;
    while (std::getline(ss, item, ',')) presets.push_back(item);
    auto rows = emdc::benchmark_propagation(presets, h, w, repeats, seed);
    std::cout << "propagation benchmark at " << h << "x" << w << ", " << repeats << " repeats\n";
    std::cout << "preset  iterations  mean_ms  std_ms\n";
    for (const auto& r : rows)
        std::cout << r.preset << "      " << r.iterations << "          " << r.mean_ms << "   "
                  << r.std_ms << "\n";
    return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& out_dir,
               const std::string& config_path, int steps, int eval_count) {
    emdc::ExperimentConfig base =
        config_path.empty() ? emdc::default_config() : emdc::load_config(config_path);
    emdc::Dataset ds = emdc::load_dataset(data_dir);
    if (eval_count <= 0 || eval_count >= static_cast<int>(ds.samples.size()))
        throw CLI::ValidationError("--eval-count", "must leave at least one training sample");

    std::vector<emdc::DatasetSample> eval_samples(ds.samples.end() - eval_count, ds.samples.end());
    std::vector<emdc::DatasetSample> train_samples(ds.samples.begin(), ds.samples.end() - eval_count);
    auto train_data = to_train_samples(train_samples);

    auto arms = emdc::table3_arms(base);
    auto results = emdc::run_ablation(arms, train_data, eval_samples, steps);
    const std::string table = emdc::ablation_table_text(results);
    std::cout << table;

    fs::create_directories(out_dir);
    std::ofstream txt(fs::path(out_dir) / "ablation.txt");
    txt << table;
    json j = json::array();
    for (const auto& r : results)
        j.push_back({{"arm", r.name},
                     {"description", r.description},
                     {"score", r.report.score},
                     {"rmae", r.report.rmae},
                     {"ewmae", r.report.ewmae},
                     {"rds", r.report.rds},
                     {"rtsd", r.report.rtsd}});
    std::ofstream jf(fs::path(out_dir) / "ablation.json");
    jf << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EMDC-style depth completion: data generation, training, evaluation"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic RGB + sparse ToF dataset");
    std::string gen_out, gen_size = "192x256", gen_spots = "24x24";
    int gen_count = 8, gen_seq = 1;
    std::uint64_t gen_seed = 0;
    double gen_noise = 0.01, gen_jitter = 2.0, gen_holes = 0.3;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--size", gen_size, "HxW, multiples of 32");
    gen->add_option("--seed", gen_seed, "dataset seed");
    gen->add_option("--spots", gen_spots, "spot grid RxC");
    gen->add_option("--noise", gen_noise, "relative depth noise sigma");
    gen->add_option("--jitter", gen_jitter, "spot jitter in pixels");
    gen->add_option("--holes", gen_holes, "unreachable-region probability");
    gen->add_option("--seq-len", gen_seq, "frames per sample (>= 2 enables sequences)");

    // train
    auto* train = app.add_subcommand("train", "train the pipeline on a generated dataset");
    std::string train_cfg, train_data, train_out = "runs/out", train_resume;
    std::int64_t train_seed = -1;
    int train_steps = -1;
    train->add_option("--config", train_cfg, "experiment config json");
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "output directory");
    train->add_option("--seed", train_seed, "override train.seed");
    train->add_option("--steps", train_steps, "train only this many steps");
    train->add_option("--resume", train_resume, "resume from checkpoint");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate predictions or a checkpoint");
    std::string eval_pred, eval_ckpt, eval_dump, eval_data, eval_report;
    bool eval_no_ema = false;
    eval->add_option("--pred", eval_pred, "directory of predicted depth PNGs");
    eval->add_option("--ckpt", eval_ckpt, "checkpoint to run instead of --pred");
    eval->add_flag("--no-ema", eval_no_ema, "use raw weights instead of EMA");
    eval->add_option("--dump-pred", eval_dump, "write predictions here (with --ckpt)");
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--report", eval_report, "metric report json path");

    // bench
    auto* bench = app.add_subcommand("bench", "time the propagation presets");
    std::string bench_size = "192x256", bench_presets = "s6,s9";
    int bench_repeats = 10;
    std::uint64_t bench_seed = 0;
    bench->add_option("--size", bench_size, "HxW resolution");
    bench->add_option("--repeats", bench_repeats, "timed repeats (>= 5)");
    bench->add_option("--presets", bench_presets, "comma-separated presets");
    bench->add_option("--seed", bench_seed, "input seed");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run the eight-arm ablation grid");
    std::string ab_data, ab_out = "runs/ablation", ab_cfg;
    int ab_steps = -1, ab_eval = 4;
    ablate->add_option("--data", ab_data, "dataset directory")->required();
    ablate->add_option("--out", ab_out, "output directory");
    ablate->add_option("--config", ab_cfg, "base experiment config");
    ablate->add_option("--steps", ab_steps, "training steps per arm (-1: full schedule)");
    ablate->add_option("--eval-count", ab_eval, "held-out samples for scoring");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen(gen_out, gen_count, gen_size, gen_seed, gen_spots, gen_noise, gen_jitter,
                           gen_holes, gen_seq);
        if (train->parsed())
            return cmd_train(train_cfg, train_data, train_out, train_seed, train_steps, train_resume);
        if (eval->parsed()) {
            if (eval_pred.empty() == eval_ckpt.empty()) {
                std::cerr << "eval: provide exactly one of --pred or --ckpt\n";
                return 2;
            }
            return cmd_eval(eval_pred, eval_ckpt, !eval_no_ema, eval_dump, eval_data, eval_report);
        }
        if (bench->parsed()) return cmd_bench(bench_size, bench_repeats, bench_presets, bench_seed);
        if (ablate->parsed()) return cmd_ablate(ab_data, ab_out, ab_cfg, ab_steps, ab_eval);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
