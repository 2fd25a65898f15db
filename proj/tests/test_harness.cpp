#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "emdc/ablation.hpp"
#include "emdc/bench.hpp"
#include "emdc/eval.hpp"
#include "emdc/train.hpp"

using namespace emdc;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.model.gldp.encoder_widths = {8, 12, 16, 24, 32};
    cfg.model.gldp.local_width = 8;
    cfg.model.fcspn.preset = "custom";
    cfg.model.fcspn.custom.stages = {{{2, 1}, 2}, {{1}, 1}};
    cfg.model.fcspn.hidden = 8;
    cfg.loss.valid_lo = 0.3;
    cfg.loss.valid_hi = 8.0;
    cfg.train.batch_size = 2;
    cfg.train.total_epochs = 4;
    cfg.train.warmup_epochs = 1;
    cfg.train.ema_decay = 0.9;
    cfg.train.seed = 5;
    return cfg;
}

std::vector<TrainSample> tiny_dataset(int count, int seq_len = 1) {
    DatasetMeta meta;
    meta.height = meta.width = 32;
    meta.count = count;
    meta.seq_len = seq_len;
    meta.seed = 77;
    meta.spots.rows = meta.spots.cols = 8;
    meta.gen.hole_prob = 0.5;
    std::vector<TrainSample> out;
    for (const auto& s : generate_dataset(meta)) out.push_back(to_train_sample(s));
    return out;
}

fs::path temp_dir(const char* name) {
    fs::path p = fs::temp_directory_path() / "emdc_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("lr schedule endpoints, midpoint, continuity, peak") {
    const int warmup = 100, total = 1100;
    const double lr = 0.001;
    CHECK(lr_at(0, warmup, total, lr) == 0.0);
    CHECK(lr_at(warmup, warmup, total, lr) == doctest::Approx(lr));
    CHECK(lr_at(total, warmup, total, lr) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(lr_at(warmup + 500, warmup, total, lr) == doctest::Approx(0.0005));
    // continuity across the junction
    CHECK(lr_at(warmup - 1, warmup, total, lr) ==
          doctest::Approx(lr_at(warmup, warmup, total, lr)).epsilon(0.02));
    double peak = 0;
    for (int s = 0; s <= total; ++s) peak = std::max(peak, lr_at(s, warmup, total, lr));
    CHECK(peak == doctest::Approx(lr));
    CHECK_THROWS(lr_at(-1, warmup, total, lr));
}

TEST_CASE("ema update") {
    Tensor ema({3}, 1.0);
    Tensor params = Tensor::from_vector({3}, {2.0, 0.0, -1.0});
    ema_update(ema, params, 0.0);
    CHECK(ema[0] == 2.0);  // decay 0 copies the parameters
    CHECK(ema[2] == -1.0);

    Tensor e2({1}, 0.0);
    Tensor p2({1}, 1.0);
    for (int k = 1; k <= 5; ++k) {
        ema_update(e2, p2, 0.8);
        CHECK(e2[0] == doctest::Approx(1.0 - std::pow(0.8, k)));  // geometric gap
        CHECK(e2[0] >= 0.0);
        CHECK(e2[0] <= 1.0);  // always between old ema and params
    }
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.warmup_epochs = cfg.total_epochs;
    CHECK_THROWS(cfg.validate());
    cfg = TrainConfig{};
    cfg.lr = 0.0;
    CHECK_THROWS(cfg.validate());
    cfg = TrainConfig{};
    cfg.ema_decay = 1.0;
    CHECK_THROWS(cfg.validate());
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("config json round trip") {
    ExperimentConfig cfg = tiny_config();
    cfg.model.gldp.use_pixel_shuffle = false;
    cfg.loss.cgdl_weight = 0.55;
    cfg.train.lr = 0.0042;
    const std::string text = config_to_json_text(cfg);
    ExperimentConfig back = config_from_json_text(text);
    CHECK(back.model.gldp.encoder_widths == cfg.model.gldp.encoder_widths);
    CHECK(back.model.gldp.use_pixel_shuffle == false);
    CHECK(back.model.fcspn.preset == "custom");
    REQUIRE(back.model.fcspn.custom.stages.size() == 2);
    CHECK(back.model.fcspn.custom.stages[0].dilations == std::vector<int>{2, 1});
    CHECK(back.loss.cgdl_weight == 0.55);
    CHECK(back.train.lr == 0.0042);
    CHECK_THROWS(config_from_json_text("not json"));
}

TEST_CASE("training is deterministic in the seed") {
    auto data = tiny_dataset(4);
    ExperimentConfig cfg = tiny_config();
    Trainer t1(cfg, data);
    Trainer t2(cfg, data);
    auto r1 = t1.steps(4);
    auto r2 = t2.steps(4);
    REQUIRE(r1.size() == 4);
    for (size_t i = 0; i < r1.size(); ++i) {
        CHECK(r1[i].loss.total == r2[i].loss.total);
        CHECK(r1[i].loss.l1_final == r2[i].loss.l1_final);
        CHECK(r1[i].lr == r2[i].lr);
    }

    ExperimentConfig other = cfg;
    other.train.seed = 6;
    Trainer t3(other, data);
    auto r3 = t3.steps(4);
    CHECK(r3[3].loss.total != r1[3].loss.total);
}

TEST_CASE("checkpoint round trip resumes the exact trajectory") {
    auto data = tiny_dataset(4);
    ExperimentConfig cfg = tiny_config();

    Trainer uninterrupted(cfg, data);
    uninterrupted.steps(5);

    Trainer first(cfg, data);
    first.steps(3);
    const fs::path dir = temp_dir("checkpoint");
    const std::string path = (dir / "ck.emdc").string();
    save_checkpoint(path, first.make_checkpoint());
    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.step == 3);
    Trainer resumed(ck, data);
    auto tail = resumed.steps(2);

    const auto& ref = uninterrupted.history();
    REQUIRE(tail.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        const double a = tail[i].loss.total;
        const double b = ref[3 + i].loss.total;
        CHECK(std::fabs(a - b) <= 1e-6 * std::max(1.0, std::fabs(b)));
    }

    // mismatched dataset is rejected
    auto other = tiny_dataset(6);
    CHECK_THROWS(Trainer(ck, other));
}

TEST_CASE("ema model evaluates and differs from raw while training moves") {
    auto data = tiny_dataset(4);
    ExperimentConfig cfg = tiny_config();
    Trainer t(cfg, data);
    t.steps(3);
    EmdcModel raw = model_from_checkpoint(t.make_checkpoint(), false);
    EmdcModel ema = t.ema_model();
    auto pr = raw.named_parameters();
    auto pe = ema.named_parameters();
    double diff = 0;
    for (size_t i = 0; i < pr.size(); ++i)
        for (std::int64_t k = 0; k < pr[i].var.value().numel(); ++k)
            diff = std::max(diff, std::fabs(pr[i].var.value()[k] - pe[i].var.value()[k]));
    CHECK(diff > 0.0);  // decay 0.9 lags behind the raw weights
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    auto data = tiny_dataset(2);
    ExperimentConfig cfg = tiny_config();
    Trainer t(cfg, data);
    auto params = t.model().named_parameters();
    for (auto& p : params)
        if (p.name == "gldp.global.depth_head.bias")
            p.var.mutable_value()[0] = std::numeric_limits<double>::quiet_NaN();
    const fs::path dir = temp_dir("dump");
    t.set_dump_dir(dir.string());
    CHECK_THROWS_WITH_AS(t.steps(1), doctest::Contains("non-finite"), std::runtime_error);
    CHECK(fs::exists(dir / "diverged_batch.json"));
}

TEST_CASE("model forward wiring and anchor re-injection") {
    ExperimentConfig cfg = tiny_config();
    EmdcModel model(cfg.model);
    auto data = tiny_dataset(1);
    Tensor rgb({1, 3, 32, 32}), sparse({1, 1, 32, 32}), mask({1, 1, 32, 32});
    std::copy(data[0].rgb.data(), data[0].rgb.data() + data[0].rgb.numel(), rgb.data());
    std::copy(data[0].sparse.data(), data[0].sparse.data() + 32 * 32, sparse.data());
    std::copy(data[0].mask.data(), data[0].mask.data() + 32 * 32, mask.data());

    ModelOutput out = model.forward(rgb, sparse, mask, false);
    CHECK(out.refined.value().shape() == std::vector<int>{1, 1, 32, 32});
    CHECK(out.fcspn_iterations == cfg.model.fcspn.custom.total_iterations());
    // anchors on by default: sampled pixels carry the measurements exactly
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j)
            if (mask.at(0, 0, i, j) != 0.0)
                CHECK(out.refined.value().at(0, 0, i, j) == sparse.at(0, 0, i, j));
}

TEST_CASE("evaluate_model matches evaluate_predictions on dumped output") {
    DatasetMeta meta;
    meta.height = meta.width = 32;
    meta.count = 2;
    meta.seq_len = 2;
    meta.seed = 123;
    meta.spots.rows = meta.spots.cols = 8;
    auto samples = generate_dataset(meta);

    ExperimentConfig cfg = tiny_config();
    EmdcModel model(cfg.model);
    MetricReport direct = evaluate_model(model, samples);
    CHECK(direct.per_sample.size() == 2);
    CHECK(direct.per_sample[0].rtsd >= 0.0);

    const fs::path dir = temp_dir("preds");
    dump_predictions(model, samples, dir.string());
    // reload via the dataset path
    const fs::path data_dir = temp_dir("preds_data");
    write_dataset(data_dir.string(), meta);
    Dataset ds = load_dataset(data_dir.string());
    MetricReport from_files = evaluate_predictions(dir.string(), ds);
    // predictions go through 1mm quantization; scores must agree closely
    CHECK(from_files.rmae == doctest::Approx(direct.rmae).epsilon(5e-3));
    CHECK(from_files.score == doctest::Approx(direct.score).epsilon(5e-3));

    const fs::path rep = dir / "report.json";
    write_report_json(rep.string(), from_files);
    CHECK(fs::exists(rep));
}

TEST_CASE("benchmark interface rules") {
    CHECK_THROWS_WITH_AS(benchmark_propagation({"s6"}, 64, 64, 1),
                         doctest::Contains(">= 5"), std::invalid_argument);
    CHECK_THROWS(benchmark_propagation({}, 64, 64, 5));
    auto rows = benchmark_propagation({"s6", "s9"}, 64, 64, 5);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].preset == "s6");
    CHECK(rows[0].iterations == 15);
    CHECK(rows[1].iterations == 21);
    CHECK(rows[0].mean_ms > 0.0);
    CHECK(rows[0].std_ms >= 0.0);
}

TEST_CASE("ablation arms mirror the eight-column grid") {
    ExperimentConfig base = tiny_config();
    auto arms = table3_arms(base);
    REQUIRE(arms.size() == 8);
    CHECK(arms[0].config.model.fcspn.preset == "none");
    CHECK(arms[1].config.model.fcspn.preset == "s6");
    CHECK(arms[2].config.model.fcspn.preset == "s9");
    CHECK(arms[0].config.model.gldp.use_batchnorm_local == true);
    CHECK(arms[4].config.model.gldp.use_batchnorm_local == false);
    CHECK(arms[3].config.model.gldp.use_pixel_shuffle == true);
    CHECK(arms[5].config.model.fusion.relative == true);
    CHECK(arms[5].config.model.fusion.rezero == false);
    CHECK(arms[6].config.model.fusion.rezero == true);
    CHECK(arms[6].config.loss.cgdl == false);
    CHECK(arms[7].config.loss.cgdl == true);
    for (const auto& a : arms) CHECK(a.config.train.seed == base.train.seed);
}

TEST_SUITE_END();
