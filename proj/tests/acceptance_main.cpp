// Acceptance suite: every criterion of the build contract, one pass/fail
// line each. Exit code is the number of failed criteria. Individual
// criteria can be selected by number on the command line.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "emdc/ablation.hpp"
#include "emdc/bench.hpp"
#include "emdc/eval.hpp"
#include "emdc/fcspn.hpp"
#include "emdc/fusion.hpp"
#include "emdc/losses.hpp"
#include "emdc/metrics.hpp"
#include "emdc/train.hpp"
#include "oracles.hpp"

using namespace emdc;

namespace {

int g_failures = 0;

void report(int num, bool pass, const std::string& what) {
    std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", num, what.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

bool approx(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// ------------------------------------------------------------------ 1
void criterion1() {
    bool ok = approx(overall_score(0.019, 0.094, 0.009, 0.019), 0.795, 5e-4) &&
              approx(overall_score(0.015, 0.090, 0.007, 0.019), 0.811, 5e-4) &&
              approx(overall_score(0.014, 0.087, 0.003, 0.016), 0.840, 5e-4);
    // the top golden row's 0.855 reflects rounding of its metric columns;
    // the formula applied to the columns as printed gives 0.8532
    const double emdc = overall_score(0.012, 0.084, 0.002, 0.015);
    ok = ok && approx(emdc, 0.855, 3e-3) && approx(emdc, 0.8532, 5e-4);
    report(1, ok, "score formula reproduces the golden comparison rows "
                  "(top row within 0.003 under metric rounding)");
}

// ------------------------------------------------------------------ 2
void criterion2() {
    Rng rng(2024);
    bool ok = true;
    for (int t = 0; t < 100 && ok; ++t) {
        const double f = rng.uniform(1e-3, 4.0);
        const double g = rng.uniform(1e-3, 4.0);
        const double l = rng.uniform(1e-3, 4.0);
        const double c = rng.uniform(1e-3, 4.0);
        const AdaptiveWeights w = adaptive_weights(f, g, l, c);
        const double total = f + w.lambda1 * g + w.lambda2 * l + w.lambda3 * c;
        const double without = f + w.lambda1 * g + w.lambda2 * l;
        ok = ok && std::fabs(total - 3.7 * f) <= 1e-12 * std::fabs(3.7 * f) &&
             std::fabs(without - 3.0 * f) <= 1e-12 * std::fabs(3.0 * f);
    }
    report(2, ok, "adaptive weighting ties the total to 3.7x (3.0x without the gradient term) "
                  "at 1e-12 relative on 100 random tuples");
}

// ------------------------------------------------------------------ 3
void criterion3() {
    const oracle::RampHoleInstance inst;
    const double lo = 0.5, hi = 10.0;
    auto to_tensor = [&](const std::vector<double>& v) {
        return Tensor::from_vector({1, 1, inst.h, inst.w}, v);
    };
    const double corrected_smooth =
        corrected_gradient_loss(ag::constant(to_tensor(inst.smooth)), to_tensor(inst.gt), lo, hi)
            .value().item();
    const double corrected_cliff =
        corrected_gradient_loss(ag::constant(to_tensor(inst.cliff)), to_tensor(inst.gt), lo, hi)
            .value().item();
    const double oracle_smooth = oracle::cgdl_oracle(inst.smooth, inst.gt, inst.h, inst.w, lo, hi, 1);
    const double oracle_cliff = oracle::cgdl_oracle(inst.cliff, inst.gt, inst.h, inst.w, lo, hi, 1);
    const double naive_smooth = oracle::naive_gdl_oracle(inst.smooth, inst.gt, inst.h, inst.w);

    bool ok = std::fabs(corrected_smooth - oracle_smooth) <= 1e-12;
    ok = ok && std::fabs(corrected_cliff - oracle_cliff) <= 1e-12 * std::max(1.0, oracle_cliff);
    ok = ok && corrected_smooth < naive_smooth;
    ok = ok && corrected_smooth < corrected_cliff;
    report(3, ok, "ramp-with-hole: corrected loss matches the brute-force oracle, beats the "
                  "naive loss, and prefers the smooth completion over the cliff copy");
}

// ------------------------------------------------------------------ 4
void criterion4() {
    Rng rng(4040);
    const int h = 8, w = 8;
    Tensor gt = random_tensor({1, 1, h, w}, rng, 1.0, 2.0);
    Tensor mask({1, 1, h, w});
    for (std::int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.bernoulli(0.85) ? 1.0 : 0.0;
    Tensor pred0 = gt;
    for (std::int64_t i = 0; i < pred0.numel(); ++i)
        pred0[i] += (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 0.3);

    // verify the instance stays away from the |.| kinks
    {
        std::vector<double> pv(pred0.data(), pred0.data() + 64), gv(gt.data(), gt.data() + 64);
        std::vector<double> pgx, pgy, ggx, ggy;
        oracle::sobel_oracle(pv, h, w, pgx, pgy);
        oracle::sobel_oracle(gv, h, w, ggx, ggy);
        double margin = 1e18;
        for (size_t p = 0; p < pv.size(); ++p)
            margin = std::min({margin, std::fabs(pgx[p] - ggx[p]), std::fabs(pgy[p] - ggy[p]),
                               std::fabs(pv[p] - gv[p])});
        if (margin <= 1e-3) {
            report(4, false, "gradient-check instance failed the kink-margin precondition");
            return;
        }
    }

    bool ok = true;
    auto fd_check = [&](const std::function<ag::Var(const ag::Var&)>& fn) {
        ag::Var pred = ag::leaf(pred0);
        ag::Var loss = fn(pred);
        ag::backward(loss);
        const Tensor analytic = pred.grad_or_zeros();
        const double eps = 1e-6;
        Tensor& vals = pred.mutable_value();
        for (std::int64_t k = 0; k < vals.numel() && ok; ++k) {
            const double orig = vals[k];
            vals[k] = orig + eps;
            const double fp = fn(pred).value().item();
            vals[k] = orig - eps;
            const double fm = fn(pred).value().item();
            vals[k] = orig;
            const double numeric = (fp - fm) / (2 * eps);
            if (std::fabs(analytic[k] - numeric) < 1e-9) continue;  // both at FD noise level
            const double denom = std::max(std::fabs(analytic[k]), std::fabs(numeric));
            ok = ok && std::fabs(analytic[k] - numeric) / denom < 1e-4;
        }
    };
    fd_check([&](const ag::Var& p) { return masked_l1(p, gt, mask); });
    fd_check([&](const ag::Var& p) { return corrected_gradient_loss(p, gt, 0.5, 10.0); });
    report(4, ok, "analytic gradients of masked_l1 and the corrected gradient loss match "
                  "central differences to 1e-4 relative on 8x8 float64 instances");
}

// ------------------------------------------------------------------ 5
void criterion5() {
    bool ok = true;
    std::string detail;

    // (a) constant fixed point across the full 9-stage schedule
    {
        nn::ParamInit init(55);
        FcspnConfig cfg;
        cfg.preset = "s9";
        cfg.anchor = false;
        FcspnModule mod(8, cfg, init);
        Rng rng(505);
        ag::NoGradGuard no_grad;
        ag::Var feats = ag::constant(random_tensor({1, 8, 16, 16}, rng, -1, 1));
        Tensor out = mod.refine(ag::constant(Tensor({1, 1, 16, 16}, 4.2)), feats, nullptr, nullptr)
                         .value();
        double drift = 0;
        for (std::int64_t i = 0; i < out.numel(); ++i)
            drift = std::max(drift, std::fabs(out[i] - 4.2));
        if (drift >= 1e-6) {
            ok = false;
            detail += " fixed-point drift " + std::to_string(drift) + ";";
        }
    }

    // (b) convexity on 100 random instances, anchors off
    {
        ag::NoGradGuard no_grad;
        Rng rng(506);
        for (int t = 0; t < 100 && ok; ++t) {
            nn::ParamInit init(600 + static_cast<std::uint64_t>(t));
            FcspnConfig cfg;
            cfg.preset = (t % 2 == 0) ? "s6" : "s9";
            cfg.anchor = false;
            cfg.hidden = 8;
            FcspnModule mod(6, cfg, init);
            Tensor d0 = random_tensor({1, 1, 16, 16}, rng, 0.3, 8.0);
            double lo = 1e18, hi = -1e18;
            for (std::int64_t i = 0; i < d0.numel(); ++i) {
                lo = std::min(lo, d0[i]);
                hi = std::max(hi, d0[i]);
            }
            Tensor out = mod.refine(ag::constant(d0),
                                    ag::constant(random_tensor({1, 6, 16, 16}, rng, -2, 2)),
                                    nullptr, nullptr)
                             .value();
            for (std::int64_t i = 0; i < out.numel(); ++i)
                if (out[i] < lo - 1e-12 || out[i] > hi + 1e-12) {
                    ok = false;
                    detail += " convexity violated at instance " + std::to_string(t) + ";";
                    break;
                }
        }
    }

    // (c) the validator rejects non-funnel schedules
    {
        StageSchedule bad1;
        bad1.stages = {{{2, 1}, 2}, {{4, 1}, 2}};
        StageSchedule bad2;
        bad2.stages = {{{8, 4}, 1}, {{2, 1}, 1}, {{4, 2}, 1}};
        int rejected = 0;
        for (auto* s : {&bad1, &bad2}) {
            try {
                s->validate();
            } catch (const std::invalid_argument&) {
                ++rejected;
            }
        }
        if (rejected != 2) {
            ok = false;
            detail += " validator accepted a non-funnel schedule;";
        }
    }

    // (d) preset iteration counters
    {
        ag::NoGradGuard no_grad;
        Rng rng(507);
        ag::Var depth = ag::constant(random_tensor({1, 1, 16, 16}, rng, 1, 5));
        ag::Var feats = ag::constant(random_tensor({1, 8, 16, 16}, rng, -1, 1));
        for (auto [preset, expect] : {std::pair<const char*, int>{"s6", 15}, {"s9", 21}}) {
            nn::ParamInit init(77);
            FcspnConfig cfg;
            cfg.preset = preset;
            FcspnModule mod(8, cfg, init);
            int iters = 0;
            mod.refine(depth, feats, nullptr, nullptr, &iters);
            if (iters != expect) {
                ok = false;
                detail += std::string(" preset ") + preset + " ran " + std::to_string(iters) +
                          " iterations;";
            }
        }
    }

    report(5, ok, "propagation: constant fixed point at 1e-6, convex outputs on 100 random "
                  "instances, funnel validation, 15/21 preset iteration counts" + detail);
}

// ------------------------------------------------------------------ 6
void criterion6() {
    Rng rng(606);
    bool ok = true;

    for (int t = 0; t < 20 && ok; ++t) {
        ag::Var pg = ag::constant(random_tensor({2, 1, 6, 6}, rng, 0.1, 8.0));
        ag::Var pl = ag::constant(random_tensor({2, 1, 6, 6}, rng, 0.1, 8.0));
        ag::Var lg = ag::constant(random_tensor({2, 1, 6, 6}, rng, -20, 20));
        ag::Var ll = ag::constant(random_tensor({2, 1, 6, 6}, rng, -20, 20));
        ConfidencePair pair;
        fuse(pg, pl, lg, ll, ag::scalar(rng.uniform(-2, 2)), &pair);
        for (std::int64_t i = 0; i < pair.weight_g.value().numel(); ++i)
            if (std::fabs(pair.weight_g.value()[i] + pair.weight_l.value()[i] - 1.0) > 1e-6) {
                ok = false;
                break;
            }
    }

    // rezero: at alpha = 0, d(fused)/d(logit_l) == 0 exactly, d/d(alpha) != 0
    ag::Var pg = ag::constant(random_tensor({1, 1, 6, 6}, rng, 1.0, 6.0));
    ag::Var pl = ag::constant(random_tensor({1, 1, 6, 6}, rng, 1.0, 6.0));
    ag::Var lg = ag::constant(random_tensor({1, 1, 6, 6}, rng, -1, 1));
    ag::Var ll = ag::leaf(random_tensor({1, 1, 6, 6}, rng, -1, 1));
    ag::Var alpha = ag::leaf(Tensor::scalar(0.0));
    ag::backward(ag::sum_all(fuse(pg, pl, lg, ll, alpha)));
    const Tensor llg = ll.grad_or_zeros();
    for (std::int64_t i = 0; i < llg.numel(); ++i) ok = ok && llg[i] == 0.0;
    ok = ok && std::fabs(alpha.grad_or_zeros()[0]) > 1e-10;

    report(6, ok, "fusion: pixel-wise partition of unity at 1e-6; at alpha=0 the local logit "
                  "gradient is exactly zero while the gate gradient is live");
}

// shared smoke setup for criteria 7 and 9
ExperimentConfig smoke_config() {
    ExperimentConfig cfg;
    cfg.model.gldp.encoder_widths = {12, 16, 24, 32, 48};
    cfg.model.gldp.local_width = 12;
    cfg.model.fcspn.preset = "s6";
    cfg.model.fcspn.hidden = 12;
    cfg.train.batch_size = 4;
    cfg.train.total_epochs = 25;
    cfg.train.warmup_epochs = 3;
    cfg.train.ema_decay = 0.99;
    cfg.train.seed = 0;
    return cfg;
}

std::vector<TrainSample> smoke_train_data() {
    DatasetMeta meta;
    meta.height = meta.width = 64;
    meta.count = 32;
    meta.seed = 11;
    meta.spots.rows = meta.spots.cols = 12;
    std::vector<TrainSample> out;
    for (const auto& s : generate_dataset(meta)) out.push_back(to_train_sample(s));
    return out;
}

// ------------------------------------------------------------------ 7
void criterion7() {
    const auto t0 = std::chrono::steady_clock::now();
    auto data = smoke_train_data();
    const ExperimentConfig cfg = smoke_config();

    Trainer run1(cfg, data);
    run1.steps(200);
    const auto& h1 = run1.history();
    const double initial = h1.front().loss.l1_final;
    double tail = 0;
    for (size_t i = h1.size() - 10; i < h1.size(); ++i) tail += h1[i].loss.l1_final;
    tail /= 10.0;
    const bool reduced = tail < 0.5 * initial;

    Trainer run2(cfg, data);
    run2.steps(200);
    bool identical = run2.history().size() == h1.size();
    for (size_t i = 0; i < h1.size() && identical; ++i)
        identical = h1[i].loss.total == run2.history()[i].loss.total &&
                    h1[i].loss.l1_final == run2.history()[i].loss.l1_final;

    // flip consistency of the trained model: predictions commute with a
    // horizontal flip to within 5% relative RMAE on a held-out batch
    bool flip_ok = true;
    {
        DatasetMeta meta;
        meta.height = meta.width = 64;
        meta.count = 4;
        meta.seed = 1234;
        meta.spots.rows = meta.spots.cols = 12;
        auto eval_samples = generate_dataset(meta);
        EmdcModel model = run1.ema_model();
        double rmae_plain = 0, rmae_flipped = 0;
        for (auto& s : eval_samples) {
            const DepthGrid direct = predict_depth_grid(model, s.scene, s.sparse);
            // flip the inputs, predict, unflip the output
            DatasetSample f = s;
            for (int i = 0; i < 64; ++i)
                for (int j = 0; j < 32; ++j) {
                    for (int k = 0; k < 3; ++k)
                        std::swap(f.scene.rgb.at(i, j, k), f.scene.rgb.at(i, 63 - j, k));
                    std::swap(f.scene.gt_depth.at(i, j), f.scene.gt_depth.at(i, 63 - j));
                    std::swap(f.scene.valid_mask.at(i, j), f.scene.valid_mask.at(i, 63 - j));
                    std::swap(f.sparse.depth.at(i, j), f.sparse.depth.at(i, 63 - j));
                    std::swap(f.sparse.sample_mask.at(i, j), f.sparse.sample_mask.at(i, 63 - j));
                }
            DepthGrid mirrored = predict_depth_grid(model, f.scene, f.sparse);
            DepthGrid unflipped(64, 64);
            for (int i = 0; i < 64; ++i)
                for (int j = 0; j < 64; ++j) unflipped.at(i, j) = mirrored.at(i, 63 - j);
            rmae_plain += rmae(direct, s.scene.gt_depth, s.scene.valid_mask);
            rmae_flipped += rmae(unflipped, s.scene.gt_depth, s.scene.valid_mask);
        }
        flip_ok = std::fabs(rmae_flipped - rmae_plain) < 0.05 * rmae_plain;
    }

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "200-step smoke: l1_final %.3f -> %.3f (%.0f%% reduction, bound 50%%), "
                  "deterministic repeat %s, flip-RMAE drift < 5%%: %s, %.0fs",
                  initial, tail, 100.0 * (1.0 - tail / initial), identical ? "identical" : "DIFFERS",
                  flip_ok ? "yes" : "NO", secs);
    report(7, reduced && identical && flip_ok, buf);
}

// ------------------------------------------------------------------ 8
void criterion8() {
    auto rows = benchmark_propagation({"s6", "s9"}, 192, 256, 5);
    const bool iter_ok = rows[0].iterations == 15 && rows[1].iterations == 21;
    const bool trend_ok = rows[0].mean_ms < rows[1].mean_ms;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "propagation timing at 192x256: s6 (15 it) %.1f ms < s9 (21 it) %.1f ms over 5 "
                  "warmed repeats (absolute times hardware-bound, trend only)",
                  rows[0].mean_ms, rows[1].mean_ms);
    report(8, iter_ok && trend_ok, buf);
}

// ------------------------------------------------------------------ 9
void criterion9() {
    bool ok = true;
    std::string detail;

    // the eight-arm grid completes at smoke scale and is deterministic
    {
        ExperimentConfig tiny;
        tiny.model.gldp.encoder_widths = {8, 12, 16, 24, 32};
        tiny.model.gldp.local_width = 8;
        tiny.model.fcspn.hidden = 8;
        tiny.train.batch_size = 3;
        tiny.train.total_epochs = 10;
        tiny.train.warmup_epochs = 2;
        tiny.train.ema_decay = 0.95;
        tiny.train.seed = 3;

        DatasetMeta meta;
        meta.height = meta.width = 32;
        meta.count = 16;
        meta.seq_len = 3;
        meta.seed = 21;
        meta.spots.rows = meta.spots.cols = 8;
        auto samples = generate_dataset(meta);
        std::vector<DatasetSample> eval_samples(samples.end() - 4, samples.end());
        std::vector<TrainSample> train_data;
        for (auto it = samples.begin(); it != samples.end() - 4; ++it)
            train_data.push_back(to_train_sample(*it));

        auto arms = table3_arms(tiny);
        auto results = run_ablation(arms, train_data, eval_samples, 24);
        if (results.size() != 8) {
            ok = false;
            detail += " expected 8 arms;";
        }
        std::printf("%s", ablation_table_text(results).c_str());

        // identical flag sets reproduce identical scores
        auto rerun = run_ablation({arms[7]}, train_data, eval_samples, 24);
        if (rerun[0].report.score != results[7].report.score) {
            ok = false;
            detail += " determinism violated;";
        }
    }

    // directional comparison at smoke scale: the full arm must beat the arm
    // with relative-certainty fusion and the corrected gradient loss both
    // disabled. Absolute ablation scores depend on the data; this asserts
    // the direction only.
    {
        auto data = smoke_train_data();
        ExperimentConfig full = smoke_config();
        ExperimentConfig disabled = full;
        disabled.model.fusion.relative = false;
        disabled.model.fusion.rezero = false;
        disabled.loss.cgdl = false;

        DatasetMeta meta;
        meta.height = meta.width = 64;
        meta.count = 8;
        meta.seq_len = 4;
        meta.seed = 99;
        meta.spots.rows = meta.spots.cols = 12;
        auto eval_samples = generate_dataset(meta);

        double scores[2];
        int idx = 0;
        for (const auto* cfg : {&full, &disabled}) {
            Trainer t(*cfg, data);
            t.steps(200);
            EmdcModel ema = t.ema_model();
            scores[idx++] = evaluate_model(ema, eval_samples).score;
        }
        char buf[128];
        std::snprintf(buf, sizeof(buf), " full arm %.4f vs fusion+cgdl disabled %.4f;", scores[0],
                      scores[1]);
        detail += buf;
        if (!(scores[0] > scores[1])) ok = false;
    }

    report(9, ok, "ablation harness: 8-arm grid completes deterministically; full arm scores "
                  "strictly above the fusion+cgdl-disabled arm (direction only):" + detail);
}

// ------------------------------------------------------------------ 10
void criterion10() {
    Rng rng(1010);
    bool ok = true;

    DepthGrid gt(8, 8);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) gt.at(i, j) = rng.uniform(1.0, 5.0);
    Mask mask(8, 8, 1);
    ok = ok && rmae(gt, gt, mask) == 0.0 && ewmae(gt, gt, mask) == 0.0 && rds(gt, gt, mask) == 0.0;
    // identical frames: per-pixel mean (v+v+v)/3 can differ from v by an ulp
    ok = ok && rtsd({gt, gt, gt}, gt, mask) <= 1e-14;

    DepthGrid pred(8, 8);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) pred.at(i, j) = gt.at(i, j) + rng.uniform(-0.4, 0.4);
    DepthGrid pred2 = pred;
    for (auto& v : pred2.v) v += 0.05;
    const double k = 3.25;
    DepthGrid gt_k = gt, pred_k = pred, pred2_k = pred2;
    for (auto& v : gt_k.v) v *= k;
    for (auto& v : pred_k.v) v *= k;
    for (auto& v : pred2_k.v) v *= k;
    ok = ok && approx(rmae(pred_k, gt_k, mask), rmae(pred, gt, mask), 1e-12);
    ok = ok && approx(rds(pred_k, gt_k, mask), rds(pred, gt, mask), 1e-12);
    ok = ok && approx(rtsd({pred_k, pred2_k}, gt_k, mask), rtsd({pred, pred2}, gt, mask), 1e-12);

    DepthGrid flat(8, 8, 2.0);
    double mae = 0;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) mae += std::fabs(pred.at(i, j) - 2.0);
    mae /= 64;
    ok = ok && approx(ewmae(pred, flat, mask), mae, 1e-12);

    report(10, ok, "metrics: zero at perfection, scale-invariant rmae/rds/rtsd, "
                   "EWMAE == MAE on gradient-free ground truth");
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    auto want = [&](int n) { return selected.empty() || selected.count(n) > 0; };

    if (want(1)) criterion1();
    if (want(2)) criterion2();
    if (want(3)) criterion3();
    if (want(4)) criterion4();
    if (want(5)) criterion5();
    if (want(6)) criterion6();
    if (want(7)) criterion7();
    if (want(8)) criterion8();
    if (want(9)) criterion9();
    if (want(10)) criterion10();

    if (g_failures == 0)
        std::printf("acceptance: all criteria passed\n");
    else
        std::printf("acceptance: %d criteria FAILED\n", g_failures);
    return g_failures;
}
