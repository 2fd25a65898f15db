#include "emdc/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "emdc/rng.hpp"

using json = nlohmann::json;

namespace emdc {

double lr_at(int step, int warmup_steps, int total_steps, double base_lr) {
    if (step < 0) throw std::invalid_argument("lr_at: negative step");
    if (step < warmup_steps) return base_lr * step / warmup_steps;
    const int span = total_steps - warmup_steps;
    if (span <= 0) return base_lr;
    const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void ema_update(Tensor& ema, const Tensor& params, double decay) {
    if (!ema.same_shape(params)) throw std::invalid_argument("ema_update: shape mismatch");
    for (std::int64_t i = 0; i < ema.numel(); ++i)
        ema[i] = decay * ema[i] + (1.0 - decay) * params[i];
}

TrainSample to_train_sample(const DatasetSample& s) {
    const int h = s.scene.gt_depth.h, w = s.scene.gt_depth.w;
    TrainSample t;
    t.rgb = Tensor({3, h, w});
    t.sparse = Tensor({1, h, w});
    t.mask = Tensor({1, h, w});
    t.gt = Tensor({1, h, w});
    t.valid = Tensor({1, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const std::int64_t p = static_cast<std::int64_t>(i) * w + j;
            for (int k = 0; k < 3; ++k)
                t.rgb[static_cast<std::int64_t>(k) * h * w + p] = s.scene.rgb.at(i, j, k);
            t.sparse[p] = s.sparse.depth.at(i, j);
            t.mask[p] = s.sparse.sample_mask.at(i, j) ? 1.0 : 0.0;
            t.gt[p] = s.scene.gt_depth.at(i, j);
            t.valid[p] = s.scene.valid_mask.at(i, j) ? 1.0 : 0.0;
        }
    return t;
}

namespace {

Tensor tensor_from_json(const json& j) {
    return Tensor::from_vector(j.at("shape").get<std::vector<int>>(),
                               j.at("data").get<std::vector<double>>());
}

json tensor_to_json(const Tensor& t) {
    return json{{"shape", t.shape()},
                {"data", std::vector<double>(t.data(), t.data() + t.numel())}};
}

json named_tensors_to_json(const std::vector<std::pair<std::string, Tensor>>& xs) {
    json j = json::object();
    for (const auto& [name, t] : xs) j[name] = tensor_to_json(t);
    return j;
}

std::vector<std::pair<std::string, Tensor>> named_tensors_from_json(const json& j) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto it = j.begin(); it != j.end(); ++it) out.emplace_back(it.key(), tensor_from_json(it.value()));
    return out;
}

json record_to_json(const StepRecord& r) {
    return json{{"step", r.step},
                {"lr", r.lr},
                {"l1_final", r.loss.l1_final},
                {"l1_global", r.loss.l1_global},
                {"l1_local", r.loss.l1_local},
                {"cgdl", r.loss.cgdl},
                {"lambda1", r.loss.lambda1},
                {"lambda2", r.loss.lambda2},
                {"lambda3", r.loss.lambda3},
                {"total", r.loss.total},
                {"cgdl_skipped", r.loss.cgdl_skipped}};
}

StepRecord record_from_json(const json& j) {
    StepRecord r;
    r.step = j.at("step");
    r.lr = j.at("lr");
    r.loss.l1_final = j.at("l1_final");
    r.loss.l1_global = j.at("l1_global");
    r.loss.l1_local = j.at("l1_local");
    r.loss.cgdl = j.at("cgdl");
    r.loss.lambda1 = j.at("lambda1");
    r.loss.lambda2 = j.at("lambda2");
    r.loss.lambda3 = j.at("lambda3");
    r.loss.total = j.at("total");
    r.loss.cgdl_skipped = j.at("cgdl_skipped");
    return r;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    json j;
    j["format"] = "emdc-checkpoint";
    j["version"] = 1;
    j["step"] = ck.step;
    j["dataset_size"] = ck.dataset_size;
    j["config"] = json::parse(config_to_json_text(ck.config));
    j["params"] = named_tensors_to_json(ck.params);
    j["ema"] = named_tensors_to_json(ck.ema);
    j["opt_m"] = named_tensors_to_json(ck.opt_m);
    j["opt_v"] = named_tensors_to_json(ck.opt_v);
    j["buffers"] = named_tensors_to_json(ck.buffers);
    j["history"] = json::array();
    for (const auto& r : ck.history) j["history"].push_back(record_to_json(r));
    const auto bytes = json::to_cbor(j);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    json j = json::from_cbor(bytes);
    if (j.at("format") != "emdc-checkpoint") throw std::runtime_error("load_checkpoint: bad format");
    Checkpoint ck;
    ck.step = j.at("step");
    ck.dataset_size = j.at("dataset_size");
    ck.config = config_from_json_text(j.at("config").dump());
    ck.params = named_tensors_from_json(j.at("params"));
    ck.ema = named_tensors_from_json(j.at("ema"));
    ck.opt_m = named_tensors_from_json(j.at("opt_m"));
    ck.opt_v = named_tensors_from_json(j.at("opt_v"));
    ck.buffers = named_tensors_from_json(j.at("buffers"));
    for (const auto& r : j.at("history")) ck.history.push_back(record_from_json(r));
    return ck;
}

EmdcModel model_from_checkpoint(const Checkpoint& ck, bool use_ema) {
    EmdcModel model(ck.config.model);
    auto params = model.named_parameters();
    const auto& source = use_ema ? ck.ema : ck.params;
    for (auto& p : params) {
        const auto it = std::find_if(source.begin(), source.end(),
                                     [&](const auto& kv) { return kv.first == p.name; });
        if (it == source.end())
            throw std::runtime_error("model_from_checkpoint: missing tensor " + p.name);
        p.var.mutable_value() = it->second;
    }
    auto buffers = model.named_buffers();
    for (auto& b : buffers) {
        const auto it = std::find_if(ck.buffers.begin(), ck.buffers.end(),
                                     [&](const auto& kv) { return kv.first == b.name; });
        if (it != ck.buffers.end()) *b.tensor = it->second;
    }
    return model;
}

Trainer::Trainer(const ExperimentConfig& cfg, std::vector<TrainSample> data)
    : cfg_(cfg), data_(std::move(data)), model_(cfg.model) {
    cfg_.train.validate();
    if (data_.empty()) throw std::invalid_argument("Trainer: dataset is empty");
    params_ = model_.named_parameters();
    init_opt_state();
}

Trainer::Trainer(const Checkpoint& ck, std::vector<TrainSample> data)
    : cfg_(ck.config), data_(std::move(data)), model_(ck.config.model) {
    cfg_.train.validate();
    if (data_.empty()) throw std::invalid_argument("Trainer: dataset is empty");
    if (static_cast<int>(data_.size()) != ck.dataset_size)
        throw std::invalid_argument("Trainer: dataset size differs from the checkpointed run");
    params_ = model_.named_parameters();
    init_opt_state();
    apply_state(ck);
}

void Trainer::init_opt_state() {
    m_.clear();
    v_.clear();
    ema_.clear();
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p.var.value().shape()));
        v_.push_back(Tensor::zeros(p.var.value().shape()));
        ema_.push_back(p.var.value());
    }
}

void Trainer::apply_state(const Checkpoint& ck) {
    auto find = [](const std::vector<std::pair<std::string, Tensor>>& xs, const std::string& name) {
        const auto it = std::find_if(xs.begin(), xs.end(), [&](const auto& kv) { return kv.first == name; });
        if (it == xs.end()) throw std::runtime_error("Trainer: checkpoint missing tensor " + name);
        return it->second;
    };
    for (size_t i = 0; i < params_.size(); ++i) {
        params_[i].var.mutable_value() = find(ck.params, params_[i].name);
        ema_[i] = find(ck.ema, params_[i].name);
        m_[i] = find(ck.opt_m, params_[i].name);
        v_[i] = find(ck.opt_v, params_[i].name);
    }
    auto buffers = model_.named_buffers();
    for (auto& b : buffers) {
        const auto it = std::find_if(ck.buffers.begin(), ck.buffers.end(),
                                     [&](const auto& kv) { return kv.first == b.name; });
        if (it != ck.buffers.end()) *b.tensor = it->second;
    }
    step_ = ck.step;
    history_ = ck.history;
}

int Trainer::steps_per_epoch() const {
    const int n = static_cast<int>(data_.size());
    return (n + cfg_.train.batch_size - 1) / cfg_.train.batch_size;
}

int Trainer::total_steps() const { return cfg_.train.total_epochs * steps_per_epoch(); }

std::vector<int> Trainer::batch_indices(int step) const {
    const int spe = steps_per_epoch();
    const int epoch = step / spe;
    const int slot = step % spe;
    std::vector<int> order(data_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg_.train.seed, static_cast<std::uint64_t>(epoch), 0xba7c4));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(0, i))]);
    std::vector<int> batch;
    const int b0 = slot * cfg_.train.batch_size;
    for (int k = b0; k < std::min<int>(b0 + cfg_.train.batch_size, static_cast<int>(order.size())); ++k)
        batch.push_back(order[static_cast<size_t>(k)]);
    return batch;
}

namespace {

void flip_lr(Tensor& t) {
    // (C,H,W) horizontal flip
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w / 2; ++j) {
                const std::int64_t a = (static_cast<std::int64_t>(ch) * h + i) * w + j;
                const std::int64_t b = (static_cast<std::int64_t>(ch) * h + i) * w + (w - 1 - j);
                std::swap(t[a], t[b]);
            }
}

void color_jitter(Tensor& rgb, Rng& rng, double amount) {
    const double fb = 1.0 + rng.uniform(-amount, amount);
    const double fc = 1.0 + rng.uniform(-amount, amount);
    const double fs = 1.0 + rng.uniform(-amount, amount);
    const int h = rgb.dim(1), w = rgb.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    double mean = 0;
    for (std::int64_t i = 0; i < rgb.numel(); ++i) mean += rgb[i];
    mean /= static_cast<double>(rgb.numel());
    for (std::int64_t p = 0; p < plane; ++p) {
        const double r = rgb[p], g = rgb[plane + p], b = rgb[2 * plane + p];
        const double gray = 0.299 * r + 0.587 * g + 0.114 * b;
        double px[3] = {r, g, b};
        for (int k = 0; k < 3; ++k) {
            double x = gray + (px[k] - gray) * fs;          // saturation
            x = mean + (x - mean) * fc;                     // contrast
            x *= fb;                                        // brightness
            rgb[static_cast<std::int64_t>(k) * plane + p] = std::clamp(x, 0.0, 1.0);
        }
    }
}

Tensor stack_batch(const std::vector<const Tensor*>& xs) {
    const auto& s = xs[0]->shape();
    std::vector<int> shape = {static_cast<int>(xs.size()), s[0], s[1], s[2]};
    Tensor out(shape);
    const std::int64_t per = xs[0]->numel();
    for (size_t i = 0; i < xs.size(); ++i)
        std::copy(xs[i]->data(), xs[i]->data() + per, out.data() + static_cast<std::int64_t>(i) * per);
    return out;
}

}  // namespace

std::vector<StepRecord> Trainer::steps(int n) {
    std::vector<StepRecord> out;
    const int stop = std::min(total_steps(), step_ + n);
    const int warmup_steps = cfg_.train.warmup_epochs * steps_per_epoch();

    while (step_ < stop) {
        const auto batch = batch_indices(step_);

        // assemble augmented batch
        std::vector<Tensor> rgbs, sparses, masks, gts, valids;
        for (size_t bi = 0; bi < batch.size(); ++bi) {
            const TrainSample& s = data_[static_cast<size_t>(batch[bi])];
            Tensor rgb = s.rgb, sparse = s.sparse, mask = s.mask, gt = s.gt, valid = s.valid;
            Rng rng(mix_seed(cfg_.train.seed, static_cast<std::uint64_t>(step_) + 1,
                             0xa06000 + static_cast<std::uint64_t>(bi)));
            if (cfg_.train.augment_flip && rng.bernoulli(0.5)) {
                flip_lr(rgb);
                flip_lr(sparse);
                flip_lr(mask);
                flip_lr(gt);
                flip_lr(valid);
            }
            if (cfg_.train.augment_color_jitter) color_jitter(rgb, rng, cfg_.train.jitter_amount);
            rgbs.push_back(std::move(rgb));
            sparses.push_back(std::move(sparse));
            masks.push_back(std::move(mask));
            gts.push_back(std::move(gt));
            valids.push_back(std::move(valid));
        }
        auto ptrs = [](const std::vector<Tensor>& v) {
            std::vector<const Tensor*> p;
            for (const auto& t : v) p.push_back(&t);
            return p;
        };
        Tensor rgb_b = stack_batch(ptrs(rgbs));
        Tensor sparse_b = stack_batch(ptrs(sparses));
        Tensor mask_b = stack_batch(ptrs(masks));
        Tensor gt_b = stack_batch(ptrs(gts));
        Tensor valid_b = stack_batch(ptrs(valids));

        ModelOutput mo = model_.forward(rgb_b, sparse_b, mask_b, /*train=*/true);
        LossBreakdown breakdown;
        ag::Var loss = total_loss(mo.refined, mo.global.depth, mo.local.depth, gt_b, valid_b,
                                  cfg_.loss, &breakdown);

        if (!std::isfinite(breakdown.total)) {
            if (dump_dir_) {
                json dump;
                dump["step"] = step_;
                dump["batch"] = batch;
                dump["l1_final"] = breakdown.l1_final;
                dump["l1_global"] = breakdown.l1_global;
                dump["l1_local"] = breakdown.l1_local;
                dump["cgdl"] = breakdown.cgdl;
                std::filesystem::create_directories(*dump_dir_);
                std::ofstream f(std::filesystem::path(*dump_dir_) / "diverged_batch.json");
                f << dump.dump(2) << "\n";
            }
            throw std::runtime_error("Trainer: non-finite loss at step " + std::to_string(step_) +
                                     " (diagnostic dump " + (dump_dir_ ? "written" : "not configured") + ")");
        }

        for (auto& p : params_) p.var.zero_grad();
        ag::backward(loss);

        const double lr = lr_at(step_, warmup_steps, total_steps(), cfg_.train.lr);
        const double t = static_cast<double>(step_ + 1);
        const double bc1 = 1.0 - std::pow(cfg_.train.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg_.train.beta2, t);
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i].var.mutable_value();
            const Tensor g = params_[i].var.grad_or_zeros();
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            for (std::int64_t k = 0; k < p.numel(); ++k) {
                m[k] = cfg_.train.beta1 * m[k] + (1.0 - cfg_.train.beta1) * g[k];
                v[k] = cfg_.train.beta2 * v[k] + (1.0 - cfg_.train.beta2) * g[k] * g[k];
                const double mhat = m[k] / bc1;
                const double vhat = v[k] / bc2;
                // decoupled weight decay
                p[k] -= lr * (mhat / (std::sqrt(vhat) + cfg_.train.adam_eps) +
                              cfg_.train.weight_decay * p[k]);
            }
            ema_update(ema_[i], p, cfg_.train.ema_decay);
        }

        StepRecord rec{step_, lr, breakdown};
        history_.push_back(rec);
        out.push_back(rec);
        ++step_;
    }
    return out;
}

Checkpoint Trainer::make_checkpoint() const {
    Checkpoint ck;
    ck.config = cfg_;
    ck.step = step_;
    ck.dataset_size = static_cast<int>(data_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        ck.params.emplace_back(params_[i].name, params_[i].var.value());
        ck.ema.emplace_back(params_[i].name, ema_[i]);
        ck.opt_m.emplace_back(params_[i].name, m_[i]);
        ck.opt_v.emplace_back(params_[i].name, v_[i]);
    }
    auto buffers = const_cast<EmdcModel&>(model_).named_buffers();
    for (const auto& b : buffers) ck.buffers.emplace_back(b.name, *b.tensor);
    ck.history = history_;
    return ck;
}

EmdcModel Trainer::ema_model() const {
    Checkpoint ck = make_checkpoint();
    return model_from_checkpoint(ck, /*use_ema=*/true);
}

}  // namespace emdc
