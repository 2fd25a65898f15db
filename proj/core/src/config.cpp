#include "emdc/config.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace emdc {

void TrainConfig::validate() const {
    if (!(lr > 0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (warmup_epochs < 0 || warmup_epochs >= total_epochs)
        throw std::invalid_argument("TrainConfig: need 0 <= warmup_epochs < total_epochs");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0))
        throw std::invalid_argument("TrainConfig: ema_decay must be in [0,1)");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
        throw std::invalid_argument("TrainConfig: betas must be in [0,1)");
}

ExperimentConfig default_config() { return {}; }

namespace {

json schedule_to_json(const StageSchedule& s) {
    json arr = json::array();
    for (const auto& st : s.stages) arr.push_back({{"dilations", st.dilations}, {"iterations", st.iterations}});
    return arr;
}

StageSchedule schedule_from_json(const json& arr) {
    StageSchedule s;
    for (const auto& st : arr) {
        Stage stage;
        stage.dilations = st.at("dilations").get<std::vector<int>>();
        stage.iterations = st.at("iterations");
        s.stages.push_back(std::move(stage));
    }
    return s;
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["model"]["gldp"] = {
        {"encoder_widths", c.model.gldp.encoder_widths},
        {"local_width", c.model.gldp.local_width},
        {"local_blocks", c.model.gldp.local_blocks},
        {"expand_ratio", c.model.gldp.expand_ratio},
        {"use_pixel_shuffle", c.model.gldp.use_pixel_shuffle},
        {"use_batchnorm_local", c.model.gldp.use_batchnorm_local},
        {"exchange_points", c.model.gldp.exchange_points},
    };
    j["model"]["init_seed"] = c.model.init_seed;
    j["fusion"] = {{"relative", c.model.fusion.relative}, {"rezero", c.model.fusion.rezero}};
    j["fcspn"] = {
        {"preset", c.model.fcspn.preset},
        {"anchor", c.model.fcspn.anchor},
        {"hidden", c.model.fcspn.hidden},
        {"epsilon", c.model.fcspn.epsilon},
    };
    if (c.model.fcspn.preset == "custom") j["fcspn"]["schedule"] = schedule_to_json(c.model.fcspn.custom);
    j["loss"] = {
        {"cgdl", c.loss.cgdl},         {"cgdl_weight", c.loss.cgdl_weight},
        {"se_radius", c.loss.se_radius}, {"p_norm", c.loss.p_norm},
        {"valid_lo", c.loss.valid_lo},   {"valid_hi", c.loss.valid_hi},
    };
    j["train"] = {
        {"lr", c.train.lr},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"weight_decay", c.train.weight_decay},
        {"adam_eps", c.train.adam_eps},
        {"warmup_epochs", c.train.warmup_epochs},
        {"total_epochs", c.train.total_epochs},
        {"batch_size", c.train.batch_size},
        {"ema_decay", c.train.ema_decay},
        {"seed", c.train.seed},
        {"augment_flip", c.train.augment_flip},
        {"augment_color_jitter", c.train.augment_color_jitter},
        {"jitter_amount", c.train.jitter_amount},
    };
    return j;
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("model")) {
        const auto& m = j.at("model");
        if (m.contains("gldp")) {
            const auto& g = m.at("gldp");
            read_if(g, "encoder_widths", c.model.gldp.encoder_widths);
            read_if(g, "local_width", c.model.gldp.local_width);
            read_if(g, "local_blocks", c.model.gldp.local_blocks);
            read_if(g, "expand_ratio", c.model.gldp.expand_ratio);
            read_if(g, "use_pixel_shuffle", c.model.gldp.use_pixel_shuffle);
            read_if(g, "use_batchnorm_local", c.model.gldp.use_batchnorm_local);
            read_if(g, "exchange_points", c.model.gldp.exchange_points);
        }
        read_if(m, "init_seed", c.model.init_seed);
    }
    if (j.contains("fusion")) {
        read_if(j.at("fusion"), "relative", c.model.fusion.relative);
        read_if(j.at("fusion"), "rezero", c.model.fusion.rezero);
    }
    if (j.contains("fcspn")) {
        const auto& f = j.at("fcspn");
        read_if(f, "preset", c.model.fcspn.preset);
        read_if(f, "anchor", c.model.fcspn.anchor);
        read_if(f, "hidden", c.model.fcspn.hidden);
        read_if(f, "epsilon", c.model.fcspn.epsilon);
        if (f.contains("schedule")) c.model.fcspn.custom = schedule_from_json(f.at("schedule"));
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        read_if(l, "cgdl", c.loss.cgdl);
        read_if(l, "cgdl_weight", c.loss.cgdl_weight);
        read_if(l, "se_radius", c.loss.se_radius);
        read_if(l, "p_norm", c.loss.p_norm);
        read_if(l, "valid_lo", c.loss.valid_lo);
        read_if(l, "valid_hi", c.loss.valid_hi);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        read_if(t, "lr", c.train.lr);
        read_if(t, "beta1", c.train.beta1);
        read_if(t, "beta2", c.train.beta2);
        read_if(t, "weight_decay", c.train.weight_decay);
        read_if(t, "adam_eps", c.train.adam_eps);
        read_if(t, "warmup_epochs", c.train.warmup_epochs);
        read_if(t, "total_epochs", c.train.total_epochs);
        read_if(t, "batch_size", c.train.batch_size);
        read_if(t, "ema_decay", c.train.ema_decay);
        read_if(t, "seed", c.train.seed);
        read_if(t, "augment_flip", c.train.augment_flip);
        read_if(t, "augment_color_jitter", c.train.augment_color_jitter);
        read_if(t, "jitter_amount", c.train.jitter_amount);
    }
    return c;
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) { return from_json(json::parse(text)); }

std::string config_to_json_text(const ExperimentConfig& cfg) { return to_json(cfg).dump(2); }

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_config: cannot open " + path);
    return from_json(json::parse(f));
}

void save_config(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_config: cannot write " + path);
    f << config_to_json_text(cfg) << "\n";
}

}  // namespace emdc
