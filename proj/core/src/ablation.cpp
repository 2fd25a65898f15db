#include "emdc/ablation.hpp"

#include <iomanip>
#include <sstream>

namespace emdc {

std::vector<AblationArm> table3_arms(const ExperimentConfig& base) {
    auto arm = [&](const std::string& name, const std::string& desc, const std::string& preset,
                   bool ps, bool remove_bn, bool relative, bool rezero, bool cgdl) {
        AblationArm a;
        a.name = name;
        a.description = desc;
        a.config = base;
        a.config.model.fcspn.preset = preset;
        a.config.model.gldp.use_pixel_shuffle = ps;
        a.config.model.gldp.use_batchnorm_local = !remove_bn;
        a.config.model.fusion.relative = relative;
        a.config.model.fusion.rezero = rezero;
        a.config.loss.cgdl = cgdl;
        return a;
    };
    return {
        arm("a", "no propagation, cgdl", "none", false, false, false, false, true),
        arm("b", "fcspn s6, cgdl", "s6", false, false, false, false, true),
        arm("c", "fcspn s9, cgdl", "s9", false, false, false, false, true),
        arm("d", "+ pixel shuffle", "s9", true, false, false, false, true),
        arm("e", "+ remove local bn", "s9", true, true, false, false, true),
        arm("f", "+ relative certainty", "s9", true, true, true, false, true),
        arm("g", "+ rezero init, no cgdl", "s9", true, true, true, true, false),
        arm("h", "full model", "s9", true, true, true, true, true),
    };
}

std::vector<AblationResult> run_ablation(const std::vector<AblationArm>& arms,
                                         const std::vector<TrainSample>& train_data,
                                         const std::vector<DatasetSample>& eval_data,
                                         int train_steps) {
    std::vector<AblationResult> results;
    for (const auto& arm : arms) {
        Trainer trainer(arm.config, train_data);
        if (train_steps < 0)
            trainer.run_all();
        else
            trainer.steps(train_steps);
        EmdcModel ema = trainer.ema_model();
        AblationResult res;
        res.name = arm.name;
        res.description = arm.description;
        res.report = evaluate_model(ema, eval_data);
        results.push_back(std::move(res));
    }
    return results;
}

std::string ablation_table_text(const std::vector<AblationResult>& results) {
    std::ostringstream os;
    os << std::left << std::setw(4) << "arm" << std::setw(28) << "configuration" << std::right
       << std::setw(9) << "score" << std::setw(9) << "rmae" << std::setw(9) << "ewmae"
       << std::setw(9) << "rds" << std::setw(9) << "rtsd" << "\n";
    os << std::string(77, '-') << "\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& r : results) {
        os << std::left << std::setw(4) << r.name << std::setw(28) << r.description << std::right
           << std::setw(9) << r.report.score << std::setw(9) << r.report.rmae << std::setw(9)
           << r.report.ewmae << std::setw(9) << r.report.rds << std::setw(9) << r.report.rtsd
           << "\n";
    }
    return os.str();
}

}  // namespace emdc
