#include "meshseq/experiment.hpp"

#include <chrono>
#include <cmath>

#include "meshseq/synth.hpp"

namespace meshseq {

Dataset build_dataset(const ExperimentConfig& config, const BodyGraph& graph) {
    Dataset d;
    d.train = generate_dataset(graph, config.data.synth, config.data.corruption,
                               {config.data.train_count, split_seed(config.data.seed, 0), "train"});
    d.test = generate_dataset(graph, config.data.synth, config.data.corruption,
                              {config.data.test_count, split_seed(config.data.seed, 1), "test"});
    d.test_clean = d.test;
    for (auto& s : d.test_clean) {
        s.observations = clean_observations(s);
        s.corruption_log.clear();
    }
    return d;
}

nlohmann::json dataset_meta(const ExperimentConfig& config) {
    const nlohmann::json c = config_to_json(config);
    return {{"graph", c["graph"]}, {"data", c["data"]}};
}

TrainedModel train_model(const ExperimentConfig& config, const BodyGraph& graph,
                         const std::vector<MotionSequence>& train_set) {
    TrainedModel t;
    t.model = std::make_unique<Model>(config.model, graph);
    t.result = train(*t.model, train_set, config.train, config.loss, config.model.seed);
    return t;
}

nlohmann::json pose_error_json(const PoseError& e) {
    return {{"mpvpe_mm", e.mpvpe}, {"mpjpe_mm", e.mpjpe}, {"pa_mpjpe_mm", e.pa_mpjpe}};
}

namespace {

nlohmann::json summarize(const std::vector<PoseError>& errors) {
    const double n = static_cast<double>(errors.size());
    PoseError mean, sd;
    for (const auto& e : errors) {
        mean.mpvpe += e.mpvpe / n;
        mean.mpjpe += e.mpjpe / n;
        mean.pa_mpjpe += e.pa_mpjpe / n;
    }
    if (errors.size() > 1) {
        for (const auto& e : errors) {
            sd.mpvpe += std::pow(e.mpvpe - mean.mpvpe, 2);
            sd.mpjpe += std::pow(e.mpjpe - mean.mpjpe, 2);
            sd.pa_mpjpe += std::pow(e.pa_mpjpe - mean.pa_mpjpe, 2);
        }
        sd.mpvpe = std::sqrt(sd.mpvpe / (n - 1));
        sd.mpjpe = std::sqrt(sd.mpjpe / (n - 1));
        sd.pa_mpjpe = std::sqrt(sd.pa_mpjpe / (n - 1));
    }
    return {{"mean", pose_error_json(mean)}, {"std", pose_error_json(sd)}};
}

}  // namespace

nlohmann::json run_ablation(const ExperimentConfig& config, const BodyGraph& graph,
                            const Dataset& data, const ProgressFn& progress) {
    using Clock = std::chrono::steady_clock;
    const auto start = Clock::now();
    if (config.seeds.size() < 3) throw ConfigError("ablate: at least 3 seeds required");
    if (data.train.empty() || data.test.empty()) throw ConfigError("ablate: empty train or test split");
    const JointRegressor regressor = make_joint_regressor(graph);

    nlohmann::json report{{"format", "meshseq.report"},
                          {"version", 1},
                          {"config_hash", config_hash(config)},
                          {"config", config_to_json(config)}};
    const Predictor mean_pose = mean_pose_predictor(data.train);
    report["reference"]["mean_pose"] = {
        {"test", pose_error_json(evaluate(mean_pose, data.test, regressor).mean)},
        {"test_clean", pose_error_json(evaluate(mean_pose, data.test_clean, regressor).mean)}};

    auto cells = nlohmann::json::array();
    auto timing = nlohmann::json::array();
    for (bool tpdist_on : {false, true}) {
        for (bool hhloss_on : {false, true}) {
            nlohmann::json cell{{"tpdist_on", tpdist_on}, {"hhloss_on", hhloss_on}};
            auto runs = nlohmann::json::array();
            std::vector<PoseError> test_errors, clean_errors;
            std::string failure;
            for (std::uint64_t seed : config.seeds) {
                const auto t0 = Clock::now();
                ExperimentConfig run = config;
                run.model.tpdist_on = tpdist_on;
                run.model.hhloss_on = hhloss_on;
                run.model.seed = seed;
                nlohmann::json r{{"seed", seed}};
                try {
                    TrainedModel m = train_model(run, graph, data.train);
                    const Predictor p = model_predictor(*m.model, split_seed(seed, 7));
                    const PoseError test = evaluate(p, data.test, regressor).mean;
                    const PoseError clean = evaluate(p, data.test_clean, regressor).mean;
                    test_errors.push_back(test);
                    clean_errors.push_back(clean);
                    r["status"] = "ok";
                    r["initial_loss"] = m.result.loss_curve.empty() ? 0.0 : m.result.loss_curve.front();
                    r["final_loss"] = m.result.loss_curve.empty() ? 0.0 : m.result.loss_curve.back();
                    r["test"] = pose_error_json(test);
                    r["test_clean"] = pose_error_json(clean);
                } catch (const std::exception& e) {
                    r["status"] = "failed";
                    r["error"] = e.what();
                    failure = e.what();
                }
                const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
                timing.push_back({{"tpdist_on", tpdist_on}, {"hhloss_on", hhloss_on}, {"seed", seed},
                                  {"seconds", secs}});
                if (progress)
                    progress(std::string("cell tpdist=") + (tpdist_on ? "on" : "off") +
                             " hhloss=" + (hhloss_on ? "on" : "off") + " seed=" +
                             std::to_string(seed) + " " + r["status"].get<std::string>() + " in " +
                             std::to_string(secs) + " s" +
                             (r.contains("test") ? " test " + r["test"].dump() : std::string()));
                runs.push_back(std::move(r));
            }
            cell["runs"] = std::move(runs);
            if (failure.empty()) {
                cell["status"] = "ok";
                cell["test"] = summarize(test_errors);
                cell["test_clean"] = summarize(clean_errors);
            } else {
                cell["status"] = "failed";
                cell["error"] = failure;
            }
            cells.push_back(std::move(cell));
        }
    }
    report["cells"] = std::move(cells);
    report["timing"] = {{"runs", std::move(timing)},
                        {"wall_clock_s", std::chrono::duration<double>(Clock::now() - start).count()}};
    report["report_hash"] = report_hash(report);
    return report;
}

std::string report_hash(const nlohmann::json& report) {
    nlohmann::json canonical = report;
    canonical.erase("timing");
    canonical.erase("report_hash");
    return hex64(fnv1a(canonical.dump()));
}

}  // namespace meshseq
