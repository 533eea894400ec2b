#include <chrono>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <json.hpp>

#include "meshseq/checkpoint.hpp"
#include "meshseq/config.hpp"
#include "meshseq/experiment.hpp"
#include "meshseq/gradcheck_suite.hpp"
#include "meshseq/metrics.hpp"
#include "meshseq/sequence_io.hpp"
#include "meshseq/train.hpp"

using namespace meshseq;
using nlohmann::json;

namespace {

ExperimentConfig config_or_default(const std::string& path) {
    return path.empty() ? ExperimentConfig{} : load_config(path);
}

Dataset data_for(const ExperimentConfig& cfg, const BodyGraph& graph, const std::string& dir) {
    if (dir.empty()) return build_dataset(cfg, graph);
    json meta;
    Dataset d = load_dataset(dir, &meta);
    if (meta.contains("graph") && meta["graph"] != config_to_json(cfg)["graph"])
        throw ConfigError("dataset " + dir + " was generated for a different graph config");
    return d;
}

void write_json(const std::string& path, const json& doc) {
    if (path.empty() || path == "-") {
        std::cout << doc.dump(2) << '\n';
        return;
    }
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path);
    out << doc.dump(2) << '\n';
}

const std::vector<MotionSequence>& split(const Dataset& d, const std::string& name) {
    if (name == "train") return d.train;
    if (name == "test") return d.test;
    if (name == "test_clean") return d.test_clean;
    throw ConfigError("unknown split '" + name + "' (train, test, test_clean)");
}

int fail(const char* type, const std::string& message, int code) {
    std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Occlusion-robust mesh sequence reconstruction toolkit"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, checkpoint_path, csv_path, split_name = "test";
    std::string suite = "all";
    bool quiet = false;

    auto* defaults = app.add_subcommand("defaults", "Print the default configuration");
    defaults->add_option("-o,--out", out_path, "Output file (stdout if omitted)");

    auto* gen = app.add_subcommand("generate", "Synthesize train/test datasets");
    gen->add_option("-c,--config", config_path, "Config JSON");
    gen->add_option("-o,--out", out_path, "Dataset directory")->required();

    auto* tr = app.add_subcommand("train", "Train one model and write a checkpoint");
    tr->add_option("-c,--config", config_path, "Config JSON");
    tr->add_option("-d,--data", data_dir, "Dataset directory (generated from config if omitted)");
    tr->add_option("-o,--out", out_path, "Checkpoint path")->required();
    tr->add_option("--loss-csv", csv_path, "Write the per-step loss curve here");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("-m,--checkpoint", checkpoint_path, "Checkpoint path")->required();
    ev->add_option("-d,--data", data_dir, "Dataset directory (generated from config if omitted)");
    ev->add_option("-s,--split", split_name, "train, test or test_clean");
    ev->add_option("--csv", csv_path, "Per-sequence metric rows");
    ev->add_option("-o,--out", out_path, "Aggregate JSON (stdout if omitted)");

    auto* ab = app.add_subcommand("ablate", "Run the TPDist x HHLoss grid over seeds");
    ab->add_option("-c,--config", config_path, "Config JSON");
    ab->add_option("-d,--data", data_dir, "Dataset directory (generated from config if omitted)");
    ab->add_option("-o,--out", out_path, "Report JSON (stdout if omitted)");
    ab->add_flag("-q,--quiet", quiet, "No progress lines on stderr");

    auto* gc = app.add_subcommand("gradcheck", "Compare tape gradients with finite differences");
    gc->add_option("--suite", suite, "ops, modules, model or all")
        ->check(CLI::IsMember({"ops", "modules", "model", "all"}));
    gc->add_option("-o,--out", out_path, "Result JSON (stdout if omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("UsageError", e.what(), 2);
    }

    try {
        if (*defaults) {
            write_json(out_path, config_to_json(ExperimentConfig{}));
        } else if (*gen) {
            const ExperimentConfig cfg = config_or_default(config_path);
            const BodyGraph graph = generate_toy_body(cfg.graph);
            const Dataset d = build_dataset(cfg, graph);
            save_dataset(out_path, d, graph.part_names, dataset_meta(cfg));
            std::ofstream(std::filesystem::path(out_path) / "graph.json") << graph_to_json(graph).dump() << '\n';
            std::cout << json{{"train", d.train.size()}, {"test", d.test.size()}, {"out", out_path}}.dump() << '\n';
        } else if (*tr) {
            const ExperimentConfig cfg = config_or_default(config_path);
            const BodyGraph graph = generate_toy_body(cfg.graph);
            const Dataset d = data_for(cfg, graph, data_dir);
            TrainedModel m = train_model(cfg, graph, d.train);
            save_checkpoint(out_path, cfg, *m.model);
            if (!csv_path.empty()) {
                std::ofstream out(csv_path);
                out << "step,loss\n" << std::setprecision(17);
                for (std::size_t i = 0; i < m.result.loss_curve.size(); ++i)
                    out << i << ',' << m.result.loss_curve[i] << '\n';
            }
            const auto& c = m.result.loss_curve;
            std::cout << json{{"checkpoint", out_path},
                              {"parameters", m.model->parameter_count()},
                              {"initial_loss", c.empty() ? 0.0 : c.front()},
                              {"final_loss", c.empty() ? 0.0 : c.back()}}
                             .dump()
                      << '\n';
        } else if (*ev) {
            LoadedModel loaded = load_checkpoint(checkpoint_path);
            const BodyGraph& graph = loaded.model->graph();
            const Dataset d = data_for(loaded.config, graph, data_dir);
            const EvalResult r = evaluate(model_predictor(*loaded.model, split_seed(loaded.config.model.seed, 7)),
                                          split(d, split_name), make_joint_regressor(graph));
            if (!csv_path.empty()) {
                std::ofstream out(csv_path);
                write_metrics_csv(out, r.rows);
            }
            write_json(out_path, {{"split", split_name}, {"sequences", r.rows.size()},
                                  {"metrics", pose_error_json(r.mean)}});
        } else if (*ab) {
            const ExperimentConfig cfg = config_or_default(config_path);
            const BodyGraph graph = generate_toy_body(cfg.graph);
            const Dataset d = data_for(cfg, graph, data_dir);
            ProgressFn progress;
            if (!quiet) progress = [](const std::string& line) { std::cerr << line << std::endl; };
            write_json(out_path, run_ablation(cfg, graph, d, progress));
        } else if (*gc) {
            json results = json::array();
            bool ok = true;
            auto record = [&](const GradcheckCase& c) {
                const bool pass = c.result.passed(kGradTolerance);
                ok = ok && pass;
                results.push_back({{"name", c.name},
                                   {"max_rel_error", c.result.max_rel_error},
                                   {"checked", c.result.checked},
                                   {"passed", pass}});
            };
            if (suite == "ops" || suite == "all")
                for (const auto& c : primitive_gradchecks()) record(c);
            if (suite == "modules" || suite == "all")
                for (const auto& c : module_gradchecks()) record(c);
            if (suite == "model" || suite == "all") record(model_gradcheck());
            write_json(out_path, {{"tolerance", kGradTolerance}, {"passed", ok}, {"cases", results}});
            if (!ok) return fail("GradcheckError", "one or more gradient checks exceeded tolerance", 4);
        }
    } catch (const ConfigError& e) {
        return fail("ConfigError", e.what(), 2);
    } catch (const FormatError& e) {
        return fail("FormatError", e.what(), 3);
    } catch (const ShapeError& e) {
        return fail("ShapeError", e.what(), 2);
    } catch (const NumericError& e) {
        return fail("NumericError", e.what(), 4);
    } catch (const std::exception& e) {
        return fail("Error", e.what(), 1);
    }
    return 0;
}
