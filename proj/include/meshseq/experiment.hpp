#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshseq/config.hpp"
#include "meshseq/model.hpp"
#include "meshseq/sequence_io.hpp"
#include "meshseq/train.hpp"

namespace meshseq {

// train and test carry the configured corruption; test_clean holds the test
// sequences with their clean encoding.
Dataset build_dataset(const ExperimentConfig& config, const BodyGraph& graph);
nlohmann::json dataset_meta(const ExperimentConfig& config);

struct TrainedModel {
    std::unique_ptr<Model> model;
    TrainResult result;
};

TrainedModel train_model(const ExperimentConfig& config, const BodyGraph& graph,
                         const std::vector<MotionSequence>& train_set);

nlohmann::json pose_error_json(const PoseError& e);

using ProgressFn = std::function<void(const std::string&)>;

// Trains and evaluates the 2 x 2 (tpdist_on, hhloss_on) grid for every seed.
// A failing run marks its cell failed and the grid continues.
nlohmann::json run_ablation(const ExperimentConfig& config, const BodyGraph& graph,
                            const Dataset& data, const ProgressFn& progress = {});

// FNV-1a of the report's canonical serialization, without "timing" and
// "report_hash".
std::string report_hash(const nlohmann::json& report);

}  // namespace meshseq
