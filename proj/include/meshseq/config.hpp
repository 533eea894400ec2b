#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshseq/body_graph.hpp"
#include "meshseq/diffusion.hpp"
#include "meshseq/ops.hpp"
#include "meshseq/synth.hpp"

namespace meshseq {

struct ModelConfig {
    std::size_t channels = 16;
    std::size_t latent_h = 4;
    std::size_t latent_w = 6;
    std::size_t encoder_hidden = 128;
    std::size_t heads = 1;
    std::size_t context_rows = 4;
    std::size_t kernel_t = 3;
    std::size_t kernel_s = 3;
    Activation activation = Activation::ReLU;
    std::size_t diffusion_steps = 50;
    ScheduleKind schedule = ScheduleKind::Linear;
    ReverseNoise reverse_noise = ReverseNoise::Posterior;
    std::size_t noise_depth = 2;  // 0: the full schedule
    std::size_t hierarchy_depth = 2;
    bool tpdist_on = true;
    bool hhloss_on = true;
    bool learnable_resampling = false;
    std::uint64_t seed = 0;
};

struct LossConfig {
    double vertex_weight = 1.0;
    double hh_weight = 0.1;
    double eps_weight = 0.1;
    double probability_floor = 1e-12;
};

struct TrainConfig {
    std::size_t steps = 300;
    std::size_t batch_size = 4;
    double learning_rate = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double grad_clip = 5.0;  // global norm; 0 disables
    // Anneal the learning rate to 0 over the step budget along a half cosine.
    bool cosine_decay = true;
};

inline CorruptionConfig benchmark_corruption() {
    CorruptionConfig c;
    c.occlusion_prob = 0.3;
    return c;
}

struct DataConfig {
    SynthConfig synth;
    CorruptionConfig corruption = benchmark_corruption();
    std::size_t train_count = 200;
    std::size_t test_count = 50;
    std::uint64_t seed = 2024;
};

struct ExperimentConfig {
    ToyBodyConfig graph;
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;
    DataConfig data;
    std::vector<std::uint64_t> seeds{0, 1, 2};

    // Cross-field checks (H*W equals the coarse vertex count, ranges, ...).
    void validate() const;
};

// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

// FNV-1a over bytes.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);
// Hash of the canonical serialization.
std::string config_hash(const ExperimentConfig& config);

}  // namespace meshseq
