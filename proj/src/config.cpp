#include "meshseq/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace meshseq {

namespace {

// Reads optional keys of one JSON object and rejects the ones nobody read.
class Section {
public:
    Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    }

    template <class T>
    void get(const std::string& key, T& value) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            value = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config: '" + path_ + "." + key + "' has the wrong type");
        }
    }

    template <class T, class F>
    void get_as(const std::string& key, T& value, F parse) {
        std::string s;
        get(key, s);
        if (j_.contains(key)) value = parse(s);
    }

    const nlohmann::json* child(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void done() const {
        for (const auto& [key, _] : j_.items())
            if (!seen_.count(key)) throw ConfigError("config: unknown key '" + path_ + "." + key + "'");
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

AdjacencyNorm norm_from_string(const std::string& s) {
    if (s == "symmetric") return AdjacencyNorm::Symmetric;
    if (s == "row") return AdjacencyNorm::Row;
    throw ConfigError("unknown adjacency normalization '" + s + "'");
}

std::string to_string(AdjacencyNorm n) { return n == AdjacencyNorm::Symmetric ? "symmetric" : "row"; }

}  // namespace

void ExperimentConfig::validate() const {
    if (graph.parts.size() < 2) throw ConfigError("graph: at least 2 parts required");
    if (graph.coarse_per_part < 1 || graph.coarse_per_part > graph.vertices_per_part)
        throw ConfigError("graph: coarse_per_part must lie in [1, vertices_per_part]");
    const std::size_t coarse = graph.parts.size() * graph.coarse_per_part;
    if (model.latent_h * model.latent_w != coarse)
        throw ConfigError("model: latent_h * latent_w = " +
                          std::to_string(model.latent_h * model.latent_w) +
                          " must equal the coarse vertex count " + std::to_string(coarse));
    if (model.channels == 0 || model.encoder_hidden == 0) throw ConfigError("model: widths must be positive");
    if (model.heads == 0 || model.channels % model.heads != 0)
        throw ConfigError("model: channels must be divisible by heads");
    if (model.kernel_t % 2 == 0 || model.kernel_s % 2 == 0)
        throw ConfigError("model: kernel extents must be odd");
    if (model.tpdist_on && model.diffusion_steps < 2) throw ConfigError("model: diffusion_steps must be >= 2");
    if (model.noise_depth > model.diffusion_steps)
        throw ConfigError("model: noise_depth exceeds diffusion_steps");
    if (model.hierarchy_depth < 1 || model.hierarchy_depth > 2)
        throw ConfigError("model: hierarchy_depth must be 1 or 2");
    if (!(train.learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
    if (train.batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (!(train.beta1 >= 0.0 && train.beta1 < 1.0 && train.beta2 >= 0.0 && train.beta2 < 1.0))
        throw ConfigError("train: betas must lie in [0, 1)");
    if (!(loss.probability_floor > 0.0 && loss.probability_floor < 1.0))
        throw ConfigError("loss: probability_floor must lie in (0, 1)");
    data.synth.validate();
    data.corruption.validate();
}

ExperimentConfig config_from_json(const nlohmann::json& doc) {
    ExperimentConfig c;
    Section root(doc, "config");
    if (const auto* g = root.child("graph")) {
        Section s(*g, "graph");
        s.get("parts", c.graph.parts);
        s.get("vertices_per_part", c.graph.vertices_per_part);
        s.get("coarse_per_part", c.graph.coarse_per_part);
        s.get_as("normalization", c.graph.normalization, norm_from_string);
        s.get("seed", c.graph.seed);
        s.done();
    }
    if (const auto* m = root.child("model")) {
        Section s(*m, "model");
        auto& x = c.model;
        s.get("channels", x.channels);
        s.get("latent_h", x.latent_h);
        s.get("latent_w", x.latent_w);
        s.get("encoder_hidden", x.encoder_hidden);
        s.get("heads", x.heads);
        s.get("context_rows", x.context_rows);
        s.get("kernel_t", x.kernel_t);
        s.get("kernel_s", x.kernel_s);
        s.get_as("activation", x.activation, activation_from_string);
        s.get("diffusion_steps", x.diffusion_steps);
        s.get_as("schedule", x.schedule, schedule_kind_from_string);
        s.get_as("reverse_noise", x.reverse_noise, reverse_noise_from_string);
        s.get("noise_depth", x.noise_depth);
        s.get("hierarchy_depth", x.hierarchy_depth);
        s.get("tpdist_on", x.tpdist_on);
        s.get("hhloss_on", x.hhloss_on);
        s.get("learnable_resampling", x.learnable_resampling);
        s.get("seed", x.seed);
        s.done();
    }
    if (const auto* l = root.child("loss")) {
        Section s(*l, "loss");
        s.get("vertex_weight", c.loss.vertex_weight);
        s.get("hh_weight", c.loss.hh_weight);
        s.get("eps_weight", c.loss.eps_weight);
        s.get("probability_floor", c.loss.probability_floor);
        s.done();
    }
    if (const auto* t = root.child("train")) {
        Section s(*t, "train");
        s.get("steps", c.train.steps);
        s.get("batch_size", c.train.batch_size);
        s.get("learning_rate", c.train.learning_rate);
        s.get("beta1", c.train.beta1);
        s.get("beta2", c.train.beta2);
        s.get("epsilon", c.train.epsilon);
        s.get("grad_clip", c.train.grad_clip);
        s.get("cosine_decay", c.train.cosine_decay);
        s.done();
    }
    if (const auto* d = root.child("data")) {
        Section s(*d, "data");
        s.get("train_count", c.data.train_count);
        s.get("test_count", c.data.test_count);
        s.get("seed", c.data.seed);
        if (const auto* y = s.child("synth")) {
            Section ss(*y, "data.synth");
            ss.get("frames", c.data.synth.frames);
            ss.get("motion_scale", c.data.synth.motion_scale);
            ss.get("velocity_cap_mm", c.data.synth.velocity_cap_mm);
            ss.get("skin_bulge_mm", c.data.synth.skin_bulge_mm);
            ss.done();
        }
        if (const auto* k = s.child("corruption")) {
            Section ss(*k, "data.corruption");
            auto& x = c.data.corruption;
            ss.get("occlusion_prob", x.occlusion_prob);
            ss.get_as("selection", x.selection, part_selection_from_string);
            ss.get("fixed_part", x.fixed_part);
            ss.get("min_span", x.min_span);
            ss.get("max_span", x.max_span);
            ss.get("min_severity", x.min_severity);
            ss.get("max_severity", x.max_severity);
            ss.get("blur_prob", x.blur_prob);
            ss.get("blur_width", x.blur_width);
            ss.get("min_blur", x.min_blur);
            ss.get("max_blur", x.max_blur);
            ss.done();
        }
        s.done();
    }
    root.get("seeds", c.seeds);
    root.done();
    c.validate();
    return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    const auto& m = c.model;
    const auto& k = c.data.corruption;
    return {
        {"graph",
         {{"parts", c.graph.parts},
          {"vertices_per_part", c.graph.vertices_per_part},
          {"coarse_per_part", c.graph.coarse_per_part},
          {"normalization", to_string(c.graph.normalization)},
          {"seed", c.graph.seed}}},
        {"model",
         {{"channels", m.channels},
          {"latent_h", m.latent_h},
          {"latent_w", m.latent_w},
          {"encoder_hidden", m.encoder_hidden},
          {"heads", m.heads},
          {"context_rows", m.context_rows},
          {"kernel_t", m.kernel_t},
          {"kernel_s", m.kernel_s},
          {"activation", to_string(m.activation)},
          {"diffusion_steps", m.diffusion_steps},
          {"schedule", to_string(m.schedule)},
          {"reverse_noise", to_string(m.reverse_noise)},
          {"noise_depth", m.noise_depth},
          {"hierarchy_depth", m.hierarchy_depth},
          {"tpdist_on", m.tpdist_on},
          {"hhloss_on", m.hhloss_on},
          {"learnable_resampling", m.learnable_resampling},
          {"seed", m.seed}}},
        {"loss",
         {{"vertex_weight", c.loss.vertex_weight},
          {"hh_weight", c.loss.hh_weight},
          {"eps_weight", c.loss.eps_weight},
          {"probability_floor", c.loss.probability_floor}}},
        {"train",
         {{"steps", c.train.steps},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.learning_rate},
          {"beta1", c.train.beta1},
          {"beta2", c.train.beta2},
          {"epsilon", c.train.epsilon},
          {"grad_clip", c.train.grad_clip},
          {"cosine_decay", c.train.cosine_decay}}},
        {"data",
         {{"train_count", c.data.train_count},
          {"test_count", c.data.test_count},
          {"seed", c.data.seed},
          {"synth",
           {{"frames", c.data.synth.frames},
            {"motion_scale", c.data.synth.motion_scale},
            {"velocity_cap_mm", c.data.synth.velocity_cap_mm},
            {"skin_bulge_mm", c.data.synth.skin_bulge_mm}}},
          {"corruption",
           {{"occlusion_prob", k.occlusion_prob},
            {"selection", to_string(k.selection)},
            {"fixed_part", k.fixed_part},
            {"min_span", k.min_span},
            {"max_span", k.max_span},
            {"min_severity", k.min_severity},
            {"max_severity", k.max_severity},
            {"blur_prob", k.blur_prob},
            {"blur_width", k.blur_width},
            {"min_blur", k.min_blur},
            {"max_blur", k.max_blur}}}}},
        {"seeds", c.seeds},
    };
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return config_from_json(doc);
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string config_hash(const ExperimentConfig& config) {
    return hex64(fnv1a(config_to_json(config).dump()));
}

}  // namespace meshseq
