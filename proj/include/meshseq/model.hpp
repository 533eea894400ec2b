#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "meshseq/body_graph.hpp"
#include "meshseq/config.hpp"
#include "meshseq/latent_video.hpp"
#include "meshseq/params.hpp"
#include "meshseq/synth.hpp"
#include "meshseq/tpdist.hpp"

namespace meshseq {

// Millimeter <-> model units: (x - origin) / unit_mm.
struct Normalizer {
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    double unit_mm = 100.0;

    double to_model(double mm, std::size_t axis) const { return (mm - origin[axis]) / unit_mm; }
    double to_mm(double v, std::size_t axis) const { return v * unit_mm + origin[axis]; }
};

// B sequences of T frames each, stacked frame-major.
struct Batch {
    std::size_t B = 0, T = 0, n = 0;
    Tensor observations;  // [B*T x n*4]: normalized xyz zeroed where masked, then the mask
    Tensor targets;       // [B*T x n x 3] normalized ground truth
};

Batch make_batch(const std::vector<const MotionSequence*>& sequences, const Normalizer& norm);

struct ForwardResult {
    Tensor vertices;      // [B*T x n x 3], normalized units
    LatentVideo latent;   // encoder output x0, (B*T) x C x H x W
    Tensor gtm_features;  // [B*T x n_coarse x C]
};

// Frame encoder -> TPDist block (or the deterministic GTM stack) ->
// up-projection -> per-vertex linear head, added to the rest template.
class Model {
public:
    Model(const ModelConfig& config, const BodyGraph& graph);

    const ModelConfig& config() const { return config_; }
    const BodyGraph& graph() const { return graph_; }
    const Normalizer& normalizer() const { return norm_; }
    const std::optional<DiffusionSchedule>& schedule() const { return schedule_; }
    const std::optional<TPDistParams>& tpdist() const { return tpdist_; }
    std::size_t noise_depth() const;

    // Named trainable tensors in a fixed order.
    ParamList parameters() const;
    std::size_t parameter_count() const;

    ForwardResult forward(const Batch& batch, std::uint64_t noise_seed) const;

private:
    ModelConfig config_;
    BodyGraph graph_;
    Normalizer norm_;
    std::optional<DiffusionSchedule> schedule_;

    Tensor enc_w1_, enc_b1_, enc_w2_, enc_b2_;
    std::optional<TPDistParams> tpdist_;
    std::optional<GtmStack> stack_;
    Tensor up_;  // n x n_coarse; trainable only with learnable_resampling
    Tensor head_w_, head_b_;
    Tensor rest_;  // n x 3 normalized rest template
};

}  // namespace meshseq
