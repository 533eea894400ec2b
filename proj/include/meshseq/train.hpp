#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "meshseq/config.hpp"
#include "meshseq/metrics.hpp"
#include "meshseq/model.hpp"

namespace meshseq {

class Adam {
public:
    Adam(ParamList params, const TrainConfig& config);
    // Applies one update from the accumulated gradients, then clears them.
    // Returns the global gradient norm before clipping.
    double step();
    std::size_t steps_taken() const { return t_; }
    void set_learning_rate(double lr) { config_.learning_rate = lr; }

private:
    ParamList params_;
    TrainConfig config_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

struct LossBreakdown {
    Tensor total;
    double vertex = 0.0;
    double hh = 0.0;
    double eps = 0.0;
    std::vector<double> part_weights;
};

// vertex_weight * mean squared vertex distance
//   + hh_weight * hierarchical part loss   (hhloss_on)
//   + eps_weight * noise-prediction loss   (tpdist_on)
// Overrides for gradient checking. `part_weights` replaces the weights derived
// from the GTM features; `detach_eps_input` false lets the noise-prediction
// loss flow back into the encoder.
struct LossOptions {
    const std::vector<double>* part_weights = nullptr;
    bool detach_eps_input = true;
};

LossBreakdown compute_loss(const Model& model, const Batch& batch, const LossConfig& loss,
                           std::uint64_t seed, const LossOptions& options = {});

struct TrainResult {
    std::vector<double> loss_curve;
};

// Fixed step budget; each step draws batch_size sequences with replacement.
// Throws NumericError naming the step when the loss stops being finite.
TrainResult train(Model& model, const std::vector<MotionSequence>& data, const TrainConfig& train,
                  const LossConfig& loss, std::uint64_t seed);

// Maps a sequence to predicted T x n x 3 vertices in millimeters.
using Predictor = std::function<std::vector<double>(const MotionSequence&, std::size_t index)>;

Predictor model_predictor(const Model& model, std::uint64_t seed);
// The mean training vertex position, repeated for every frame.
Predictor mean_pose_predictor(const std::vector<MotionSequence>& train);

struct EvalResult {
    std::vector<MetricRow> rows;
    PoseError mean;
};

EvalResult evaluate(const Predictor& predictor, const std::vector<MotionSequence>& data,
                    const JointRegressor& regressor);

}  // namespace meshseq
