#include "meshseq/train.hpp"

#include <cmath>

#include "meshseq/hierarchical_loss.hpp"
#include "meshseq/ops.hpp"
#include "meshseq/synth.hpp"

namespace meshseq {

Adam::Adam(ParamList params, const TrainConfig& config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

double Adam::step() {
    ++t_;
    double sq = 0.0;
    std::vector<std::vector<double>> grads;
    grads.reserve(params_.size());
    for (const auto& p : params_) {
        grads.push_back(p.tensor.grad());
        for (double g : grads.back()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double clip = config_.grad_clip > 0.0 && norm > config_.grad_clip ? config_.grad_clip / norm : 1.0;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor w = params_[i].tensor;
        auto data = w.mutable_data();
        for (std::size_t k = 0; k < data.size(); ++k) {
            const double g = grads[i][k] * clip;
            m_[i][k] = b1 * m_[i][k] + (1.0 - b1) * g;
            v_[i][k] = b2 * v_[i][k] + (1.0 - b2) * g * g;
            data[k] -= config_.learning_rate * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + config_.epsilon);
        }
        w.zero_grad();
    }
    return norm;
}

LossBreakdown compute_loss(const Model& model, const Batch& batch, const LossConfig& loss,
                           std::uint64_t seed, const LossOptions& options) {
    const ModelConfig& cfg = model.config();
    const ForwardResult fwd = model.forward(batch, split_seed(seed, 0));
    LossBreakdown out;

    const Tensor diff = sub(fwd.vertices, batch.targets);
    const Tensor vertex = scale(mean(square(diff)), 3.0);
    out.vertex = vertex.item();
    out.total = scale(vertex, loss.vertex_weight);

    if (cfg.hhloss_on) {
        const BodyGraph& g = model.graph();
        const PartLabelMap fine_map = part_map(g, g.fine);
        const PartLabelMap coarse_map = part_map(g, g.coarse);
        PartLabelMap weighted_fine = fine_map, weighted_coarse = coarse_map;
        const auto lambda = options.part_weights ? *options.part_weights
                                         : part_weights_from_variance(fwd.gtm_features, coarse_map);
        out.part_weights = lambda;
        weighted_fine.lambda = lambda;
        weighted_coarse.lambda = lambda;
        std::vector<LossLevel> levels;
        if (cfg.hierarchy_depth >= 2)
            levels.push_back({resample(g, fwd.vertices, ResampleDirection::Down),
                              resample(g, batch.targets, ResampleDirection::Down), weighted_coarse});
        levels.push_back({fwd.vertices, batch.targets, weighted_fine});
        const Tensor hh = hierarchical_loss(levels, loss.probability_floor);
        out.hh = hh.item();
        out.total = add(out.total, scale(hh, loss.hh_weight));
    }

    if (cfg.tpdist_on) {
        std::mt19937_64 rng(split_seed(seed, 1));
        const std::size_t k = model.noise_depth();
        const std::size_t t = std::uniform_int_distribution<std::size_t>(1, k)(rng);
        const LatentVideo x0(options.detach_eps_input ? fwd.latent.data().detach()
                                                       : fwd.latent.data(),
                             fwd.latent.layout(), fwd.latent.dims());
        const Tensor eps = Tensor::randn(x0.data().shape(), rng);
        const Tensor e = eps_loss(*model.tpdist(), model.graph(), x0, *model.schedule(), t, eps);
        out.eps = e.item();
        out.total = add(out.total, scale(e, loss.eps_weight));
    }
    return out;
}

TrainResult train(Model& model, const std::vector<MotionSequence>& data, const TrainConfig& cfg,
                  const LossConfig& loss, std::uint64_t seed) {
    if (data.empty()) throw ConfigError("train: dataset is empty");
    Adam opt(model.parameters(), cfg);
    std::mt19937_64 rng(split_seed(seed, 101));
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    TrainResult result;
    result.loss_curve.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<const MotionSequence*> chosen;
        for (std::size_t i = 0; i < cfg.batch_size; ++i) chosen.push_back(&data[pick(rng)]);
        const Batch batch = make_batch(chosen, model.normalizer());
        Tape tape;
        double value = 0.0;
        try {
            TapeScope scope(tape);
            const LossBreakdown l = compute_loss(model, batch, loss, split_seed(seed, 1000 + step));
            value = l.total.item();
            if (!std::isfinite(value)) throw NumericError("loss is not finite");
            tape.backward(l.total);
        } catch (const NumericError& e) {
            throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        result.loss_curve.push_back(value);
        if (cfg.cosine_decay)
            opt.set_learning_rate(0.5 * cfg.learning_rate *
                                  (1.0 + std::cos(std::acos(-1.0) * static_cast<double>(step) /
                                                  static_cast<double>(cfg.steps))));
        opt.step();
    }
    return result;
}

Predictor model_predictor(const Model& model, std::uint64_t seed) {
    return [&model, seed](const MotionSequence& seq, std::size_t index) {
        const Batch b = make_batch({&seq}, model.normalizer());
        const ForwardResult f = model.forward(b, split_seed(seed, index));
        auto v = f.vertices.data();
        std::vector<double> out(v.size());
        const Normalizer& nz = model.normalizer();
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = nz.to_mm(v[i], i % 3);
        return out;
    };
}

Predictor mean_pose_predictor(const std::vector<MotionSequence>& train) {
    if (train.empty()) throw ConfigError("mean pose: dataset is empty");
    const std::size_t n = train.front().n_vertices;
    std::vector<double> mean(n * 3, 0.0);
    double count = 0.0;
    for (const auto& s : train) {
        if (s.n_vertices != n) throw ShapeError("mean pose: mixed vertex counts");
        for (std::size_t f = 0; f < s.frames; ++f) {
            for (std::size_t i = 0; i < n * 3; ++i) mean[i] += s.gt_vertices[f * n * 3 + i];
            count += 1.0;
        }
    }
    for (double& v : mean) v /= count;
    return [mean, n](const MotionSequence& seq, std::size_t) {
        if (seq.n_vertices != n) throw ShapeError("mean pose: vertex count mismatch");
        std::vector<double> out;
        out.reserve(seq.frames * n * 3);
        for (std::size_t f = 0; f < seq.frames; ++f) out.insert(out.end(), mean.begin(), mean.end());
        return out;
    };
}

EvalResult evaluate(const Predictor& predictor, const std::vector<MotionSequence>& data,
                    const JointRegressor& regressor) {
    EvalResult r;
    if (data.empty()) return r;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const MotionSequence& s = data[i];
        if (s.n_vertices != regressor.n_vertices)
            throw ShapeError("evaluate: sequence " + s.id + " has " + std::to_string(s.n_vertices) +
                             " vertices, the model graph " + std::to_string(regressor.n_vertices));
        const PoseError e = compute_metrics(predictor(s, i), s.gt_vertices, s.frames, regressor);
        r.rows.push_back({s.id, e});
        r.mean.mpvpe += e.mpvpe;
        r.mean.mpjpe += e.mpjpe;
        r.mean.pa_mpjpe += e.pa_mpjpe;
    }
    const double n = static_cast<double>(data.size());
    r.mean.mpvpe /= n;
    r.mean.mpjpe /= n;
    r.mean.pa_mpjpe /= n;
    return r;
}

}  // namespace meshseq
