#include "meshseq/model.hpp"

#include "meshseq/ops.hpp"
#include "meshseq/synth.hpp"

namespace meshseq {

Batch make_batch(const std::vector<const MotionSequence*>& sequences, const Normalizer& norm) {
    if (sequences.empty()) throw ShapeError("make_batch: no sequences");
    Batch b;
    b.B = sequences.size();
    b.T = sequences.front()->frames;
    b.n = sequences.front()->n_vertices;
    std::vector<double> obs, tgt;
    obs.reserve(b.B * b.T * b.n * kObsChannels);
    tgt.reserve(b.B * b.T * b.n * 3);
    for (const MotionSequence* s : sequences) {
        if (s->frames != b.T || s->n_vertices != b.n)
            throw ShapeError("make_batch: sequence " + s->id + " has a different shape");
        for (std::size_t r = 0; r < b.T * b.n; ++r) {
            const double* o = &s->observations[r * kObsChannels];
            const bool masked = o[3] != 0.0;
            for (std::size_t c = 0; c < 3; ++c) obs.push_back(masked ? 0.0 : norm.to_model(o[c], c));
            obs.push_back(o[3]);
            for (std::size_t c = 0; c < 3; ++c) tgt.push_back(norm.to_model(s->gt_vertices[r * 3 + c], c));
        }
    }
    b.observations = Tensor({b.B * b.T, b.n * kObsChannels}, std::move(obs));
    b.targets = Tensor({b.B * b.T, b.n, 3}, std::move(tgt));
    return b;
}

Model::Model(const ModelConfig& config, const BodyGraph& graph) : config_(config), graph_(graph) {
    const std::size_t n = graph.n_vertices(), nc = graph.n_coarse(), C = config.channels;
    if (config.latent_h * config.latent_w != nc)
        throw ConfigError("model: latent_h * latent_w must equal the coarse vertex count " +
                          std::to_string(nc));
    if (config.channels == 0 || config.encoder_hidden == 0)
        throw ConfigError("model: widths must be positive");

    auto rest = graph.rest_positions.data();
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t c = 0; c < 3; ++c) norm_.origin[c] += rest[v * 3 + c] / static_cast<double>(n);
    std::vector<double> rest_norm(n * 3);
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t c = 0; c < 3; ++c) rest_norm[v * 3 + c] = norm_.to_model(rest[v * 3 + c], c);
    rest_ = Tensor({n, 3}, std::move(rest_norm));

    // Independent streams so that toggling one component leaves the others'
    // initialization unchanged.
    std::mt19937_64 enc_rng(split_seed(config.seed, 11)), core_rng(split_seed(config.seed, 12));
    enc_w1_ = glorot(n * kObsChannels, config.encoder_hidden, enc_rng);
    enc_b1_ = zeros_param({config.encoder_hidden});
    enc_w2_ = glorot(config.encoder_hidden, C * nc, enc_rng);
    enc_b2_ = zeros_param({C * nc});

    if (config.tpdist_on) {
        if (config.diffusion_steps < 2) throw ConfigError("model: diffusion_steps must be >= 2");
        schedule_ = make_schedule(config.diffusion_steps, config.schedule);
        if (config.noise_depth > config.diffusion_steps)
            throw ConfigError("model: noise_depth exceeds diffusion_steps");
        TPDistParams::Options o;
        o.channels = C;
        o.sites = nc;
        o.context_rows = config.context_rows;
        o.heads = config.heads;
        o.kernel_t = config.kernel_t;
        o.kernel_s = config.kernel_s;
        o.activation = config.activation;
        tpdist_ = TPDistParams::init(o, core_rng);
    } else {
        stack_ = GtmStack::init(C, 2, config.heads, config.kernel_t, config.kernel_s,
                                config.activation, core_rng);
    }

    up_ = graph.up_matrix.clone();
    if (config.learnable_resampling) up_.set_requires_grad(true);
    // Zero readout: the untrained model predicts the rest template.
    head_w_ = zeros_param({n, C, 3});
    head_b_ = zeros_param({n, 3});
}

std::size_t Model::noise_depth() const {
    if (!schedule_) return 0;
    return config_.noise_depth == 0 ? schedule_->n_steps() : config_.noise_depth;
}

ParamList Model::parameters() const {
    ParamList p{{"encoder.w1", enc_w1_}, {"encoder.b1", enc_b1_}, {"encoder.w2", enc_w2_},
                {"encoder.b2", enc_b2_}};
    if (tpdist_) tpdist_->collect("tpdist", p);
    if (stack_) stack_->collect("stack", p);
    if (config_.learnable_resampling) p.push_back({"up_matrix", up_});
    p.push_back({"head.w", head_w_});
    p.push_back({"head.b", head_b_});
    return p;
}

std::size_t Model::parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : parameters()) total += p.tensor.numel();
    return total;
}

ForwardResult Model::forward(const Batch& batch, std::uint64_t noise_seed) const {
    const std::size_t n = graph_.n_vertices(), nc = graph_.n_coarse(), C = config_.channels;
    if (batch.n != n)
        throw ShapeError("model: batch has " + std::to_string(batch.n) + " vertices, graph " +
                         std::to_string(n));
    const std::size_t BT = batch.B * batch.T;
    const VideoDims dims{batch.B, batch.T, C, config_.latent_h, config_.latent_w};

    const Tensor hidden = activate(linear(batch.observations, enc_w1_, enc_b1_), config_.activation);
    const Tensor code = linear(hidden, enc_w2_, enc_b2_);  // [BT, C*nc] read as [BT, nc, C]
    const LatentVideo x0 = sites_to_frames(reshape(code, {BT, nc, C}), dims);

    LatentVideo out;
    Tensor gtm;
    if (tpdist_) {
        const SemanticContext ctx = make_semantic_context(*tpdist_, x0);
        BlockOptions opts;
        opts.noise_depth = noise_depth();
        opts.reverse_noise = config_.reverse_noise;
        BlockOutput b = tpdist_block(*tpdist_, x0, ctx, graph_, *schedule_, noise_seed, opts);
        out = std::move(b.denoised);
        gtm = frames_to_sites(b.gtm_features);
    } else {
        StackOutput s = run_gtm_stack(*stack_, graph_, x0);
        out = std::move(s.features);
        gtm = frames_to_sites(out);
    }

    const Tensor sites = frames_to_sites(out);                  // [BT, nc, C]
    const Tensor fine = bmm(up_, sites);                         // [BT, n, C]
    const Tensor per_vertex = bmm(permute(fine, {1, 0, 2}), head_w_);  // [n, BT, 3]
    Tensor verts = add_bias(add_bias(permute(per_vertex, {1, 0, 2}), head_b_), rest_);
    return {std::move(verts), x0, std::move(gtm)};
}

}  // namespace meshseq
