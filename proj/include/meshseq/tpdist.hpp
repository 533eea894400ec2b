#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "meshseq/body_graph.hpp"
#include "meshseq/diffusion.hpp"
#include "meshseq/latent_video.hpp"
#include "meshseq/params.hpp"

namespace meshseq {

using ParamVisitor = std::function<void(const std::string& name, Tensor& tensor)>;

// Action-semantic context rows the latent attends to while it is noised.
struct SemanticContext {
    Tensor gamma_A;  // [L x C] shared, or [B x L x C] one block per sequence
};

struct AttentionLayer {
    Tensor wq, wk, wv;  // C x C
    std::size_t heads = 1;

    static AttentionLayer init(std::size_t channels, std::size_t heads, std::mt19937_64& rng);
    void collect(const std::string& prefix, ParamList& out) const;
    // Visits every trainable tensor in collect order.
    void visit(const std::string& prefix, const ParamVisitor& f);
};

// attention(q Wq, kv Wk, kv Wv)
Tensor cross_attention(const AttentionLayer& layer, const Tensor& query_rows, const Tensor& kv_rows);

struct TemporalDependencies {
    LatentVideo delta;  // (B*H*W) x T x C
};

// Self-attention over the T steps of every spatial site independently.
TemporalDependencies temporal_self_attention(const LatentVideo& video, const AttentionLayer& layer);

// 3DConv followed by two rounds of per-frame graph convolution and temporal
// self-attention, each applied residually.
struct GtmStack {
    Tensor conv_w, conv_b;  // [C x C x kT x kH x kW], [C]
    std::vector<GraphConvLayer> graph;
    std::vector<AttentionLayer> temporal;
    Activation activation = Activation::ReLU;

    static GtmStack init(std::size_t channels, std::size_t passes, std::size_t heads,
                         std::size_t kernel_t, std::size_t kernel_s, Activation activation,
                         std::mt19937_64& rng);
    void collect(const std::string& prefix, ParamList& out) const;
    // Visits every trainable tensor in collect order.
    void visit(const std::string& prefix, const ParamVisitor& f);
};

struct StackOutput {
    LatentVideo features;        // (B*T) x C x H x W
    TemporalDependencies delta;  // from the final pass
};

StackOutput run_gtm_stack(const GtmStack& stack, const BodyGraph& graph, const LatentVideo& x);

// Noise predictor eps(z_t, t): the same conv / graph / temporal pattern with
// a sinusoidal step embedding added to the channels and a final linear map.
struct EpsNet {
    Tensor conv_w, conv_b;
    GraphConvLayer graph;
    AttentionLayer temporal;
    Tensor out_w, out_b;  // C x C, [C]
    Activation activation = Activation::ReLU;

    static EpsNet init(std::size_t channels, std::size_t heads, std::size_t kernel_t,
                       std::size_t kernel_s, Activation activation, bool zero_output,
                       std::mt19937_64& rng);
    void collect(const std::string& prefix, ParamList& out) const;
    // Visits every trainable tensor in collect order.
    void visit(const std::string& prefix, const ParamVisitor& f);
};

// Sinusoidal embedding of step t, length `channels`.
std::vector<double> step_embedding(std::size_t t, std::size_t channels);

LatentVideo predict_noise(const EpsNet& net, const BodyGraph& graph, const LatentVideo& z_t,
                          std::size_t t);

struct TPDistParams {
    Tensor gamma_table;  // [L x C]
    Tensor gamma_proj;   // [C x L*C], sequence-pooled latent -> context rows
    AttentionLayer gamma_attention;
    GtmStack stack;
    AttentionLayer delta_attention;
    Tensor site_embedding;  // [H*W x C]
    EpsNet eps;

    struct Options {
        std::size_t channels = 16;
        std::size_t sites = 24;
        std::size_t context_rows = 4;
        std::size_t heads = 1;
        std::size_t kernel_t = 3;
        std::size_t kernel_s = 3;
        Activation activation = Activation::ReLU;
        bool zero_eps_output = true;
    };

    static TPDistParams init(const Options& options, std::mt19937_64& rng);
    void collect(const std::string& prefix, ParamList& out) const;
    // Visits every trainable tensor in collect order.
    void visit(const std::string& prefix, const ParamVisitor& f);
};

// gamma_A per sequence: table + projection of the latent averaged over
// frames and sites. Returns [B x L x C].
SemanticContext make_semantic_context(const TPDistParams& params, const LatentVideo& x0);

struct BlockOptions {
    std::size_t noise_depth = 0;  // 0 means the full schedule
    ReverseNoise reverse_noise = ReverseNoise::Posterior;
};

struct BlockOutput {
    LatentVideo denoised;        // same layout and shape as x0
    TemporalDependencies delta;  // conditioning used by the reverse chain
    LatentVideo gtm_features;    // stack output on the conditioning stream
};

// Noises x0 for k steps, each followed by context cross-attention, runs the
// GTM stack on the context-attended clean latent to obtain delta, then walks
// the reverse chain k..1 applying delta cross-attention before every
// reverse_step. All noise comes from `seed`.
BlockOutput tpdist_block(const TPDistParams& params, const LatentVideo& x0,
                         const SemanticContext& ctx, const BodyGraph& graph,
                         const DiffusionSchedule& schedule, std::uint64_t seed,
                         const BlockOptions& options = {});

// Mean squared error between the injected noise and its prediction at step
// t, with x_t drawn in closed form from x0.
Tensor eps_loss(const TPDistParams& params, const BodyGraph& graph, const LatentVideo& x0,
                const DiffusionSchedule& schedule, std::size_t t, const Tensor& eps);

}  // namespace meshseq
