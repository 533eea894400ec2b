#include "meshseq/tpdist.hpp"

#include <cmath>

#include "meshseq/ops.hpp"

namespace meshseq {

namespace {

Tensor conv_kernel(std::size_t c, std::size_t kt, std::size_t ks, std::mt19937_64& rng) {
    const double fan = static_cast<double>(c * kt * ks * ks);
    const double limit = std::sqrt(3.0 / fan);
    Tensor w = Tensor::uniform({c, c, kt, ks, ks}, rng, -limit, limit);
    w.set_requires_grad(true);
    return w;
}

void require_kernel(std::size_t kt, std::size_t ks) {
    if (kt % 2 == 0 || ks % 2 == 0) throw ConfigError("conv kernel extents must be odd");
}

// Per-frame graph convolution on (B*T) x (H*W) x C rows, added residually.
Tensor graph_residual(const GraphConvLayer& layer, const BodyGraph& graph, const Tensor& sites) {
    return add(sites, graph_conv(layer, graph, sites));
}

}  // namespace

AttentionLayer AttentionLayer::init(std::size_t channels, std::size_t heads, std::mt19937_64& rng) {
    if (heads == 0 || channels % heads != 0)
        throw ConfigError("channel width " + std::to_string(channels) +
                          " not divisible by head count " + std::to_string(heads));
    AttentionLayer a;
    a.wq = glorot(channels, channels, rng);
    a.wk = glorot(channels, channels, rng);
    a.wv = glorot(channels, channels, rng, 0.5);
    a.heads = heads;
    return a;
}

void AttentionLayer::visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".wk", wk);
    f(prefix + ".wv", wv);
}

void AttentionLayer::collect(const std::string& prefix, ParamList& out) const {
    const_cast<AttentionLayer*>(this)->visit(prefix, [&](const std::string& n, Tensor& t) { out.push_back({n, t}); });
}

Tensor cross_attention(const AttentionLayer& layer, const Tensor& query_rows, const Tensor& kv_rows) {
    const Tensor none;
    return attention(linear(query_rows, layer.wq, none), linear(kv_rows, layer.wk, none),
                     linear(kv_rows, layer.wv, none), layer.heads);
}

TemporalDependencies temporal_self_attention(const LatentVideo& video, const AttentionLayer& layer) {
    if (video.layout() != Layout::SitesTC)
        throw ShapeError("temporal_self_attention: expected layout " + to_string(Layout::SitesTC) +
                         ", got " + to_string(video.layout()));
    return {LatentVideo(cross_attention(layer, video.data(), video.data()), Layout::SitesTC,
                        video.dims())};
}

GtmStack GtmStack::init(std::size_t channels, std::size_t passes, std::size_t heads,
                        std::size_t kernel_t, std::size_t kernel_s, Activation activation,
                        std::mt19937_64& rng) {
    require_kernel(kernel_t, kernel_s);
    if (passes == 0) throw ConfigError("GTM stack needs at least one pass");
    GtmStack s;
    s.conv_w = conv_kernel(channels, kernel_t, kernel_s, rng);
    s.conv_b = zeros_param({channels});
    for (std::size_t p = 0; p < passes; ++p) {
        s.graph.push_back(GraphConvLayer::init(channels, channels, rng, activation));
        s.temporal.push_back(AttentionLayer::init(channels, heads, rng));
    }
    s.activation = activation;
    return s;
}

void GtmStack::visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".conv_w", conv_w);
    f(prefix + ".conv_b", conv_b);
    for (std::size_t p = 0; p < graph.size(); ++p) {
        f(prefix + ".graph" + std::to_string(p) + ".w", graph[p].weight);
        temporal[p].visit(prefix + ".temporal" + std::to_string(p), f);
    }
}

void GtmStack::collect(const std::string& prefix, ParamList& out) const {
    const_cast<GtmStack*>(this)->visit(prefix, [&](const std::string& n, Tensor& t) { out.push_back({n, t}); });
}

StackOutput run_gtm_stack(const GtmStack& stack, const BodyGraph& graph, const LatentVideo& x) {
    const VideoDims d = x.dims();
    const LatentVideo v5 = rearrange(x, Layout::BTCHW);
    Tensor h = add(v5.data(), activate(conv3d(v5.data(), stack.conv_w, stack.conv_b), stack.activation));
    LatentVideo cur(std::move(h), Layout::BTCHW, d);
    TemporalDependencies delta;
    for (std::size_t p = 0; p < stack.graph.size(); ++p) {
        const Tensor sites = graph_residual(stack.graph[p], graph, frames_to_sites(cur));
        const LatentVideo seq = rearrange(sites_to_frames(sites, d), Layout::SitesTC);
        delta = temporal_self_attention(seq, stack.temporal[p]);
        cur = LatentVideo(add(seq.data(), delta.delta.data()), Layout::SitesTC, d);
    }
    return {rearrange(cur, Layout::FramesCHW), delta};
}

EpsNet EpsNet::init(std::size_t channels, std::size_t heads, std::size_t kernel_t,
                    std::size_t kernel_s, Activation activation, bool zero_output,
                    std::mt19937_64& rng) {
    require_kernel(kernel_t, kernel_s);
    EpsNet e;
    e.conv_w = conv_kernel(channels, kernel_t, kernel_s, rng);
    e.conv_b = zeros_param({channels});
    e.graph = GraphConvLayer::init(channels, channels, rng, activation);
    e.temporal = AttentionLayer::init(channels, heads, rng);
    e.out_w = zero_output ? zeros_param({channels, channels}) : glorot(channels, channels, rng);
    e.out_b = zeros_param({channels});
    e.activation = activation;
    return e;
}

void EpsNet::visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".conv_w", conv_w);
    f(prefix + ".conv_b", conv_b);
    f(prefix + ".graph.w", graph.weight);
    temporal.visit(prefix + ".temporal", f);
    f(prefix + ".out_w", out_w);
    f(prefix + ".out_b", out_b);
}

void EpsNet::collect(const std::string& prefix, ParamList& out) const {
    const_cast<EpsNet*>(this)->visit(prefix, [&](const std::string& n, Tensor& t) { out.push_back({n, t}); });
}

std::vector<double> step_embedding(std::size_t t, std::size_t channels) {
    std::vector<double> e(channels);
    const double half = static_cast<double>((channels + 1) / 2);
    for (std::size_t i = 0; i < channels; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i / 2) / half);
        const double arg = static_cast<double>(t) * freq;
        e[i] = i % 2 == 0 ? std::sin(arg) : std::cos(arg);
    }
    return e;
}

LatentVideo predict_noise(const EpsNet& net, const BodyGraph& graph, const LatentVideo& z_t,
                          std::size_t t) {
    const VideoDims d = z_t.dims();
    const Tensor temb(Shape{d.C}, step_embedding(t, d.C));
    const LatentVideo v5 = rearrange(z_t, Layout::BTCHW);
    const Tensor h = activate(conv3d(v5.data(), net.conv_w, add(net.conv_b, temb)), net.activation);
    const Tensor sites =
        graph_residual(net.graph, graph, frames_to_sites(LatentVideo(h, Layout::BTCHW, d)));
    const LatentVideo seq = rearrange(sites_to_frames(sites, d), Layout::SitesTC);
    const Tensor mixed = add(seq.data(), temporal_self_attention(seq, net.temporal).delta.data());
    const LatentVideo back = rearrange(LatentVideo(mixed, Layout::SitesTC, d), Layout::FramesCHW);
    return sites_to_frames(linear(frames_to_sites(back), net.out_w, net.out_b), d);
}

TPDistParams TPDistParams::init(const Options& o, std::mt19937_64& rng) {
    TPDistParams p;
    const std::size_t C = o.channels, L = o.context_rows;
    if (L == 0) throw ConfigError("context_rows must be positive");
    p.gamma_table = Tensor::randn({L, C}, rng, 0.5).set_requires_grad(true);
    p.gamma_proj = glorot(C, L * C, rng, 0.5);
    p.gamma_attention = AttentionLayer::init(C, o.heads, rng);
    p.stack = GtmStack::init(C, 2, o.heads, o.kernel_t, o.kernel_s, o.activation, rng);
    p.delta_attention = AttentionLayer::init(C, o.heads, rng);
    p.site_embedding = Tensor::randn({o.sites, C}, rng, 0.5).set_requires_grad(true);
    p.eps = EpsNet::init(C, o.heads, o.kernel_t, o.kernel_s, o.activation, o.zero_eps_output, rng);
    return p;
}

void TPDistParams::visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".gamma_table", gamma_table);
    f(prefix + ".gamma_proj", gamma_proj);
    gamma_attention.visit(prefix + ".gamma_attention", f);
    stack.visit(prefix + ".stack", f);
    delta_attention.visit(prefix + ".delta_attention", f);
    f(prefix + ".site_embedding", site_embedding);
    eps.visit(prefix + ".eps", f);
}

void TPDistParams::collect(const std::string& prefix, ParamList& out) const {
    const_cast<TPDistParams*>(this)->visit(prefix, [&](const std::string& n, Tensor& t) { out.push_back({n, t}); });
}

SemanticContext make_semantic_context(const TPDistParams& params, const LatentVideo& x0) {
    const VideoDims d = x0.dims();
    const std::size_t L = params.gamma_table.dim(0);
    // [B*T, HW, C] -> [B, T*HW, C] -> mean over rows -> [B, C]
    const Tensor rows = reshape(frames_to_sites(x0), {d.B, d.T * d.sites(), d.C});
    const Tensor pooled = mean_axis(rows, 1);
    const Tensor proj = reshape(linear(reshape(pooled, {d.B, d.C}), params.gamma_proj, Tensor{}),
                                {d.B, L, d.C});
    return {add_bias(proj, params.gamma_table)};
}

namespace {

// Every site of every frame of sequence b attends to that sequence's context.
Tensor attend_context(const TPDistParams& params, const SemanticContext& ctx,
                      const LatentVideo& x) {
    const VideoDims d = x.dims();
    const Tensor rows = reshape(frames_to_sites(x), {d.B, d.T * d.sites(), d.C});
    const Tensor out = cross_attention(params.gamma_attention, rows, ctx.gamma_A);
    return add(x.data(), sites_to_frames(reshape(out, {d.B * d.T, d.sites(), d.C}), d).data());
}

// Sites of frame (b, t) attend to the delta rows of the same frame.
Tensor attend_delta(const TPDistParams& params, const Tensor& delta_sites, const LatentVideo& z) {
    const VideoDims d = z.dims();
    const Tensor q = add_bias(frames_to_sites(z), params.site_embedding);
    const Tensor kv = add_bias(delta_sites, params.site_embedding);
    const AttentionLayer& a = params.delta_attention;
    const Tensor none;
    const Tensor out = attention(linear(q, a.wq, none), linear(kv, a.wk, none),
                                 linear(delta_sites, a.wv, none), a.heads);
    return add(z.data(), sites_to_frames(out, d).data());
}

void check_block_inputs(const TPDistParams& params, const LatentVideo& x0, const BodyGraph& graph) {
    if (x0.layout() != Layout::FramesCHW)
        throw ShapeError("tpdist_block: x0 must be in layout " + to_string(Layout::FramesCHW));
    if (x0.dims().sites() != graph.n_coarse())
        throw ShapeError("tpdist_block: H*W = " + std::to_string(x0.dims().sites()) +
                         " but the graph has " + std::to_string(graph.n_coarse()) +
                         " coarse vertices");
    if (params.site_embedding.dim(0) != x0.dims().sites() ||
        params.site_embedding.dim(1) != x0.dims().C)
        throw ShapeError("tpdist_block: parameters built for " +
                         shape_str(params.site_embedding.shape()) + " sites x channels");
}

}  // namespace

BlockOutput tpdist_block(const TPDistParams& params, const LatentVideo& x0,
                         const SemanticContext& ctx, const BodyGraph& graph,
                         const DiffusionSchedule& schedule, std::uint64_t seed,
                         const BlockOptions& options) {
    check_block_inputs(params, x0, graph);
    const VideoDims d = x0.dims();
    const Shape shape = x0.data().shape();
    const std::size_t k = options.noise_depth == 0 ? schedule.n_steps() : options.noise_depth;
    if (k > schedule.n_steps())
        throw ConfigError("noise depth " + std::to_string(k) + " exceeds schedule length " +
                          std::to_string(schedule.n_steps()));
    std::mt19937_64 rng(seed);

    const LatentVideo clean(attend_context(params, ctx, x0), Layout::FramesCHW, d);
    StackOutput stacked = run_gtm_stack(params.stack, graph, clean);
    const Tensor delta_sites = frames_to_sites(
        rearrange(stacked.delta.delta, Layout::FramesCHW));

    Tensor x = x0.data();
    for (std::size_t t = 1; t <= k; ++t) {
        x = forward_noise_step(x, t, schedule, Tensor::randn(shape, rng));
        x = attend_context(params, ctx, LatentVideo(x, Layout::FramesCHW, d));
    }
    Tensor z = x;
    for (std::size_t t = k; t >= 1; --t) {
        z = attend_delta(params, delta_sites, LatentVideo(z, Layout::FramesCHW, d));
        const LatentVideo eps = predict_noise(params.eps, graph, LatentVideo(z, Layout::FramesCHW, d), t);
        const Tensor noise = t > 1 ? Tensor::randn(shape, rng) : Tensor::zeros(shape);
        z = reverse_step(z, t, eps.data(), schedule, noise, options.reverse_noise);
    }
    return {LatentVideo(z, Layout::FramesCHW, d), std::move(stacked.delta),
            std::move(stacked.features)};
}

Tensor eps_loss(const TPDistParams& params, const BodyGraph& graph, const LatentVideo& x0,
                const DiffusionSchedule& schedule, std::size_t t, const Tensor& eps) {
    const LatentVideo x0f = rearrange(x0, Layout::FramesCHW);
    const LatentVideo xt(closed_form_noise(x0f.data(), t, schedule, eps), Layout::FramesCHW,
                         x0.dims());
    return mse(predict_noise(params.eps, graph, xt, t).data(), eps);
}

}  // namespace meshseq
