#include "meshseq/gradcheck_suite.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "meshseq/body_graph.hpp"
#include "meshseq/config.hpp"
#include "meshseq/hierarchical_loss.hpp"
#include "meshseq/model.hpp"
#include "meshseq/ops.hpp"
#include "meshseq/synth.hpp"
#include "meshseq/tpdist.hpp"
#include "meshseq/train.hpp"

namespace meshseq {

namespace {

using Rng = std::mt19937_64;

std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 4) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor rand(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor::uniform(std::move(s), rng, lo, hi);
}

// Values kept at least `gap` away from `kink`.
Tensor away_from(Shape s, Rng& rng, double kink, double gap) {
    Tensor t = rand(std::move(s), rng);
    for (double& v : t.mutable_data()) v = kink + (v >= 0.0 ? gap + v : v - gap);
    return t;
}

Shape rand_shape(Rng& rng, std::size_t max_rank = 3) {
    Shape s(dim(rng, 1, max_rank));
    for (auto& d : s) d = dim(rng);
    return s;
}

struct Case {
    TensorFn fn;
    std::vector<Tensor> inputs;
};

using CaseMaker = std::function<Case(Rng&)>;

std::vector<std::pair<std::string, CaseMaker>> primitive_makers() {
    std::vector<std::pair<std::string, CaseMaker>> m;
    auto binary = [](auto op) {
        return [op](Rng& r) {
            Shape s = rand_shape(r);
            return Case{[op](const auto& in) { return op(in[0], in[1]); }, {rand(s, r), rand(s, r)}};
        };
    };
    m.emplace_back("add", binary([](const Tensor& a, const Tensor& b) { return add(a, b); }));
    m.emplace_back("sub", binary([](const Tensor& a, const Tensor& b) { return sub(a, b); }));
    m.emplace_back("mul", binary([](const Tensor& a, const Tensor& b) { return mul(a, b); }));
    m.emplace_back("mse", binary([](const Tensor& a, const Tensor& b) { return mse(a, b); }));
    auto bias = [](auto op) {
        return [op](Rng& r) {
            Shape s = rand_shape(r);
            s.insert(s.begin(), dim(r));
            Shape suffix(s.begin() + 1, s.end());
            return Case{[op](const auto& in) { return op(in[0], in[1]); }, {rand(s, r), rand(suffix, r)}};
        };
    };
    m.emplace_back("add_bias", bias([](const Tensor& a, const Tensor& b) { return add_bias(a, b); }));
    m.emplace_back("mul_bias", bias([](const Tensor& a, const Tensor& b) { return mul_bias(a, b); }));
    auto unary = [](auto op, double kink = NAN, double gap = 0.0) {
        return [op, kink, gap](Rng& r) {
            Shape s = rand_shape(r);
            Tensor x = std::isnan(kink) ? rand(s, r) : away_from(s, r, kink, gap);
            return Case{[op](const auto& in) { return op(in[0]); }, {x}};
        };
    };
    m.emplace_back("scale", unary([](const Tensor& x) { return scale(x, -1.7); }));
    m.emplace_back("add_scalar", unary([](const Tensor& x) { return add_scalar(x, 0.3); }));
    m.emplace_back("square", unary([](const Tensor& x) { return square(x); }));
    m.emplace_back("relu", unary([](const Tensor& x) { return relu(x); }, 0.0, 0.05));
    m.emplace_back("gelu", unary([](const Tensor& x) { return gelu(x); }));
    m.emplace_back("clamp_min", unary([](const Tensor& x) { return clamp_min(x, 0.1); }, 0.1, 0.05));
    m.emplace_back("exp", unary([](const Tensor& x) { return exp(x); }));
    m.emplace_back("log", [](Rng& r) {
        return Case{[](const auto& in) { return log(in[0]); }, {rand(rand_shape(r), r, 0.5, 2.0)}};
    });
    m.emplace_back("sum", unary([](const Tensor& x) { return sum(x); }));
    m.emplace_back("mean", unary([](const Tensor& x) { return mean(x); }));
    auto axis_op = [](auto op) {
        return [op](Rng& r) {
            Shape s = rand_shape(r);
            const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, s.size() - 1)(r);
            return Case{[op, axis](const auto& in) { return op(in[0], axis); }, {rand(s, r)}};
        };
    };
    m.emplace_back("sum_axis", axis_op([](const Tensor& x, std::size_t a) { return sum_axis(x, a); }));
    m.emplace_back("mean_axis", axis_op([](const Tensor& x, std::size_t a) { return mean_axis(x, a); }));
    m.emplace_back("variance_axis",
                   axis_op([](const Tensor& x, std::size_t a) { return variance_axis(x, a); }));
    m.emplace_back("softmax", axis_op([](const Tensor& x, std::size_t a) { return softmax(x, a); }));
    m.emplace_back("log_softmax",
                   axis_op([](const Tensor& x, std::size_t a) { return log_softmax(x, a); }));
    m.emplace_back("softmax_then_sum", axis_op([](const Tensor& x, std::size_t a) {
                       return sum(mul(softmax(x, a), x));
                   }));
    m.emplace_back("reshape", [](Rng& r) {
        Shape s = rand_shape(r);
        const std::size_t n = shape_numel(s);
        return Case{[n](const auto& in) { return reshape(in[0], {n}); }, {rand(s, r)}};
    });
    m.emplace_back("permute", [](Rng& r) {
        Shape s{dim(r), dim(r), dim(r)};
        std::vector<std::size_t> axes{0, 1, 2};
        std::shuffle(axes.begin(), axes.end(), r);
        return Case{[axes](const auto& in) { return permute(in[0], axes); }, {rand(s, r)}};
    });
    m.emplace_back("slice", [](Rng& r) {
        Shape s{dim(r, 2, 4), dim(r)};
        const std::size_t b = dim(r, 0, s[0] - 1);
        const std::size_t e = dim(r, b + 1, s[0]);
        return Case{[b, e](const auto& in) { return slice(in[0], 0, b, e); }, {rand(s, r)}};
    });
    m.emplace_back("concat", [](Rng& r) {
        const std::size_t rows = dim(r);
        return Case{[](const auto& in) { return concat({in[0], in[1]}, 1); },
                    {rand({rows, dim(r)}, r), rand({rows, dim(r)}, r)}};
    });
    m.emplace_back("matmul", [](Rng& r) {
        const std::size_t a = dim(r), b = dim(r), c = dim(r);
        return Case{[](const auto& in) { return matmul(in[0], in[1]); }, {rand({a, b}, r), rand({b, c}, r)}};
    });
    m.emplace_back("bmm", [](Rng& r) {
        const std::size_t B = dim(r), a = dim(r), b = dim(r), c = dim(r);
        const bool shared = dim(r, 0, 1) == 1;
        Tensor lhs = shared ? rand({a, b}, r) : rand({B, a, b}, r);
        return Case{[](const auto& in) { return bmm(in[0], in[1]); }, {lhs, rand({B, b, c}, r)}};
    });
    m.emplace_back("linear", [](Rng& r) {
        const std::size_t a = dim(r), b = dim(r), c = dim(r);
        return Case{[](const auto& in) { return linear(in[0], in[1], in[2]); },
                    {rand({dim(r), a, b}, r), rand({b, c}, r), rand({c}, r)}};
    });
    m.emplace_back("layer_norm", [](Rng& r) {
        const std::size_t d = dim(r, 2, 5);
        return Case{[](const auto& in) { return layer_norm(in[0], in[1], in[2]); },
                    {rand({dim(r), d}, r), rand({d}, r, 0.5, 1.5), rand({d}, r)}};
    });
    m.emplace_back("row_norm", unary([](const Tensor& x) { return row_norm(x); }));
    m.emplace_back("attention", [](Rng& r) {
        const std::size_t heads = dim(r, 1, 2);
        const std::size_t d = heads * dim(r, 1, 2), dv = heads * dim(r, 1, 2);
        const std::size_t B = dim(r, 1, 2), Lq = dim(r), Lk = dim(r);
        return Case{[heads](const auto& in) { return attention(in[0], in[1], in[2], heads); },
                    {rand({B, Lq, d}, r), rand({B, Lk, d}, r), rand({B, Lk, dv}, r)}};
    });
    m.emplace_back("conv3d", [](Rng& r) {
        const std::size_t B = dim(r, 1, 2), T = dim(r, 1, 3), Ci = dim(r, 1, 2), Co = dim(r, 1, 2);
        const std::size_t H = dim(r, 1, 3), W = dim(r, 1, 3);
        const std::size_t kt = 2 * dim(r, 0, 1) + 1, ks = 2 * dim(r, 0, 1) + 1;
        return Case{[](const auto& in) { return conv3d(in[0], in[1], in[2]); },
                    {rand({B, T, Ci, H, W}, r), rand({Co, Ci, kt, ks, ks}, r), rand({Co}, r)}};
    });
    return m;
}

BodyGraph small_body(std::size_t parts, std::size_t vpp, std::size_t cpp) {
    ToyBodyConfig c;
    c.parts.resize(parts);
    const std::vector<std::string> all{"head", "torso", "left_arm", "right_arm",
                                       "left_leg", "right_leg", "hands", "feet"};
    std::copy(all.begin(), all.begin() + static_cast<long>(parts), c.parts.begin());
    c.vertices_per_part = vpp;
    c.coarse_per_part = cpp;
    return generate_toy_body(c);
}

}  // namespace

std::vector<GradcheckCase> primitive_gradchecks(std::size_t shapes_per_op, std::uint64_t seed) {
    std::vector<GradcheckCase> out;
    Rng rng(seed);
    for (const auto& [name, make] : primitive_makers()) {
        GradcheckResult worst;
        for (std::size_t i = 0; i < shapes_per_op; ++i) {
            Case c = make(rng);
            GradcheckResult r = gradcheck(c.fn, c.inputs, 1e-5, seed + i);
            worst.checked += r.checked;
            if (i == 0 || r.max_rel_error > worst.max_rel_error) {
                const std::size_t checked = worst.checked;
                worst = r;
                worst.checked = checked;
            }
        }
        out.push_back({name, worst});
    }
    return out;
}

std::vector<GradcheckCase> module_gradchecks(std::uint64_t seed) {
    std::vector<GradcheckCase> out;
    Rng rng(seed);
    const double h = 1e-5;

    {
        const BodyGraph g = small_body(2, 3, 1);
        GraphConvLayer layer = GraphConvLayer::init(3, 2, rng, Activation::GELU);
        out.push_back({"graph_conv", gradcheck(
                                         [&](const auto& in) {
                                             GraphConvLayer l{in[1], Activation::GELU};
                                             return graph_conv(l, g, in[0]);
                                         },
                                         {rand({2, g.n_vertices(), 3}, rng), layer.weight}, h)});
        out.push_back({"resample", gradcheck(
                                       [&](const auto& in) {
                                           return resample(g, resample(g, in[0], ResampleDirection::Down),
                                                           ResampleDirection::Up);
                                       },
                                       {rand({g.n_vertices(), 3}, rng)}, h)});
    }
    {
        const PartLabelMap map = part_map_from_labels({0, 0, 0, 1, 1, 2, 2, 2, 2});
        PartLabelMap weighted = map;
        weighted.lambda = {2.0, 0.5, 1.0};
        const Tensor truth = rand({2, 9, 3}, rng);
        out.push_back({"hh_loss", gradcheck(
                                      [&](const auto& in) { return hh_loss(in[0], truth, weighted); },
                                      {rand({2, 9, 3}, rng)}, h)});
        const Tensor y_true(Shape{4}, {0.1, 0.2, 0.3, 0.4});
        out.push_back({"part_kl", gradcheck([&](const auto& in) { return part_kl(softmax(in[0], 0), y_true); },
                                            {rand({4}, rng)}, h)});
    }
    {
        const BodyGraph g = small_body(4, 2, 2);  // 8 vertices, 8 coarse sites
        const DiffusionSchedule sched = make_schedule(2);
        TPDistParams::Options o;
        o.channels = 2;
        o.sites = 8;
        o.context_rows = 2;
        o.activation = Activation::GELU;
        o.zero_eps_output = false;
        const TPDistParams base = TPDistParams::init(o, rng);
        ParamList plist;
        base.collect("tpdist", plist);
        std::vector<Tensor> inputs{rand({2, 2, 2, 4}, rng)};  // (B*T) x C x H x W, B=1, T=2
        for (const auto& p : plist) inputs.push_back(p.tensor);
        const VideoDims dims{1, 2, 2, 2, 4};
        auto fn = [&](const std::vector<Tensor>& in) {
            TPDistParams p = base;
            std::size_t i = 1;
            p.visit("", [&](const std::string&, Tensor& t) { t = in[i++]; });
            const LatentVideo x0(in[0], Layout::FramesCHW, dims);
            return tpdist_block(p, x0, make_semantic_context(p, x0), g, sched, 99).denoised.data();
        };
        out.push_back({"tpdist_block", gradcheck(fn, inputs, h)});
    }
    return out;
}

GradcheckCase model_gradcheck(std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.graph.parts = {"head", "torso", "left_arm", "right_arm"};
    cfg.graph.vertices_per_part = 4;
    cfg.graph.coarse_per_part = 1;
    cfg.model.channels = 4;
    cfg.model.latent_h = 2;
    cfg.model.latent_w = 2;
    cfg.model.encoder_hidden = 6;
    cfg.model.context_rows = 2;
    cfg.model.diffusion_steps = 2;
    cfg.model.activation = Activation::GELU;
    cfg.model.seed = seed;
    const BodyGraph g = generate_toy_body(cfg.graph);
    Model model(cfg.model, g);

    SynthConfig synth;
    synth.frames = 2;
    CorruptionConfig corr;
    corr.occlusion_prob = 0.5;
    corr.min_span = 1;
    corr.max_span = 2;
    const auto data = generate_dataset(g, synth, corr, {2, seed, "gc"});
    const Batch batch = make_batch({&data[0], &data[1]}, model.normalizer());

    std::vector<Tensor> leaves;
    for (const auto& p : model.parameters()) leaves.push_back(p.tensor);
    // Zero-initialized readouts would hide the gradient paths behind them.
    for (const auto& p : model.parameters())
        if (p.name == "tpdist.eps.out_w" || p.name == "head.w") {
            Rng r(seed);
            auto d = Tensor(p.tensor).mutable_data();
            for (double& v : d) v = std::uniform_real_distribution<double>(-0.5, 0.5)(r);
        }
    const std::vector<double> lambda = compute_loss(model, batch, cfg.loss, seed).part_weights;
    const LossOptions options{&lambda, false};
    auto fn = [&] { return compute_loss(model, batch, cfg.loss, seed, options).total; };
    // The noise-net convolution sees large latents, so central differences
    // carry visible truncation error; gradients below 1e-3 are judged absolutely.
    return {"model_loss", gradcheck_in_place(fn, leaves, 1e-4, 7, 1e-3, true)};
}

}  // namespace meshseq
