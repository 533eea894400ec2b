#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "meshseq/diffusion.hpp"
#include "meshseq/latent_video.hpp"
#include "meshseq/ops.hpp"
#include "meshseq/tpdist.hpp"
#include "meshseq/train.hpp"

using namespace meshseq;

namespace {

BodyGraph small_graph() {
    ToyBodyConfig cfg;
    cfg.parts = {"head", "torso", "left_arm", "right_arm"};
    cfg.vertices_per_part = 2;
    cfg.coarse_per_part = 2;
    return generate_toy_body(cfg);
}

TPDistParams small_params(std::size_t C, std::size_t sites, std::uint64_t seed,
                          bool zero_eps = true) {
    TPDistParams::Options o;
    o.channels = C;
    o.sites = sites;
    o.context_rows = 2;
    o.activation = Activation::GELU;
    o.zero_eps_output = zero_eps;
    std::mt19937_64 rng(seed);
    return TPDistParams::init(o, rng);
}

LatentVideo random_video(const VideoDims& d, std::mt19937_64& rng) {
    return LatentVideo(Tensor::randn(layout_shape(d, Layout::FramesCHW), rng), Layout::FramesCHW, d);
}

}  // namespace

TEST(Schedule, FirstCumulativeEqualsFirstAlpha) {
    for (auto kind : {ScheduleKind::Linear, ScheduleKind::Cosine}) {
        auto s = make_schedule(50, kind);
        EXPECT_EQ(s.alpha_bar(1), s.alpha(1));
        EXPECT_EQ(s.alpha_bar(0), 1.0);
    }
}

TEST(Schedule, InvariantsForBothKindsAndFiveLengths) {
    for (auto kind : {ScheduleKind::Linear, ScheduleKind::Cosine})
        for (std::size_t T : {2u, 5u, 10u, 50u, 200u}) {
            auto s = make_schedule(T, kind);
            ASSERT_EQ(s.n_steps(), T);
            double prod = 1.0;
            for (std::size_t t = 1; t <= T; ++t) {
                EXPECT_GT(s.alpha(t), 0.0);
                EXPECT_LE(s.alpha(t), 1.0);
                prod *= s.alpha(t);
                EXPECT_NEAR(s.alpha_bar(t), prod, 1e-15);
                if (t > 1) EXPECT_LE(s.alpha_bar(t), s.alpha_bar(t - 1));
            }
            EXPECT_LT(s.alpha_bar(T), 0.1) << to_string(kind) << " T=" << T;
        }
}

TEST(Schedule, LinearFiftyStrictlyDecreasing) {
    auto s = make_schedule(50);
    for (std::size_t t = 1; t <= 50; ++t) {
        EXPECT_GT(s.alpha(t), 0.0);
        EXPECT_LT(s.alpha(t), 1.0);
        if (t > 1) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
}

TEST(Schedule, RejectsTooShort) {
    EXPECT_THROW(make_schedule(1), ConfigError);
    EXPECT_THROW(schedule_from_alphas({0.5, 0.0}), ConfigError);
    EXPECT_THROW(schedule_from_alphas({1.5}), ConfigError);
}

TEST(ForwardNoise, ExtremeAlphas) {
    std::mt19937_64 rng(1);
    Tensor x = Tensor::randn({5}, rng), eps = Tensor::randn({5}, rng);
    EXPECT_EQ(forward_noise(x, 1.0, eps).to_vector(), x.to_vector());
    EXPECT_EQ(forward_noise(x, 0.0, eps).to_vector(), eps.to_vector());
    EXPECT_THROW(forward_noise(x, 0.5, Tensor::zeros({4})), ShapeError);
}

TEST(ForwardNoise, IteratedStepsMatchClosedFormMoments) {
    const std::size_t N = 100000;
    const double x0 = 1.7;
    auto s = make_schedule(20);
    std::mt19937_64 rng(2);
    Tensor x({N}, x0);
    for (std::size_t t = 1; t <= 20; ++t) {
        x = forward_noise_step(x, t, s, Tensor::randn({N}, rng));
        if (t % 5 != 0) continue;
        double m = 0.0;
        for (double v : x.data()) m += v;
        m /= N;
        double var = 0.0;
        for (double v : x.data()) var += (v - m) * (v - m);
        var /= N;
        const double ab = s.alpha_bar(t);
        const double want_var = 1.0 - ab;
        EXPECT_NEAR(m, std::sqrt(ab) * x0, 3.0 * std::sqrt(want_var / N)) << "t=" << t;
        EXPECT_NEAR(var, want_var, 3.0 * want_var * std::sqrt(2.0 / N)) << "t=" << t;
    }
}

TEST(ReverseStep, UnitAlphaIsIdentity) {
    auto s = schedule_from_alphas({1.0, 1.0, 0.5});
    std::mt19937_64 rng(3);
    Tensor z = Tensor::randn({4}, rng);
    for (std::size_t t : {1u, 2u})
        EXPECT_EQ(reverse_step(z, t, Tensor::randn({4}, rng), s, Tensor::randn({4}, rng)).to_vector(),
                  z.to_vector());
}

TEST(ReverseStep, ZeroEpsAndNoiseDividesBySqrtAlpha) {
    auto s = make_schedule(10);
    std::mt19937_64 rng(4);
    Tensor z = Tensor::randn({6}, rng);
    Tensor out = reverse_step(z, 4, Tensor::zeros({6}), s, Tensor::zeros({6}));
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out[i], z[i] / std::sqrt(s.alpha(4)), 1e-15);
}

TEST(ReverseStep, MatchesScalarTranscription) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> pick(1, 30);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto s = make_schedule(30, trial % 2 ? ScheduleKind::Cosine : ScheduleKind::Linear);
        const std::size_t t = pick(rng);
        Tensor z = Tensor::randn({3}, rng), e = Tensor::randn({3}, rng), I = Tensor::randn({3}, rng);
        Tensor out = reverse_step(z, t, e, s, I);
        const double a = s.alpha(t), ab = s.alpha_bar(t), abp = s.alpha_bar(t - 1);
        for (std::size_t i = 0; i < 3; ++i) {
            double want = (1.0 / std::sqrt(a)) * (z[i] - ((1.0 - a) / std::sqrt(1.0 - ab)) * e[i]);
            if (t > 1) want += (std::sqrt(1.0 - a) * std::sqrt(1.0 - abp) / std::sqrt(1.0 - ab)) * I[i];
            worst = std::max(worst, std::abs(out[i] - want));
        }
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(ReverseStep, BetaVariantUsesSqrtBeta) {
    auto s = make_schedule(10);
    auto c = reverse_coefficients(5, s, ReverseNoise::Beta);
    EXPECT_NEAR(c.noise_scale, std::sqrt(1.0 - s.alpha(5)), 1e-15);
    EXPECT_EQ(reverse_coefficients(1, s, ReverseNoise::Beta).noise_scale, 0.0);
}

TEST(ReverseStep, PerfectEpsRecoversX0AtFirstStep) {
    auto s = make_schedule(10);
    std::mt19937_64 rng(6);
    Tensor x0 = Tensor::randn({8}, rng), eps = Tensor::randn({8}, rng);
    Tensor x1 = closed_form_noise(x0, 1, s, eps);
    Tensor back = reverse_step(x1, 1, eps, s, Tensor::zeros({8}));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(back[i], x0[i], 1e-9);
}

TEST(ReverseStep, RejectsStepOutOfRange) {
    auto s = make_schedule(4);
    Tensor z({2});
    EXPECT_THROW(reverse_step(z, 0, z, s, z), ConfigError);
    EXPECT_THROW(reverse_step(z, 5, z, s, z), ConfigError);
}

TEST(Rearrange, RoundTripIsBytewiseIdentity) {
    std::mt19937_64 rng(7);
    VideoDims d{2, 3, 4, 2, 3};
    LatentVideo v = random_video(d, rng);
    LatentVideo back = rearrange(rearrange(v, Layout::BTCHW), Layout::FramesCHW);
    EXPECT_EQ(back.data().to_vector(), v.data().to_vector());
    LatentVideo back2 = rearrange(rearrange(v, Layout::SitesTC), Layout::FramesCHW);
    EXPECT_EQ(back2.data().to_vector(), v.data().to_vector());
    for (auto layout : {Layout::FramesCHW, Layout::BTCHW, Layout::SitesTC})
        EXPECT_EQ(rearrange(v, layout).data().numel(), d.numel());
}

TEST(Rearrange, SitesLayoutIndexExample) {
    VideoDims d{1, 2, 1, 1, 2};
    // frames: t=0 -> [a, b] (w = 0, 1), t=1 -> [c, d]
    LatentVideo v(Tensor({2, 1, 1, 2}, std::vector<double>{1, 2, 3, 4}), Layout::FramesCHW, d);
    LatentVideo s = rearrange(v, Layout::SitesTC);
    EXPECT_EQ(s.data().shape(), (Shape{2, 2, 1}));
    // row = site w, then time
    EXPECT_EQ(s.data().to_vector(), (std::vector<double>{1, 3, 2, 4}));
    EXPECT_EQ(s.data()[1 * 2 + 0], 2.0);
}

TEST(Rearrange, LayoutShapeMismatchRejected) {
    VideoDims d{1, 2, 1, 1, 2};
    EXPECT_THROW(LatentVideo(Tensor({4, 1, 1, 2}), Layout::FramesCHW, d), ShapeError);
}

TEST(TemporalAttention, SingleStepIsValueProjection) {
    std::mt19937_64 rng(8);
    VideoDims d{2, 1, 3, 1, 2};
    auto layer = AttentionLayer::init(3, 1, rng);
    LatentVideo v = rearrange(random_video(d, rng), Layout::SitesTC);
    auto delta = temporal_self_attention(v, layer);
    Tensor want = linear(v.data(), layer.wv, Tensor());
    for (std::size_t i = 0; i < want.numel(); ++i) EXPECT_NEAR(delta.delta.data()[i], want[i], 1e-14);
}

TEST(TemporalAttention, IdenticalStepsGiveIdenticalRows) {
    std::mt19937_64 rng(9);
    auto layer = AttentionLayer::init(2, 1, rng);
    // 1 site, 2 identical steps
    LatentVideo v(Tensor({1, 2, 2}, std::vector<double>{0.3, -1, 0.3, -1}), Layout::SitesTC,
                  VideoDims{1, 2, 2, 1, 1});
    auto out = temporal_self_attention(v, layer).delta.data();
    EXPECT_EQ(out[0], out[2]);
    EXPECT_EQ(out[1], out[3]);
}

TEST(TemporalAttention, MatchesPerSiteLoop) {
    std::mt19937_64 rng(10);
    VideoDims d{2, 4, 3, 2, 2};
    auto layer = AttentionLayer::init(3, 1, rng);
    LatentVideo v = rearrange(random_video(d, rng), Layout::SitesTC);
    auto delta = temporal_self_attention(v, layer).delta.data();
    const std::size_t rows = d.B * d.sites();
    for (std::size_t r = 0; r < rows; ++r) {
        Tensor seq = reshape(slice(v.data(), 0, r, r + 1), {d.T, d.C});
        Tensor want = attention(matmul(seq, layer.wq), matmul(seq, layer.wk), matmul(seq, layer.wv));
        for (std::size_t i = 0; i < d.T * d.C; ++i)
            EXPECT_NEAR(delta[r * d.T * d.C + i], want[i], 1e-14);
    }
    EXPECT_THROW(temporal_self_attention(rearrange(v, Layout::FramesCHW), layer), ShapeError);
}

TEST(Block, UnitAlphaFollowsDeterministicPath) {
    BodyGraph g = small_graph();
    const std::size_t C = 3;
    TPDistParams p = small_params(C, g.n_coarse(), 11);
    std::mt19937_64 rng(12);
    VideoDims d{2, 3, C, 2, 4};
    LatentVideo x0 = random_video(d, rng);
    auto sched = schedule_from_alphas({1.0, 1.0, 1.0});
    SemanticContext ctx = make_semantic_context(p, x0);
    BlockOutput out = tpdist_block(p, x0, ctx, g, sched, 99);

    auto ctx_attend = [&](const Tensor& x) {
        LatentVideo v(x, Layout::FramesCHW, d);
        Tensor rows = reshape(frames_to_sites(v), {d.B, d.T * d.sites(), C});
        Tensor o = cross_attention(p.gamma_attention, rows, ctx.gamma_A);
        return add(x, sites_to_frames(reshape(o, {d.B * d.T, d.sites(), C}), d).data());
    };
    StackOutput st = run_gtm_stack(p.stack, g, LatentVideo(ctx_attend(x0.data()), Layout::FramesCHW, d));
    Tensor delta = frames_to_sites(rearrange(st.delta.delta, Layout::FramesCHW));
    auto delta_attend = [&](const Tensor& z) {
        Tensor q = add_bias(frames_to_sites(LatentVideo(z, Layout::FramesCHW, d)), p.site_embedding);
        Tensor kv = add_bias(delta, p.site_embedding);
        const Tensor none;
        const AttentionLayer& a = p.delta_attention;
        Tensor o = attention(linear(q, a.wq, none), linear(kv, a.wk, none), linear(delta, a.wv, none),
                             a.heads);
        return add(z, sites_to_frames(o, d).data());
    };
    Tensor x = x0.data();
    for (int t = 0; t < 3; ++t) x = ctx_attend(x);
    for (int t = 0; t < 3; ++t) x = delta_attend(x);
    ASSERT_EQ(out.denoised.data().shape(), x0.data().shape());
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(out.denoised.data()[i], x[i], 1e-12);
}

TEST(Block, SameSeedIsBitwiseIdentical) {
    BodyGraph g = small_graph();
    TPDistParams p = small_params(3, g.n_coarse(), 13, false);
    std::mt19937_64 rng(14);
    VideoDims d{1, 4, 3, 2, 4};
    LatentVideo x0 = random_video(d, rng);
    auto sched = make_schedule(6);
    auto ctx = make_semantic_context(p, x0);
    auto a = tpdist_block(p, x0, ctx, g, sched, 5).denoised.data().to_vector();
    auto b = tpdist_block(p, x0, ctx, g, sched, 5).denoised.data().to_vector();
    auto c = tpdist_block(p, x0, ctx, g, sched, 6).denoised.data().to_vector();
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    EXPECT_EQ(a.size(), x0.data().numel());
}

TEST(Block, RejectsSiteMismatch) {
    BodyGraph g = small_graph();
    TPDistParams p = small_params(3, g.n_coarse(), 15);
    std::mt19937_64 rng(16);
    VideoDims d{1, 2, 3, 3, 3};
    LatentVideo x0 = random_video(d, rng);
    EXPECT_THROW(tpdist_block(p, x0, make_semantic_context(p, x0), g, make_schedule(4), 1),
                 ShapeError);
}

TEST(Block, OutputShapeMatchesInputAcrossSizes) {
    BodyGraph g = small_graph();
    for (std::size_t T : {1u, 2u, 5u}) {
        TPDistParams p = small_params(2, g.n_coarse(), 17 + T, false);
        std::mt19937_64 rng(T);
        VideoDims d{2, T, 2, 1, 8};
        LatentVideo x0 = random_video(d, rng);
        BlockOptions opt;
        opt.noise_depth = 2;
        auto out = tpdist_block(p, x0, make_semantic_context(p, x0), g, make_schedule(5), 3, opt);
        EXPECT_EQ(out.denoised.data().shape(), x0.data().shape());
        EXPECT_EQ(out.denoised.layout(), Layout::FramesCHW);
        EXPECT_EQ(out.delta.delta.data().numel(), x0.data().numel());
    }
}

// Trains the block as a denoiser on sinusoid latents and compares its
// reconstruction to the fully noised input.
TEST(Block, LearnsToDenoiseSinusoids) {
    BodyGraph g = small_graph();
    const std::size_t C = 2, T = 8;
    VideoDims d{2, T, C, 2, 4};
    TPDistParams p = small_params(C, g.n_coarse(), 21);
    auto sched = schedule_from_alphas({0.7, 0.5, 0.4, 0.4});
    ASSERT_LT(sched.alpha_bar(4), 0.1);

    std::mt19937_64 data_rng(22);
    std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
    std::uniform_real_distribution<double> freq(0.3, 0.9);
    auto sample = [&] {
        std::vector<double> v(d.numel());
        for (std::size_t b = 0; b < d.B; ++b) {
            const double w = freq(data_rng), ph = phase(data_rng);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t s = 0; s < d.sites(); ++s)
                        v[(((b * T + t) * C + c) * d.sites()) + s] =
                            std::sin(w * t + ph + 0.4 * s + 1.3 * c);
        }
        return LatentVideo(Tensor(layout_shape(d, Layout::FramesCHW), v), Layout::FramesCHW, d);
    };

    ParamList params;
    p.collect("", params);
    TrainConfig tc;
    tc.learning_rate = 1e-2;
    Adam adam(params, tc);
    for (std::size_t step = 0; step < 200; ++step) {
        LatentVideo x0 = sample();
        Tape tape;
        TapeScope scope(tape);
        auto out = tpdist_block(p, x0, make_semantic_context(p, x0), g, sched, 1000 + step);
        tape.backward(mse(out.denoised.data(), x0.data()));
        adam.step();
    }

    double recon = 0.0, noised = 0.0;
    std::mt19937_64 noise_rng(23);
    for (int k = 0; k < 10; ++k) {
        LatentVideo x0 = sample();
        auto out = tpdist_block(p, x0, make_semantic_context(p, x0), g, sched, 5000 + k);
        recon += mse(out.denoised.data(), x0.data()).item();
        Tensor xt = closed_form_noise(x0.data(), 4, sched, Tensor::randn(x0.data().shape(), noise_rng));
        noised += mse(xt, x0.data()).item();
    }
    EXPECT_LT(recon, 0.25 * noised) << "recon " << recon / 10 << " noised " << noised / 10;
}
