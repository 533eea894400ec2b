#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "meshseq/gradcheck.hpp"
#include "meshseq/gradcheck_suite.hpp"
#include "meshseq/ops.hpp"
#include "meshseq/tensor.hpp"

using namespace meshseq;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

void expect_near_all(const Tensor& a, const std::vector<double>& b, double tol) {
    ASSERT_EQ(a.numel(), b.size());
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(Tensor, ConstructionChecksSize) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rank(), 2u);
}

TEST(Tensor, NonFiniteResultIsAnError) {
    Tensor a({1}, std::vector<double>{1e308});
    EXPECT_THROW(scale(a, 10.0), NumericError);
    EXPECT_THROW(log(Tensor({1}, std::vector<double>{0.0})), NumericError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    std::mt19937_64 rng(1);
    Tensor m = Tensor::randn({3, 3}, rng);
    expect_near_all(matmul(Tensor::eye(3), m), m.to_vector(), 0.0);
}

TEST(Matmul, SmallProduct) {
    expect_near_all(matmul(mat(2, 2, {1, 2, 3, 4}), mat(2, 1, {0, 1})), {2, 4}, 0.0);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
    try {
        matmul(Tensor({2, 3}), Tensor({2, 3}));
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    }
}

TEST(Matmul, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    auto r = gradcheck([](const std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); },
                       {Tensor::randn({3, 4}, rng), Tensor::randn({4, 2}, rng)});
    EXPECT_LT(r.max_rel_error, 1e-6);
    auto r4 = gradcheck([](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
                        {Tensor::randn({4, 4}, rng), Tensor::randn({4, 4}, rng)});
    EXPECT_LT(r4.max_rel_error, 1e-5);
}

TEST(Matmul, BackwardIsTransposeProducts) {
    Tensor a = mat(2, 2, {1, 2, 3, 4}).set_requires_grad();
    Tensor b = mat(2, 2, {5, 6, 7, 8}).set_requires_grad();
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(sum(matmul(a, b)));
    }
    // dA = ones * B^T, dB = A^T * ones
    EXPECT_EQ(a.grad(), (std::vector<double>{11, 15, 11, 15}));
    EXPECT_EQ(b.grad(), (std::vector<double>{4, 4, 6, 6}));
}

TEST(Softmax, Examples) {
    expect_near_all(softmax(Tensor({3}, std::vector<double>{5, 5, 5}), 0), {1. / 3, 1. / 3, 1. / 3},
                    1e-15);
    expect_near_all(softmax(Tensor({2}, std::vector<double>{1000, 1000}), 0), {0.5, 0.5}, 1e-15);
    expect_near_all(softmax(Tensor({2}, std::vector<double>{0, std::log(3.0)}), 0), {0.25, 0.75},
                    1e-15);
}

TEST(Softmax, SumsToOneAlongAxis) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = Tensor::randn({3, 5, 4}, rng, 20.0);
        for (std::size_t axis = 0; axis < 3; ++axis) {
            Tensor s = sum_axis(softmax(x, axis), axis);
            for (double v : s.data()) EXPECT_NEAR(v, 1.0, 1e-12);
        }
    }
}

TEST(Softmax, ComposedWithSumPassesGradcheck) {
    std::mt19937_64 rng(4);
    Tensor w = Tensor::randn({3, 5}, rng);
    auto r = gradcheck([&](const std::vector<Tensor>& in) { return sum(mul(softmax(in[0], 1), w)); },
                       {Tensor::randn({3, 5}, rng)});
    EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Attention, SingleKeyReturnsValueRow) {
    std::mt19937_64 rng(5);
    Tensor q = Tensor::randn({3, 4}, rng);
    Tensor k = Tensor::randn({1, 4}, rng);
    Tensor v = Tensor::randn({1, 2}, rng);
    Tensor out = attention(q, k, v);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out[i * 2 + j], v[j], 1e-15);
}

TEST(Attention, IdenticalKeysAverageValues) {
    std::mt19937_64 rng(6);
    Tensor q = Tensor::randn({2, 3}, rng);
    Tensor k({4, 3}, std::vector<double>(12, 0.7));
    Tensor v = Tensor::randn({4, 2}, rng);
    Tensor out = attention(q, k, v);
    for (std::size_t j = 0; j < 2; ++j) {
        double avg = 0.0;
        for (std::size_t r = 0; r < 4; ++r) avg += v[r * 2 + j] / 4.0;
        EXPECT_NEAR(out[j], avg, 1e-14);
        EXPECT_NEAR(out[2 + j], avg, 1e-14);
    }
}

TEST(Attention, MatchesFormulaOnTwoByTwo) {
    Tensor q = mat(2, 2, {1, 0, 0.5, -1});
    Tensor k = mat(2, 2, {0.3, 2, -1, 1});
    Tensor v = mat(2, 2, {1, 2, 3, 4});
    Tensor out = attention(q, k, v);
    for (std::size_t i = 0; i < 2; ++i) {
        double s[2], z = 0.0;
        for (std::size_t j = 0; j < 2; ++j) {
            s[j] = std::exp((q[i * 2] * k[j * 2] + q[i * 2 + 1] * k[j * 2 + 1]) / std::sqrt(2.0));
            z += s[j];
        }
        for (std::size_t c = 0; c < 2; ++c)
            EXPECT_NEAR(out[i * 2 + c], (s[0] * v[c] + s[1] * v[2 + c]) / z, 1e-14);
    }
}

TEST(Attention, RowsStayInsideValueRange) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor v = Tensor::randn({6, 1}, rng);
        Tensor out = attention(Tensor::randn({5, 3}, rng, 3.0), Tensor::randn({6, 3}, rng, 3.0), v);
        const auto vv = v.to_vector();
        const double lo = *std::min_element(vv.begin(), vv.end());
        const double hi = *std::max_element(vv.begin(), vv.end());
        for (double o : out.data()) {
            EXPECT_GE(o, lo - 1e-12);
            EXPECT_LE(o, hi + 1e-12);
        }
    }
}

TEST(Attention, HeadsSplitFeatures) {
    std::mt19937_64 rng(8);
    Tensor q = Tensor::randn({3, 4}, rng), k = Tensor::randn({5, 4}, rng), v = Tensor::randn({5, 4}, rng);
    Tensor two = attention(q, k, v, 2);
    Tensor left = attention(slice(q, 1, 0, 2), slice(k, 1, 0, 2), slice(v, 1, 0, 2));
    Tensor right = attention(slice(q, 1, 2, 4), slice(k, 1, 2, 4), slice(v, 1, 2, 4));
    expect_near_all(two, concat({left, right}, 1).to_vector(), 1e-15);
}

TEST(Reshape, RoundTripIsIdentity) {
    std::mt19937_64 rng(9);
    Tensor x = Tensor::randn({2, 3, 4}, rng);
    EXPECT_EQ(reshape(reshape(x, {6, 4}), {2, 3, 4}).to_vector(), x.to_vector());
    EXPECT_THROW(reshape(x, {5, 5}), ShapeError);
}

TEST(Tape, BackwardVisitsInReverseOrder) {
    Tensor x = Tensor({2}, std::vector<double>{1, 2}).set_requires_grad();
    Tape tape;
    std::vector<std::size_t> log;
    {
        TapeScope scope(tape);
        Tensor y = scale(x, 2.0);
        Tensor z = square(y);
        tape.backward(sum(z), &log);
    }
    ASSERT_EQ(log.size(), 3u);
    EXPECT_EQ(log, (std::vector<std::size_t>{2, 1, 0}));
}

TEST(Tape, ReusedValueAccumulatesContributions) {
    Tensor x = Tensor({1}, std::vector<double>{3.0}).set_requires_grad();
    Tape tape;
    {
        TapeScope scope(tape);
        // x used three times: d/dx (x + x + x) = 3
        tape.backward(add(add(x, x), x));
    }
    EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Gradcheck, SignFlipIsFlagged) {
    auto bad = [](const std::vector<Tensor>& in) {
        const Tensor& x = in[0];
        auto y = x.to_vector();
        for (auto& v : y) v *= 2.0;
        return make_op_result("bad_double", x.shape(), y, {x}, [x](const TensorImpl& out) {
            auto& g = x.impl()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= 2.0 * out.grad[i];
        });
    };
    std::mt19937_64 rng(10);
    auto r = gradcheck(bad, {Tensor::randn({3}, rng)});
    EXPECT_NEAR(r.max_rel_error, 2.0, 1e-6);
    EXPECT_FALSE(r.passed(kGradTolerance));
}

TEST(Gradcheck, RejectsPerturbationOutsideRange) {
    auto f = [](const std::vector<Tensor>& in) { return sum(in[0]); };
    EXPECT_THROW(gradcheck(f, {Tensor({2}, 1.0)}, 1e-2), GradcheckError);
    EXPECT_THROW(gradcheck(f, {Tensor({2}, 1.0)}, 1e-8), GradcheckError);
}

TEST(Gradcheck, EveryPrimitiveAtTenShapes) {
    const auto cases = primitive_gradchecks(10);
    EXPECT_GE(cases.size(), 30u);
    for (const auto& c : cases)
        EXPECT_LT(c.result.max_rel_error, kGradTolerance) << c.name;
}

TEST(Ops, Conv3dIdentityKernel) {
    std::mt19937_64 rng(11);
    Tensor x = Tensor::randn({1, 3, 2, 2, 3}, rng);
    Tensor w({2, 2, 3, 3, 3}, 0.0);
    auto wd = w.mutable_data();
    // centre tap of the (c, c) kernel
    for (std::size_t c = 0; c < 2; ++c) wd[((c * 2 + c) * 3 + 1) * 9 + 4] = 1.0;
    expect_near_all(conv3d(x, w, Tensor()), x.to_vector(), 0.0);
}

TEST(Ops, LayerNormZeroMeanUnitVariance) {
    std::mt19937_64 rng(12);
    Tensor x = Tensor::randn({4, 8}, rng, 5.0);
    Tensor y = layer_norm(x, Tensor::ones({8}), Tensor::zeros({8}), 0.0);
    Tensor m = mean_axis(y, 1), v = variance_axis(y, 1);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(m[i], 0.0, 1e-12);
        EXPECT_NEAR(v[i], 1.0, 1e-12);
    }
}
