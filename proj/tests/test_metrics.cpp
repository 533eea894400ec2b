#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "meshseq/body_graph.hpp"
#include "meshseq/metrics.hpp"
#include "meshseq/synth.hpp"

using namespace meshseq;

namespace {

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized().toRotationMatrix();
}

Points random_points(std::size_t k, std::mt19937_64& rng, double spread = 100.0) {
    std::normal_distribution<double> n(0.0, spread);
    Points P(k, 3);
    for (std::size_t i = 0; i < k; ++i)
        for (int c = 0; c < 3; ++c) P(i, c) = n(rng);
    return P;
}

// Best residual for a fixed rotation, scale >= 0 and translation free.
double residual_for(const Eigen::Matrix3d& R, const Points& P, const Points& Q) {
    const Points Pc = P.rowwise() - P.colwise().mean();
    const Points Qc = Q.rowwise() - Q.colwise().mean();
    const double inner = ((Pc * R.transpose()).array() * Qc.array()).sum();
    return Qc.squaredNorm() - std::pow(std::max(0.0, inner), 2) / Pc.squaredNorm();
}

// Random search over rotations followed by shrinking local perturbations.
double search_residual(const Points& P, const Points& Q, std::mt19937_64& rng, std::size_t samples,
                       double* coarse = nullptr) {
    Eigen::Matrix3d best = Eigen::Matrix3d::Identity();
    double best_r = residual_for(best, P, Q);
    for (std::size_t i = 0; i < samples; ++i) {
        Eigen::Matrix3d R = random_rotation(rng);
        const double r = residual_for(R, P, Q);
        if (r < best_r) best_r = r, best = R;
    }
    if (coarse) *coarse = best_r;
    std::normal_distribution<double> n(0.0, 1.0);
    for (double step = 0.2; step > 1e-9; step *= 0.7)
        for (int k = 0; k < 60; ++k) {
            Eigen::Vector3d axis(n(rng), n(rng), n(rng));
            Eigen::Matrix3d R = Eigen::AngleAxisd(step * n(rng), axis.normalized()).toRotationMatrix() * best;
            const double r = residual_for(R, P, Q);
            if (r < best_r) best_r = r, best = R;
        }
    return best_r;
}

std::vector<double> to_flat(const Points& P) {
    std::vector<double> v(P.rows() * 3);
    for (Eigen::Index i = 0; i < P.rows(); ++i)
        for (int c = 0; c < 3; ++c) v[i * 3 + c] = P(i, c);
    return v;
}

// Applies x -> s R x + t to every point of a T x n x 3 buffer.
std::vector<double> transform(const std::vector<double>& v, double s, const Eigen::Matrix3d& R,
                              const Eigen::Vector3d& t) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); i += 3) {
        Eigen::Vector3d p(v[i], v[i + 1], v[i + 2]);
        Eigen::Vector3d q = s * R * p + t;
        for (int c = 0; c < 3; ++c) out[i + c] = q[c];
    }
    return out;
}

struct Fixture {
    BodyGraph graph = generate_toy_body({});
    JointRegressor reg = make_joint_regressor(graph);
    MotionSequence seq = generate_sequence(graph, SynthConfig{}, 7);
};

}  // namespace

TEST(Procrustes, IdentityWhenEqual) {
    std::mt19937_64 rng(1);
    Points P = random_points(6, rng);
    auto tr = procrustes_align(P, P);
    EXPECT_NEAR(tr.scale, 1.0, 1e-12);
    EXPECT_TRUE(tr.rotation.isApprox(Eigen::Matrix3d::Identity(), 1e-12));
    EXPECT_LT(tr.translation.norm(), 1e-9);
    EXPECT_LT(tr.residual, 1e-18);
}

TEST(Procrustes, RecoversKnownSimilarity) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        Points P = random_points(8, rng);
        Eigen::Matrix3d R0 = random_rotation(rng);
        Eigen::Vector3d t0(10, -20, 35);
        Points Q = ((2.0 * P * R0.transpose()).rowwise() + t0.transpose());
        auto tr = procrustes_align(P, Q);
        EXPECT_NEAR(tr.scale, 2.0, 1e-12);
        EXPECT_TRUE(tr.rotation.isApprox(R0, 1e-12));
        EXPECT_LT((tr.translation - t0).norm(), 1e-9);
        EXPECT_LT(tr.residual, 1e-9);
        EXPECT_NEAR(tr.rotation.determinant(), 1.0, 1e-12);
    }
}

TEST(Procrustes, ReflectionIsNotAllowed) {
    std::mt19937_64 rng(3);
    Points P = random_points(5, rng);
    Points Q = P;
    Q.col(0) *= -1.0;
    auto tr = procrustes_align(P, Q);
    EXPECT_NEAR(tr.rotation.determinant(), 1.0, 1e-12);
    EXPECT_GT(tr.residual, 1.0);
    const double searched = search_residual(P, Q, rng, 10000);
    EXPECT_LE(tr.residual, searched + 1e-9);
    EXPECT_NEAR(tr.residual, searched, 1e-6 * Q.squaredNorm());
}

TEST(Procrustes, MatchesRotationSearchOnFivePointClouds) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        Points P = random_points(5, rng);
        Points Q = random_points(5, rng);
        auto tr = procrustes_align(P, Q);
        double coarse = 0.0;
        const double refined = search_residual(P, Q, rng, 10000, &coarse);
        // the sampled optimum can never beat the closed form
        EXPECT_LE(tr.residual, coarse + 1e-9);
        EXPECT_NEAR(tr.residual, refined, 1e-7 * Q.squaredNorm());
        // the residual reported equals the residual of the returned transform
        const Points fitted = ((tr.scale * P * tr.rotation.transpose()).rowwise() + tr.translation.transpose());
        EXPECT_NEAR((fitted - Q).squaredNorm(), tr.residual, 1e-9 * Q.squaredNorm());
    }
}

TEST(Procrustes, DegenerateInputThrows) {
    Points P(4, 3);
    P.setZero();
    Points Q = Points::Random(4, 3);
    EXPECT_THROW(procrustes_align(P, Q), AlignmentError);
    Points line(4, 3);
    for (int i = 0; i < 4; ++i) line.row(i) << i, 2 * i, 3 * i;
    EXPECT_THROW(procrustes_align(line, Q), AlignmentError);
    EXPECT_THROW(procrustes_align(Points::Random(2, 3), Points::Random(2, 3)), ShapeError);
}

TEST(JointRegressorTest, RowsAreConvex) {
    Fixture f;
    EXPECT_EQ(f.reg.n_joints(), 14u);
    for (const auto& row : f.reg.rows) {
        double s = 0.0;
        for (auto [v, w] : row) {
            EXPECT_LT(v, f.graph.n_vertices());
            EXPECT_GE(w, 0.0);
            s += w;
        }
        EXPECT_NEAR(s, 1.0, 1e-15);
    }
}

TEST(Metrics, IdentityIsZero) {
    Fixture f;
    auto e = compute_metrics(f.seq.gt_vertices, f.seq.gt_vertices, f.seq.frames, f.reg);
    EXPECT_EQ(e.mpvpe, 0.0);
    EXPECT_EQ(e.mpjpe, 0.0);
    EXPECT_NEAR(e.pa_mpjpe, 0.0, 1e-9);
}

TEST(Metrics, ConstantOffset) {
    Fixture f;
    auto pred = transform(f.seq.gt_vertices, 1.0, Eigen::Matrix3d::Identity(), {6, 0, 8});
    auto e = compute_metrics(pred, f.seq.gt_vertices, f.seq.frames, f.reg);
    EXPECT_NEAR(e.mpvpe, 10.0, 1e-9);
    EXPECT_NEAR(e.mpjpe, 0.0, 1e-9);
    EXPECT_NEAR(e.pa_mpjpe, 0.0, 1e-9);
}

TEST(Metrics, VerticalRotation) {
    Fixture f;
    // per-frame rotation about the vertical axis through the origin
    Eigen::Matrix3d R = Eigen::AngleAxisd(M_PI / 6.0, Eigen::Vector3d::UnitY()).toRotationMatrix();
    auto pred = transform(f.seq.gt_vertices, 1.0, R, Eigen::Vector3d::Zero());
    auto e = compute_metrics(pred, f.seq.gt_vertices, f.seq.frames, f.reg);
    EXPECT_NEAR(e.pa_mpjpe, 0.0, 1e-9);
    EXPECT_GT(e.mpjpe, 1.0);
    EXPECT_GT(e.mpvpe, 1.0);
}

TEST(Metrics, PaMpjpeInvariantUnderSimilarity) {
    Fixture f;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 15.0);
    auto pred = f.seq.gt_vertices;
    for (auto& v : pred) v += n(rng);
    const double base = compute_metrics(pred, f.seq.gt_vertices, f.seq.frames, f.reg).pa_mpjpe;
    std::uniform_real_distribution<double> sc(0.5, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        auto moved = transform(pred, sc(rng), random_rotation(rng), {n(rng) * 10, n(rng) * 10, n(rng) * 10});
        EXPECT_NEAR(compute_metrics(moved, f.seq.gt_vertices, f.seq.frames, f.reg).pa_mpjpe, base, 1e-9);
    }
}

TEST(Metrics, MpjpeTranslationInvariantNotRotationInvariant) {
    Fixture f;
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 10.0);
    auto pred = f.seq.gt_vertices;
    for (auto& v : pred) v += n(rng);
    const double base = compute_metrics(pred, f.seq.gt_vertices, f.seq.frames, f.reg).mpjpe;
    auto shifted = transform(pred, 1.0, Eigen::Matrix3d::Identity(), {120, -40, 7});
    EXPECT_NEAR(compute_metrics(shifted, f.seq.gt_vertices, f.seq.frames, f.reg).mpjpe, base, 1e-9);
    auto rotated = transform(pred, 1.0, random_rotation(rng), Eigen::Vector3d::Zero());
    EXPECT_GT(std::abs(compute_metrics(rotated, f.seq.gt_vertices, f.seq.frames, f.reg).mpjpe - base), 1.0);
}

Points joint_points(const std::vector<double>& joints) {
    Points P(joints.size() / 3, 3);
    for (Eigen::Index i = 0; i < P.rows(); ++i)
        for (int c = 0; c < 3; ++c) P(i, c) = joints[i * 3 + c];
    return P;
}

// Procrustes minimizes the summed squared joint error over similarities, and
// root alignment is one of them, so only the squared version is ordered.
TEST(Metrics, AlignedSquaredErrorNeverExceedsRootAligned) {
    Fixture f;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> amp(0.1, 80.0);
    std::vector<double> gt(f.seq.gt_vertices.begin(), f.seq.gt_vertices.begin() + f.graph.n_vertices() * 3);
    const Points Q = joint_points(f.reg.apply(gt, 1));
    Eigen::RowVector3d q_root = Eigen::RowVector3d::Zero();
    for (auto j : f.reg.root_joints) q_root += Q.row(j) / f.reg.root_joints.size();
    for (int trial = 0; trial < 1000; ++trial) {
        std::normal_distribution<double> n(0.0, amp(rng));
        auto pred = gt;
        for (auto& v : pred) v += n(rng);
        const Points P = joint_points(f.reg.apply(pred, 1));
        Eigen::RowVector3d p_root = Eigen::RowVector3d::Zero();
        for (auto j : f.reg.root_joints) p_root += P.row(j) / f.reg.root_joints.size();
        const double root_sq = ((P.rowwise() + (q_root - p_root)) - Q).squaredNorm();
        EXPECT_LE(procrustes_align(P, Q).residual, root_sq * (1.0 + 1e-12));
        auto e = compute_metrics(pred, gt, 1, f.reg);
        EXPECT_GE(e.pa_mpjpe, 0.0);
        EXPECT_GE(e.mpvpe, 0.0);
    }
}

// The mean of per-joint norms is not ordered the same way.
TEST(Metrics, MeanNormOrderingHasCounterexamples) {
    Fixture f;
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> amp(0.1, 80.0);
    std::vector<double> gt(f.seq.gt_vertices.begin(), f.seq.gt_vertices.begin() + f.graph.n_vertices() * 3);
    std::size_t violations = 0;
    for (int trial = 0; trial < 20000; ++trial) {
        std::normal_distribution<double> n(0.0, amp(rng));
        auto pred = gt;
        for (auto& v : pred) v += n(rng);
        auto e = compute_metrics(pred, gt, 1, f.reg);
        if (e.pa_mpjpe > e.mpjpe + 1e-9) ++violations;
    }
    EXPECT_GT(violations, 0u);
    EXPECT_LT(violations, 100u);
}

TEST(Metrics, RejectsBadInput) {
    Fixture f;
    auto bad = f.seq.gt_vertices;
    bad[5] = std::nan("");
    EXPECT_THROW(compute_metrics(bad, f.seq.gt_vertices, f.seq.frames, f.reg), NumericError);
    bad.pop_back();
    EXPECT_THROW(compute_metrics(bad, f.seq.gt_vertices, f.seq.frames, f.reg), ShapeError);
}

TEST(MetricsCsv, RoundTrip) {
    std::vector<MetricRow> rows{{"seq_0000", {12.5, 10.25, 7.125}}, {"seq_0001", {1.0 / 3.0, 2.0, 0.1}}};
    std::stringstream ss;
    write_metrics_csv(ss, rows);
    EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "sequence_id,mpvpe_mm,mpjpe_mm,pa_mpjpe_mm");
    auto back = read_metrics_csv(ss);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].sequence_id, "seq_0001");
    EXPECT_EQ(back[1].error.mpvpe, 1.0 / 3.0);
    EXPECT_EQ(back[0].error.pa_mpjpe, 7.125);
    std::stringstream broken("id,a,b\n");
    EXPECT_THROW(read_metrics_csv(broken), FormatError);
}
