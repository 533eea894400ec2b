#include "meshseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace meshseq {

std::vector<double> JointRegressor::apply(const std::vector<double>& vertices,
                                          std::size_t frames) const {
    if (vertices.size() != frames * n_vertices * 3)
        throw ShapeError("joint regressor: expected " + std::to_string(frames) + " x " +
                         std::to_string(n_vertices) + " x 3 values, got " +
                         std::to_string(vertices.size()));
    const std::size_t J = n_joints();
    std::vector<double> out(frames * J * 3, 0.0);
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t j = 0; j < J; ++j)
            for (const auto& [v, w] : rows[j])
                for (std::size_t c = 0; c < 3; ++c)
                    out[(f * J + j) * 3 + c] += w * vertices[(f * n_vertices + v) * 3 + c];
    return out;
}

JointRegressor make_joint_regressor(const BodyGraph& graph) {
    struct JointSpec {
        const char* name;
        const char* skeleton_joint;
        std::vector<const char*> parts;
    };
    static const std::vector<JointSpec> specs{
        {"r_ankle", "r_ankle", {"right_leg", "feet"}},
        {"r_knee", "r_knee", {"right_leg"}},
        {"r_hip", "r_hip", {"right_leg", "torso"}},
        {"l_hip", "l_hip", {"left_leg", "torso"}},
        {"l_knee", "l_knee", {"left_leg"}},
        {"l_ankle", "l_ankle", {"left_leg", "feet"}},
        {"r_wrist", "r_wrist", {"right_arm", "hands"}},
        {"r_elbow", "r_elbow", {"right_arm"}},
        {"r_shoulder", "r_shoulder", {"right_arm", "torso"}},
        {"l_shoulder", "l_shoulder", {"left_arm", "torso"}},
        {"l_elbow", "l_elbow", {"left_arm"}},
        {"l_wrist", "l_wrist", {"left_arm", "hands"}},
        {"neck", "neck", {"torso", "head"}},
        {"head_top", "head_top", {"head"}},
    };
    const std::size_t n = graph.n_vertices();
    auto rest = graph.rest_positions.data();
    JointRegressor reg;
    reg.n_vertices = n;
    for (const auto& spec : specs) {
        std::set<std::size_t> allowed;
        for (const char* p : spec.parts) {
            auto it = std::find(graph.part_names.begin(), graph.part_names.end(), p);
            if (it != graph.part_names.end())
                allowed.insert(static_cast<std::size_t>(it - graph.part_names.begin()));
        }
        // Reduced bodies fall back to all vertices.
        const auto j = graph.skeleton.rest[graph.skeleton.index(spec.skeleton_joint)];
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t v = 0; v < n; ++v) {
            if (!allowed.empty() && !allowed.count(graph.fine.part_labels[v])) continue;
            double d = 0.0;
            for (std::size_t c = 0; c < 3; ++c) d += std::pow(rest[v * 3 + c] - j[c], 2);
            cand.emplace_back(d, v);
        }
        std::sort(cand.begin(), cand.end());
        const std::size_t k = std::min<std::size_t>(4, cand.size());
        std::vector<std::pair<std::size_t, double>> row;
        for (std::size_t i = 0; i < k; ++i) row.emplace_back(cand[i].second, 1.0 / static_cast<double>(k));
        std::sort(row.begin(), row.end());
        reg.joint_names.push_back(spec.name);
        reg.rows.push_back(std::move(row));
    }
    reg.root_joints = {2, 3};
    return reg;
}

SimilarityTransform procrustes_align(const Points& P, const Points& Q, bool with_scale) {
    if (P.rows() != Q.rows())
        throw ShapeError("procrustes_align: " + std::to_string(P.rows()) + " vs " +
                         std::to_string(Q.rows()) + " points");
    if (P.rows() < 3) throw ShapeError("procrustes_align: need at least 3 points");
    if (!P.allFinite() || !Q.allFinite()) throw NumericError("procrustes_align: non-finite input");
    const Eigen::RowVector3d mp = P.colwise().mean(), mq = Q.colwise().mean();
    const Points Pc = P.rowwise() - mp, Qc = Q.rowwise() - mq;
    const double norm_p = Pc.squaredNorm();
    Eigen::JacobiSVD<Eigen::MatrixXd> shape_svd(Pc);
    const auto sv = shape_svd.singularValues();
    if (!(norm_p > 0.0) || sv(1) <= 1e-9 * sv(0))
        throw AlignmentError("procrustes_align: source points are degenerate (rank < 2, "
                             "singular values " + std::to_string(sv(0)) + ", " +
                             std::to_string(sv(1)) + ")");
    const Eigen::Matrix3d H = Pc.transpose() * Qc;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
    Eigen::Vector3d d(1.0, 1.0, (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
    SimilarityTransform out;
    out.rotation = V * d.asDiagonal() * U.transpose();
    out.scale = with_scale ? svd.singularValues().dot(d) / norm_p : 1.0;
    out.translation = mq.transpose() - out.scale * out.rotation * mp.transpose();
    const Points aligned =
        ((out.scale * out.rotation * P.transpose()).colwise() + out.translation).transpose();
    out.residual = (aligned - Q).squaredNorm();
    return out;
}

namespace {

Points frame_points(const std::vector<double>& v, std::size_t frame, std::size_t k) {
    Points p(static_cast<Eigen::Index>(k), 3);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v[(frame * k + i) * 3 + c];
    return p;
}

double mean_row_distance(const Points& a, const Points& b) {
    return (a - b).rowwise().norm().mean();
}

}  // namespace

PoseError compute_metrics(const std::vector<double>& pred, const std::vector<double>& gt,
                          std::size_t frames, const JointRegressor& regressor,
                          const MetricOptions& options) {
    const std::size_t n = regressor.n_vertices;
    if (frames == 0 || pred.size() != gt.size() || pred.size() != frames * n * 3)
        throw ShapeError("compute_metrics: prediction has " + std::to_string(pred.size()) +
                         " values, truth " + std::to_string(gt.size()) + ", expected " +
                         std::to_string(frames * n * 3));
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (!std::isfinite(pred[i]) || !std::isfinite(gt[i]))
            throw NumericError("compute_metrics: non-finite coordinate at index " + std::to_string(i));

    const auto pj = regressor.apply(pred, frames), gj = regressor.apply(gt, frames);
    const std::size_t J = regressor.n_joints();
    PoseError e;
    for (std::size_t f = 0; f < frames; ++f) {
        e.mpvpe += mean_row_distance(frame_points(pred, f, n), frame_points(gt, f, n));
        const Points P = frame_points(pj, f, J), G = frame_points(gj, f, J);
        Eigen::RowVector3d rp = Eigen::RowVector3d::Zero(), rg = Eigen::RowVector3d::Zero();
        for (auto r : regressor.root_joints) {
            rp += P.row(static_cast<Eigen::Index>(r));
            rg += G.row(static_cast<Eigen::Index>(r));
        }
        const double nr = static_cast<double>(regressor.root_joints.size());
        e.mpjpe += mean_row_distance(P.rowwise() - rp / nr, G.rowwise() - rg / nr);
        const SimilarityTransform s = procrustes_align(P, G, options.pa_with_scale);
        const Points aligned = ((s.scale * s.rotation * P.transpose()).colwise() + s.translation).transpose();
        e.pa_mpjpe += mean_row_distance(aligned, G);
    }
    const double F = static_cast<double>(frames);
    e.mpvpe /= F;
    e.mpjpe /= F;
    e.pa_mpjpe /= F;
    return e;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
    out << "sequence_id,mpvpe_mm,mpjpe_mm,pa_mpjpe_mm\n";
    out << std::setprecision(17);
    for (const auto& r : rows)
        out << r.sequence_id << ',' << r.error.mpvpe << ',' << r.error.mpjpe << ','
            << r.error.pa_mpjpe << '\n';
}

std::vector<MetricRow> read_metrics_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "sequence_id,mpvpe_mm,mpjpe_mm,pa_mpjpe_mm")
        throw FormatError("metrics CSV: missing or unexpected header");
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, a, b, c;
        if (!std::getline(ss, id, ',') || !std::getline(ss, a, ',') || !std::getline(ss, b, ',') ||
            !std::getline(ss, c))
            throw FormatError("metrics CSV: malformed row '" + line + "'");
        rows.push_back({id, {std::stod(a), std::stod(b), std::stod(c)}});
    }
    return rows;
}

}  // namespace meshseq
