#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "meshseq/body_graph.hpp"

namespace meshseq {

class AlignmentError : public NumericError {
public:
    using NumericError::NumericError;
};

// Sparse joints x vertices map; every row is a convex combination.
struct JointRegressor {
    std::vector<std::string> joint_names;
    std::vector<std::vector<std::pair<std::size_t, double>>> rows;
    std::size_t n_vertices = 0;
    // Joints whose midpoint is the root for MPJPE.
    std::vector<std::size_t> root_joints;

    std::size_t n_joints() const { return rows.size(); }
    // [k x n] * [n x 3] for k frames stacked row-major: vertices is T x n x 3.
    std::vector<double> apply(const std::vector<double>& vertices, std::size_t frames) const;
};

// 14 joints (ankles, knees, hips, wrists, elbows, shoulders, neck, head top),
// each the uniform average of the up-to-4 rest vertices nearest the joint
// among the parts whose bone chains touch it. Root: midpoint of the hips.
JointRegressor make_joint_regressor(const BodyGraph& graph);

struct SimilarityTransform {
    double scale = 1.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double residual = 0.0;  // sum of squared distances after alignment
};

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

// Minimizes ||s R p_i + t - q_i||^2 with det(R) = +1. with_scale = false
// fixes s = 1. Throws AlignmentError when centered P has rank < 2.
SimilarityTransform procrustes_align(const Points& P, const Points& Q, bool with_scale = true);

struct PoseError {
    double mpvpe = 0.0;
    double mpjpe = 0.0;
    double pa_mpjpe = 0.0;
};

struct MetricOptions {
    bool pa_with_scale = true;
};

// pred and gt are T x n x 3 in millimeters. Means over frames of the
// per-frame vertex error, root-aligned joint error and Procrustes-aligned
// joint error.
PoseError compute_metrics(const std::vector<double>& pred, const std::vector<double>& gt,
                          std::size_t frames, const JointRegressor& regressor,
                          const MetricOptions& options = {});

struct MetricRow {
    std::string sequence_id;
    PoseError error;
};

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(std::istream& in);

}  // namespace meshseq
