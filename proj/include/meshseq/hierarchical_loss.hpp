#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "meshseq/body_graph.hpp"
#include "meshseq/tensor.hpp"

namespace meshseq {

// Ordered part labels with inclusive vertex ranges [s_l, e_l] and weights.
struct PartLabelMap {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    std::vector<double> lambda;  // one per part, defaults to 1

    std::size_t m() const { return ranges.size(); }
    std::size_t n_vertices() const { return ranges.empty() ? 0 : ranges.back().second + 1; }
    std::size_t size(std::size_t part) const { return ranges[part].second - ranges[part].first + 1; }

    // Throws unless the ranges are sorted, disjoint and cover [0, n) exactly
    // and lambda holds m nonnegative weights.
    void validate() const;
    // Number of ranges l with s_l <= index <= e_l.
    std::size_t gate_count(std::size_t index) const;
    // Gate of part p, evaluated at its first vertex.
    bool gate(std::size_t part) const { return gate_count(ranges[part].first) > 0; }
};

// Built from contiguous per-vertex labels; throws if a label reappears
// after its range has closed.
PartLabelMap part_map_from_labels(const std::vector<std::size_t>& labels);
PartLabelMap part_map(const BodyGraph& graph, const GraphLevel& level);

// (x - c) - log(sum exp(x - c)) with c the max along `axis`.
Tensor log_softmax_stable(const Tensor& x, std::size_t axis);

constexpr double kProbabilityFloor = 1e-12;

// sum_i p_true_i (log p_true_i - log max(p_pred_i, floor)) over the last
// axis, averaged over any leading axes. Returns shape [1]; differentiable in
// y_pred. Terms with p_true_i == 0 contribute 0.
Tensor part_kl(const Tensor& y_pred, const Tensor& y_true, double floor = kProbabilityFloor);

// Per part, the softmax over that part's vertices of the row L2 norm of
// each vertex feature. features: [N x c] or [B x N x c]; output part p is
// [size_p] or [B x size_p].
std::vector<Tensor> softmax_pool(const Tensor& features, const PartLabelMap& map);
// Same, returning log-probabilities.
std::vector<Tensor> log_softmax_pool(const Tensor& features, const PartLabelMap& map);

// Per-part variance of the features (all entries of the part's rows, rows on
// the vertex axis), rescaled to sum to m. Plain numbers: no gradient flows.
// An all-zero variance falls back to uniform weights of 1.
std::vector<double> part_weights_from_variance(const Tensor& gtm_features, const PartLabelMap& map);

// sum_p lambda_p * KL_p * gate(p) with both inputs pooled by softmax_pool.
// true_features is treated as a constant.
Tensor hh_loss(const Tensor& pred_features, const Tensor& true_features, const PartLabelMap& map,
               double floor = kProbabilityFloor);
// Weights taken from gtm_features (on gtm_map's vertex rows) instead of map.lambda.
Tensor hh_loss(const Tensor& pred_features, const Tensor& true_features, const PartLabelMap& map,
               const Tensor& gtm_features, const PartLabelMap& gtm_map,
               double floor = kProbabilityFloor);

struct LossLevel {
    Tensor pred;
    Tensor truth;
    PartLabelMap map;
};

// Sum of hh_loss over resolution levels.
Tensor hierarchical_loss(const std::vector<LossLevel>& levels, double floor = kProbabilityFloor);

}  // namespace meshseq
