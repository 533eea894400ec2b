#include "meshseq/hierarchical_loss.hpp"

#include <cmath>

#include "meshseq/ops.hpp"

namespace meshseq {

void PartLabelMap::validate() const {
    if (ranges.empty()) throw ShapeError("part map has no parts");
    std::size_t next = 0;
    for (std::size_t p = 0; p < ranges.size(); ++p) {
        const auto [s, e] = ranges[p];
        if (s != next || e < s)
            throw ShapeError("part map: range " + std::to_string(p) + " = [" + std::to_string(s) +
                             ", " + std::to_string(e) + "] does not continue at " +
                             std::to_string(next));
        next = e + 1;
    }
    if (lambda.size() != ranges.size())
        throw ShapeError("part map: " + std::to_string(lambda.size()) + " weights for " +
                         std::to_string(ranges.size()) + " parts");
    for (double l : lambda)
        if (!(l >= 0.0) || !std::isfinite(l)) throw NumericError("part map: invalid weight");
}

std::size_t PartLabelMap::gate_count(std::size_t index) const {
    std::size_t count = 0;
    for (const auto& [s, e] : ranges)
        if (index >= s && index <= e) ++count;
    return count;
}

PartLabelMap part_map_from_labels(const std::vector<std::size_t>& labels) {
    PartLabelMap map;
    if (labels.empty()) throw ShapeError("part map: no labels");
    std::size_t start = 0;
    for (std::size_t i = 1; i <= labels.size(); ++i) {
        if (i < labels.size() && labels[i] == labels[start]) continue;
        if (labels[start] != map.ranges.size())
            throw ShapeError("part map: labels are not contiguous ascending ranges (label " +
                             std::to_string(labels[start]) + " at vertex " +
                             std::to_string(start) + ")");
        map.ranges.emplace_back(start, i - 1);
        start = i;
    }
    map.lambda.assign(map.ranges.size(), 1.0);
    return map;
}

PartLabelMap part_map(const BodyGraph&, const GraphLevel& level) {
    return part_map_from_labels(level.part_labels);
}

Tensor log_softmax_stable(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank())
        throw ShapeError("log_softmax_stable: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    return log_softmax(x, axis);
}

Tensor part_kl(const Tensor& y_pred, const Tensor& y_true, double floor) {
    if (y_pred.shape() != y_true.shape())
        throw ShapeError("part_kl: support mismatch " + shape_str(y_pred.shape()) + " vs " +
                         shape_str(y_true.shape()));
    const double rows = static_cast<double>(y_true.numel() / y_true.shape().back());
    double entropy_term = 0.0;
    for (double p : y_true.data())
        if (p > 0.0) entropy_term += p * std::log(p);
    const Tensor log_pred = log(clamp_min(y_pred, floor));
    const Tensor cross = sum(mul(Tensor(y_true.shape(), y_true.to_vector()), log_pred));
    return scale(add_scalar(scale(cross, -1.0), entropy_term), 1.0 / rows);
}

namespace {

std::size_t vertex_axis(const Tensor& f) {
    if (f.rank() == 2) return 0;
    if (f.rank() == 3) return 1;
    throw ShapeError("features must be [N x c] or [B x N x c], got " + shape_str(f.shape()));
}

void check_cover(const Tensor& f, const PartLabelMap& map, const char* what) {
    map.validate();
    const std::size_t n = f.dim(vertex_axis(f));
    if (n != map.n_vertices())
        throw ShapeError(std::string(what) + ": features cover " + std::to_string(n) +
                         " vertices, part map covers " + std::to_string(map.n_vertices()));
}

template <class F>
std::vector<Tensor> pool(const Tensor& features, const PartLabelMap& map, F normalize) {
    check_cover(features, map, "softmax_pool");
    const std::size_t axis = vertex_axis(features);
    const Tensor scores = row_norm(features);  // drops the channel axis
    std::vector<Tensor> out;
    out.reserve(map.m());
    for (const auto& [s, e] : map.ranges) out.push_back(normalize(slice(scores, axis, s, e + 1), axis));
    return out;
}

// KL between pooled distributions, with the true side as plain numbers.
Tensor pooled_kl(const Tensor& log_pred, const Tensor& log_true, double floor) {
    const double rows = static_cast<double>(log_true.numel() / log_true.shape().back());
    const double log_floor = std::log(floor);
    std::vector<double> p(log_true.numel());
    double entropy_term = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(log_true[i]);
        if (p[i] > 0.0) entropy_term += p[i] * log_true[i];
    }
    const Tensor cross = sum(mul(Tensor(log_true.shape(), std::move(p)), clamp_min(log_pred, log_floor)));
    return scale(add_scalar(scale(cross, -1.0), entropy_term), 1.0 / rows);
}

}  // namespace

std::vector<Tensor> softmax_pool(const Tensor& features, const PartLabelMap& map) {
    return pool(features, map, [](const Tensor& s, std::size_t axis) { return softmax(s, axis); });
}

std::vector<Tensor> log_softmax_pool(const Tensor& features, const PartLabelMap& map) {
    return pool(features, map,
                [](const Tensor& s, std::size_t axis) { return log_softmax_stable(s, axis); });
}

std::vector<double> part_weights_from_variance(const Tensor& gtm_features, const PartLabelMap& map) {
    check_cover(gtm_features, map, "part_weights_from_variance");
    const std::size_t axis = vertex_axis(gtm_features);
    const std::size_t batch = axis == 0 ? 1 : gtm_features.dim(0);
    const std::size_t n = gtm_features.dim(axis);
    const std::size_t c = gtm_features.shape().back();
    auto f = gtm_features.data();
    std::vector<double> var(map.m(), 0.0);
    double total = 0.0;
    for (std::size_t p = 0; p < map.m(); ++p) {
        const auto [s, e] = map.ranges[p];
        double mean = 0.0, count = 0.0;
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t v = s; v <= e; ++v)
                for (std::size_t k = 0; k < c; ++k) {
                    mean += f[(b * n + v) * c + k];
                    count += 1.0;
                }
        mean /= count;
        double acc = 0.0;
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t v = s; v <= e; ++v)
                for (std::size_t k = 0; k < c; ++k) {
                    const double dlt = f[(b * n + v) * c + k] - mean;
                    acc += dlt * dlt;
                }
        var[p] = acc / count;
        total += var[p];
    }
    const double m = static_cast<double>(map.m());
    if (!(total > 0.0)) return std::vector<double>(map.m(), 1.0);
    for (double& v : var) v = v * m / total;
    return var;
}

Tensor hh_loss(const Tensor& pred_features, const Tensor& true_features, const PartLabelMap& map,
               double floor) {
    if (pred_features.shape() != true_features.shape())
        throw ShapeError("hh_loss: prediction " + shape_str(pred_features.shape()) +
                         " vs truth " + shape_str(true_features.shape()));
    const auto log_pred = log_softmax_pool(pred_features, map);
    const auto log_true = log_softmax_pool(true_features.detach(), map);
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t p = 0; p < map.m(); ++p) {
        if (!map.gate(p) || map.lambda[p] == 0.0) continue;
        total = add(total, scale(pooled_kl(log_pred[p], log_true[p], floor), map.lambda[p]));
    }
    return total;
}

Tensor hh_loss(const Tensor& pred_features, const Tensor& true_features, const PartLabelMap& map,
               const Tensor& gtm_features, const PartLabelMap& gtm_map, double floor) {
    if (gtm_map.m() != map.m())
        throw ShapeError("hh_loss: GTM map has " + std::to_string(gtm_map.m()) + " parts, loss map " +
                         std::to_string(map.m()));
    PartLabelMap weighted = map;
    weighted.lambda = part_weights_from_variance(gtm_features, gtm_map);
    return hh_loss(pred_features, true_features, weighted, floor);
}

Tensor hierarchical_loss(const std::vector<LossLevel>& levels, double floor) {
    Tensor total = Tensor::scalar(0.0);
    for (const auto& level : levels) total = add(total, hh_loss(level.pred, level.truth, level.map, floor));
    return total;
}

}  // namespace meshseq
