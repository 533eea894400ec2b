#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshseq/ops.hpp"
#include "meshseq/tensor.hpp"

namespace meshseq {

struct Edge {
    std::size_t a = 0;
    std::size_t b = 0;
    bool operator==(const Edge&) const = default;
};

// Symmetric: D^{-1/2}(A+I)D^{-1/2}. Row: D^{-1}(A+I).
enum class AdjacencyNorm { Symmetric, Row };

// Builds the normalized adjacency of an undirected graph. Self-loops are
// added internally and rejected in the input, as are duplicate edges
// (after ordering each pair) and out-of-range indices.
Tensor build_adjacency(const std::vector<Edge>& edges, std::size_t n_vertices,
                       AdjacencyNorm norm = AdjacencyNorm::Symmetric);

// Kinematic skeleton the toy mesh is built around; positions in millimeters,
// y up, the body facing +z, left side on +x.
struct Skeleton {
    std::vector<std::string> names;
    std::vector<int> parent;  // -1 for the root
    std::vector<std::array<double, 3>> rest;

    std::size_t size() const { return names.size(); }
    std::size_t index(const std::string& name) const;
};

Skeleton default_skeleton();

struct GraphLevel {
    std::size_t n = 0;
    std::vector<Edge> edges;
    Tensor adjacency;                      // n x n, normalized
    std::vector<std::size_t> part_labels;  // one label per vertex, contiguous
};

struct BodyGraph {
    std::vector<std::string> part_names;
    AdjacencyNorm normalization = AdjacencyNorm::Symmetric;
    GraphLevel fine;
    GraphLevel coarse;
    Tensor down_matrix;  // n_coarse x n, rows are uniform averages
    Tensor up_matrix;    // n x n_coarse, pseudo-inverse of down_matrix

    // Rest geometry of the toy mesh.
    Skeleton skeleton;
    Tensor rest_positions;               // n x 3, millimeters
    std::vector<std::size_t> vertex_joint;  // skeleton frame each vertex rides on

    std::size_t n_vertices() const { return fine.n; }
    std::size_t n_coarse() const { return coarse.n; }
    std::size_t n_parts() const { return part_names.size(); }
    // Level whose vertex count equals `rows`; throws ShapeError otherwise.
    const GraphLevel& level_for(std::size_t rows) const;
    // Half-open vertex range of `part` at the given level.
    std::pair<std::size_t, std::size_t> part_range(const GraphLevel& level, std::size_t part) const;
};

struct ToyBodyConfig {
    std::vector<std::string> parts{"head",     "torso",     "left_arm", "right_arm",
                                   "left_leg", "right_leg", "hands",    "feet"};
    std::size_t vertices_per_part = 12;
    std::size_t coarse_per_part = 3;
    AdjacencyNorm normalization = AdjacencyNorm::Symmetric;
    // Drives a small deterministic perturbation of limb proportions.
    std::uint64_t seed = 0;
};

// Procedural articulated mesh: each part is a helical tube of vertices
// around its bone chain, part vertex ranges are contiguous, and the graph is
// connected. Deterministic in (config).
BodyGraph generate_toy_body(const ToyBodyConfig& config);

struct GraphConvLayer {
    Tensor weight;  // c_in x c_out, trainable
    Activation activation = Activation::ReLU;

    static GraphConvLayer init(std::size_t c_in, std::size_t c_out, std::mt19937_64& rng,
                               Activation activation = Activation::ReLU);
};

// activation(A_hat * Y * W_G). Y is [n x c_in] or [batch x n x c_in] where
// n is either the fine or the coarse vertex count of `graph`.
Tensor graph_conv(const GraphConvLayer& layer, const BodyGraph& graph, const Tensor& y);
// Same with an explicit normalized adjacency.
Tensor graph_conv(const GraphConvLayer& layer, const Tensor& adjacency, const Tensor& y);

enum class ResampleDirection { Down, Up };

// M * Y with M the stored down (n_coarse x n) or up (n x n_coarse) matrix.
Tensor resample(const BodyGraph& graph, const Tensor& y, ResampleDirection direction);

nlohmann::json graph_to_json(const BodyGraph& graph);
// Validates shapes and that the stored adjacency matches the edge lists.
BodyGraph graph_from_json(const nlohmann::json& doc);

}  // namespace meshseq
