#include "meshseq/body_graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <queue>
#include <set>

#include <Eigen/Dense>

namespace meshseq {

using Vec3 = Eigen::Vector3d;

Tensor build_adjacency(const std::vector<Edge>& edges, std::size_t n_vertices, AdjacencyNorm norm) {
    if (n_vertices == 0) throw ShapeError("build_adjacency: graph has no vertices");
    std::set<std::pair<std::size_t, std::size_t>> seen;
    std::vector<double> a(n_vertices * n_vertices, 0.0);
    for (const auto& e : edges) {
        if (e.a >= n_vertices || e.b >= n_vertices)
            throw ShapeError("build_adjacency: edge (" + std::to_string(e.a) + ", " +
                             std::to_string(e.b) + ") out of range for " +
                             std::to_string(n_vertices) + " vertices");
        if (e.a == e.b)
            throw ShapeError("build_adjacency: self-loop at vertex " + std::to_string(e.a));
        if (!seen.emplace(std::min(e.a, e.b), std::max(e.a, e.b)).second)
            throw ShapeError("build_adjacency: duplicate edge (" + std::to_string(e.a) + ", " +
                             std::to_string(e.b) + ")");
        a[e.a * n_vertices + e.b] = 1.0;
        a[e.b * n_vertices + e.a] = 1.0;
    }
    std::vector<double> degree(n_vertices, 1.0);
    for (std::size_t i = 0; i < n_vertices; ++i) {
        a[i * n_vertices + i] = 1.0;
        for (std::size_t j = 0; j < n_vertices; ++j)
            if (j != i) degree[i] += a[i * n_vertices + j];
    }
    for (std::size_t i = 0; i < n_vertices; ++i)
        for (std::size_t j = 0; j < n_vertices; ++j) {
            double& v = a[i * n_vertices + j];
            if (v == 0.0) continue;
            v = norm == AdjacencyNorm::Symmetric ? v / std::sqrt(degree[i] * degree[j])
                                                 : v / degree[i];
        }
    return Tensor({n_vertices, n_vertices}, std::move(a));
}

std::size_t Skeleton::index(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ConfigError("skeleton has no joint '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
}

Skeleton default_skeleton() {
    Skeleton s;
    auto add = [&](std::string name, int parent, double x, double y, double z) {
        s.names.push_back(std::move(name));
        s.parent.push_back(parent);
        s.rest.push_back({x, y, z});
    };
    add("pelvis", -1, 0, 950, 0);
    add("spine", 0, 0, 1200, 0);
    add("neck", 1, 0, 1450, 0);
    add("head_top", 2, 0, 1700, 10);
    add("l_shoulder", 1, 180, 1420, 0);
    add("l_elbow", 4, 230, 1140, -10);
    add("l_wrist", 5, 260, 880, 10);
    add("l_hand_tip", 6, 270, 700, 20);
    add("r_shoulder", 1, -180, 1420, 0);
    add("r_elbow", 8, -230, 1140, -10);
    add("r_wrist", 9, -260, 880, 10);
    add("r_hand_tip", 10, -270, 700, 20);
    add("l_hip", 0, 100, 930, 0);
    add("l_knee", 12, 110, 500, 15);
    add("l_ankle", 13, 115, 80, -10);
    add("l_toe", 14, 120, 20, 150);
    add("r_hip", 0, -100, 930, 0);
    add("r_knee", 16, -110, 500, 15);
    add("r_ankle", 17, -115, 80, -10);
    add("r_toe", 18, -120, 20, 150);
    return s;
}

const GraphLevel& BodyGraph::level_for(std::size_t rows) const {
    if (rows == fine.n) return fine;
    if (rows == coarse.n) return coarse;
    throw ShapeError("graph has " + std::to_string(fine.n) + " fine and " +
                     std::to_string(coarse.n) + " coarse vertices, got " + std::to_string(rows) +
                     " rows");
}

std::pair<std::size_t, std::size_t> BodyGraph::part_range(const GraphLevel& level,
                                                          std::size_t part) const {
    auto first = std::find(level.part_labels.begin(), level.part_labels.end(), part);
    if (first == level.part_labels.end())
        throw ShapeError("part " + std::to_string(part) + " has no vertices");
    auto last = std::find_if(first, level.part_labels.end(), [&](auto l) { return l != part; });
    return {static_cast<std::size_t>(first - level.part_labels.begin()),
            static_cast<std::size_t>(last - level.part_labels.begin())};
}

namespace {

struct PartSpec {
    std::string name;
    double radius;
    std::vector<std::vector<std::string>> chains;
};

const std::vector<PartSpec>& part_catalog() {
    static const std::vector<PartSpec> catalog{
        {"head", 85.0, {{"neck", "head_top"}}},
        {"torso", 130.0, {{"pelvis", "spine", "neck"}}},
        {"left_arm", 45.0, {{"l_shoulder", "l_elbow", "l_wrist"}}},
        {"right_arm", 45.0, {{"r_shoulder", "r_elbow", "r_wrist"}}},
        {"left_leg", 65.0, {{"l_hip", "l_knee", "l_ankle"}}},
        {"right_leg", 65.0, {{"r_hip", "r_knee", "r_ankle"}}},
        {"hands", 35.0, {{"l_wrist", "l_hand_tip"}, {"r_wrist", "r_hand_tip"}}},
        {"feet", 40.0, {{"l_ankle", "l_toe"}, {"r_ankle", "r_toe"}}},
    };
    return catalog;
}

const std::vector<std::pair<std::string, std::string>>& anatomical_links() {
    static const std::vector<std::pair<std::string, std::string>> links{
        {"head", "torso"},         {"torso", "left_arm"},  {"torso", "right_arm"},
        {"torso", "left_leg"},     {"torso", "right_leg"}, {"left_arm", "hands"},
        {"right_arm", "hands"},    {"left_leg", "feet"},   {"right_leg", "feet"},
    };
    return links;
}

Vec3 to_vec(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

std::vector<Edge> canonical_edges(const std::set<std::pair<std::size_t, std::size_t>>& s) {
    std::vector<Edge> out;
    out.reserve(s.size());
    for (auto [a, b] : s) out.push_back({a, b});
    return out;
}

std::vector<std::size_t> components(std::size_t n,
                                    const std::set<std::pair<std::size_t, std::size_t>>& edges) {
    std::vector<std::vector<std::size_t>> adj(n);
    for (auto [a, b] : edges) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    std::vector<std::size_t> comp(n, n);
    std::size_t next = 0;
    for (std::size_t s = 0; s < n; ++s) {
        if (comp[s] != n) continue;
        std::queue<std::size_t> q;
        q.push(s);
        comp[s] = next;
        while (!q.empty()) {
            auto v = q.front();
            q.pop();
            for (auto w : adj[v])
                if (comp[w] == n) {
                    comp[w] = next;
                    q.push(w);
                }
        }
        ++next;
    }
    return comp;
}

}  // namespace

BodyGraph generate_toy_body(const ToyBodyConfig& config) {
    if (config.parts.size() < 2) throw ConfigError("toy body needs at least 2 parts");
    if (config.vertices_per_part < 2) throw ConfigError("toy body needs at least 2 vertices per part");
    if (config.coarse_per_part < 1 || config.coarse_per_part > config.vertices_per_part)
        throw ConfigError("coarse_per_part must lie in [1, vertices_per_part]");

    BodyGraph g;
    g.normalization = config.normalization;
    g.skeleton = default_skeleton();
    auto& sk = g.skeleton;

    // Proportion jitter: scale every bone offset by a factor near 1.
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> jitter(-0.04, 0.04);
    std::vector<Vec3> rest(sk.size());
    for (std::size_t j = 0; j < sk.size(); ++j) {
        if (sk.parent[j] < 0) {
            rest[j] = to_vec(sk.rest[j]);
            continue;
        }
        const auto p = static_cast<std::size_t>(sk.parent[j]);
        const Vec3 offset = to_vec(sk.rest[j]) - to_vec(sk.rest[p]);
        rest[j] = rest[p] + (1.0 + jitter(rng)) * offset;
    }
    for (std::size_t j = 0; j < sk.size(); ++j) sk.rest[j] = {rest[j].x(), rest[j].y(), rest[j].z()};

    const std::size_t k = config.vertices_per_part;
    const std::size_t n = config.parts.size() * k;
    std::vector<Vec3> pos(n);
    g.vertex_joint.assign(n, 0);
    g.fine.n = n;
    g.fine.part_labels.resize(n);
    std::set<std::pair<std::size_t, std::size_t>> edges;
    auto link = [&](std::size_t a, std::size_t b) {
        if (a != b) edges.emplace(std::min(a, b), std::max(a, b));
    };

    std::set<std::string> used;
    for (std::size_t p = 0; p < config.parts.size(); ++p) {
        const auto& name = config.parts[p];
        auto spec = std::find_if(part_catalog().begin(), part_catalog().end(),
                                 [&](const PartSpec& s) { return s.name == name; });
        if (spec == part_catalog().end()) throw ConfigError("unknown body part '" + name + "'");
        if (!used.insert(name).second) throw ConfigError("body part '" + name + "' listed twice");
        g.part_names.push_back(name);

        const std::size_t base = p * k;
        const std::size_t n_chains = spec->chains.size();
        std::size_t offset = 0;
        for (std::size_t c = 0; c < n_chains; ++c) {
            const std::size_t m = k / n_chains + (c < k % n_chains ? 1 : 0);
            const auto& chain = spec->chains[c];
            std::vector<double> cum{0.0};
            for (std::size_t s = 0; s + 1 < chain.size(); ++s)
                cum.push_back(cum.back() +
                              (rest[sk.index(chain[s + 1])] - rest[sk.index(chain[s])]).norm());
            const std::size_t ring = std::min<std::size_t>(4, m);
            for (std::size_t i = 0; i < m; ++i) {
                const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(m) * cum.back();
                std::size_t s = 0;
                while (s + 2 < chain.size() && u > cum[s + 1]) ++s;
                const Vec3 a = rest[sk.index(chain[s])];
                const Vec3 b = rest[sk.index(chain[s + 1])];
                const Vec3 d = (b - a).normalized();
                const Vec3 axis_point = a + (u - cum[s]) / (cum[s + 1] - cum[s]) * (b - a);
                Vec3 e1 = d.cross(Vec3::UnitZ());
                if (e1.norm() < 0.3) e1 = d.cross(Vec3::UnitX());
                e1.normalize();
                const Vec3 e2 = d.cross(e1);
                const double theta = 2.0 * std::numbers::pi * static_cast<double>(i % ring) /
                                         static_cast<double>(ring) +
                                     0.25 * std::numbers::pi * static_cast<double>(i / ring);
                const std::size_t v = base + offset + i;
                pos[v] = axis_point + spec->radius * (std::cos(theta) * e1 + std::sin(theta) * e2);
                g.vertex_joint[v] = sk.index(chain[s]);
                g.fine.part_labels[v] = p;
                if (i + 1 < m) link(v, v + 1);
                if (i + ring < m) link(v, v + ring);
            }
            offset += m;
        }
    }

    auto nearest_pair = [&](auto&& in_a, auto&& in_b) {
        double best = std::numeric_limits<double>::infinity();
        std::pair<std::size_t, std::size_t> pair{0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            if (!in_a(i)) continue;
            for (std::size_t j = 0; j < n; ++j) {
                if (!in_b(j)) continue;
                const double d = (pos[i] - pos[j]).squaredNorm();
                if (d < best) {
                    best = d;
                    pair = {i, j};
                }
            }
        }
        return pair;
    };

    for (const auto& [pa, pb] : anatomical_links()) {
        auto ia = std::find(config.parts.begin(), config.parts.end(), pa);
        auto ib = std::find(config.parts.begin(), config.parts.end(), pb);
        if (ia == config.parts.end() || ib == config.parts.end()) continue;
        const auto la = static_cast<std::size_t>(ia - config.parts.begin());
        const auto lb = static_cast<std::size_t>(ib - config.parts.begin());
        auto [i, j] = nearest_pair([&](std::size_t v) { return g.fine.part_labels[v] == la; },
                                   [&](std::size_t v) { return g.fine.part_labels[v] == lb; });
        link(i, j);
    }
    // Join whatever is still disconnected (merged parts, reduced part lists).
    for (;;) {
        auto comp = components(n, edges);
        if (*std::max_element(comp.begin(), comp.end()) == 0) break;
        auto [i, j] = nearest_pair([&](std::size_t v) { return comp[v] == 0; },
                                   [&](std::size_t v) { return comp[v] != 0; });
        link(i, j);
    }

    g.fine.edges = canonical_edges(edges);
    g.fine.adjacency = build_adjacency(g.fine.edges, n, config.normalization);

    std::vector<double> rest_flat(n * 3);
    for (std::size_t v = 0; v < n; ++v)
        for (int c = 0; c < 3; ++c) rest_flat[v * 3 + static_cast<std::size_t>(c)] = pos[v][c];
    g.rest_positions = Tensor({n, 3}, std::move(rest_flat));

    // Coarse level: contiguous groups inside every part, averaged uniformly.
    const std::size_t cpp = config.coarse_per_part;
    const std::size_t nc = config.parts.size() * cpp;
    std::vector<std::size_t> group(n);
    for (std::size_t p = 0; p < config.parts.size(); ++p)
        for (std::size_t gi = 0; gi < cpp; ++gi) {
            const std::size_t lo = gi * k / cpp, hi = (gi + 1) * k / cpp;
            for (std::size_t i = lo; i < hi; ++i) group[p * k + i] = p * cpp + gi;
        }
    Eigen::MatrixXd down = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nc),
                                                 static_cast<Eigen::Index>(n));
    std::vector<std::size_t> group_size(nc, 0);
    for (std::size_t v = 0; v < n; ++v) ++group_size[group[v]];
    for (std::size_t v = 0; v < n; ++v)
        down(static_cast<Eigen::Index>(group[v]), static_cast<Eigen::Index>(v)) =
            1.0 / static_cast<double>(group_size[group[v]]);
    const Eigen::MatrixXd up = down.completeOrthogonalDecomposition().pseudoInverse();

    auto to_tensor = [](const Eigen::MatrixXd& m) {
        std::vector<double> v(static_cast<std::size_t>(m.size()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                v[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
        return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                      std::move(v));
    };
    g.down_matrix = to_tensor(down);
    g.up_matrix = to_tensor(up);

    std::set<std::pair<std::size_t, std::size_t>> coarse_edges;
    for (const auto& e : g.fine.edges) {
        const std::size_t a = group[e.a], b = group[e.b];
        if (a != b) coarse_edges.emplace(std::min(a, b), std::max(a, b));
    }
    g.coarse.n = nc;
    g.coarse.edges = canonical_edges(coarse_edges);
    g.coarse.adjacency = build_adjacency(g.coarse.edges, nc, config.normalization);
    g.coarse.part_labels.resize(nc);
    for (std::size_t c = 0; c < nc; ++c) g.coarse.part_labels[c] = c / cpp;
    return g;
}

GraphConvLayer GraphConvLayer::init(std::size_t c_in, std::size_t c_out, std::mt19937_64& rng,
                                    Activation activation) {
    const double limit = std::sqrt(6.0 / static_cast<double>(c_in + c_out));
    GraphConvLayer layer;
    layer.weight = Tensor::uniform({c_in, c_out}, rng, -limit, limit).set_requires_grad(true);
    layer.activation = activation;
    return layer;
}

Tensor graph_conv(const GraphConvLayer& layer, const Tensor& adjacency, const Tensor& y) {
    const std::size_t rows = y.rank() == 3 ? y.dim(1) : y.rank() == 2 ? y.dim(0) : 0;
    if (rows == 0 || adjacency.rank() != 2 || adjacency.dim(1) != rows)
        throw ShapeError("graph_conv: features " + shape_str(y.shape()) +
                         " incompatible with adjacency " + shape_str(adjacency.shape()));
    if (y.shape().back() != layer.weight.dim(0))
        throw ShapeError("graph_conv: features " + shape_str(y.shape()) +
                         " incompatible with weight " + shape_str(layer.weight.shape()));
    return activate(bmm(adjacency, linear(y, layer.weight, Tensor{})), layer.activation);
}

Tensor graph_conv(const GraphConvLayer& layer, const BodyGraph& graph, const Tensor& y) {
    if (y.rank() != 2 && y.rank() != 3)
        throw ShapeError("graph_conv: features must be rank 2 or 3, got " + shape_str(y.shape()));
    const std::size_t rows = y.rank() == 3 ? y.dim(1) : y.dim(0);
    return graph_conv(layer, graph.level_for(rows).adjacency, y);
}

Tensor resample(const BodyGraph& graph, const Tensor& y, ResampleDirection direction) {
    const Tensor& m = direction == ResampleDirection::Down ? graph.down_matrix : graph.up_matrix;
    const std::size_t rows = y.rank() == 3 ? y.dim(1) : y.rank() == 2 ? y.dim(0) : 0;
    if (rows != m.dim(1))
        throw ShapeError(std::string("resample: ") +
                         (direction == ResampleDirection::Down ? "down" : "up") +
                         " expects " + std::to_string(m.dim(1)) + " rows, got " +
                         shape_str(y.shape()));
    return bmm(m, y);
}

namespace {

nlohmann::json tensor_json(const Tensor& t) {
    return {{"shape", t.shape()}, {"data", t.to_vector()}};
}

Tensor tensor_from(const nlohmann::json& j, const Shape& expected, const char* what) {
    Shape shape = j.at("shape").get<Shape>();
    if (shape != expected)
        throw FormatError(std::string("graph document: ") + what + " has shape " +
                          shape_str(shape) + ", expected " + shape_str(expected));
    return Tensor(std::move(shape), j.at("data").get<std::vector<double>>());
}

nlohmann::json edges_json(const std::vector<Edge>& edges) {
    auto arr = nlohmann::json::array();
    for (const auto& e : edges) arr.push_back({e.a, e.b});
    return arr;
}

std::vector<Edge> edges_from(const nlohmann::json& j) {
    std::vector<Edge> out;
    for (const auto& e : j) out.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()});
    return out;
}

}  // namespace

nlohmann::json graph_to_json(const BodyGraph& g) {
    nlohmann::json sk;
    sk["names"] = g.skeleton.names;
    sk["parents"] = g.skeleton.parent;
    sk["rest"] = g.skeleton.rest;
    return {
        {"format", "meshseq.body_graph"},
        {"version", 1},
        {"normalization", g.normalization == AdjacencyNorm::Symmetric ? "symmetric" : "row"},
        {"part_names", g.part_names},
        {"n_vertices", g.fine.n},
        {"n_coarse", g.coarse.n},
        {"edges", edges_json(g.fine.edges)},
        {"part_labels", g.fine.part_labels},
        {"coarse_edges", edges_json(g.coarse.edges)},
        {"coarse_part_labels", g.coarse.part_labels},
        {"adjacency", tensor_json(g.fine.adjacency)},
        {"coarse_adjacency", tensor_json(g.coarse.adjacency)},
        {"down_matrix", tensor_json(g.down_matrix)},
        {"up_matrix", tensor_json(g.up_matrix)},
        {"rest_positions", tensor_json(g.rest_positions)},
        {"vertex_joint", g.vertex_joint},
        {"skeleton", sk},
    };
}

BodyGraph graph_from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("format") != "meshseq.body_graph" || doc.at("version") != 1)
            throw FormatError("graph document: unsupported format or version");
        BodyGraph g;
        const auto norm = doc.at("normalization").get<std::string>();
        if (norm != "symmetric" && norm != "row")
            throw FormatError("graph document: unknown normalization '" + norm + "'");
        g.normalization = norm == "symmetric" ? AdjacencyNorm::Symmetric : AdjacencyNorm::Row;
        g.part_names = doc.at("part_names").get<std::vector<std::string>>();
        const auto n = doc.at("n_vertices").get<std::size_t>();
        const auto nc = doc.at("n_coarse").get<std::size_t>();
        g.fine.n = n;
        g.coarse.n = nc;
        g.fine.edges = edges_from(doc.at("edges"));
        g.coarse.edges = edges_from(doc.at("coarse_edges"));
        g.fine.part_labels = doc.at("part_labels").get<std::vector<std::size_t>>();
        g.coarse.part_labels = doc.at("coarse_part_labels").get<std::vector<std::size_t>>();
        if (g.fine.part_labels.size() != n || g.coarse.part_labels.size() != nc)
            throw FormatError("graph document: part label count mismatch");
        g.fine.adjacency = tensor_from(doc.at("adjacency"), {n, n}, "adjacency");
        g.coarse.adjacency = tensor_from(doc.at("coarse_adjacency"), {nc, nc}, "coarse_adjacency");
        g.down_matrix = tensor_from(doc.at("down_matrix"), {nc, n}, "down_matrix");
        g.up_matrix = tensor_from(doc.at("up_matrix"), {n, nc}, "up_matrix");
        g.rest_positions = tensor_from(doc.at("rest_positions"), {n, 3}, "rest_positions");
        g.vertex_joint = doc.at("vertex_joint").get<std::vector<std::size_t>>();
        const auto& sk = doc.at("skeleton");
        g.skeleton.names = sk.at("names").get<std::vector<std::string>>();
        g.skeleton.parent = sk.at("parents").get<std::vector<int>>();
        g.skeleton.rest = sk.at("rest").get<std::vector<std::array<double, 3>>>();
        if (g.vertex_joint.size() != n)
            throw FormatError("graph document: vertex_joint count mismatch");

        for (const auto* level : {&g.fine, &g.coarse}) {
            const Tensor expect = build_adjacency(level->edges, level->n, g.normalization);
            for (std::size_t i = 0; i < expect.numel(); ++i)
                if (std::abs(expect[i] - level->adjacency[i]) > 1e-12)
                    throw FormatError("graph document: adjacency does not match edges");
        }
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("graph document: ") + e.what());
    }
}

}  // namespace meshseq
