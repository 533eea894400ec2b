#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <random>

#include "meshseq/body_graph.hpp"
#include "meshseq/gradcheck.hpp"

using namespace meshseq;

namespace {

double at(const Tensor& m, std::size_t i, std::size_t j) { return m[i * m.dim(1) + j]; }

// Dense oracle for D^{-1/2}(A+I)D^{-1/2}.
std::vector<double> dense_sym(const std::vector<Edge>& edges, std::size_t n) {
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
    for (auto e : edges) a[e.a * n + e.b] = a[e.b * n + e.a] = 1.0;
    std::vector<double> d(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i] += a[i * n + j];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a[i * n + j] /= std::sqrt(d[i] * d[j]);
    return a;
}

std::vector<Edge> random_edges(std::size_t n, std::mt19937_64& rng) {
    std::vector<Edge> edges;
    std::bernoulli_distribution coin(0.4);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (coin(rng)) edges.push_back({i, j});
    return edges;
}

GraphConvLayer layer_with(Tensor w, Activation act) {
    GraphConvLayer l;
    l.weight = std::move(w);
    l.activation = act;
    return l;
}

}  // namespace

TEST(Adjacency, SingleEdge) {
    Tensor a = build_adjacency({{0, 1}}, 2);
    for (double v : a.data()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(Adjacency, NoEdgesIsIdentity) {
    Tensor a = build_adjacency({}, 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(at(a, i, j), i == j ? 1.0 : 0.0);
}

TEST(Adjacency, TriangleIsConstantThird) {
    Tensor a = build_adjacency({{0, 1}, {1, 2}, {0, 2}}, 3);
    for (double v : a.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Adjacency, PathGraphHandValues) {
    // degrees after self-loops: 2, 3, 2
    Tensor a = build_adjacency({{0, 1}, {1, 2}}, 3);
    EXPECT_NEAR(at(a, 0, 0), 0.5, 1e-15);
    EXPECT_NEAR(at(a, 1, 1), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(at(a, 0, 1), 1.0 / std::sqrt(6.0), 1e-15);
    EXPECT_NEAR(at(a, 1, 2), 1.0 / std::sqrt(6.0), 1e-15);
    EXPECT_EQ(at(a, 0, 2), 0.0);
}

TEST(Adjacency, RegularGraphRowsSumToOne) {
    // 6-cycle: every vertex has degree 3 after self-loops
    std::vector<Edge> cycle;
    for (std::size_t i = 0; i < 6; ++i) cycle.push_back({i, (i + 1) % 6});
    Tensor a = build_adjacency(cycle, 6);
    for (std::size_t i = 0; i < 6; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 6; ++j) s += at(a, i, j);
        EXPECT_NEAR(s, 1.0, 1e-15);
    }
}

TEST(Adjacency, MatchesDenseOracleAndIsSymmetric) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 3 + trial % 6;
        auto edges = random_edges(n, rng);
        Tensor a = build_adjacency(edges, n);
        auto oracle = dense_sym(edges, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                EXPECT_NEAR(at(a, i, j), oracle[i * n + j], 1e-15);
                EXPECT_EQ(at(a, i, j), at(a, j, i));
                EXPECT_GE(at(a, i, j), 0.0);
                EXPECT_LE(at(a, i, j), 1.0);
            }
    }
}

TEST(Adjacency, RowNormalizationRowsSumToOne) {
    Tensor a = build_adjacency({{0, 1}, {1, 2}}, 3, AdjacencyNorm::Row);
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) s += at(a, i, j);
        EXPECT_NEAR(s, 1.0, 1e-15);
    }
}

TEST(Adjacency, RejectsBadEdges) {
    EXPECT_THROW(build_adjacency({{0, 3}}, 3), ShapeError);
    EXPECT_THROW(build_adjacency({{1, 1}}, 3), ShapeError);
    EXPECT_THROW(build_adjacency({{0, 1}, {1, 0}}, 3), ShapeError);
}

TEST(GraphConv, IdentityComposition) {
    Tensor y({3, 2}, std::vector<double>{1, 2, 0, 4, 5, 0.5});
    Tensor out = graph_conv(layer_with(Tensor::eye(2), Activation::ReLU), Tensor::eye(3), y);
    EXPECT_EQ(out.to_vector(), y.to_vector());
}

TEST(GraphConv, TwoVertexExample) {
    Tensor a = build_adjacency({{0, 1}}, 2);
    Tensor out = graph_conv(layer_with(Tensor({1, 1}, 1.0), Activation::ReLU), a,
                            Tensor({2, 1}, std::vector<double>{2, 4}));
    EXPECT_NEAR(out[0], 3.0, 1e-15);
    EXPECT_NEAR(out[1], 3.0, 1e-15);
}

TEST(GraphConv, PermutationEquivariance) {
    std::mt19937_64 rng(2);
    const std::size_t n = 5;
    for (int trial = 0; trial < 100; ++trial) {
        auto edges = random_edges(n, rng);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        // vertex i of the permuted graph is vertex perm[i] of the original
        std::vector<std::size_t> inv(n);
        for (std::size_t i = 0; i < n; ++i) inv[perm[i]] = i;
        std::vector<Edge> pedges;
        for (auto e : edges) pedges.push_back({inv[e.a], inv[e.b]});

        auto layer = GraphConvLayer::init(3, 2, rng, Activation::ReLU);
        Tensor y = Tensor::randn({n, 3}, rng);
        std::vector<double> py(n * 3);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < 3; ++c) py[i * 3 + c] = y[perm[i] * 3 + c];

        Tensor out = graph_conv(layer, build_adjacency(edges, n), y);
        Tensor pout = graph_conv(layer, build_adjacency(pedges, n), Tensor({n, 3}, py));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < 2; ++c)
                EXPECT_NEAR(pout[i * 2 + c], out[perm[i] * 2 + c], 1e-9);
    }
}

TEST(GraphConv, WeightGradientPassesGradcheck) {
    std::mt19937_64 rng(3);
    Tensor a = build_adjacency(random_edges(6, rng), 6);
    Tensor y = Tensor::randn({6, 3}, rng);
    auto r = gradcheck(
        [&](const std::vector<Tensor>& in) {
            return graph_conv(layer_with(in[0], Activation::GELU), a, in[1]);
        },
        {Tensor::randn({3, 4}, rng), y});
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GraphConv, RepeatedApplicationStaysBounded) {
    std::mt19937_64 rng(4);
    auto edges = random_edges(8, rng);
    Tensor a = build_adjacency(edges, 8);
    double max_row = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 8; ++j) s += at(a, i, j);
        max_row = std::max(max_row, s);
    }
    Tensor y = Tensor::randn({8, 2}, rng);
    auto sup = [](const Tensor& t) {
        double m = 0.0;
        for (double v : t.data()) m = std::max(m, std::abs(v));
        return m;
    };
    const double bound = sup(y);
    Tensor x = y;
    double factor = 1.0;
    for (int k = 1; k <= 50; ++k) {
        x = matmul(a, x);
        factor *= max_row;
        EXPECT_LE(sup(x), bound * factor + 1e-12);
    }
    // spectral radius of the symmetric normalization is 1
    EXPECT_LE(sup(x), bound * std::sqrt(8.0) + 1e-9);
}

TEST(ToyBody, DefaultSizesAndContiguousParts) {
    BodyGraph g = generate_toy_body({});
    EXPECT_EQ(g.n_vertices(), 96u);
    EXPECT_EQ(g.n_coarse(), 24u);
    EXPECT_EQ(g.n_parts(), 8u);
    std::size_t expected_start = 0;
    for (std::size_t p = 0; p < 8; ++p) {
        auto [s, e] = g.part_range(g.fine, p);
        EXPECT_EQ(s, expected_start);
        for (std::size_t v = s; v < e; ++v) EXPECT_EQ(g.fine.part_labels[v], p);
        expected_start = e;
    }
    EXPECT_EQ(expected_start, 96u);
}

TEST(ToyBody, Deterministic) {
    auto a = graph_to_json(generate_toy_body({}));
    auto b = graph_to_json(generate_toy_body({}));
    EXPECT_EQ(a.dump(), b.dump());
    ToyBodyConfig other;
    other.seed = 5;
    EXPECT_NE(a.dump(), graph_to_json(generate_toy_body(other)).dump());
}

TEST(ToyBody, ConnectedByBfs) {
    for (std::uint64_t seed : {0, 1, 2}) {
        ToyBodyConfig cfg;
        cfg.seed = seed;
        BodyGraph g = generate_toy_body(cfg);
        for (const GraphLevel* level : {&g.fine, &g.coarse}) {
            std::vector<std::vector<std::size_t>> nb(level->n);
            for (auto e : level->edges) {
                nb[e.a].push_back(e.b);
                nb[e.b].push_back(e.a);
            }
            std::vector<bool> seen(level->n, false);
            std::queue<std::size_t> q;
            q.push(0);
            seen[0] = true;
            std::size_t count = 1;
            while (!q.empty()) {
                auto v = q.front();
                q.pop();
                for (auto u : nb[v])
                    if (!seen[u]) {
                        seen[u] = true;
                        ++count;
                        q.push(u);
                    }
            }
            EXPECT_EQ(count, level->n);
        }
    }
}

TEST(ToyBody, RejectsTinyConfigs) {
    ToyBodyConfig one;
    one.parts = {"head"};
    EXPECT_THROW(generate_toy_body(one), ConfigError);
    ToyBodyConfig thin;
    thin.vertices_per_part = 1;
    EXPECT_THROW(generate_toy_body(thin), ConfigError);
}

TEST(Resample, DownThenUpReproducesCoarseSubspace) {
    BodyGraph g = generate_toy_body({});
    std::mt19937_64 rng(5);
    // signals of the form up * c lie in the coarse subspace
    Tensor c = Tensor::randn({g.n_coarse(), 3}, rng);
    Tensor fine = resample(g, c, ResampleDirection::Up);
    Tensor back = resample(g, resample(g, fine, ResampleDirection::Down), ResampleDirection::Up);
    for (std::size_t i = 0; i < fine.numel(); ++i) EXPECT_NEAR(back[i], fine[i], 1e-9);
    // and down * up is the identity on coarse signals
    Tensor cc = resample(g, fine, ResampleDirection::Down);
    for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_NEAR(cc[i], c[i], 1e-9);
}

TEST(Resample, ConstantPerPartIsPreserved) {
    BodyGraph g = generate_toy_body({});
    std::vector<double> y(g.n_vertices());
    for (std::size_t v = 0; v < g.n_vertices(); ++v) y[v] = 10.0 * g.fine.part_labels[v] + 1.0;
    Tensor down = resample(g, Tensor({g.n_vertices(), 1}, y), ResampleDirection::Down);
    for (std::size_t k = 0; k < g.n_coarse(); ++k)
        EXPECT_NEAR(down[k], 10.0 * g.coarse.part_labels[k] + 1.0, 1e-12);
}

TEST(Resample, MatchesDenseProduct) {
    BodyGraph g = generate_toy_body({});
    std::mt19937_64 rng(6);
    Tensor y = Tensor::randn({g.n_vertices(), 2}, rng);
    Tensor out = resample(g, y, ResampleDirection::Down);
    const std::size_t n = g.n_vertices();
    for (std::size_t k = 0; k < g.n_coarse(); ++k)
        for (std::size_t c = 0; c < 2; ++c) {
            double s = 0.0;
            for (std::size_t v = 0; v < n; ++v) s += g.down_matrix[k * n + v] * y[v * 2 + c];
            EXPECT_NEAR(out[k * 2 + c], s, 1e-12);
        }
    EXPECT_THROW(resample(g, Tensor({g.n_coarse(), 2}), ResampleDirection::Down), ShapeError);
}

TEST(GraphJson, RoundTrip) {
    BodyGraph g = generate_toy_body({});
    auto doc = graph_to_json(g);
    BodyGraph h = graph_from_json(doc);
    EXPECT_EQ(graph_to_json(h).dump(), doc.dump());
    EXPECT_EQ(h.fine.adjacency.to_vector(), g.fine.adjacency.to_vector());
}

TEST(GraphJson, RejectsTamperedAdjacency) {
    auto doc = graph_to_json(generate_toy_body({}));
    doc["adjacency"]["data"][1] = 0.123;
    EXPECT_THROW(graph_from_json(doc), FormatError);
}
