#include "test_util.hpp"
#include "wildsort/neighbor_embedding.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

using namespace wildsort;

namespace {

// Two tight blobs far apart in 6 dimensions.
RowMatrix two_blobs(unsigned seed) {
    RowMatrix x = testutil::gaussian_matrix(80, 6, seed, 0.3);
    for (Eigen::Index i = 40; i < 80; ++i) x(i, 0) += 20.0;
    return x;
}

std::map<std::pair<std::size_t, std::size_t>, double> by_pair(const std::vector<WeightedEdge>& edges) {
    std::map<std::pair<std::size_t, std::size_t>, double> out;
    for (const auto& e : edges) out[{e.from, e.to}] = e.weight;
    return out;
}

} // namespace

TEST_CASE("a, b fit matches a least-squares reference") {
    // reference: scipy curve_fit on the same 300-point grid over [0, 3*spread]
    struct Row {
        double min_dist, a, b;
    };
    for (const Row r : {Row{0.1, 1.57694346, 0.89506088}, Row{0.001, 1.9290734, 0.79150453},
                        Row{0.5, 0.58303002, 1.33416699}}) {
        const auto [a, b] = find_ab_params(1.0, r.min_dist);
        CHECK(std::abs(a - r.a) < 1e-3);
        CHECK(std::abs(b - r.b) < 1e-3);
    }
}

TEST_CASE("fuzzy union") {
    CHECK(fuzzy_union(1.0, 0.5) == 1.0);
    CHECK(fuzzy_union(0.0, 0.0) == 0.0);
    CHECK(fuzzy_union(0.5, 0.5) == doctest::Approx(0.75));
    CHECK(fuzzy_union(0.2, 0.7) == fuzzy_union(0.7, 0.2));
}

TEST_CASE("exact_knn against a brute-force scan") {
    const RowMatrix x = testutil::gaussian_matrix(60, 4, 3);
    const auto g = exact_knn(x, 7);
    for (std::size_t i = 0; i < 60; ++i) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < 60; ++j)
            if (j != i) all.emplace_back((x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm(), j);
        std::sort(all.begin(), all.end());
        REQUIRE(g.indices[i].size() == 7);
        for (std::size_t r = 0; r < 7; ++r) {
            CHECK(g.indices[i][r] == all[r].second);
            CHECK(g.distances[i][r] == all[r].first);
        }
    }
    CHECK_THROWS_AS(exact_knn(x, 0), std::invalid_argument);
    CHECK_THROWS_AS(exact_knn(x, 60), std::invalid_argument);
}

TEST_CASE("membership strengths on six points of a line, k=3") {
    // reference: bandwidth solved with brentq, strengths exp(-(d - rho) / sigma)
    RowMatrix x(6, 1);
    x << 0, 1, 3, 6, 10, 15;
    const auto edges = membership_strengths(exact_knn(x, 3));
    const std::size_t to[6][3] = {{1, 2, 3}, {0, 2, 3}, {1, 0, 3}, {2, 4, 1}, {3, 5, 2}, {4, 3, 2}};
    const double w[6][3] = {{1.0, 0.44949908359962276, 0.1354634171215334},
                            {1.0, 0.5147530354721856, 0.07020946524897051},
                            {1.0, 0.292481250360578, 0.292481250360578},
                            {1.0, 0.4137628252020083, 0.1711996755191477},
                            {1.0, 0.47666183271046025, 0.1083006680106957},
                            {1.0, 0.39133663177739364, 0.19362586894376235}};
    REQUIRE(edges.size() == 18);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t r = 0; r < 3; ++r) {
            const auto& e = edges[3 * i + r];
            CHECK(e.from == i);
            CHECK(e.to == to[i][r]);
            CHECK(std::abs(e.weight - w[i][r]) < 1e-4);
        }
    }
}

TEST_CASE("strengths lie in (0, 1], nearest neighbor at 1, row sums log2 k") {
    const RowMatrix x = testutil::gaussian_matrix(70, 5, 11);
    const std::size_t k = 10;
    const auto g = exact_knn(x, k);
    const auto edges = membership_strengths(g);
    std::vector<double> sums(70, 0.0);
    for (const auto& e : edges) {
        CHECK(e.weight > 0.0);
        CHECK(e.weight <= 1.0);
        sums[e.from] += e.weight;
        if (e.to == g.indices[e.from][0]) CHECK(e.weight == 1.0);
    }
    for (double s : sums) CHECK(std::abs(s - std::log2(static_cast<double>(k))) < 1e-3);
}

TEST_CASE("fuzzy graph is symmetric and combines with the union") {
    const RowMatrix x = testutil::gaussian_matrix(40, 3, 5);
    const auto directed = by_pair(membership_strengths(exact_knn(x, 6)));
    const auto graph = fuzzy_simplicial_set(x, 6);
    const auto sym = by_pair(graph);
    CHECK(std::is_sorted(graph.begin(), graph.end(), [](const WeightedEdge& a, const WeightedEdge& b) {
        return std::tie(a.from, a.to) < std::tie(b.from, b.to);
    }));
    for (const auto& [key, w] : sym) {
        CHECK(sym.at({key.second, key.first}) == w);
        auto get = [&](std::size_t i, std::size_t j) {
            auto it = directed.find({i, j});
            return it == directed.end() ? 0.0 : it->second;
        };
        CHECK(w == doctest::Approx(fuzzy_union(get(key.first, key.second), get(key.second, key.first))));
        CHECK(key.first != key.second);
    }
}

TEST_CASE("a far outlier leaves the other points' strengths alone") {
    const RowMatrix x = testutil::gaussian_matrix(50, 3, 9);
    RowMatrix with(51, 3);
    with.topRows(50) = x;
    with.row(50) << 1e3, 1e3, 1e3;
    const auto a = membership_strengths(exact_knn(x, 8));
    const auto b = membership_strengths(exact_knn(with, 8));
    for (std::size_t e = 0; e < a.size(); ++e) {
        CHECK(a[e].to == b[e].to);
        CHECK(std::abs(a[e].weight - b[e].weight) < 1e-12);
    }
}

TEST_CASE("cross-entropy is translation invariant and zero-free") {
    const RowMatrix x = testutil::gaussian_matrix(30, 4, 1);
    const auto graph = fuzzy_simplicial_set(x, 5);
    const auto [a, b] = find_ab_params(1.0, 0.1);
    const RowMatrix y = testutil::gaussian_matrix(30, 2, 2);
    RowMatrix moved = y;
    moved.col(0).array() += 40.0;
    const double ce = umap_cross_entropy(graph, y, a, b);
    CHECK(ce > 0.0);
    CHECK(std::abs(ce - umap_cross_entropy(graph, moved, a, b)) < 1e-9);
}

TEST_CASE("umap keeps separated blobs apart and is reproducible") {
    const RowMatrix x = two_blobs(4);
    UmapConfig cfg;
    cfg.output_dim = 2;
    cfg.n_neighbors = 10;
    cfg.n_epochs = 200;
    cfg.seed = 3;
    const auto a = umap_embed(x, cfg);
    const auto b = umap_embed(x, cfg);
    CHECK(a.coords == b.coords);
    CHECK(a.method == "umap");
    CHECK(a.coords.rows() == 80);
    CHECK(a.coords.cols() == 2);
    CHECK(a.config.contains("a"));

    // every point's nearest layout neighbor is in its own blob
    const auto g = exact_knn(a.coords, 1);
    for (std::size_t i = 0; i < 80; ++i) CHECK((g.indices[i][0] < 40) == (i < 40));

    cfg.seed = 4;
    CHECK_FALSE(umap_embed(x, cfg).coords == a.coords);
}

TEST_CASE("umap config validation") {
    const RowMatrix x = testutil::gaussian_matrix(20, 3, 1);
    UmapConfig cfg;
    cfg.n_neighbors = 20;
    CHECK_THROWS_AS(umap_embed(x, cfg), std::invalid_argument);
    cfg.n_neighbors = 5;
    cfg.min_dist = 2.0;
    CHECK_THROWS_AS(umap_embed(x, cfg), std::invalid_argument);
    cfg.min_dist = 0.1;
    cfg.n_epochs = 0;
    CHECK_THROWS_AS(umap_embed(x, cfg), std::invalid_argument);
}
