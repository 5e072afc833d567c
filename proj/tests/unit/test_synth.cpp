#include "wildsort/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace wildsort;

TEST_CASE("spec(5, 100, 10, 8, seed 7) shape and labels") {
    FixtureSpec spec;
    spec.seed = 7;
    const auto fx = generate_fixture(spec);
    CHECK(fx.data.n() == 500);
    CHECK(fx.data.d() == 10);
    CHECK(fx.centroids.rows() == 5);
    std::map<std::string, int> counts;
    for (const auto& l : fx.data.labels()) ++counts[l];
    CHECK(counts.size() == 5);
    for (const auto& [l, c] : counts) CHECK(c == 100);
    CHECK(fx.data.labels()[0] == "c0");
    CHECK(fx.data.labels()[499] == "c4");
}

TEST_CASE("centroids are at least the separation apart") {
    for (double sep : {2.0, 8.0, 30.0}) {
        FixtureSpec spec;
        spec.n_clusters = 4;
        spec.dim = 6;
        spec.separation = sep;
        spec.seed = 3;
        const auto fx = generate_fixture(spec);
        for (Eigen::Index a = 0; a < 4; ++a)
            for (Eigen::Index b = a + 1; b < 4; ++b)
                CHECK((fx.centroids.row(a) - fx.centroids.row(b)).norm() >= sep - 1e-9);
    }
    FixtureSpec edge;
    edge.n_clusters = 3;
    edge.dim = 2;
    edge.seed = 1;
    const auto fx = generate_fixture(edge);
    CHECK((fx.centroids.row(0) - fx.centroids.row(2)).norm() >= 8.0 - 1e-9);
}

TEST_CASE("nearest-centroid classification at 8 sigma") {
    FixtureSpec spec;
    spec.seed = 7;
    const auto fx = generate_fixture(spec);
    const auto& x = fx.data.vectors();
    const auto labels = fx.data.labels();
    std::size_t right = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index best;
        (fx.centroids.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
        right += labels[static_cast<std::size_t>(i)] == "c" + std::to_string(best);
    }
    CHECK(static_cast<double>(right) / 500.0 >= 0.999);
}

TEST_CASE("cluster means sit near their centroids") {
    FixtureSpec spec;
    spec.per_cluster_n = 200;
    spec.seed = 11;
    const auto fx = generate_fixture(spec);
    const auto& x = fx.data.vectors();
    for (Eigen::Index c = 0; c < 5; ++c) {
        const Eigen::RowVectorXd mean = x.middleRows(c * 200, 200).colwise().mean();
        for (Eigen::Index j = 0; j < 10; ++j)
            CHECK(std::abs(mean(j) - fx.centroids(c, j)) <= 6.0 / std::sqrt(200.0));
    }
}

TEST_CASE("anisotropy scales the spread within its range") {
    FixtureSpec spec;
    spec.n_clusters = 2;
    spec.per_cluster_n = 400;
    spec.dim = 3;
    spec.anisotropy = std::make_pair(2.0, 3.0);
    spec.seed = 4;
    const auto fx = generate_fixture(spec);
    const auto& x = fx.data.vectors();
    const RowMatrix centered = x.topRows(400).rowwise() - x.topRows(400).colwise().mean();
    const double var = centered.squaredNorm() / (400.0 * 3);
    CHECK(var > 0.8 * 4.0);
    CHECK(var < 1.2 * 9.0);
}

TEST_CASE("same spec, same bits; errors") {
    FixtureSpec spec;
    spec.seed = 99;
    const auto a = generate_fixture(spec);
    const auto b = generate_fixture(spec);
    CHECK(a.data.vectors() == b.data.vectors());
    CHECK(a.data.ids() == b.data.ids());
    spec.seed = 100;
    CHECK_FALSE(generate_fixture(spec).data.vectors() == a.data.vectors());

    FixtureSpec bad;
    bad.n_clusters = 5;
    bad.dim = 3;
    CHECK_THROWS_AS(generate_fixture(bad), std::invalid_argument);
    bad.dim = 4;
    CHECK_NOTHROW(generate_fixture(bad));
    bad.separation = 0;
    CHECK_THROWS_AS(generate_fixture(bad), std::invalid_argument);
    bad.separation = 8;
    bad.per_cluster_n = 0;
    CHECK_THROWS_AS(generate_fixture(bad), std::invalid_argument);
}
