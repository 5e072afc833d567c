#include "wildsort/evaluation.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>
#include <random>

using namespace wildsort;

namespace {

// Rows are actual species, columns the cluster predicted for them.
Contingency from_confusion(const std::vector<std::string>& species, const CountMatrix& actual_by_cluster) {
    Contingency t;
    t.species = species;
    const std::size_t k = actual_by_cluster.front().size();
    for (std::size_t c = 0; c < k; ++c) t.clusters.push_back(static_cast<int>(c));
    t.counts.assign(k, std::vector<std::int64_t>(species.size(), 0));
    for (std::size_t s = 0; s < species.size(); ++s)
        for (std::size_t c = 0; c < k; ++c) t.counts[c][s] = actual_by_cluster[s][c];
    t.noise.assign(species.size(), 0);
    return t;
}

// Expand a contingency table into per-item clusters and labels.
std::pair<HardAssignment, std::vector<std::string>> expand(const Contingency& t) {
    HardAssignment a;
    a.k = static_cast<int>(t.clusters.size());
    std::vector<std::string> labels;
    for (std::size_t c = 0; c < t.counts.size(); ++c)
        for (std::size_t s = 0; s < t.species.size(); ++s)
            for (std::int64_t i = 0; i < t.counts[c][s]; ++i) {
                a.cluster_of.push_back(t.clusters[c]);
                labels.push_back(t.species[s]);
            }
    return {a, labels};
}

std::int64_t brute_best(const CountMatrix& w) {
    const std::size_t rows = w.size(), cols = w.front().size();
    const std::size_t n = std::max(rows, cols);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::int64_t best = 0;
    do {
        std::int64_t s = 0;
        for (std::size_t r = 0; r < rows; ++r)
            if (perm[r] < cols) s += w[r][perm[r]];
        best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

const std::vector<std::string> kSpecies{"badger", "raccoon dog", "red fox", "polecat", "hooded crow"};
const CountMatrix kTable{{93, 7, 0, 0, 0}, {31, 61, 4, 0, 4}, {0, 2, 95, 3, 0}, {0, 0, 9, 91, 0}, {0, 1, 0, 0, 99}};

} // namespace

TEST_CASE("reference confusion matrix: per-species F1, macro, accuracy") {
    const auto r = evaluate(from_confusion(kSpecies, kTable));
    // F1 = 2 TP / (column total + row total)
    const double f1[5] = {186.0 / 224, 122.0 / 171, 190.0 / 208, 182.0 / 194, 198.0 / 203};
    const double printed[5] = {0.830, 0.713, 0.914, 0.938, 0.975};
    for (int s = 0; s < 5; ++s) {
        CHECK(r.per_species[s].species == kSpecies[s]);
        CHECK(r.per_species[s].f1 == doctest::Approx(f1[s]).epsilon(1e-12));
        if (s != 2) CHECK(std::abs(r.per_species[s].f1 - printed[s]) <= 0.0005);
    }
    // red fox: 0.91346 against a printed 0.914
    CHECK(std::abs(r.per_species[2].f1 - printed[2]) < 0.0006);
    CHECK(r.per_species[0].tp == 93);
    CHECK(r.per_species[0].fp == 31);
    CHECK(r.per_species[0].precision == doctest::Approx(93.0 / 124));
    CHECK(r.per_species[0].recall == doctest::Approx(0.93));
    CHECK(std::abs(r.macro_f1 - 0.874) <= 0.0005);
    // the matrix diagonal holds 439 items; the printed 443/500 does not follow from it
    CHECK(r.correct == 439);
    CHECK(r.n == 500);
    CHECK(r.accuracy == doctest::Approx(0.878));
    for (int s = 0; s < 5; ++s) CHECK(r.match.cluster_to_species.at(s) == kSpecies[s]);
    CHECK(r.confusion.counts == kTable);

    const auto [a, labels] = expand(from_confusion(kSpecies, kTable));
    CHECK(evaluate(a, labels).macro_f1 == r.macro_f1);
}

TEST_CASE("perfect diagonal scores 1") {
    const auto r = evaluate(from_confusion({"a", "b", "c"}, {{10, 0, 0}, {0, 7, 0}, {0, 0, 3}}));
    for (const auto& s : r.per_species) CHECK(s.f1 == 1.0);
    CHECK(r.accuracy == 1.0);
    CHECK(r.macro_f1 == 1.0);
}

TEST_CASE("one cluster, five equal species") {
    HardAssignment a;
    a.k = 1;
    a.cluster_of.assign(50, 0);
    std::vector<std::string> labels;
    for (int i = 0; i < 50; ++i) labels.push_back(std::string("s") + static_cast<char>('0' + i % 5));
    const auto r = evaluate(a, labels);
    int zero = 0;
    for (const auto& s : r.per_species) {
        if (s.tp == 0) {
            CHECK(s.f1 == 0.0);
            ++zero;
        } else {
            CHECK(s.precision == doctest::Approx(0.2));
            CHECK(s.recall == 1.0);
            CHECK(s.f1 == doctest::Approx(1.0 / 3));
        }
    }
    CHECK(zero == 4);
    CHECK(r.macro_f1 == doctest::Approx(1.0 / 15));
    CHECK(r.match.cluster_to_species.at(0) == "s0");
}

TEST_CASE("six clusters, five species: one cluster left out") {
    HardAssignment a;
    a.k = 6;
    std::vector<std::string> labels;
    for (int c = 0; c < 5; ++c)
        for (int i = 0; i < 10; ++i) {
            a.cluster_of.push_back(c);
            labels.push_back("sp" + std::to_string(c));
        }
    for (int i = 0; i < 4; ++i) {
        a.cluster_of.push_back(5);
        labels.push_back("sp2");
    }
    const auto r = evaluate(a, labels);
    CHECK(r.match.unmatched_clusters == std::vector<int>{5});
    CHECK(r.per_species[2].fn == 4);
    CHECK(r.per_species[2].fp == 0);
    CHECK(r.per_species[2].recall == doctest::Approx(10.0 / 14));
    CHECK(r.confusion.unmatched_cluster_counts[2] == 4);
    CHECK(r.correct == 50);
}

TEST_CASE("noise lowers recall but never adds false positives") {
    HardAssignment a;
    a.k = 2;
    a.cluster_of = {0, 0, kNoise, 1, 1, kNoise};
    const std::vector<std::string> labels{"x", "x", "x", "y", "y", "y"};
    const auto r = evaluate(a, labels);
    CHECK(r.per_species[0].fp == 0);
    CHECK(r.per_species[0].fn == 1);
    CHECK(r.per_species[0].recall == doctest::Approx(2.0 / 3));
    CHECK(r.confusion.noise_counts == std::vector<std::int64_t>{1, 1});
    CHECK(r.accuracy == doctest::Approx(4.0 / 6));
}

TEST_CASE("relabeling clusters leaves the report unchanged") {
    const auto [a, labels] = expand(from_confusion(kSpecies, kTable));
    const auto base = nlohmann::json(evaluate(a, labels));
    const std::vector<int> relabel{3, 0, 4, 1, 2};
    HardAssignment b = a;
    for (auto& c : b.cluster_of) c = relabel[static_cast<std::size_t>(c)];
    auto moved = nlohmann::json(evaluate(b, labels));
    CHECK(moved["per_species"] == base["per_species"]);
    CHECK(moved["macro_f1"] == base["macro_f1"]);
    CHECK(moved["accuracy"] == base["accuracy"]);
    CHECK(moved["confusion"]["counts"] == base["confusion"]["counts"]);
}

TEST_CASE("matching equals exhaustive search on random tables") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t rows = 1 + rng() % 6, cols = 1 + rng() % 6;
        CountMatrix w(rows, std::vector<std::int64_t>(cols));
        for (auto& row : w)
            for (auto& v : row) v = static_cast<std::int64_t>(rng() % 8);
        const auto m = max_weight_matching(w);
        std::int64_t got = 0;
        std::vector<int> seen;
        for (std::size_t r = 0; r < rows; ++r) {
            if (m[r] < 0) continue;
            got += w[r][static_cast<std::size_t>(m[r])];
            seen.push_back(m[r]);
        }
        std::sort(seen.begin(), seen.end());
        CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
        CHECK(seen.size() == std::min(rows, cols));
        CHECK(got == brute_best(w));
    }
}

TEST_CASE("matching ties resolve toward the earliest species") {
    // all-equal weights: every matching is optimal
    const CountMatrix w(3, std::vector<std::int64_t>(3, 4));
    CHECK(max_weight_matching(w) == std::vector<int>{0, 1, 2});
    const CountMatrix wide{{1, 1, 1, 1}};
    CHECK(max_weight_matching(wide) == std::vector<int>{0});
}

TEST_CASE("integer consistency and bounds") {
    const auto r = evaluate(from_confusion(kSpecies, kTable));
    std::int64_t tp = 0;
    for (const auto& s : r.per_species) {
        CHECK(s.recall * static_cast<double>(s.total) == doctest::Approx(static_cast<double>(s.tp)));
        CHECK(s.tp + s.fn == s.total);
        for (double v : {s.precision, s.recall, s.f1}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        tp += s.tp;
    }
    CHECK(r.accuracy == static_cast<double>(tp) / static_cast<double>(r.n));
}

TEST_CASE("errors") {
    HardAssignment empty;
    CHECK_THROWS(evaluate(empty, std::vector<std::string>{}));
    HardAssignment a;
    a.k = 1;
    a.cluster_of = {0, 0};
    CHECK_THROWS(evaluate(a, std::vector<std::string>{"x", ""}));
    CHECK_THROWS(evaluate(a, std::vector<std::string>{"x"}));
}
