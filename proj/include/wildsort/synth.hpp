#pragma once

#include "wildsort/common.hpp"
#include "wildsort/embedding_store.hpp"

#include <optional>
#include <utility>

namespace wildsort {

/// Labeled Gaussian-mixture test data.
struct FixtureSpec {
    std::size_t n_clusters = 5;
    std::size_t per_cluster_n = 100;
    std::size_t dim = 10;
    /// Minimum centroid distance, in units of the within-cluster sigma (1).
    double separation = 8.0;
    Seed seed = 0;
    /// Optional [lo, hi] range for per-cluster, per-axis sigma scaling.
    std::optional<std::pair<double, double>> anisotropy;
};

struct Fixture {
    EmbeddingMatrix data;
    /// n_clusters x dim, row c is the centroid of label "c<c>".
    RowMatrix centroids;
};

/// Centroids sit on a randomly rotated regular simplex with edge length
/// `separation`, so every pairwise centroid distance equals it exactly.
/// Items are ordered cluster by cluster; labels are "c0", "c1", ...
Fixture generate_fixture(const FixtureSpec& spec);

} // namespace wildsort
