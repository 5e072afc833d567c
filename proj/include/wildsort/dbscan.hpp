#pragma once

#include "wildsort/assignment.hpp"
#include "wildsort/common.hpp"
#include "wildsort/embedding_store.hpp"

#include <vector>

namespace wildsort {

struct DbscanParams {
    double eps = 0.5;      ///< neighborhood radius, inclusive
    std::size_t min_pts = 5; ///< neighbors within eps (self included) for a core point
};

/// Classic DBSCAN with brute-force neighbor queries. Cluster ids follow the
/// row order of the first core point of each cluster; border points go to
/// the first cluster that reaches them. Noise is kNoise.
HardAssignment dbscan_fit(const EmbeddingMatrix& m, const DbscanParams& params);
HardAssignment dbscan_fit(const RowMatrix& x, const DbscanParams& params);

/// Distance from every point to its k-th nearest other point, sorted
/// ascending. Plot it and read eps off the elbow.
std::vector<double> k_distance_profile(const EmbeddingMatrix& m, std::size_t k);
std::vector<double> k_distance_profile(const RowMatrix& x, std::size_t k);

} // namespace wildsort
