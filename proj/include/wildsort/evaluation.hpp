#pragma once

#include "wildsort/assignment.hpp"
#include "wildsort/common.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace wildsort {

using CountMatrix = std::vector<std::vector<std::int64_t>>;

/// Maximum-weight one-to-one matching of rows to columns (rectangular
/// allowed). Returns the matched column per row, or -1 for unmatched rows;
/// min(rows, cols) pairs are always formed. Among optimal matchings the one
/// that is lexicographically smallest in (row order, column order) wins.
std::vector<int> max_weight_matching(const CountMatrix& weights);

/// Cluster x species contingency counts. Noise items are tallied separately.
struct Contingency {
    std::vector<int> clusters;         ///< ascending cluster ids
    std::vector<std::string> species;  ///< order of first appearance
    CountMatrix counts;                ///< [cluster][species]
    std::vector<std::int64_t> noise;   ///< per species

    std::int64_t total() const;
};

Contingency build_contingency(const HardAssignment& assignment, std::span<const std::string> labels);

struct ClusterMatch {
    std::map<int, std::string> cluster_to_species;
    std::vector<int> unmatched_clusters;
    /// Sum of matched counts (the maximized diagonal mass).
    std::int64_t objective = 0;
};

ClusterMatch match_clusters(const Contingency& table);
ClusterMatch match_clusters(const HardAssignment& assignment, std::span<const std::string> labels);

/// Species x matched-cluster confusion, laid out like a square table whose
/// column s is the cluster matched to species s.
struct ConfusionMatrix {
    std::vector<std::string> species;
    std::vector<std::optional<int>> matched_cluster;
    CountMatrix counts;                               ///< [actual][predicted]
    std::vector<std::int64_t> unmatched_cluster_counts; ///< per actual species
    std::vector<std::int64_t> noise_counts;             ///< per actual species
};

struct SpeciesMetrics {
    std::string species;
    std::int64_t total = 0;
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvalReport {
    ConfusionMatrix confusion;
    std::vector<SpeciesMetrics> per_species;
    double macro_f1 = 0.0;
    double accuracy = 0.0;
    std::int64_t n = 0;
    std::int64_t correct = 0;
    ClusterMatch match;
};

/// Per-species precision/recall/F1 under the optimal cluster matching,
/// unweighted macro-F1 and accuracy. Noise and unmatched-cluster items only
/// count as false negatives.
EvalReport evaluate(const Contingency& table);
EvalReport evaluate(const HardAssignment& assignment, std::span<const std::string> labels);

void to_json(nlohmann::json& j, const EvalReport& r);

} // namespace wildsort
