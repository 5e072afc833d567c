#pragma once

#include "wildsort/common.hpp"
#include "wildsort/embedding_store.hpp"
#include "wildsort/neighbor_embedding.hpp"

#include <nlohmann/json_fwd.hpp>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace wildsort {

/// Items sorted by a 1D coordinate.
struct Ordering {
    /// permutation[r] is the item shown at rank r.
    std::vector<std::size_t> permutation;
    /// 1D coordinate of each item, indexed by item (not by rank).
    std::vector<double> coordinates;
    Seed seed = 0;
};

/// Ascending sort of a 1D embedding; equal coordinates fall back to item id.
Ordering sort_1d(const LowDimEmbedding& embedding, std::span<const std::string> ids, Seed seed = 0);

struct SpeciesCoherence {
    std::size_t max_run = 0;
    std::size_t total = 0;
    double coherence_pct = 0.0;
};

struct CoherenceReport {
    /// Keyed by species name.
    std::map<std::string, SpeciesCoherence> per_species;
    /// Count-weighted mean of the per-species percentages.
    double overall_pct = 0.0;
};

/// Longest contiguous run of each species in the ordered sequence divided by
/// its total count, as a percentage. `labels` is indexed by item.
CoherenceReport coherence(const Ordering& ordering, std::span<const std::string> labels);

/// Same metric over a label sequence already in display order.
CoherenceReport coherence_of_sequence(std::span<const std::string> ordered_labels);

struct MeanStd {
    double mean = 0.0;
    /// Sample (n-1) standard deviation; absent for a single run.
    std::optional<double> std;
};

struct AggregateCoherence {
    std::size_t runs = 0;
    std::vector<Seed> seeds;
    std::map<std::string, MeanStd> per_species;
    std::map<std::string, std::size_t> species_counts;
    MeanStd overall;
    /// Individual run results, in seed order.
    std::vector<CoherenceReport> reports;
    std::vector<Ordering> orderings;
};

MeanStd mean_std(std::span<const double> values);

/// Combine per-run coherence reports (species sets must agree).
AggregateCoherence aggregate_reports(std::vector<CoherenceReport> reports, std::vector<Seed> seeds);

struct AggregateOptions {
    /// Worker threads for independent runs; 0 = hardware.
    unsigned threads = 0;
};

/// Run t-SNE with seeds config.seed + 0 .. runs-1, sort each result and score
/// its coherence. Labels never reach the embedding.
AggregateCoherence aggregate_runs(const EmbeddingMatrix& m, std::span<const std::string> labels,
                                  const TsneConfig& config, std::size_t runs, const AggregateOptions& options = {});

void to_json(nlohmann::json& j, const Ordering& o);
void to_json(nlohmann::json& j, const CoherenceReport& r);
void to_json(nlohmann::json& j, const AggregateCoherence& a);

} // namespace wildsort
