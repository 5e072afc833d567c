#pragma once

#include "wildsort/common.hpp"
#include "wildsort/embedding_store.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace wildsort {

/// Low-dimensional coordinates produced by t-SNE or UMAP. Row i is input row i.
struct LowDimEmbedding {
    RowMatrix coords;
    std::string method;
    nlohmann::json config;
    /// KL divergence (t-SNE) or fuzzy-set cross-entropy (UMAP) at the end.
    double final_objective = 0.0;
    /// (iteration, objective) samples recorded during optimization.
    std::vector<std::pair<int, double>> objective_trace;

    std::size_t n() const { return static_cast<std::size_t>(coords.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(coords.cols()); }
};

void to_json(nlohmann::json& j, const LowDimEmbedding& e);

/// Squared Euclidean distances between all rows.
RowMatrix squared_distances(const RowMatrix& x);

// ---------------------------------------------------------------- t-SNE

struct TsneConfig {
    int output_dim = 1;
    double perplexity = 30.0;
    double learning_rate = 200.0;
    int iterations = 1000;
    double exaggeration_factor = 12.0;
    int exaggeration_iters = 250;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
    int momentum_switch_iter = 250;
    /// "random" draws N(0, init_sd); "pca" uses leading PCA coordinates
    /// scaled so the first has standard deviation init_sd. The seed is
    /// unused under "pca".
    std::string init = "random";
    double init_sd = 1e-4;
    Seed seed = 0;

    /// Throws std::invalid_argument when the config cannot run on n points.
    void validate(std::size_t n) const;
};

void to_json(nlohmann::json& j, const TsneConfig& c);
void from_json(const nlohmann::json& j, TsneConfig& c);

struct PerplexityCalibration {
    /// Gaussian precision 1/(2 sigma_i^2) per row.
    std::vector<double> betas;
    /// Conditional probabilities p_{j|i}; rows sum to 1, zero diagonal.
    RowMatrix conditional;
    /// Achieved perplexity 2^H(P_i) per row.
    std::vector<double> achieved;
};

/// Per-row bisection on the Gaussian bandwidth until the row perplexity
/// matches the target within 1e-5 (at most 50 steps). Rows whose target is
/// unreachable because of duplicate points stop at the bandwidth floor.
PerplexityCalibration perplexity_calibration(const RowMatrix& sq_distances, double perplexity);

/// Symmetrized joint probabilities (P_{j|i} + P_{i|j}) / (2N).
RowMatrix joint_probabilities(const PerplexityCalibration& calibration);

/// KL(P || Q) for a Student-t (one degree of freedom) low-dimensional kernel.
double kl_divergence(const RowMatrix& p, const RowMatrix& y);

/// Analytic gradient of kl_divergence with respect to y.
RowMatrix kl_gradient(const RowMatrix& p, const RowMatrix& y);

/// Exact (O(N^2)) t-SNE with momentum, per-parameter gains and early
/// exaggeration. Fully determined by config.seed.
LowDimEmbedding tsne_embed(const EmbeddingMatrix& m, const TsneConfig& config);
LowDimEmbedding tsne_embed(const RowMatrix& x, const TsneConfig& config);

// ----------------------------------------------------------------- UMAP

struct UmapConfig {
    int n_neighbors = 15;
    double min_dist = 0.1;
    double spread = 1.0;
    int output_dim = 10;
    int n_epochs = 300;
    double learning_rate = 1.0;
    int negative_sample_rate = 5;
    double repulsion_strength = 1.0;
    Seed seed = 0;

    void validate(std::size_t n) const;
};

void to_json(nlohmann::json& j, const UmapConfig& c);
void from_json(const nlohmann::json& j, UmapConfig& c);

struct NeighborGraph {
    /// n x k neighbor indices (self excluded), nearest first.
    std::vector<std::vector<std::size_t>> indices;
    std::vector<std::vector<double>> distances;
};

/// Exact k-nearest neighbors by brute force; ties go to the lower index.
NeighborGraph exact_knn(const RowMatrix& x, std::size_t k);

struct WeightedEdge {
    std::size_t from = 0;
    std::size_t to = 0;
    double weight = 0.0;
};

/// Directed membership strengths exp(-(d - rho_i) / sigma_i) with local
/// connectivity 1 and sum target log2(k), for each kNN edge.
std::vector<WeightedEdge> membership_strengths(const NeighborGraph& graph);

/// Probabilistic t-conorm a + b - a*b.
constexpr double fuzzy_union(double a, double b) { return a + b - a * b; }

/// Symmetric fuzzy graph: every edge appears in both directions, sorted by
/// (from, to).
std::vector<WeightedEdge> fuzzy_simplicial_set(const RowMatrix& x, std::size_t n_neighbors);

/// Fit 1 / (1 + a x^(2b)) to the min_dist/spread membership curve.
std::pair<double, double> find_ab_params(double spread, double min_dist);

/// Cross-entropy between the fuzzy graph and the low-dimensional memberships
/// over all unordered pairs.
double umap_cross_entropy(const std::vector<WeightedEdge>& graph, const RowMatrix& y, double a, double b);

/// UMAP with exact kNN, PCA-based initialization and negative-sampling SGD.
LowDimEmbedding umap_embed(const EmbeddingMatrix& m, const UmapConfig& config);
LowDimEmbedding umap_embed(const RowMatrix& x, const UmapConfig& config);

} // namespace wildsort
