#pragma once

#include "wildsort/assignment.hpp"
#include "wildsort/dbscan.hpp"
#include "wildsort/embedding_store.hpp"
#include "wildsort/evaluation.hpp"
#include "wildsort/gmm.hpp"
#include "wildsort/neighbor_embedding.hpp"
#include "wildsort/ordering.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wildsort {

inline constexpr int kManifestSchema = 1;

struct InputConfig {
    std::filesystem::path path;
    Format format = Format::Csv;
    /// Optional JSON-lines label sidecar merged after loading.
    std::optional<std::filesystem::path> labels;
    bool normalize = true;
};

struct ReductionConfig {
    enum class Kind { None, Pca, Umap };
    Kind kind = Kind::None;
    /// PCA target; when unset, 50 if d > 50, otherwise d is kept.
    std::optional<std::size_t> pca_dims;
    UmapConfig umap;
};

struct MethodConfig {
    enum class Kind { None, Gmm, Dbscan };
    Kind kind = Kind::Gmm;
    int k_min = 2;
    int k_max = 15;
    Seed seed = 0;
    int restarts = 5;
    DbscanParams dbscan;
};

struct OrderingConfig {
    TsneConfig tsne;
    std::size_t runs = 10;
    /// PCA before t-SNE; unset means 50 when d > 50, 0 disables.
    std::optional<std::size_t> pca_dims;
};

enum class EvalMode { Auto, On, Off };

struct PipelineConfig {
    InputConfig input;
    ReductionConfig reduction;
    MethodConfig method;
    std::optional<OrderingConfig> ordering;
    EvalMode evaluate = EvalMode::Auto;
    std::filesystem::path output_dir;
    /// Reuse per-stage cache files under output_dir/cache.
    bool use_cache = true;
};

/// Parse a declarative config tree. Missing keys take defaults.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
/// Fully resolved config, as embedded in the manifest.
nlohmann::json to_json(const PipelineConfig& c);

/// Error tagged with the pipeline stage that raised it.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& message)
        : Error(stage + ": " + message), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

// Individual stages, shared by the CLI subcommands.

EmbeddingMatrix load_input(const InputConfig& input);

/// Resolved PCA dimension for a requested value and input width.
std::size_t resolve_pca_dims(std::optional<std::size_t> requested, std::size_t n, std::size_t d);

RowMatrix reduce(const EmbeddingMatrix& m, const ReductionConfig& config);

struct ClusteringResult {
    HardAssignment assignment;
    std::optional<BicReport> bic_report;
};

ClusteringResult cluster(const RowMatrix& x, const MethodConfig& config);

struct OrderingResult {
    std::vector<Ordering> orderings;
    /// Present when every item is labeled.
    std::optional<AggregateCoherence> coherence;
};

OrderingResult order(const EmbeddingMatrix& m, const OrderingConfig& config);

struct PipelineResult {
    nlohmann::json manifest;
    std::string tables;
};

/// Execute every configured stage and, if `write` is set, store
/// manifest.json and tables.txt in config.output_dir. Outputs are written
/// only after all stages succeed.
PipelineResult run_pipeline(const PipelineConfig& config, bool write = true);

/// Manifest copy with volatile fields (timestamp) removed, for comparisons.
nlohmann::json manifest_without_volatile(const nlohmann::json& manifest);

// Text renderings.

/// Actual x predicted table with an F1 column and macro-average row.
std::string render_eval_table(const nlohmann::json& eval_report);
/// Species | Coherence (mean +- std) | N.
std::string render_coherence_table(const nlohmann::json& aggregate);
/// Both tables (or placeholders) for a manifest.
std::string render_tables(const nlohmann::json& manifest);

/// 64-bit FNV-1a, used for cache keys.
std::uint64_t content_hash(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

} // namespace wildsort
