#pragma once

#include "wildsort/common.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wildsort {

struct ItemRecord {
    std::string id;
    /// Ground truth. Only the evaluation path ever reads it.
    std::optional<std::string> label;
    /// Crop image path relative to the crop root, used by the viewer.
    std::optional<std::string> crop_ref;

    bool operator==(const ItemRecord&) const = default;
};

enum class Format { Csv, Jsonl, RawF32 };

Format parse_format(std::string_view name);
std::string_view format_name(Format f);
/// Guess the format from the file extension (.csv, .jsonl, .f32/.bin).
Format format_from_extension(const std::filesystem::path& path);

/// N x d feature vectors with one ItemRecord per row.
///
/// Construction validates: N >= 1, d >= 1, all values finite, ids unique.
class EmbeddingMatrix {
public:
    EmbeddingMatrix(std::vector<ItemRecord> items, RowMatrix vectors);

    std::size_t n() const { return static_cast<std::size_t>(vectors_.rows()); }
    std::size_t d() const { return static_cast<std::size_t>(vectors_.cols()); }

    const std::vector<ItemRecord>& items() const { return items_; }
    const RowMatrix& vectors() const { return vectors_; }

    std::vector<std::string> ids() const;
    bool has_all_labels() const;
    bool has_any_label() const;
    /// Labels per row; throws Error if any row is unlabeled.
    std::vector<std::string> labels() const;

    /// Same items, new vectors (row count must match).
    EmbeddingMatrix with_vectors(RowMatrix vectors) const;
    EmbeddingMatrix without_labels() const;
    EmbeddingMatrix select_rows(std::span<const std::size_t> rows) const;

private:
    std::vector<ItemRecord> items_;
    RowMatrix vectors_;
};

EmbeddingMatrix load_embeddings(const std::filesystem::path& path, Format format);
void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path, Format format);

/// Sidecar path for a rawf32 file: same stem, ".jsonl" extension.
std::filesystem::path rawf32_sidecar_path(const std::filesystem::path& path);

/// Records of a JSON-lines label file, in file order.
std::vector<ItemRecord> read_label_file(const std::filesystem::path& path);
/// Copy labels onto matching ids. Unknown ids are an error.
std::vector<ItemRecord> merge_labels(std::vector<ItemRecord> items, std::span<const ItemRecord> labels);

/// Merge labels from a JSON-lines file of {"id" or "item_id", "label"} objects (the
/// annotation export format). Items absent from the file keep their label.
/// Unknown ids are an error.
EmbeddingMatrix apply_label_file(const EmbeddingMatrix& m, const std::filesystem::path& path);

/// Scale each row to unit Euclidean norm. Throws Error naming the first
/// zero-norm row.
EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m);

} // namespace wildsort
