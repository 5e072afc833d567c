#pragma once

#include "wildsort/common.hpp"
#include "wildsort/embedding_store.hpp"

#include <nlohmann/json_fwd.hpp>

namespace wildsort {

/// Principal axes of a fitted dataset.
///
/// `components` holds one unit-norm axis per row, ordered by decreasing
/// explained variance. Each axis is sign-normalized so its largest-magnitude
/// entry is positive, which makes fitting deterministic.
struct PcaModel {
    Vector mean;
    RowMatrix components;
    Vector explained_variance;
    /// Sum of all sample-covariance eigenvalues (total variance of the data).
    double total_variance = 0.0;

    std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
    std::size_t output_dim() const { return static_cast<std::size_t>(components.rows()); }
};

/// Fit the top-q principal axes of the sample covariance (1/(N-1)).
/// Requires N >= 2 and 1 <= q <= min(N-1, d).
PcaModel pca_fit(const EmbeddingMatrix& m, std::size_t q);

/// Project onto the model axes: (x - mean) * components^T.
EmbeddingMatrix pca_transform(const PcaModel& model, const EmbeddingMatrix& m);
RowMatrix pca_transform(const PcaModel& model, const RowMatrix& x);

/// Map projected coordinates back to the input space.
RowMatrix pca_inverse_transform(const PcaModel& model, const RowMatrix& projected);

void to_json(nlohmann::json& j, const PcaModel& model);
void from_json(const nlohmann::json& j, PcaModel& model);

} // namespace wildsort
