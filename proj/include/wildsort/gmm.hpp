#pragma once

#include "wildsort/assignment.hpp"
#include "wildsort/common.hpp"
#include "wildsort/embedding_store.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace wildsort {

/// Full-covariance Gaussian mixture.
struct GmmModel {
    std::vector<double> weights;
    RowMatrix means;                          ///< k x d
    std::vector<Eigen::MatrixXd> covariances; ///< k matrices, d x d, SPD
    /// Total data log-likelihood of the training set under these parameters.
    double log_likelihood = 0.0;
    /// Number of M-steps performed by the winning restart.
    int iterations = 0;
    bool converged = false;
    /// Log-likelihood after initialization and after every M-step of the
    /// winning restart.
    std::vector<double> trace;

    std::size_t k() const { return weights.size(); }
    std::size_t d() const { return static_cast<std::size_t>(means.cols()); }
};

struct EmOptions {
    int restarts = 5;
    int max_iterations = 200;
    /// Stop when |dL| < tolerance * |L|.
    double tolerance = 1e-6;
    /// Lower bound on covariance eigenvalues, as a fraction of the data's mean variance.
    double covariance_floor = 1e-6;
    /// Lloyd iterations run after k-means++ seeding.
    int kmeans_iterations = 100;
};

/// Fit a k-component mixture with k-means++ seeded EM. The restart with the
/// highest final log-likelihood is returned. Deterministic given `seed`.
GmmModel em_fit(const EmbeddingMatrix& m, std::size_t k, Seed seed, const EmOptions& options = {});
GmmModel em_fit(const RowMatrix& x, std::size_t k, Seed seed, const EmOptions& options = {});

/// Sum over rows of log sum_j w_j N(x; mu_j, Sigma_j), log-sum-exp stabilized.
double log_likelihood(const GmmModel& model, const EmbeddingMatrix& m);
double log_likelihood(const GmmModel& model, const RowMatrix& x);

/// Posterior component probabilities, N x k, rows summing to 1.
RowMatrix responsibilities(const GmmModel& model, const RowMatrix& x);

/// Free parameters of a full-covariance mixture: k[d + d(d+1)/2] + (k-1).
std::int64_t gmm_parameter_count(std::int64_t k, std::int64_t d);

struct BicScore {
    std::int64_t parameters = 0;
    double value = 0.0;
};

/// -2 ln L + p ln n.
BicScore bic(const GmmModel& model, std::size_t n);

struct BicEntry {
    int k = 0;
    std::int64_t parameters = 0;
    std::optional<double> bic;
    std::optional<double> log_likelihood;
    int iterations = 0;
    /// Set when the fit for this k failed; such entries never win.
    std::optional<std::string> error;
};

struct BicReport {
    std::vector<BicEntry> entries;
    int selected_k = 0;
    int k_min = 0;
    int k_max = 0;
    std::size_t n = 0;
    std::size_t d = 0;
};

struct SelectOptions {
    EmOptions em;
    /// Worker threads used to fit different k concurrently; 0 = hardware.
    unsigned threads = 0;
};

/// Fit every k in [k_min, k_max] and keep the BIC minimizer (ties toward
/// smaller k). Each k draws from its own stream derived from (seed, k).
std::pair<BicReport, GmmModel> select_components(const EmbeddingMatrix& m, int k_min, int k_max, Seed seed,
                                                 const SelectOptions& options = {});
std::pair<BicReport, GmmModel> select_components(const RowMatrix& x, int k_min, int k_max, Seed seed,
                                                 const SelectOptions& options = {});

/// Argmax-responsibility component per row; ties go to the lower index.
HardAssignment hard_assign(const GmmModel& model, const EmbeddingMatrix& m);
HardAssignment hard_assign(const GmmModel& model, const RowMatrix& x);

void to_json(nlohmann::json& j, const GmmModel& model);
void from_json(const nlohmann::json& j, GmmModel& model);
void to_json(nlohmann::json& j, const BicReport& report);

} // namespace wildsort
