#include "wildsort/gmm.hpp"
#include "wildsort/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

namespace wildsort {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836; // ln(2*pi)

struct Factor {
    Eigen::MatrixXd lower; // Cholesky factor L, Sigma = L L^T
    double log_det = 0.0;
};

// A factorization is treated as failed when Eigen reports it or when the
// smallest pivot is negligible relative to the matrix scale.
bool try_cholesky(const Eigen::MatrixXd& cov, Factor& out) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) return false;
    Eigen::MatrixXd lower = llt.matrixL();
    const Vector diag = lower.diagonal();
    const double max_var = cov.diagonal().maxCoeff();
    if (!(diag.minCoeff() > 0.0) || diag.minCoeff() * diag.minCoeff() <= 1e-12 * max_var) return false;
    out.lower = std::move(lower);
    out.log_det = 2.0 * diag.array().log().sum();
    return true;
}

// Factorize `cov`, adding c * trace(cov)/d to its diagonal for
// c = 1e-6, 1e-5, ... 1e-2 until Cholesky succeeds. `cov` is updated in place
// with whatever regularization was required.
Factor factorize(Eigen::MatrixXd& cov, double fallback_scale, std::size_t component) {
    Factor f;
    if (try_cholesky(cov, f)) return f;
    const double d = static_cast<double>(cov.rows());
    double scale = cov.trace() / d;
    if (!(scale > 0.0) || !std::isfinite(scale)) scale = fallback_scale;
    for (double c = 1e-6; c <= 1e-2 * 1.000001; c *= 10.0) {
        Eigen::MatrixXd trial = cov;
        trial.diagonal().array() += c * scale;
        if (try_cholesky(trial, f)) {
            cov = std::move(trial);
            return f;
        }
    }
    throw Error("gmm: covariance of component " + std::to_string(component) +
                " is singular after regularization up to 1e-2 * trace/d");
}

std::vector<Factor> factorize_all(GmmModel& model, double fallback_scale) {
    std::vector<Factor> factors;
    factors.reserve(model.k());
    for (std::size_t j = 0; j < model.k(); ++j) {
        factors.push_back(factorize(model.covariances[j], fallback_scale, j));
    }
    return factors;
}

// log(w_j) + log N(x_i; mu_j, Sigma_j) for every row and component.
RowMatrix weighted_log_densities(const GmmModel& model, const std::vector<Factor>& factors, const RowMatrix& x) {
    const Eigen::Index n = x.rows();
    const auto k = static_cast<Eigen::Index>(model.k());
    const double d = static_cast<double>(x.cols());
    RowMatrix out(n, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto& f = factors[static_cast<std::size_t>(j)];
        Eigen::MatrixXd centered = (x.rowwise() - model.means.row(j)).transpose();
        f.lower.triangularView<Eigen::Lower>().solveInPlace(centered);
        const Eigen::VectorXd maha = centered.colwise().squaredNorm().transpose();
        const double base = std::log(model.weights[static_cast<std::size_t>(j)]) - 0.5 * (d * kLog2Pi + f.log_det);
        out.col(j) = (base - 0.5 * maha.array()).matrix();
    }
    return out;
}

// Row-wise log-sum-exp; converts `logp` into responsibilities in place and
// returns the total log-likelihood.
double normalize_rows(RowMatrix& logp) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < logp.rows(); ++i) {
        const double mx = logp.row(i).maxCoeff();
        const double lse = mx + std::log((logp.row(i).array() - mx).exp().sum());
        total += lse;
        logp.row(i) = (logp.row(i).array() - lse).exp().matrix();
    }
    return total;
}

Eigen::MatrixXd ml_covariance(const RowMatrix& x) {
    const RowMatrix centered = x.rowwise() - x.colwise().mean();
    return (centered.transpose() * centered) / static_cast<double>(x.rows());
}

// Eigenvalues below `floor` are raised to it; this is the likelihood maximizer
// over covariances bounded below by floor * I.
void clamp_eigenvalues(Eigen::MatrixXd& cov, double floor) {
    if (!(floor > 0.0)) return;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() >= floor) return;
    const Eigen::VectorXd clamped = eig.eigenvalues().cwiseMax(floor);
    cov = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
}

// Weighted ML parameter estimates. Components whose responsibility mass
// vanished keep their previous mean and covariance.
void m_step(GmmModel& model, const RowMatrix& x, const RowMatrix& resp, double floor) {
    const auto n = static_cast<double>(x.rows());
    const Eigen::Index k = resp.cols();
    const Eigen::RowVectorXd mass = resp.colwise().sum();
    for (Eigen::Index j = 0; j < k; ++j) {
        const double nk = mass(j);
        auto& w = model.weights[static_cast<std::size_t>(j)];
        if (!(nk > std::numeric_limits<double>::min() * n)) {
            w = std::numeric_limits<double>::min();
            continue;
        }
        w = nk / n;
        model.means.row(j) = (resp.col(j).transpose() * x) / nk;
        const RowMatrix centered = x.rowwise() - model.means.row(j);
        const RowMatrix weighted = centered.array().colwise() * resp.col(j).array().sqrt();
        auto& cov = model.covariances[static_cast<std::size_t>(j)];
        cov = (weighted.transpose() * weighted) / nk;
        clamp_eigenvalues(cov, floor);
    }
}

std::vector<Eigen::Index> kmeanspp_centers(const RowMatrix& x, std::size_t k, Rng& rng) {
    const Eigen::Index n = x.rows();
    std::vector<Eigen::Index> centers;
    centers.reserve(k);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centers.push_back(pick(rng));
    Vector d2 = (x.rowwise() - x.row(centers[0])).rowwise().squaredNorm();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    while (centers.size() < k) {
        const double total = d2.sum();
        Eigen::Index chosen = -1;
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (acc > target && d2(i) > 0.0) {
                    chosen = i;
                    break;
                }
            }
            if (chosen < 0) {
                for (Eigen::Index i = n - 1; i >= 0; --i) {
                    if (d2(i) > 0.0) { chosen = i; break; }
                }
            }
        } else {
            // All remaining points coincide with a center; take any unused row.
            do {
                chosen = pick(rng);
            } while (std::find(centers.begin(), centers.end(), chosen) != centers.end());
        }
        centers.push_back(chosen);
        d2 = d2.cwiseMin((x.rowwise() - x.row(chosen)).rowwise().squaredNorm());
    }
    return centers;
}

GmmModel initial_model(const RowMatrix& x, std::size_t k, Rng& rng, const Eigen::MatrixXd& global_cov,
                       const EmOptions& options, double floor) {
    const Eigen::Index n = x.rows();
    const auto kk = static_cast<Eigen::Index>(k);
    const auto centers = kmeanspp_centers(x, k, rng);
    RowMatrix means(kk, x.cols());
    for (std::size_t c = 0; c < k; ++c) means.row(static_cast<Eigen::Index>(c)) = x.row(centers[c]);
    std::vector<Eigen::Index> label(static_cast<std::size_t>(n), -1);
    for (int it = 0; it <= options.kmeans_iterations; ++it) {
        bool moved = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best;
            (means.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
            if (label[static_cast<std::size_t>(i)] != best) {
                label[static_cast<std::size_t>(i)] = best;
                moved = true;
            }
        }
        if (!moved || it == options.kmeans_iterations) break;
        RowMatrix sums = RowMatrix::Zero(kk, x.cols());
        Vector counts = Vector::Zero(kk);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(label[static_cast<std::size_t>(i)]) += x.row(i);
            counts(label[static_cast<std::size_t>(i)]) += 1.0;
        }
        for (Eigen::Index c = 0; c < kk; ++c)
            if (counts(c) > 0.0) means.row(c) = sums.row(c) / counts(c);
    }
    RowMatrix resp = RowMatrix::Zero(n, kk);
    for (Eigen::Index i = 0; i < n; ++i) resp(i, label[static_cast<std::size_t>(i)]) = 1.0;
    GmmModel model;
    model.weights.assign(k, 0.0);
    model.means = means;
    model.covariances.assign(k, global_cov);
    m_step(model, x, resp, floor);
    // Duplicate centers can leave a cluster empty; give it one point's worth of mass.
    double total = 0.0;
    for (auto& w : model.weights) {
        w = std::max(w, 1.0 / static_cast<double>(n));
        total += w;
    }
    for (auto& w : model.weights) w /= total;
    return model;
}

GmmModel run_em(const RowMatrix& x, GmmModel model, const EmOptions& options, double fallback_scale,
                double floor) {
    auto factors = factorize_all(model, fallback_scale);
    RowMatrix resp = weighted_log_densities(model, factors, x);
    double ll = normalize_rows(resp);
    model.trace = {ll};
    model.iterations = 0;
    model.converged = false;
    for (int it = 1; it <= options.max_iterations; ++it) {
        GmmModel next = model;
        m_step(next, x, resp, floor);
        auto next_factors = factorize_all(next, fallback_scale);
        RowMatrix next_resp = weighted_log_densities(next, next_factors, x);
        const double next_ll = normalize_rows(next_resp);
        if (!std::isfinite(next_ll)) {
            throw Error("gmm: log-likelihood became non-finite at iteration " + std::to_string(it));
        }
        model = std::move(next);
        resp = std::move(next_resp);
        model.trace.push_back(next_ll);
        model.iterations = it;
        const double change = std::abs(next_ll - ll);
        ll = next_ll;
        if (change < options.tolerance * std::abs(ll)) {
            model.converged = true;
            break;
        }
    }
    model.log_likelihood = ll;
    return model;
}

void check_dims(const GmmModel& model, const RowMatrix& x) {
    if (static_cast<std::size_t>(x.cols()) != model.d()) {
        throw std::invalid_argument("gmm: dimension mismatch (model " + std::to_string(model.d()) + ", data " +
                                    std::to_string(x.cols()) + ")");
    }
}

} // namespace

GmmModel em_fit(const RowMatrix& x, std::size_t k, Seed seed, const EmOptions& options) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (k < 1) throw std::invalid_argument("em_fit: k must be >= 1");
    if (k >= n && !(k == 1 && n == 1)) {
        throw std::invalid_argument("em_fit: k=" + std::to_string(k) + " requires more than " + std::to_string(k) +
                                    " samples (N=" + std::to_string(n) + ")");
    }
    if (options.restarts < 1) throw std::invalid_argument("em_fit: restarts must be >= 1");

    const Eigen::MatrixXd global_cov = ml_covariance(x);
    double fallback_scale = global_cov.trace() / static_cast<double>(x.cols());
    if (!(fallback_scale > 0.0)) fallback_scale = 1.0;
    const double floor = options.covariance_floor * fallback_scale;

    Rng rng(seed);
    std::optional<GmmModel> best;
    std::optional<Error> last_error;
    for (int r = 0; r < options.restarts; ++r) {
        try {
            auto init = initial_model(x, k, rng, global_cov, options, floor);
            auto fitted = run_em(x, std::move(init), options, fallback_scale, floor);
            if (!best || fitted.log_likelihood > best->log_likelihood) best = std::move(fitted);
        } catch (const Error& e) {
            last_error = e;
        }
    }
    if (!best) throw *last_error;
    return std::move(*best);
}

GmmModel em_fit(const EmbeddingMatrix& m, std::size_t k, Seed seed, const EmOptions& options) {
    return em_fit(m.vectors(), k, seed, options);
}

RowMatrix responsibilities(const GmmModel& model, const RowMatrix& x) {
    check_dims(model, x);
    GmmModel copy = model;
    auto factors = factorize_all(copy, 1.0);
    RowMatrix logp = weighted_log_densities(copy, factors, x);
    normalize_rows(logp);
    return logp;
}

double log_likelihood(const GmmModel& model, const RowMatrix& x) {
    check_dims(model, x);
    GmmModel copy = model;
    auto factors = factorize_all(copy, 1.0);
    RowMatrix logp = weighted_log_densities(copy, factors, x);
    return normalize_rows(logp);
}

double log_likelihood(const GmmModel& model, const EmbeddingMatrix& m) { return log_likelihood(model, m.vectors()); }

std::int64_t gmm_parameter_count(std::int64_t k, std::int64_t d) {
    return k * (d + d * (d + 1) / 2) + (k - 1);
}

BicScore bic(const GmmModel& model, std::size_t n) {
    if (n < 2) throw std::invalid_argument("bic: n must be >= 2");
    BicScore s;
    s.parameters = gmm_parameter_count(static_cast<std::int64_t>(model.k()), static_cast<std::int64_t>(model.d()));
    s.value = -2.0 * model.log_likelihood + static_cast<double>(s.parameters) * std::log(static_cast<double>(n));
    return s;
}

std::pair<BicReport, GmmModel> select_components(const RowMatrix& x, int k_min, int k_max, Seed seed,
                                                 const SelectOptions& options) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (k_min < 2 || k_max < k_min) {
        throw std::invalid_argument("select_components: need 2 <= k_min <= k_max (got [" + std::to_string(k_min) +
                                    ", " + std::to_string(k_max) + "])");
    }
    if (static_cast<std::size_t>(k_max) >= n) {
        throw std::invalid_argument("select_components: k_max=" + std::to_string(k_max) + " must be < N=" +
                                    std::to_string(n));
    }
    const std::size_t count = static_cast<std::size_t>(k_max - k_min + 1);
    std::vector<BicEntry> entries(count);
    std::vector<std::optional<GmmModel>> models(count);

    auto work = [&](std::size_t idx) {
        const int k = k_min + static_cast<int>(idx);
        auto& e = entries[idx];
        e.k = k;
        e.parameters = gmm_parameter_count(k, x.cols());
        try {
            auto model = em_fit(x, static_cast<std::size_t>(k), derive_seed(seed, static_cast<std::uint64_t>(k)),
                                options.em);
            const auto score = bic(model, n);
            e.bic = score.value;
            e.log_likelihood = model.log_likelihood;
            e.iterations = model.iterations;
            models[idx] = std::move(model);
        } catch (const Error& err) {
            e.error = err.what();
        }
    };

    unsigned threads = options.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : options.threads;
    threads = std::min<unsigned>(threads, static_cast<unsigned>(count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) work(i);
            });
        }
    }

    BicReport report;
    report.k_min = k_min;
    report.k_max = k_max;
    report.n = n;
    report.d = static_cast<std::size_t>(x.cols());
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < count; ++i) {
        if (!entries[i].bic) continue;
        if (!best || *entries[i].bic < *entries[*best].bic) best = i;
    }
    if (!best) {
        throw Error("select_components: every k in [" + std::to_string(k_min) + ", " + std::to_string(k_max) +
                    "] failed; first error: " + entries.front().error.value_or("unknown"));
    }
    report.selected_k = entries[*best].k;
    report.entries = std::move(entries);
    return {std::move(report), std::move(*models[*best])};
}

std::pair<BicReport, GmmModel> select_components(const EmbeddingMatrix& m, int k_min, int k_max, Seed seed,
                                                 const SelectOptions& options) {
    return select_components(m.vectors(), k_min, k_max, seed, options);
}

HardAssignment hard_assign(const GmmModel& model, const RowMatrix& x) {
    check_dims(model, x);
    GmmModel copy = model;
    auto factors = factorize_all(copy, 1.0);
    const RowMatrix logp = weighted_log_densities(copy, factors, x);
    HardAssignment a;
    a.method = "gmm";
    a.k = static_cast<int>(model.k());
    a.cluster_of.resize(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < logp.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < logp.cols(); ++j) {
            if (logp(i, j) > logp(i, best)) best = j;
        }
        a.cluster_of[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return a;
}

HardAssignment hard_assign(const GmmModel& model, const EmbeddingMatrix& m) { return hard_assign(model, m.vectors()); }

namespace {

nlohmann::json matrix_rows(const Eigen::Ref<const Eigen::MatrixXd>& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd rows_matrix(const nlohmann::json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    const auto cols = rows.empty() ? 0 : rows.front().size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) throw Error("matrix rows have unequal length");
        for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
}

} // namespace

void to_json(nlohmann::json& j, const GmmModel& model) {
    j = nlohmann::json::object();
    j["k"] = model.k();
    j["d"] = model.d();
    j["weights"] = model.weights;
    j["means"] = matrix_rows(model.means);
    auto covs = nlohmann::json::array();
    for (const auto& c : model.covariances) covs.push_back(matrix_rows(c));
    j["covariances"] = std::move(covs);
    j["log_likelihood"] = model.log_likelihood;
    j["iterations"] = model.iterations;
    j["converged"] = model.converged;
}

void from_json(const nlohmann::json& j, GmmModel& model) {
    model.weights = j.at("weights").get<std::vector<double>>();
    model.means = rows_matrix(j.at("means"));
    model.covariances.clear();
    for (const auto& c : j.at("covariances")) model.covariances.push_back(rows_matrix(c));
    model.log_likelihood = j.at("log_likelihood").get<double>();
    model.iterations = j.value("iterations", 0);
    model.converged = j.value("converged", false);
    if (model.covariances.size() != model.k() || static_cast<std::size_t>(model.means.rows()) != model.k()) {
        throw Error("gmm model: inconsistent component count");
    }
}

void to_json(nlohmann::json& j, const BicReport& report) {
    j = nlohmann::json::object();
    j["search_range"] = {report.k_min, report.k_max};
    j["selected_k"] = report.selected_k;
    j["n"] = report.n;
    j["d"] = report.d;
    auto entries = nlohmann::json::array();
    for (const auto& e : report.entries) {
        nlohmann::json row;
        row["k"] = e.k;
        row["parameters"] = e.parameters;
        row["bic"] = e.bic ? nlohmann::json(*e.bic) : nlohmann::json(nullptr);
        row["log_likelihood"] = e.log_likelihood ? nlohmann::json(*e.log_likelihood) : nlohmann::json(nullptr);
        row["iterations"] = e.iterations;
        if (e.error) row["error"] = *e.error;
        entries.push_back(std::move(row));
    }
    j["entries"] = std::move(entries);
}

} // namespace wildsort
