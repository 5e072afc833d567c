#include "wildsort/neighbor_embedding.hpp"
#include "wildsort/pca.hpp"
#include "wildsort/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace wildsort {

namespace {

constexpr int kMaxBisectionSteps = 50;
constexpr double kPerplexityTolerance = 1e-5;
// Bandwidth floor: beta may not exceed this multiple of 1/mean(row distance).
constexpr double kMaxBetaScale = 1e12;

struct RowResult {
    double beta = 1.0;
    double perplexity = 0.0;
    bool converged = false;
};

// Fills `p` (length n, p[self] = 0) and returns the entropy in nats.
double row_distribution(const double* d, Eigen::Index n, Eigen::Index self, double dmin, double beta, double* p) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (j == self) {
            p[j] = 0.0;
            continue;
        }
        p[j] = std::exp(-beta * (d[j] - dmin));
        sum += p[j];
    }
    double weighted = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (j == self) continue;
        p[j] /= sum;
        weighted += p[j] * (d[j] - dmin);
    }
    return std::log(sum) + beta * weighted;
}

RowResult calibrate_row(const double* d, Eigen::Index n, Eigen::Index self, double perplexity, double* p) {
    double dmin = std::numeric_limits<double>::infinity();
    double mean = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (j == self) continue;
        dmin = std::min(dmin, d[j]);
        mean += d[j];
    }
    mean = mean / static_cast<double>(n - 1) - dmin;
    const double scale = mean > 0.0 ? 1.0 / mean : 1.0;
    const double beta_max = kMaxBetaScale * scale;

    RowResult r;
    r.beta = scale;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    for (int step = 0; step <= kMaxBisectionSteps; ++step) {
        const double h = row_distribution(d, n, self, dmin, r.beta, p);
        r.perplexity = std::exp(h);
        if (std::abs(r.perplexity - perplexity) < kPerplexityTolerance) {
            r.converged = true;
            return r;
        }
        if (step == kMaxBisectionSteps) break;
        if (r.perplexity > perplexity) {
            // Too flat: sharpen.
            if (r.beta >= beta_max) {
                r.converged = true; // duplicate-point floor; target unreachable
                return r;
            }
            lo = r.beta;
            r.beta = std::isinf(hi) ? std::min(r.beta * 2.0, beta_max) : 0.5 * (lo + hi);
        } else {
            hi = r.beta;
            r.beta = 0.5 * (lo + hi);
        }
    }
    return r;
}

void check_square(const RowMatrix& m, const char* what) {
    if (m.rows() != m.cols()) throw std::invalid_argument(std::string(what) + ": matrix must be square");
}

// Student-t kernel matrix (zero diagonal) and its sum.
double student_kernel(const RowMatrix& y, RowMatrix& num) {
    const Eigen::Index n = y.rows();
    const Eigen::Index dims = y.cols();
    num.resize(n, n);
    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        num(i, i) = 0.0;
        const double* yi = y.row(i).data();
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double* yj = y.row(j).data();
            double d2 = 0.0;
            for (Eigen::Index k = 0; k < dims; ++k) {
                const double diff = yi[k] - yj[k];
                d2 += diff * diff;
            }
            const double q = 1.0 / (1.0 + d2);
            num(i, j) = q;
            num(j, i) = q;
            z += 2.0 * q;
        }
    }
    return z;
}

double kl_from_kernel(const RowMatrix& p, const RowMatrix& num, double z) {
    const Eigen::Index n = p.rows();
    double kl = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double pij = p(i, j);
            if (i == j || pij <= 0.0) continue;
            kl += pij * std::log(pij * z / num(i, j));
        }
    }
    return kl;
}

// Gradient of KL(scale * P || Q), reusing a precomputed kernel.
void gradient_from_kernel(const RowMatrix& p, double scale, const RowMatrix& y, const RowMatrix& num, double z,
                          RowMatrix& grad) {
    const Eigen::Index n = y.rows();
    const Eigen::Index dims = y.cols();
    grad.setZero(n, dims);
    const double inv_z = 1.0 / z;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double* yi = y.row(i).data();
        const double* pi = p.row(i).data();
        const double* ni = num.row(i).data();
        double* gi = grad.row(i).data();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double coeff = (scale * pi[j] - ni[j] * inv_z) * ni[j];
            const double* yj = y.row(j).data();
            for (Eigen::Index k = 0; k < dims; ++k) gi[k] += coeff * (yi[k] - yj[k]);
        }
        for (Eigen::Index k = 0; k < dims; ++k) gi[k] *= 4.0;
    }
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

} // namespace

void TsneConfig::validate(std::size_t n) const {
    if (output_dim != 1 && output_dim != 2) throw std::invalid_argument("tsne: output_dim must be 1 or 2");
    if (!(perplexity >= 2.0)) throw std::invalid_argument("tsne: perplexity must be >= 2");
    if (!(3.0 * perplexity < static_cast<double>(n))) {
        throw std::invalid_argument("tsne: 3 * perplexity must be < N (perplexity " + std::to_string(perplexity) +
                                    ", N " + std::to_string(n) + ")");
    }
    if (!(learning_rate > 0.0)) throw std::invalid_argument("tsne: learning_rate must be positive");
    if (iterations < 1) throw std::invalid_argument("tsne: iterations must be >= 1");
    if (exaggeration_iters < 0 || !(exaggeration_factor > 0.0)) {
        throw std::invalid_argument("tsne: invalid exaggeration settings");
    }
    if (!(init_sd > 0.0)) throw std::invalid_argument("tsne: init_sd must be positive");
    if (init != "random" && init != "pca") throw std::invalid_argument("tsne: init must be 'random' or 'pca'");
}

void to_json(nlohmann::json& j, const TsneConfig& c) {
    j = nlohmann::json{{"output_dim", c.output_dim},
                       {"perplexity", c.perplexity},
                       {"learning_rate", c.learning_rate},
                       {"iterations", c.iterations},
                       {"exaggeration_factor", c.exaggeration_factor},
                       {"exaggeration_iters", c.exaggeration_iters},
                       {"initial_momentum", c.initial_momentum},
                       {"final_momentum", c.final_momentum},
                       {"momentum_switch_iter", c.momentum_switch_iter},
                       {"init", c.init},
                       {"init_sd", c.init_sd},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TsneConfig& c) {
    const TsneConfig d;
    c.output_dim = j.value("output_dim", d.output_dim);
    c.perplexity = j.value("perplexity", d.perplexity);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.iterations = j.value("iterations", d.iterations);
    c.exaggeration_factor = j.value("exaggeration_factor", d.exaggeration_factor);
    c.exaggeration_iters = j.value("exaggeration_iters", d.exaggeration_iters);
    c.initial_momentum = j.value("initial_momentum", d.initial_momentum);
    c.final_momentum = j.value("final_momentum", d.final_momentum);
    c.momentum_switch_iter = j.value("momentum_switch_iter", d.momentum_switch_iter);
    c.init = j.value("init", d.init);
    c.init_sd = j.value("init_sd", d.init_sd);
    c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const LowDimEmbedding& e) {
    j = nlohmann::json::object();
    j["method"] = e.method;
    j["config"] = e.config;
    j["final_objective"] = e.final_objective;
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < e.coords.rows(); ++i) {
        rows.push_back(std::vector<double>(e.coords.row(i).begin(), e.coords.row(i).end()));
    }
    j["coords"] = std::move(rows);
}

RowMatrix squared_distances(const RowMatrix& x) {
    const Eigen::Index n = x.rows();
    RowMatrix d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = (x.row(i) - x.row(j)).squaredNorm();
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

PerplexityCalibration perplexity_calibration(const RowMatrix& sq_distances, double perplexity) {
    check_square(sq_distances, "perplexity_calibration");
    const Eigen::Index n = sq_distances.rows();
    if (n < 2) throw std::invalid_argument("perplexity_calibration: need at least 2 points");
    if (!(perplexity > 0.0) || perplexity > static_cast<double>(n - 1)) {
        throw std::invalid_argument("perplexity_calibration: perplexity must lie in (0, N-1]");
    }
    PerplexityCalibration out;
    out.betas.resize(static_cast<std::size_t>(n));
    out.achieved.resize(static_cast<std::size_t>(n));
    out.conditional.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto r = calibrate_row(sq_distances.row(i).data(), n, i, perplexity, out.conditional.row(i).data());
        if (!r.converged) {
            throw Error("perplexity calibration failed for row " + std::to_string(i) + " (reached perplexity " +
                        std::to_string(r.perplexity) + ", target " + std::to_string(perplexity) + ")");
        }
        out.betas[static_cast<std::size_t>(i)] = r.beta;
        out.achieved[static_cast<std::size_t>(i)] = r.perplexity;
    }
    return out;
}

RowMatrix joint_probabilities(const PerplexityCalibration& calibration) {
    const auto& c = calibration.conditional;
    const double n = static_cast<double>(c.rows());
    RowMatrix p = (c + c.transpose()) / (2.0 * n);
    return p;
}

double kl_divergence(const RowMatrix& p, const RowMatrix& y) {
    check_square(p, "kl_divergence");
    if (p.rows() != y.rows()) throw std::invalid_argument("kl_divergence: size mismatch");
    RowMatrix num;
    const double z = student_kernel(y, num);
    return kl_from_kernel(p, num, z);
}

RowMatrix kl_gradient(const RowMatrix& p, const RowMatrix& y) {
    check_square(p, "kl_gradient");
    if (p.rows() != y.rows()) throw std::invalid_argument("kl_gradient: size mismatch");
    RowMatrix num;
    const double z = student_kernel(y, num);
    RowMatrix grad;
    gradient_from_kernel(p, 1.0, y, num, z, grad);
    return grad;
}

namespace {

RowMatrix random_init(Eigen::Index rows, Eigen::Index dims, const TsneConfig& config) {
    Rng rng(config.seed);
    std::normal_distribution<double> gauss(0.0, config.init_sd);
    RowMatrix y(rows, dims);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index k = 0; k < dims; ++k) y(i, k) = gauss(rng);
    }
    return y;
}

RowMatrix pca_init(const RowMatrix& x, const TsneConfig& config) {
    const Eigen::Index n = x.rows();
    RowMatrix y = RowMatrix::Zero(n, config.output_dim);
    const auto q = std::min<std::size_t>(
        {static_cast<std::size_t>(config.output_dim), static_cast<std::size_t>(n - 1), static_cast<std::size_t>(x.cols())});
    std::vector<ItemRecord> items(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) items[static_cast<std::size_t>(i)].id = std::to_string(i);
    const auto model = pca_fit(EmbeddingMatrix(std::move(items), x), q);
    const RowMatrix proj = pca_transform(model, x);
    y.leftCols(proj.cols()) = proj;
    const double sd = std::sqrt((y.col(0).array() - y.col(0).mean()).square().sum() / static_cast<double>(n));
    if (sd > 0.0) y *= config.init_sd / sd;
    return y;
}

} // namespace

LowDimEmbedding tsne_embed(const RowMatrix& x, const TsneConfig& config) {
    const auto n = static_cast<std::size_t>(x.rows());
    config.validate(n);

    const RowMatrix p = joint_probabilities(perplexity_calibration(squared_distances(x), config.perplexity));

    const auto rows = static_cast<Eigen::Index>(n);
    const auto dims = static_cast<Eigen::Index>(config.output_dim);
    RowMatrix y = config.init == "pca" ? pca_init(x, config) : random_init(rows, dims, config);

    RowMatrix velocity = RowMatrix::Zero(rows, dims);
    RowMatrix gains = RowMatrix::Ones(rows, dims);
    RowMatrix grad;
    RowMatrix num;
    LowDimEmbedding out;
    out.method = "tsne";
    out.config = config;

    const int last_window = std::max(0, config.iterations - 100);
    for (int it = 0; it < config.iterations; ++it) {
        const double exaggeration = it < config.exaggeration_iters ? config.exaggeration_factor : 1.0;
        const double momentum = it < config.momentum_switch_iter ? config.initial_momentum : config.final_momentum;
        if (it > 0 && it == config.exaggeration_iters) {
            // Second phase starts from rest.
            velocity.setZero();
            gains.setOnes();
        }
        const double z = student_kernel(y, num);
        if (it >= last_window || it % 50 == 0) {
            const double kl = kl_from_kernel(p, num, z);
            if (!std::isfinite(kl)) {
                throw Error("tsne: objective became non-finite at iteration " + std::to_string(it) +
                            "; lower learning_rate");
            }
            out.objective_trace.emplace_back(it, kl);
        }
        gradient_from_kernel(p, exaggeration, y, num, z, grad);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index k = 0; k < dims; ++k) {
                double& g = gains(i, k);
                g = sign(grad(i, k)) != sign(velocity(i, k)) ? g + 0.2 : g * 0.8;
                g = std::max(g, 0.01);
                velocity(i, k) = momentum * velocity(i, k) - config.learning_rate * g * grad(i, k);
                y(i, k) += velocity(i, k);
            }
        }
        y.rowwise() -= y.colwise().mean();
        if (!y.allFinite()) {
            throw Error("tsne: coordinates diverged at iteration " + std::to_string(it) + "; lower learning_rate");
        }
    }
    out.final_objective = kl_divergence(p, y);
    if (!std::isfinite(out.final_objective)) {
        throw Error("tsne: final objective is non-finite; lower learning_rate");
    }
    out.objective_trace.emplace_back(config.iterations, out.final_objective);
    out.coords = std::move(y);
    return out;
}

LowDimEmbedding tsne_embed(const EmbeddingMatrix& m, const TsneConfig& config) {
    return tsne_embed(m.vectors(), config);
}

} // namespace wildsort
