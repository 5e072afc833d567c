#include "wildsort/neighbor_embedding.hpp"
#include "wildsort/pca.hpp"
#include "wildsort/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace wildsort {

namespace {

constexpr int kSmoothKnnSteps = 64;
constexpr double kSmoothKnnTolerance = 1e-5;
constexpr double kMinKDistScale = 1e-3;
constexpr double kGradientClip = 4.0;

double clip(double v) { return std::clamp(v, -kGradientClip, kGradientClip); }

struct Bandwidth {
    double rho = 0.0;
    double sigma = 1.0;
};

Bandwidth smooth_knn(const std::vector<double>& dists, double mean_all) {
    const double target = std::log2(static_cast<double>(dists.size()));
    Bandwidth bw;
    // Local connectivity 1: rho is the distance to the nearest distinct neighbor.
    for (double d : dists) {
        if (d > 0.0) {
            bw.rho = d;
            break;
        }
    }
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double mid = 1.0;
    for (int step = 0; step < kSmoothKnnSteps; ++step) {
        double psum = 0.0;
        for (double d : dists) {
            const double gap = d - bw.rho;
            psum += gap > 0.0 ? std::exp(-gap / mid) : 1.0;
        }
        if (std::abs(psum - target) < kSmoothKnnTolerance) break;
        if (psum > target) {
            hi = mid;
            mid = 0.5 * (lo + hi);
        } else {
            lo = mid;
            mid = std::isinf(hi) ? mid * 2.0 : 0.5 * (lo + hi);
        }
    }
    const double mean_row = std::accumulate(dists.begin(), dists.end(), 0.0) / static_cast<double>(dists.size());
    const double floor = kMinKDistScale * (bw.rho > 0.0 ? mean_row : mean_all);
    bw.sigma = std::max(mid, floor);
    return bw;
}

RowMatrix initial_layout(const RowMatrix& x, int output_dim, Rng& rng) {
    const Eigen::Index n = x.rows();
    const auto dims = static_cast<Eigen::Index>(output_dim);
    RowMatrix y = RowMatrix::Zero(n, dims);
    const auto q = std::min<std::size_t>({static_cast<std::size_t>(output_dim), static_cast<std::size_t>(n - 1),
                                          static_cast<std::size_t>(x.cols())});
    double max_abs = 0.0;
    if (q >= 1) {
        std::vector<ItemRecord> items(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) items[static_cast<std::size_t>(i)].id = std::to_string(i);
        const EmbeddingMatrix m(std::move(items), x);
        const auto model = pca_fit(m, q);
        const RowMatrix proj = pca_transform(model, x);
        y.leftCols(proj.cols()) = proj;
        max_abs = proj.cwiseAbs().maxCoeff();
    }
    std::normal_distribution<double> jitter(0.0, 1e-4);
    if (max_abs > 0.0) {
        y *= 10.0 / max_abs;
    } else {
        std::uniform_real_distribution<double> uniform(-10.0, 10.0);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index k = 0; k < dims; ++k) y(i, k) = uniform(rng);
    }
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < dims; ++k) y(i, k) += jitter(rng);
    return y;
}

} // namespace

void UmapConfig::validate(std::size_t n) const {
    if (n_neighbors < 2 || static_cast<std::size_t>(n_neighbors) >= n) {
        throw std::invalid_argument("umap: n_neighbors must satisfy 2 <= n_neighbors < N (got " +
                                    std::to_string(n_neighbors) + ", N " + std::to_string(n) + ")");
    }
    if (!(min_dist >= 0.0)) throw std::invalid_argument("umap: min_dist must be >= 0");
    if (!(spread > 0.0) || min_dist > spread) throw std::invalid_argument("umap: need 0 <= min_dist <= spread");
    if (output_dim < 1) throw std::invalid_argument("umap: output_dim must be >= 1");
    if (n_epochs < 1) throw std::invalid_argument("umap: n_epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("umap: learning_rate must be positive");
    if (negative_sample_rate < 0) throw std::invalid_argument("umap: negative_sample_rate must be >= 0");
}

void to_json(nlohmann::json& j, const UmapConfig& c) {
    j = nlohmann::json{{"n_neighbors", c.n_neighbors},
                       {"min_dist", c.min_dist},
                       {"spread", c.spread},
                       {"output_dim", c.output_dim},
                       {"n_epochs", c.n_epochs},
                       {"learning_rate", c.learning_rate},
                       {"negative_sample_rate", c.negative_sample_rate},
                       {"repulsion_strength", c.repulsion_strength},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, UmapConfig& c) {
    const UmapConfig d;
    c.n_neighbors = j.value("n_neighbors", d.n_neighbors);
    c.min_dist = j.value("min_dist", d.min_dist);
    c.spread = j.value("spread", d.spread);
    c.output_dim = j.value("output_dim", d.output_dim);
    c.n_epochs = j.value("n_epochs", d.n_epochs);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.negative_sample_rate = j.value("negative_sample_rate", d.negative_sample_rate);
    c.repulsion_strength = j.value("repulsion_strength", d.repulsion_strength);
    c.seed = j.value("seed", d.seed);
}

NeighborGraph exact_knn(const RowMatrix& x, std::size_t k) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (k < 1 || k >= n) {
        throw std::invalid_argument("exact_knn: k=" + std::to_string(k) + " must lie in [1, N)");
    }
    NeighborGraph g;
    g.indices.resize(n);
    g.distances.resize(n);
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            cand.emplace_back((x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm(), j);
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t r = 0; r < k; ++r) {
            g.distances[i].push_back(cand[r].first);
            g.indices[i].push_back(cand[r].second);
        }
    }
    return g;
}

std::vector<WeightedEdge> membership_strengths(const NeighborGraph& graph) {
    double mean_all = 0.0;
    std::size_t count = 0;
    for (const auto& row : graph.distances) {
        for (double d : row) {
            mean_all += d;
            ++count;
        }
    }
    mean_all = count ? mean_all / static_cast<double>(count) : 0.0;

    std::vector<WeightedEdge> edges;
    for (std::size_t i = 0; i < graph.indices.size(); ++i) {
        const auto bw = smooth_knn(graph.distances[i], mean_all);
        for (std::size_t r = 0; r < graph.indices[i].size(); ++r) {
            const double gap = graph.distances[i][r] - bw.rho;
            const double w = gap <= 0.0 ? 1.0 : std::exp(-gap / bw.sigma);
            edges.push_back({i, graph.indices[i][r], w});
        }
    }
    return edges;
}

std::vector<WeightedEdge> fuzzy_simplicial_set(const RowMatrix& x, std::size_t n_neighbors) {
    const auto directed = membership_strengths(exact_knn(x, n_neighbors));
    // (low, high) -> (w[low->high], w[high->low])
    std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> pairs;
    for (const auto& e : directed) {
        if (e.from < e.to) {
            pairs[{e.from, e.to}].first = e.weight;
        } else {
            pairs[{e.to, e.from}].second = e.weight;
        }
    }
    std::vector<WeightedEdge> edges;
    edges.reserve(2 * pairs.size());
    for (const auto& [key, w] : pairs) {
        const double s = fuzzy_union(w.first, w.second);
        if (s <= 0.0) continue;
        edges.push_back({key.first, key.second, s});
        edges.push_back({key.second, key.first, s});
    }
    std::sort(edges.begin(), edges.end(), [](const WeightedEdge& a, const WeightedEdge& b) {
        return std::tie(a.from, a.to) < std::tie(b.from, b.to);
    });
    return edges;
}

std::pair<double, double> find_ab_params(double spread, double min_dist) {
    constexpr int kSamples = 300;
    std::vector<double> xs(kSamples), ys(kSamples);
    for (int i = 0; i < kSamples; ++i) {
        xs[static_cast<std::size_t>(i)] = 3.0 * spread * static_cast<double>(i) / (kSamples - 1);
        const double x = xs[static_cast<std::size_t>(i)];
        ys[static_cast<std::size_t>(i)] = x < min_dist ? 1.0 : std::exp(-(x - min_dist) / spread);
    }
    auto residuals = [&](double a, double b, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
        r.resize(kSamples);
        if (jac) jac->resize(kSamples, 2);
        for (int i = 0; i < kSamples; ++i) {
            const double x = xs[static_cast<std::size_t>(i)];
            const double xp = x > 0.0 ? std::pow(x, 2.0 * b) : 0.0;
            const double denom = 1.0 + a * xp;
            r(i) = 1.0 / denom - ys[static_cast<std::size_t>(i)];
            if (jac) {
                (*jac)(i, 0) = -xp / (denom * denom);
                (*jac)(i, 1) = x > 0.0 ? -a * xp * 2.0 * std::log(x) / (denom * denom) : 0.0;
            }
        }
        return r.squaredNorm();
    };

    // Levenberg-Marquardt on two parameters.
    double a = 1.0, b = 1.0, lambda = 1e-3;
    Eigen::VectorXd r;
    Eigen::MatrixXd jac;
    double cost = residuals(a, b, r, &jac);
    for (int it = 0; it < 500; ++it) {
        const Eigen::Matrix2d jtj = jac.transpose() * jac;
        const Eigen::Vector2d jtr = jac.transpose() * r;
        Eigen::Matrix2d damped = jtj;
        damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
        const Eigen::Vector2d step = damped.ldlt().solve(-jtr);
        const double na = a + step(0), nb = b + step(1);
        Eigen::VectorXd nr;
        const double ncost = (na > 0.0 && nb > 0.0) ? residuals(na, nb, nr, nullptr)
                                                    : std::numeric_limits<double>::infinity();
        if (ncost < cost) {
            const double rel = (cost - ncost) / std::max(cost, 1e-300);
            a = na;
            b = nb;
            cost = residuals(a, b, r, &jac);
            lambda = std::max(lambda * 0.3, 1e-12);
            if (rel < 1e-15 && step.norm() < 1e-12) break;
        } else {
            lambda *= 10.0;
            if (lambda > 1e12) break;
        }
    }
    return {a, b};
}

double umap_cross_entropy(const std::vector<WeightedEdge>& graph, const RowMatrix& y, double a, double b) {
    const Eigen::Index n = y.rows();
    constexpr double kEps = 1e-12;
    std::map<std::pair<std::size_t, std::size_t>, double> weights;
    for (const auto& e : graph) {
        if (e.from < e.to) weights[{e.from, e.to}] = e.weight;
    }
    double ce = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d2 = (y.row(i) - y.row(j)).squaredNorm();
            const double v = std::clamp(1.0 / (1.0 + a * std::pow(d2, b)), kEps, 1.0 - kEps);
            double w = 0.0;
            if (auto it = weights.find({static_cast<std::size_t>(i), static_cast<std::size_t>(j)}); it != weights.end()) {
                w = it->second;
            }
            if (w > 0.0) ce += w * std::log(w / v);
            if (w < 1.0) ce += (1.0 - w) * std::log((1.0 - w) / (1.0 - v));
        }
    }
    return ce;
}

LowDimEmbedding umap_embed(const RowMatrix& x, const UmapConfig& config) {
    const auto n = static_cast<std::size_t>(x.rows());
    config.validate(n);

    auto graph = fuzzy_simplicial_set(x, static_cast<std::size_t>(config.n_neighbors));
    const auto [a, b] = find_ab_params(config.spread, config.min_dist);

    Rng rng(config.seed);
    RowMatrix y = initial_layout(x, config.output_dim, rng);
    const Eigen::Index dims = y.cols();

    double max_w = 0.0;
    for (const auto& e : graph) max_w = std::max(max_w, e.weight);
    std::vector<WeightedEdge> active;
    for (const auto& e : graph) {
        if (e.weight >= max_w / static_cast<double>(config.n_epochs)) active.push_back(e);
    }
    const std::size_t m = active.size();
    std::vector<double> epochs_per_sample(m), next_sample(m), epochs_per_negative(m), next_negative(m);
    for (std::size_t e = 0; e < m; ++e) {
        epochs_per_sample[e] = max_w / active[e].weight;
        next_sample[e] = epochs_per_sample[e];
        epochs_per_negative[e] = config.negative_sample_rate > 0
                                     ? epochs_per_sample[e] / config.negative_sample_rate
                                     : std::numeric_limits<double>::infinity();
        next_negative[e] = epochs_per_negative[e];
    }

    for (int epoch = 0; epoch < config.n_epochs; ++epoch) {
        const double alpha = config.learning_rate * (1.0 - static_cast<double>(epoch) / config.n_epochs);
        for (std::size_t e = 0; e < m; ++e) {
            if (next_sample[e] > epoch) continue;
            const auto head = static_cast<Eigen::Index>(active[e].from);
            const auto tail = static_cast<Eigen::Index>(active[e].to);
            double d2 = (y.row(head) - y.row(tail)).squaredNorm();
            double coeff = 0.0;
            if (d2 > 0.0) {
                coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (a * std::pow(d2, b) + 1.0);
            }
            for (Eigen::Index k = 0; k < dims; ++k) {
                const double g = clip(coeff * (y(head, k) - y(tail, k))) * alpha;
                y(head, k) += g;
                y(tail, k) -= g;
            }
            next_sample[e] += epochs_per_sample[e];

            const auto n_neg = static_cast<int>((epoch - next_negative[e]) / epochs_per_negative[e]);
            for (int s = 0; s < n_neg; ++s) {
                const auto other = static_cast<Eigen::Index>(rng() % n);
                if (other == head) continue;
                d2 = (y.row(head) - y.row(other)).squaredNorm();
                coeff = 0.0;
                if (d2 > 0.0) {
                    coeff = 2.0 * config.repulsion_strength * b / ((0.001 + d2) * (a * std::pow(d2, b) + 1.0));
                }
                for (Eigen::Index k = 0; k < dims; ++k) {
                    const double g = coeff > 0.0 ? clip(coeff * (y(head, k) - y(other, k))) : kGradientClip;
                    y(head, k) += g * alpha;
                }
            }
            if (n_neg > 0) next_negative[e] += n_neg * epochs_per_negative[e];
        }
    }
    if (!y.allFinite()) throw Error("umap: layout produced non-finite coordinates");

    LowDimEmbedding out;
    out.method = "umap";
    out.config = config;
    out.config["a"] = a;
    out.config["b"] = b;
    out.final_objective = umap_cross_entropy(graph, y, a, b);
    out.objective_trace.emplace_back(config.n_epochs, out.final_objective);
    out.coords = std::move(y);
    return out;
}

LowDimEmbedding umap_embed(const EmbeddingMatrix& m, const UmapConfig& config) {
    return umap_embed(m.vectors(), config);
}

} // namespace wildsort
