#include "wildsort/dbscan.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace wildsort {

namespace {

std::vector<std::size_t> region_query(const RowMatrix& x, Eigen::Index i, double eps2) {
    std::vector<std::size_t> out;
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
        if ((x.row(i) - x.row(j)).squaredNorm() <= eps2) out.push_back(static_cast<std::size_t>(j));
    }
    return out;
}

} // namespace

HardAssignment dbscan_fit(const RowMatrix& x, const DbscanParams& params) {
    if (!(params.eps > 0.0) || !std::isfinite(params.eps)) {
        throw std::invalid_argument("dbscan: eps must be positive");
    }
    if (params.min_pts < 1) throw std::invalid_argument("dbscan: min_pts must be >= 1");

    const auto n = static_cast<std::size_t>(x.rows());
    const double eps2 = params.eps * params.eps;

    std::vector<std::vector<std::size_t>> neighbors(n);
    for (std::size_t i = 0; i < n; ++i) neighbors[i] = region_query(x, static_cast<Eigen::Index>(i), eps2);
    auto is_core = [&](std::size_t i) { return neighbors[i].size() >= params.min_pts; };

    constexpr int kUnvisited = -2;
    HardAssignment a;
    a.method = "dbscan";
    a.cluster_of.assign(n, kUnvisited);
    int next_id = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (a.cluster_of[i] != kUnvisited) continue;
        if (!is_core(i)) {
            a.cluster_of[i] = kNoise; // may be claimed later as a border point
            continue;
        }
        const int id = next_id++;
        a.cluster_of[i] = id;
        std::deque<std::size_t> frontier(neighbors[i].begin(), neighbors[i].end());
        while (!frontier.empty()) {
            const std::size_t j = frontier.front();
            frontier.pop_front();
            if (a.cluster_of[j] == kNoise) {
                a.cluster_of[j] = id;
            }
            if (a.cluster_of[j] != kUnvisited) continue;
            a.cluster_of[j] = id;
            if (is_core(j)) frontier.insert(frontier.end(), neighbors[j].begin(), neighbors[j].end());
        }
    }
    a.k = next_id;
    return a;
}

HardAssignment dbscan_fit(const EmbeddingMatrix& m, const DbscanParams& params) {
    return dbscan_fit(m.vectors(), params);
}

std::vector<double> k_distance_profile(const RowMatrix& x, std::size_t k) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (k < 1 || k >= n) {
        throw std::invalid_argument("k_distance_profile: k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(n) + ")");
    }
    std::vector<double> profile(n);
    std::vector<double> dist;
    for (std::size_t i = 0; i < n; ++i) {
        dist.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dist.push_back((x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm());
        }
        std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
        profile[i] = dist[k - 1];
    }
    std::sort(profile.begin(), profile.end());
    return profile;
}

std::vector<double> k_distance_profile(const EmbeddingMatrix& m, std::size_t k) {
    return k_distance_profile(m.vectors(), k);
}

} // namespace wildsort
