#include "wildsort/evaluation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace wildsort {

namespace {

// Minimum-cost perfect assignment on a square matrix (Hungarian method with
// potentials, O(n^3)). Returns the column for each row.
std::vector<int> hungarian_min(const CountMatrix& cost) {
    const int n = static_cast<int>(cost.size());
    constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
    std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<std::int64_t> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            std::int64_t delta = kInf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const std::int64_t cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j) {
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    }
    return row_to_col;
}

// Best total weight over the rows/columns not yet fixed.
std::int64_t best_free_weight(const CountMatrix& square, const std::vector<char>& row_used,
                              const std::vector<char>& col_used) {
    std::vector<int> rows, cols;
    for (int i = 0; i < static_cast<int>(square.size()); ++i) {
        if (!row_used[i]) rows.push_back(i);
        if (!col_used[i]) cols.push_back(i);
    }
    if (rows.empty()) return 0;
    std::int64_t max_w = 0;
    for (int r : rows)
        for (int c : cols) max_w = std::max(max_w, square[r][c]);
    CountMatrix cost(rows.size(), std::vector<std::int64_t>(cols.size()));
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b) cost[a][b] = max_w - square[rows[a]][cols[b]];
    const auto assign = hungarian_min(cost);
    std::int64_t total = 0;
    for (std::size_t a = 0; a < rows.size(); ++a) total += square[rows[a]][cols[assign[a]]];
    return total;
}

} // namespace

std::vector<int> max_weight_matching(const CountMatrix& weights) {
    const std::size_t rows = weights.size();
    const std::size_t cols = rows ? weights.front().size() : 0;
    for (const auto& r : weights) {
        if (r.size() != cols) throw std::invalid_argument("max_weight_matching: ragged matrix");
    }
    if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);
    const std::size_t n = std::max(rows, cols);
    CountMatrix square(n, std::vector<std::int64_t>(n, 0));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) square[r][c] = weights[r][c];

    std::vector<char> row_used(n, 0), col_used(n, 0);
    const std::int64_t optimum = best_free_weight(square, row_used, col_used);

    // Fix rows one at a time to the earliest column that still admits an
    // optimal completion. Padding columns are interchangeable, so only the
    // first free one is tried.
    std::vector<int> result(rows, -1);
    std::int64_t fixed = 0;
    for (std::size_t r = 0; r < n; ++r) {
        row_used[r] = 1;
        bool tried_pad = false;
        bool placed = false;
        for (std::size_t c = 0; c < n && !placed; ++c) {
            if (col_used[c]) continue;
            if (c >= cols) {
                if (tried_pad) continue;
                tried_pad = true;
            }
            col_used[c] = 1;
            if (fixed + square[r][c] + best_free_weight(square, row_used, col_used) == optimum) {
                fixed += square[r][c];
                if (r < rows && c < cols) result[r] = static_cast<int>(c);
                placed = true;
            } else {
                col_used[c] = 0;
            }
        }
        if (!placed) throw Error("max_weight_matching: internal inconsistency");
    }
    return result;
}

std::int64_t Contingency::total() const {
    std::int64_t t = std::accumulate(noise.begin(), noise.end(), std::int64_t{0});
    for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
    return t;
}

Contingency build_contingency(const HardAssignment& assignment, std::span<const std::string> labels) {
    if (assignment.cluster_of.empty()) throw Error("evaluation: empty assignment");
    if (labels.size() != assignment.size()) {
        throw std::invalid_argument("evaluation: label count does not match assignment size");
    }
    assignment.validate();
    Contingency t;
    std::unordered_map<std::string, std::size_t> species_index;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].empty()) throw Error("evaluation: item " + std::to_string(i) + " is unlabeled");
        if (species_index.emplace(labels[i], t.species.size()).second) t.species.push_back(labels[i]);
    }
    std::vector<int> present;
    for (int c : assignment.cluster_of)
        if (c != kNoise) present.push_back(c);
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());
    t.clusters = present;
    std::unordered_map<int, std::size_t> cluster_index;
    for (std::size_t i = 0; i < present.size(); ++i) cluster_index[present[i]] = i;

    t.counts.assign(t.clusters.size(), std::vector<std::int64_t>(t.species.size(), 0));
    t.noise.assign(t.species.size(), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::size_t s = species_index.at(labels[i]);
        const int c = assignment.cluster_of[i];
        if (c == kNoise) {
            ++t.noise[s];
        } else {
            ++t.counts[cluster_index.at(c)][s];
        }
    }
    return t;
}

ClusterMatch match_clusters(const Contingency& table) {
    if (table.species.empty()) throw Error("evaluation: no species");
    // Columns sorted by species name for the tie-break.
    std::vector<std::size_t> by_name(table.species.size());
    std::iota(by_name.begin(), by_name.end(), std::size_t{0});
    std::sort(by_name.begin(), by_name.end(),
              [&](std::size_t a, std::size_t b) { return table.species[a] < table.species[b]; });
    CountMatrix w(table.clusters.size(), std::vector<std::int64_t>(by_name.size()));
    for (std::size_t r = 0; r < table.clusters.size(); ++r)
        for (std::size_t c = 0; c < by_name.size(); ++c) w[r][c] = table.counts[r][by_name[c]];

    const auto matched = max_weight_matching(w);
    ClusterMatch m;
    for (std::size_t r = 0; r < matched.size(); ++r) {
        if (matched[r] < 0) {
            m.unmatched_clusters.push_back(table.clusters[r]);
        } else {
            m.cluster_to_species[table.clusters[r]] = table.species[by_name[static_cast<std::size_t>(matched[r])]];
            m.objective += w[r][static_cast<std::size_t>(matched[r])];
        }
    }
    return m;
}

ClusterMatch match_clusters(const HardAssignment& assignment, std::span<const std::string> labels) {
    return match_clusters(build_contingency(assignment, labels));
}

EvalReport evaluate(const Contingency& table) {
    EvalReport rep;
    rep.match = match_clusters(table);
    const std::size_t s_count = table.species.size();

    std::unordered_map<int, std::size_t> cluster_row;
    for (std::size_t r = 0; r < table.clusters.size(); ++r) cluster_row[table.clusters[r]] = r;
    std::unordered_map<std::string, std::size_t> species_col;
    for (std::size_t s = 0; s < s_count; ++s) species_col[table.species[s]] = s;

    auto& cm = rep.confusion;
    cm.species = table.species;
    cm.matched_cluster.assign(s_count, std::nullopt);
    for (const auto& [cluster, name] : rep.match.cluster_to_species) cm.matched_cluster[species_col.at(name)] = cluster;
    cm.counts.assign(s_count, std::vector<std::int64_t>(s_count, 0));
    cm.unmatched_cluster_counts.assign(s_count, 0);
    cm.noise_counts = table.noise;
    for (std::size_t actual = 0; actual < s_count; ++actual) {
        for (std::size_t col = 0; col < s_count; ++col) {
            if (cm.matched_cluster[col]) cm.counts[actual][col] = table.counts[cluster_row.at(*cm.matched_cluster[col])][actual];
        }
        for (int c : rep.match.unmatched_clusters) cm.unmatched_cluster_counts[actual] += table.counts[cluster_row.at(c)][actual];
    }

    rep.n = table.total();
    double f1_sum = 0.0;
    for (std::size_t s = 0; s < s_count; ++s) {
        SpeciesMetrics m;
        m.species = table.species[s];
        m.total = cm.noise_counts[s] + cm.unmatched_cluster_counts[s];
        for (std::size_t col = 0; col < s_count; ++col) m.total += cm.counts[s][col];
        m.tp = cm.counts[s][s];
        if (cm.matched_cluster[s]) {
            const auto& row = table.counts[cluster_row.at(*cm.matched_cluster[s])];
            m.fp = std::accumulate(row.begin(), row.end(), std::int64_t{0}) - m.tp;
        }
        m.fn = m.total - m.tp;
        m.precision = (m.tp + m.fp) > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
        m.recall = m.total > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.total) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        f1_sum += m.f1;
        rep.correct += m.tp;
        rep.per_species.push_back(std::move(m));
    }
    rep.macro_f1 = f1_sum / static_cast<double>(s_count);
    rep.accuracy = rep.n > 0 ? static_cast<double>(rep.correct) / static_cast<double>(rep.n) : 0.0;
    return rep;
}

EvalReport evaluate(const HardAssignment& assignment, std::span<const std::string> labels) {
    return evaluate(build_contingency(assignment, labels));
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    using json = nlohmann::json;
    auto species = json::array();
    for (const auto& m : r.per_species) {
        species.push_back({{"species", m.species},
                           {"total", m.total},
                           {"tp", m.tp},
                           {"fp", m.fp},
                           {"fn", m.fn},
                           {"precision", m.precision},
                           {"recall", m.recall},
                           {"f1", m.f1}});
    }
    auto matched = json::array();
    for (const auto& c : r.confusion.matched_cluster) matched.push_back(c ? json(*c) : json(nullptr));
    auto mapping = json::array();
    for (const auto& [cluster, name] : r.match.cluster_to_species) mapping.push_back({{"cluster", cluster}, {"species", name}});
    j = json{{"confusion",
              {{"species", r.confusion.species},
               {"matched_cluster", std::move(matched)},
               {"counts", r.confusion.counts},
               {"unmatched_cluster_counts", r.confusion.unmatched_cluster_counts},
               {"noise_counts", r.confusion.noise_counts}}},
             {"per_species", std::move(species)},
             {"macro_f1", r.macro_f1},
             {"accuracy", r.accuracy},
             {"n", r.n},
             {"correct", r.correct},
             {"assignment", std::move(mapping)},
             {"unmatched_clusters", r.match.unmatched_clusters}};
}

} // namespace wildsort
