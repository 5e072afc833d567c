#include "wildsort/ordering.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

namespace wildsort {

Ordering sort_1d(const LowDimEmbedding& embedding, std::span<const std::string> ids, Seed seed) {
    if (embedding.dim() != 1) {
        throw std::invalid_argument("sort_1d: embedding must be one-dimensional (got " +
                                    std::to_string(embedding.dim()) + ")");
    }
    if (ids.size() != embedding.n()) throw std::invalid_argument("sort_1d: id count does not match embedding");
    Ordering o;
    o.seed = seed;
    o.coordinates.assign(embedding.coords.data(), embedding.coords.data() + embedding.n());
    o.permutation.resize(embedding.n());
    std::iota(o.permutation.begin(), o.permutation.end(), std::size_t{0});
    std::stable_sort(o.permutation.begin(), o.permutation.end(), [&](std::size_t a, std::size_t b) {
        if (o.coordinates[a] != o.coordinates[b]) return o.coordinates[a] < o.coordinates[b];
        return ids[a] < ids[b];
    });
    return o;
}

CoherenceReport coherence_of_sequence(std::span<const std::string> ordered_labels) {
    CoherenceReport report;
    std::size_t i = 0;
    while (i < ordered_labels.size()) {
        std::size_t j = i + 1;
        while (j < ordered_labels.size() && ordered_labels[j] == ordered_labels[i]) ++j;
        auto& s = report.per_species[ordered_labels[i]];
        s.max_run = std::max(s.max_run, j - i);
        s.total += j - i;
        i = j;
    }
    std::size_t runs_sum = 0;
    for (auto& [name, s] : report.per_species) {
        s.coherence_pct = 100.0 * static_cast<double>(s.max_run) / static_cast<double>(s.total);
        runs_sum += s.max_run;
    }
    if (!ordered_labels.empty()) {
        report.overall_pct = 100.0 * static_cast<double>(runs_sum) / static_cast<double>(ordered_labels.size());
    }
    return report;
}

CoherenceReport coherence(const Ordering& ordering, std::span<const std::string> labels) {
    if (labels.size() != ordering.permutation.size()) {
        throw std::invalid_argument("coherence: label count does not match ordering");
    }
    std::vector<std::string> ordered;
    ordered.reserve(labels.size());
    for (std::size_t idx : ordering.permutation) {
        if (labels[idx].empty()) throw Error("coherence: item " + std::to_string(idx) + " is unlabeled");
        ordered.push_back(labels[idx]);
    }
    return coherence_of_sequence(ordered);
}

MeanStd mean_std(std::span<const double> values) {
    MeanStd out;
    if (values.empty()) return out;
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() >= 2) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return out;
}

AggregateCoherence aggregate_reports(std::vector<CoherenceReport> reports, std::vector<Seed> seeds) {
    if (reports.empty()) throw std::invalid_argument("aggregate: no runs");
    AggregateCoherence agg;
    agg.runs = reports.size();
    agg.seeds = std::move(seeds);
    for (const auto& [name, s] : reports.front().per_species) agg.species_counts[name] = s.total;
    std::vector<double> values;
    for (const auto& [name, count] : agg.species_counts) {
        values.clear();
        for (const auto& r : reports) {
            auto it = r.per_species.find(name);
            if (it == r.per_species.end()) throw Error("aggregate: species '" + name + "' missing from a run");
            values.push_back(it->second.coherence_pct);
        }
        agg.per_species[name] = mean_std(values);
    }
    values.clear();
    for (const auto& r : reports) values.push_back(r.overall_pct);
    agg.overall = mean_std(values);
    agg.reports = std::move(reports);
    return agg;
}

AggregateCoherence aggregate_runs(const EmbeddingMatrix& m, std::span<const std::string> labels,
                                  const TsneConfig& config, std::size_t runs, const AggregateOptions& options) {
    if (runs < 1) throw std::invalid_argument("aggregate_runs: runs must be >= 1");
    if (labels.size() != m.n()) throw std::invalid_argument("aggregate_runs: label count does not match N");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].empty()) throw Error("aggregate_runs: item " + std::to_string(i) + " is unlabeled");
    }
    config.validate(m.n());

    const auto ids = m.ids();
    std::vector<std::optional<Ordering>> orderings(runs);
    std::vector<std::optional<std::string>> errors(runs);
    auto work = [&](std::size_t r) {
        TsneConfig run_config = config;
        run_config.seed = config.seed + r;
        try {
            const auto emb = tsne_embed(m.vectors(), run_config);
            orderings[r] = sort_1d(emb, ids, run_config.seed);
        } catch (const Error& e) {
            errors[r] = e.what();
        }
    };

    unsigned threads = options.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : options.threads;
    threads = std::min<unsigned>(threads, static_cast<unsigned>(runs));
    if (threads <= 1) {
        for (std::size_t r = 0; r < runs; ++r) work(r);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t r = next++; r < runs; r = next++) work(r);
            });
        }
    }

    std::vector<CoherenceReport> reports;
    std::vector<Seed> seeds;
    std::vector<Ordering> done;
    for (std::size_t r = 0; r < runs; ++r) {
        if (errors[r]) {
            throw Error("aggregate_runs: run with seed " + std::to_string(config.seed + r) + " failed: " + *errors[r]);
        }
        reports.push_back(coherence(*orderings[r], labels));
        seeds.push_back(config.seed + r);
        done.push_back(std::move(*orderings[r]));
    }
    auto agg = aggregate_reports(std::move(reports), std::move(seeds));
    agg.orderings = std::move(done);
    return agg;
}

namespace {

nlohmann::json mean_std_json(const MeanStd& m) {
    return nlohmann::json{{"mean", m.mean}, {"std", m.std ? nlohmann::json(*m.std) : nlohmann::json(nullptr)}};
}

} // namespace

void to_json(nlohmann::json& j, const Ordering& o) {
    j = nlohmann::json{{"seed", o.seed}, {"permutation", o.permutation}, {"coordinates", o.coordinates}};
}

void to_json(nlohmann::json& j, const CoherenceReport& r) {
    auto species = nlohmann::json::object();
    for (const auto& [name, s] : r.per_species) {
        species[name] = {{"max_run", s.max_run}, {"total", s.total}, {"coherence_pct", s.coherence_pct}};
    }
    j = nlohmann::json{{"per_species", std::move(species)}, {"overall_pct", r.overall_pct}};
}

void to_json(nlohmann::json& j, const AggregateCoherence& a) {
    auto species = nlohmann::json::object();
    for (const auto& [name, ms] : a.per_species) {
        auto entry = mean_std_json(ms);
        entry["n"] = a.species_counts.at(name);
        species[name] = std::move(entry);
    }
    j = nlohmann::json{{"runs", a.runs},
                       {"seeds", a.seeds},
                       {"per_species", std::move(species)},
                       {"overall", mean_std_json(a.overall)},
                       {"reports", a.reports}};
}

} // namespace wildsort
