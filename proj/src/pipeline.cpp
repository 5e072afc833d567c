#include "wildsort/pipeline.hpp"
#include "wildsort/pca.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace wildsort {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const char* reduction_name(ReductionConfig::Kind k) {
    switch (k) {
    case ReductionConfig::Kind::None: return "none";
    case ReductionConfig::Kind::Pca: return "pca";
    case ReductionConfig::Kind::Umap: return "umap";
    }
    return "none";
}

const char* method_name(MethodConfig::Kind k) {
    switch (k) {
    case MethodConfig::Kind::None: return "none";
    case MethodConfig::Kind::Gmm: return "gmm";
    case MethodConfig::Kind::Dbscan: return "dbscan";
    }
    return "none";
}

const char* eval_name(EvalMode m) {
    switch (m) {
    case EvalMode::Auto: return "auto";
    case EvalMode::On: return "on";
    case EvalMode::Off: return "off";
    }
    return "auto";
}

json optional_size(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::size_t> read_optional_size(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<std::size_t>();
}

template <typename Fn>
auto run_stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t hash_matrix(const RowMatrix& x, const json& config) {
    const std::uint64_t dims[2] = {static_cast<std::uint64_t>(x.rows()), static_cast<std::uint64_t>(x.cols())};
    auto h = content_hash(dims, sizeof dims);
    h = content_hash(x.data(), static_cast<std::size_t>(x.size()) * sizeof(double), h);
    const auto text = config.dump();
    return content_hash(text.data(), text.size(), h);
}

void write_atomic(const fs::path& path, const std::string& bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            out.close();
            fs::remove(tmp);
            throw Error("short write to '" + tmp.string() + "'");
        }
    }
    fs::rename(tmp, path);
}

std::optional<RowMatrix> read_matrix_cache(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    char magic[4];
    std::uint64_t dims[2];
    if (!in.read(magic, 4) || std::string(magic, 4) != "WSRM") return std::nullopt;
    if (!in.read(reinterpret_cast<char*>(dims), sizeof dims)) return std::nullopt;
    RowMatrix x(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    if (!in.read(reinterpret_cast<char*>(x.data()), static_cast<std::streamsize>(x.size() * sizeof(double)))) {
        return std::nullopt;
    }
    return x;
}

void write_matrix_cache(const fs::path& path, const RowMatrix& x) {
    std::string bytes = "WSRM";
    const std::uint64_t dims[2] = {static_cast<std::uint64_t>(x.rows()), static_cast<std::uint64_t>(x.cols())};
    bytes.append(reinterpret_cast<const char*>(dims), sizeof dims);
    bytes.append(reinterpret_cast<const char*>(x.data()), static_cast<std::size_t>(x.size()) * sizeof(double));
    write_atomic(path, bytes);
}

json reduction_json(const ReductionConfig& r) {
    return json{{"type", reduction_name(r.kind)}, {"pca_dims", optional_size(r.pca_dims)}, {"umap", r.umap}};
}

json method_json(const MethodConfig& m) {
    return json{{"type", method_name(m.kind)}, {"k_min", m.k_min},         {"k_max", m.k_max},
                {"seed", m.seed},              {"restarts", m.restarts},   {"eps", m.dbscan.eps},
                {"min_pts", m.dbscan.min_pts}};
}

json ordering_json(const OrderingConfig& o) {
    return json{{"runs", o.runs}, {"pca_dims", optional_size(o.pca_dims)}, {"tsne", o.tsne}};
}

json clustering_json(const ClusteringResult& r) {
    json j = r.assignment;
    j["bic_report"] = r.bic_report ? json(*r.bic_report) : json(nullptr);
    return j;
}

ClusteringResult clustering_from_json(const json& j) {
    ClusteringResult r;
    r.assignment = j.get<HardAssignment>();
    if (auto it = j.find("bic_report"); it != j.end() && !it->is_null()) {
        BicReport b;
        b.k_min = it->at("search_range")[0].get<int>();
        b.k_max = it->at("search_range")[1].get<int>();
        b.selected_k = it->at("selected_k").get<int>();
        b.n = it->at("n").get<std::size_t>();
        b.d = it->at("d").get<std::size_t>();
        for (const auto& e : it->at("entries")) {
            BicEntry entry;
            entry.k = e.at("k").get<int>();
            entry.parameters = e.at("parameters").get<std::int64_t>();
            if (!e.at("bic").is_null()) entry.bic = e.at("bic").get<double>();
            if (!e.at("log_likelihood").is_null()) entry.log_likelihood = e.at("log_likelihood").get<double>();
            entry.iterations = e.at("iterations").get<int>();
            if (e.contains("error")) entry.error = e.at("error").get<std::string>();
            b.entries.push_back(std::move(entry));
        }
        r.bic_report = std::move(b);
    }
    return r;
}

// Display width of a UTF-8 string (code points).
std::size_t display_width(const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s) {
        if ((c & 0xC0) != 0x80) ++w;
    }
    return w;
}

std::string pad_left(const std::string& s, std::size_t width) {
    const std::size_t w = display_width(s);
    return w >= width ? s : std::string(width - w, ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t width) {
    const std::size_t w = display_width(s);
    return w >= width ? s : s + std::string(width - w, ' ');
}

std::string fixed(double v, int decimals) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(decimals) << v;
    return os.str();
}

std::string format_coherence(const json& mean_std) {
    const double mean = mean_std.at("mean").get<double>();
    const auto& sd = mean_std.at("std");
    if (sd.is_null()) return fixed(mean, 1) + "%";
    return fixed(mean, 1) + " ± " + fixed(sd.get<double>(), 1) + "%";
}

} // namespace

std::uint64_t content_hash(const void* data, std::size_t size, std::uint64_t seed) {
    std::uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig c;
    if (auto in = j.find("input"); in != j.end()) {
        c.input.path = in->value("path", std::string{});
        if (in->contains("format") && !in->at("format").is_null()) {
            c.input.format = parse_format(in->at("format").get<std::string>());
        } else if (!c.input.path.empty()) {
            c.input.format = format_from_extension(c.input.path);
        }
        if (auto l = in->find("labels"); l != in->end() && !l->is_null()) c.input.labels = l->get<std::string>();
        c.input.normalize = in->value("normalize", true);
    }
    if (auto r = j.find("reduction"); r != j.end() && !r->is_null()) {
        const auto type = r->value("type", std::string("none"));
        if (type == "none") c.reduction.kind = ReductionConfig::Kind::None;
        else if (type == "pca") c.reduction.kind = ReductionConfig::Kind::Pca;
        else if (type == "umap") c.reduction.kind = ReductionConfig::Kind::Umap;
        else throw std::invalid_argument("unknown reduction type '" + type + "'");
        c.reduction.pca_dims = read_optional_size(*r, "pca_dims");
        if (auto u = r->find("umap"); u != r->end() && !u->is_null()) c.reduction.umap = u->get<UmapConfig>();
    }
    if (auto m = j.find("method"); m != j.end()) {
        if (m->is_null()) {
            c.method.kind = MethodConfig::Kind::None;
        } else {
            const auto type = m->value("type", std::string("gmm"));
            if (type == "gmm") c.method.kind = MethodConfig::Kind::Gmm;
            else if (type == "dbscan") c.method.kind = MethodConfig::Kind::Dbscan;
            else if (type == "none") c.method.kind = MethodConfig::Kind::None;
            else throw std::invalid_argument("unknown clustering method '" + type + "'");
            c.method.k_min = m->value("k_min", c.method.k_min);
            c.method.k_max = m->value("k_max", c.method.k_max);
            c.method.seed = m->value("seed", c.method.seed);
            c.method.restarts = m->value("restarts", c.method.restarts);
            c.method.dbscan.eps = m->value("eps", c.method.dbscan.eps);
            c.method.dbscan.min_pts = m->value("min_pts", c.method.dbscan.min_pts);
        }
    }
    if (auto o = j.find("ordering"); o != j.end() && !o->is_null()) {
        OrderingConfig oc;
        oc.runs = o->value("runs", oc.runs);
        oc.pca_dims = read_optional_size(*o, "pca_dims");
        if (auto t = o->find("tsne"); t != o->end() && !t->is_null()) oc.tsne = t->get<TsneConfig>();
        c.ordering = oc;
    }
    if (auto e = j.find("evaluate"); e != j.end() && !e->is_null()) {
        if (e->is_boolean()) {
            c.evaluate = e->get<bool>() ? EvalMode::On : EvalMode::Off;
        } else {
            const auto mode = e->get<std::string>();
            if (mode == "auto") c.evaluate = EvalMode::Auto;
            else if (mode == "on") c.evaluate = EvalMode::On;
            else if (mode == "off") c.evaluate = EvalMode::Off;
            else throw std::invalid_argument("evaluate must be auto, on or off");
        }
    }
    c.output_dir = j.value("output_dir", std::string{});
    c.use_cache = j.value("cache", true);
    return c;
}

json to_json(const PipelineConfig& c) {
    json j;
    j["input"] = {{"path", c.input.path.string()},
                  {"format", std::string(format_name(c.input.format))},
                  {"labels", c.input.labels ? json(c.input.labels->string()) : json(nullptr)},
                  {"normalize", c.input.normalize}};
    j["reduction"] = reduction_json(c.reduction);
    j["method"] = method_json(c.method);
    j["ordering"] = c.ordering ? ordering_json(*c.ordering) : json(nullptr);
    j["evaluate"] = eval_name(c.evaluate);
    j["output_dir"] = c.output_dir.string();
    return j;
}

EmbeddingMatrix load_input(const InputConfig& input) {
    auto m = load_embeddings(input.path, input.format);
    if (input.labels) m = apply_label_file(m, *input.labels);
    if (input.normalize) m = l2_normalize(m);
    return m;
}

std::size_t resolve_pca_dims(std::optional<std::size_t> requested, std::size_t n, std::size_t d) {
    const std::size_t cap = std::min(n > 0 ? n - 1 : 0, d);
    if (requested) {
        if (*requested == 0) return 0;
        if (*requested > cap) {
            throw std::invalid_argument("pca_dims=" + std::to_string(*requested) + " exceeds min(N-1, d)=" +
                                        std::to_string(cap));
        }
        return *requested;
    }
    return std::min<std::size_t>(d > 50 ? 50 : d, cap);
}

RowMatrix reduce(const EmbeddingMatrix& m, const ReductionConfig& config) {
    switch (config.kind) {
    case ReductionConfig::Kind::None: return m.vectors();
    case ReductionConfig::Kind::Pca: {
        const auto q = resolve_pca_dims(config.pca_dims, m.n(), m.d());
        if (q == 0) return m.vectors();
        return pca_transform(pca_fit(m, q), m.vectors());
    }
    case ReductionConfig::Kind::Umap: return umap_embed(m.vectors(), config.umap).coords;
    }
    return m.vectors();
}

ClusteringResult cluster(const RowMatrix& x, const MethodConfig& config) {
    ClusteringResult r;
    switch (config.kind) {
    case MethodConfig::Kind::Gmm: {
        SelectOptions opts;
        opts.em.restarts = config.restarts;
        auto [report, model] = select_components(x, config.k_min, config.k_max, config.seed, opts);
        r.assignment = hard_assign(model, x);
        r.bic_report = std::move(report);
        break;
    }
    case MethodConfig::Kind::Dbscan: r.assignment = dbscan_fit(x, config.dbscan); break;
    case MethodConfig::Kind::None: throw std::invalid_argument("no clustering method configured");
    }
    return r;
}

OrderingResult order(const EmbeddingMatrix& m, const OrderingConfig& config) {
    if (config.runs < 1) throw std::invalid_argument("ordering runs must be >= 1");
    const auto q = resolve_pca_dims(config.pca_dims, m.n(), m.d());
    // Labels are kept out of the embedded matrix; they only score the result.
    EmbeddingMatrix input = m.without_labels();
    if (q > 0 && q < m.d()) input = pca_transform(pca_fit(input, q), input);

    OrderingResult out;
    if (m.has_all_labels()) {
        const auto labels = m.labels();
        auto agg = aggregate_runs(input, labels, config.tsne, config.runs);
        out.orderings = agg.orderings;
        out.coherence = std::move(agg);
        return out;
    }
    const auto ids = m.ids();
    for (std::size_t r = 0; r < config.runs; ++r) {
        TsneConfig run = config.tsne;
        run.seed = config.tsne.seed + r;
        out.orderings.push_back(sort_1d(tsne_embed(input, run), ids, run.seed));
    }
    return out;
}

PipelineResult run_pipeline(const PipelineConfig& config, bool write) {
    const fs::path cache_dir = config.output_dir / "cache";
    const bool caching = write && config.use_cache && !config.output_dir.empty();

    const auto m = run_stage("ingest", [&] { return load_input(config.input); });
    const bool labeled = m.has_all_labels();
    const bool want_eval = config.evaluate == EvalMode::On || (config.evaluate == EvalMode::Auto && labeled);
    if (config.evaluate == EvalMode::On && !labeled) {
        throw StageError("evaluate", "evaluation requires labels");
    }
    if (config.evaluate == EvalMode::On && config.method.kind == MethodConfig::Kind::None) {
        throw StageError("evaluate", "evaluation requires a clustering method");
    }
    if (caching) fs::create_directories(cache_dir);

    json manifest;
    manifest["schema"] = kManifestSchema;
    manifest["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
    manifest["created_at"] = timestamp_utc();
    manifest["dataset"] = {{"n", m.n()},
                           {"d", m.d()},
                           {"source", config.input.path.string()},
                           {"format", std::string(format_name(config.input.format))},
                           {"labeled", labeled},
                           {"normalized", config.input.normalize}};
    manifest["config"] = to_json(config);
    auto items = json::array();
    for (const auto& it : m.items()) {
        json item = {{"id", it.id}, {"label", it.label ? json(*it.label) : json(nullptr)}};
        item["crop"] = it.crop_ref ? json(*it.crop_ref) : json(nullptr);
        items.push_back(std::move(item));
    }
    manifest["items"] = std::move(items);
    manifest["seeds"] = {{"clustering", config.method.kind == MethodConfig::Kind::Gmm ? json(config.method.seed)
                                                                                    : json(nullptr)},
                         {"ordering", json::array()}};
    manifest["reduction"] = nullptr;
    manifest["clustering"] = nullptr;
    manifest["evaluation"] = nullptr;
    manifest["orderings"] = json::array();
    manifest["coherence"] = nullptr;

    if (config.method.kind != MethodConfig::Kind::None) {
        const auto reduction_cfg = reduction_json(config.reduction);
        const auto reduce_key = hash_matrix(m.vectors(), reduction_cfg);
        const fs::path reduce_path = cache_dir / ("reduce-" + hex64(reduce_key) + ".bin");
        const RowMatrix reduced = run_stage("reduce", [&] {
            if (caching) {
                if (auto hit = read_matrix_cache(reduce_path)) return *hit;
            }
            RowMatrix x = reduce(m.without_labels(), config.reduction);
            if (caching) write_matrix_cache(reduce_path, x);
            return x;
        });
        manifest["reduction"] = {{"type", reduction_name(config.reduction.kind)}, {"output_dim", reduced.cols()}};

        const auto method_cfg = method_json(config.method);
        const fs::path cluster_path = cache_dir / ("cluster-" + hex64(hash_matrix(reduced, method_cfg)) + ".json");
        const auto clustering = run_stage("cluster", [&] {
            if (caching && fs::exists(cluster_path)) {
                std::ifstream in(cluster_path);
                try {
                    return clustering_from_json(json::parse(in));
                } catch (const std::exception&) {
                    // stale or truncated cache entry; recompute
                }
            }
            auto r = cluster(reduced, config.method);
            if (caching) write_atomic(cluster_path, clustering_json(r).dump());
            return r;
        });
        manifest["clustering"] = clustering_json(clustering);

        if (want_eval) {
            manifest["evaluation"] = run_stage("evaluate", [&] {
                const auto labels = m.labels();
                return json(evaluate(clustering.assignment, labels));
            });
        }
    }

    if (config.ordering) {
        const auto result = run_stage("sort", [&] { return order(m, *config.ordering); });
        for (const auto& o : result.orderings) {
            manifest["orderings"].push_back(o);
            manifest["seeds"]["ordering"].push_back(o.seed);
        }
        if (result.coherence) {
            json agg = *result.coherence;
            manifest["coherence"] = std::move(agg);
        }
    }

    PipelineResult out;
    out.tables = render_tables(manifest);
    out.manifest = std::move(manifest);
    if (write) {
        run_stage("export", [&] {
            if (config.output_dir.empty()) throw Error("no output directory configured");
            fs::create_directories(config.output_dir);
            const fs::path manifest_path = config.output_dir / "manifest.json";
            const fs::path tables_path = config.output_dir / "tables.txt";
            try {
                write_atomic(manifest_path, out.manifest.dump(2) + "\n");
                write_atomic(tables_path, out.tables);
            } catch (...) {
                std::error_code ec;
                fs::remove(manifest_path, ec);
                fs::remove(tables_path, ec);
                throw;
            }
            return 0;
        });
    }
    return out;
}

json manifest_without_volatile(const json& manifest) {
    json copy = manifest;
    copy.erase("created_at");
    return copy;
}

std::string render_eval_table(const json& report) {
    if (report.is_null()) throw Error("manifest has no evaluation report");
    const auto& cm = report.at("confusion");
    const auto species = cm.at("species").get<std::vector<std::string>>();
    const auto counts = cm.at("counts").get<CountMatrix>();
    const auto unmatched = cm.at("unmatched_cluster_counts").get<std::vector<std::int64_t>>();
    const auto noise = cm.at("noise_counts").get<std::vector<std::int64_t>>();
    const auto& per = report.at("per_species");
    const bool show_unmatched = std::any_of(unmatched.begin(), unmatched.end(), [](auto v) { return v != 0; });
    const bool show_noise = std::any_of(noise.begin(), noise.end(), [](auto v) { return v != 0; });

    std::size_t label_w = std::string("Actual \\ Predicted").size();
    for (const auto& s : species) label_w = std::max(label_w, display_width(s));
    std::vector<std::size_t> col_w;
    for (const auto& s : species) col_w.push_back(std::max<std::size_t>(display_width(s), 5));
    const std::size_t f1_w = 5;

    std::ostringstream os;
    os << pad_right("Actual \\ Predicted", label_w);
    for (std::size_t c = 0; c < species.size(); ++c) os << "  " << pad_left(species[c], col_w[c]);
    if (show_unmatched) os << "  " << pad_left("Unmatched", 9);
    if (show_noise) os << "  " << pad_left("Noise", 5);
    os << "  " << pad_left("F1", f1_w) << '\n';
    for (std::size_t r = 0; r < species.size(); ++r) {
        os << pad_right(species[r], label_w);
        for (std::size_t c = 0; c < species.size(); ++c) os << "  " << pad_left(std::to_string(counts[r][c]), col_w[c]);
        if (show_unmatched) os << "  " << pad_left(std::to_string(unmatched[r]), 9);
        if (show_noise) os << "  " << pad_left(std::to_string(noise[r]), 5);
        os << "  " << pad_left(fixed(per.at(r).at("f1").get<double>(), 3), f1_w) << '\n';
    }
    std::size_t width = label_w;
    for (auto w : col_w) width += 2 + w;
    if (show_unmatched) width += 11;
    if (show_noise) width += 7;
    os << pad_right("Macro Average", width) << "  " << pad_left(fixed(report.at("macro_f1").get<double>(), 3), f1_w)
       << '\n';
    os << "Accuracy: " << fixed(report.at("accuracy").get<double>(), 3) << " (" << report.at("correct").get<std::int64_t>()
       << '/' << report.at("n").get<std::int64_t>() << ")\n";
    return os.str();
}

std::string render_coherence_table(const json& aggregate) {
    if (aggregate.is_null()) throw Error("manifest has no coherence report");
    const auto& per = aggregate.at("per_species");
    std::size_t name_w = std::string("Overall").size();
    std::vector<std::pair<std::string, std::string>> rows;
    for (const auto& [name, entry] : per.items()) {
        name_w = std::max(name_w, display_width(name));
        rows.emplace_back(name, format_coherence(entry));
    }
    const std::string overall = format_coherence(aggregate.at("overall"));
    std::size_t coh_w = std::max(display_width(overall), std::string("Coherence").size());
    for (const auto& r : rows) coh_w = std::max(coh_w, display_width(r.second));
    std::size_t total = 0;

    std::ostringstream os;
    os << pad_right("Species", name_w) << "  " << pad_right("Coherence", coh_w) << "  " << pad_left("N", 6) << '\n';
    for (const auto& [name, text] : rows) {
        const auto n = per.at(name).at("n").get<std::size_t>();
        total += n;
        os << pad_right(name, name_w) << "  " << pad_right(text, coh_w) << "  " << pad_left(std::to_string(n), 6)
           << '\n';
    }
    os << pad_right("Overall", name_w) << "  " << pad_right(overall, coh_w) << "  "
       << pad_left(std::to_string(total), 6) << '\n';
    os << "Runs: " << aggregate.at("runs").get<std::size_t>() << '\n';
    return os.str();
}

std::string render_tables(const json& manifest) {
    std::ostringstream os;
    os << "Clustering evaluation\n";
    if (auto e = manifest.find("evaluation"); e != manifest.end() && !e->is_null()) {
        os << render_eval_table(*e);
    } else if (auto c = manifest.find("clustering"); c != manifest.end() && !c->is_null()) {
        os << "clusters: " << c->at("k").get<int>() << " (no labels, no evaluation)\n";
    } else {
        os << "no clustering run\n";
    }
    os << "\n1D ordering coherence\n";
    if (auto c = manifest.find("coherence"); c != manifest.end() && !c->is_null()) {
        os << render_coherence_table(*c);
    } else if (auto o = manifest.find("orderings"); o != manifest.end() && !o->empty()) {
        os << o->size() << " ordering run(s) without labels, no coherence\n";
    } else {
        os << "no ordering run\n";
    }
    return os.str();
}

} // namespace wildsort
