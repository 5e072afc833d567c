// wildsort command-line driver.

#include "wildsort/dbscan.hpp"
#include "wildsort/pipeline.hpp"
#include "wildsort/synth.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace wildsort;

namespace {

fs::path default_output(const std::string& sub) {
    const char* root = std::getenv("WILDSORT_OUTPUT_ROOT");
    return fs::path(root && *root ? root : "wildsort-out") / sub;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out << text;
    }
    fs::rename(tmp, path);
}

// Flags shared by every stage-running subcommand. Values are held as strings
// or optionals so only flags that were given override the config file.
struct Overrides {
    std::string input;
    std::string format;
    std::string labels;
    bool no_normalize = false;
    std::string output;
    bool no_cache = false;
    std::string evaluate;

    std::string reduction;
    std::optional<std::size_t> pca_dims;
    std::optional<int> umap_dim;
    std::optional<int> umap_neighbors;
    std::optional<double> umap_min_dist;
    std::optional<int> umap_epochs;
    std::optional<Seed> umap_seed;

    std::string method;
    std::optional<int> k_min;
    std::optional<int> k_max;
    std::optional<Seed> seed;
    std::optional<int> restarts;
    std::optional<double> eps;
    std::optional<std::size_t> min_pts;

    std::optional<std::size_t> runs;
    std::optional<double> perplexity;
    std::optional<int> iterations;
    std::optional<Seed> tsne_seed;
    std::optional<std::size_t> sort_pca_dims;
};

void add_input_flags(CLI::App* app, Overrides& o) {
    app->add_option("-i,--input", o.input, "Embedding file (csv, jsonl or rawf32)");
    app->add_option("--format", o.format, "Input format; guessed from the extension when omitted")
        ->check(CLI::IsMember({"csv", "jsonl", "rawf32"}));
    app->add_option("--labels", o.labels, "JSON-lines label file merged onto the input");
    app->add_flag("--no-normalize", o.no_normalize, "Skip L2 normalization");
    app->add_option("-o,--output", o.output, "Output directory");
    app->add_flag("--no-cache", o.no_cache, "Recompute every stage");
    app->add_option("--evaluate", o.evaluate, "auto, on or off")->check(CLI::IsMember({"auto", "on", "off"}));
}

void add_cluster_flags(CLI::App* app, Overrides& o) {
    app->add_option("--reduction", o.reduction, "none, pca or umap")->check(CLI::IsMember({"none", "pca", "umap"}));
    app->add_option("--pca-dims", o.pca_dims, "PCA target dimension");
    app->add_option("--umap-dim", o.umap_dim, "UMAP output dimension");
    app->add_option("--umap-neighbors", o.umap_neighbors, "UMAP n_neighbors");
    app->add_option("--umap-min-dist", o.umap_min_dist, "UMAP min_dist");
    app->add_option("--umap-epochs", o.umap_epochs, "UMAP epochs");
    app->add_option("--umap-seed", o.umap_seed, "UMAP seed");
    app->add_option("--method", o.method, "gmm or dbscan")->check(CLI::IsMember({"gmm", "dbscan", "none"}));
    app->add_option("--k-min", o.k_min, "Smallest k tried by BIC selection");
    app->add_option("--k-max", o.k_max, "Largest k tried by BIC selection");
    app->add_option("--seed", o.seed, "GMM seed");
    app->add_option("--restarts", o.restarts, "EM restarts per k");
    app->add_option("--eps", o.eps, "DBSCAN radius");
    app->add_option("--min-pts", o.min_pts, "DBSCAN minimum neighborhood size");
}

void add_sort_flags(CLI::App* app, Overrides& o) {
    app->add_option("--runs", o.runs, "Independent t-SNE runs");
    app->add_option("--perplexity", o.perplexity, "t-SNE perplexity");
    app->add_option("--iterations", o.iterations, "t-SNE iterations");
    app->add_option("--tsne-seed", o.tsne_seed, "Seed of the first t-SNE run");
    app->add_option("--sort-pca-dims", o.sort_pca_dims, "PCA before t-SNE (0 disables)");
}

void apply(const Overrides& o, PipelineConfig& c, const std::string& sub) {
    if (!o.input.empty()) {
        c.input.path = o.input;
        if (o.format.empty()) c.input.format = format_from_extension(c.input.path);
    }
    if (!o.format.empty()) c.input.format = parse_format(o.format);
    if (!o.labels.empty()) c.input.labels = fs::path(o.labels);
    if (o.no_normalize) c.input.normalize = false;
    if (!o.output.empty()) c.output_dir = o.output;
    if (c.output_dir.empty()) c.output_dir = default_output(sub);
    if (o.no_cache) c.use_cache = false;
    if (o.evaluate == "auto") c.evaluate = EvalMode::Auto;
    if (o.evaluate == "on") c.evaluate = EvalMode::On;
    if (o.evaluate == "off") c.evaluate = EvalMode::Off;

    if (o.reduction == "none") c.reduction.kind = ReductionConfig::Kind::None;
    if (o.reduction == "pca") c.reduction.kind = ReductionConfig::Kind::Pca;
    if (o.reduction == "umap") c.reduction.kind = ReductionConfig::Kind::Umap;
    if (o.pca_dims) c.reduction.pca_dims = o.pca_dims;
    if (o.umap_dim) c.reduction.umap.output_dim = *o.umap_dim;
    if (o.umap_neighbors) c.reduction.umap.n_neighbors = *o.umap_neighbors;
    if (o.umap_min_dist) c.reduction.umap.min_dist = *o.umap_min_dist;
    if (o.umap_epochs) c.reduction.umap.n_epochs = *o.umap_epochs;
    if (o.umap_seed) c.reduction.umap.seed = *o.umap_seed;

    if (o.method == "gmm") c.method.kind = MethodConfig::Kind::Gmm;
    if (o.method == "dbscan") c.method.kind = MethodConfig::Kind::Dbscan;
    if (o.method == "none") c.method.kind = MethodConfig::Kind::None;
    if (o.k_min) c.method.k_min = *o.k_min;
    if (o.k_max) c.method.k_max = *o.k_max;
    if (o.seed) c.method.seed = *o.seed;
    if (o.restarts) c.method.restarts = *o.restarts;
    if (o.eps) c.method.dbscan.eps = *o.eps;
    if (o.min_pts) c.method.dbscan.min_pts = *o.min_pts;

    const bool any_sort = o.runs || o.perplexity || o.iterations || o.tsne_seed || o.sort_pca_dims;
    if (any_sort && !c.ordering) c.ordering = OrderingConfig{};
    if (c.ordering) {
        if (o.runs) c.ordering->runs = *o.runs;
        if (o.perplexity) c.ordering->tsne.perplexity = *o.perplexity;
        if (o.iterations) c.ordering->tsne.iterations = *o.iterations;
        if (o.tsne_seed) c.ordering->tsne.seed = *o.tsne_seed;
        if (o.sort_pca_dims) c.ordering->pca_dims = o.sort_pca_dims;
    }
    if (c.input.path.empty()) throw Error("no input file given (--input or config input.path)");
}

int execute(const PipelineConfig& config) {
    const auto result = run_pipeline(config, true);
    std::cout << result.tables;
    std::cout << "manifest: " << (config.output_dir / "manifest.json").string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Organize wildlife image embeddings: cluster, sort and evaluate."};
    app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
    app.require_subcommand(1);

    Overrides o;

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Validate an embedding file and optionally convert it");
    std::string convert_to, convert_format;
    ingest->add_option("-i,--input", o.input, "Embedding file")->required();
    ingest->add_option("--format", o.format, "Input format")->check(CLI::IsMember({"csv", "jsonl", "rawf32"}));
    ingest->add_option("--labels", o.labels, "JSON-lines label file");
    ingest->add_flag("--no-normalize", o.no_normalize, "Skip L2 normalization in the converted copy");
    ingest->add_option("--convert", convert_to, "Write the validated data to this path");
    ingest->add_option("--to", convert_format, "Format of the converted copy")
        ->check(CLI::IsMember({"csv", "jsonl", "rawf32"}));

    // cluster
    auto* cluster_cmd = app.add_subcommand("cluster", "Reduce and cluster an embedding file");
    add_input_flags(cluster_cmd, o);
    add_cluster_flags(cluster_cmd, o);
    std::optional<std::size_t> k_distance;
    cluster_cmd->add_option("--k-distance", k_distance, "Print the sorted k-distance profile and exit");

    // sort
    auto* sort_cmd = app.add_subcommand("sort", "1D t-SNE ordering with coherence when labels exist");
    add_input_flags(sort_cmd, o);
    add_sort_flags(sort_cmd, o);

    // run
    auto* run_cmd = app.add_subcommand("run", "Full pipeline from a JSON config plus flag overrides");
    std::string config_path;
    run_cmd->add_option("-c,--config", config_path, "Pipeline config (JSON)");
    add_input_flags(run_cmd, o);
    add_cluster_flags(run_cmd, o);
    add_sort_flags(run_cmd, o);
    bool print_config = false;
    run_cmd->add_flag("--print-config", print_config, "Print the resolved config and exit");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a manifest's clustering against labels");
    std::string manifest_path, eval_labels, eval_out;
    eval_cmd->add_option("-m,--manifest", manifest_path, "Manifest produced by cluster or run")->required();
    eval_cmd->add_option("--labels", eval_labels, "JSON-lines label file (e.g. an annotation export)");
    eval_cmd->add_option("--write", eval_out, "Write the updated manifest here");

    // render
    auto* render_cmd = app.add_subcommand("render", "Print the tables of a manifest");
    std::string render_path;
    render_cmd->add_option("-m,--manifest", render_path, "Manifest file")->required();

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Write a labeled Gaussian-mixture fixture");
    FixtureSpec spec;
    std::string synth_out, synth_format;
    synth_cmd->add_option("--clusters", spec.n_clusters, "Number of clusters");
    synth_cmd->add_option("--per-cluster", spec.per_cluster_n, "Items per cluster");
    synth_cmd->add_option("--dim", spec.dim, "Dimension");
    synth_cmd->add_option("--separation", spec.separation, "Centroid distance in sigma units");
    synth_cmd->add_option("--seed", spec.seed, "Seed");
    synth_cmd->add_option("-o,--output", synth_out, "Output file")->required();
    synth_cmd->add_option("--format", synth_format, "Output format")->check(CLI::IsMember({"csv", "jsonl", "rawf32"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (ingest->parsed()) {
            InputConfig in;
            in.path = o.input;
            in.format = o.format.empty() ? format_from_extension(in.path) : parse_format(o.format);
            if (!o.labels.empty()) in.labels = fs::path(o.labels);
            in.normalize = !o.no_normalize && !convert_to.empty();
            EmbeddingMatrix m = [&] {
                try {
                    return load_input(in);
                } catch (const std::exception& e) {
                    throw StageError("ingest", e.what());
                }
            }();
            std::size_t labeled = 0;
            for (const auto& it : m.items()) labeled += it.label ? 1 : 0;
            json summary = {{"n", m.n()},
                            {"d", m.d()},
                            {"format", std::string(format_name(in.format))},
                            {"labeled", labeled}};
            if (!convert_to.empty()) {
                const Format out = convert_format.empty() ? format_from_extension(convert_to) : parse_format(convert_format);
                save_embeddings(m, convert_to, out);
                summary["written"] = convert_to;
                summary["normalized"] = in.normalize;
            }
            std::cout << summary.dump(2) << '\n';
            return 0;
        }
        if (cluster_cmd->parsed()) {
            PipelineConfig c;
            c.ordering.reset();
            apply(o, c, "cluster");
            if (k_distance) {
                const auto m = load_input(c.input);
                const RowMatrix x = reduce(m.without_labels(), c.reduction);
                for (double v : k_distance_profile(x, *k_distance)) std::cout << v << '\n';
                return 0;
            }
            return execute(c);
        }
        if (sort_cmd->parsed()) {
            PipelineConfig c;
            c.method.kind = MethodConfig::Kind::None;
            c.ordering = OrderingConfig{};
            apply(o, c, "sort");
            return execute(c);
        }
        if (run_cmd->parsed()) {
            PipelineConfig c;
            if (!config_path.empty()) c = pipeline_config_from_json(read_json_file(config_path));
            apply(o, c, "run");
            if (print_config) {
                std::cout << to_json(c).dump(2) << '\n';
                return 0;
            }
            return execute(c);
        }
        if (eval_cmd->parsed()) {
            json manifest = read_json_file(manifest_path);
            if (!manifest.contains("clustering") || manifest["clustering"].is_null()) {
                throw StageError("evaluate", "manifest has no clustering");
            }
            std::vector<ItemRecord> items;
            for (const auto& it : manifest.at("items")) {
                ItemRecord r;
                r.id = it.at("id").get<std::string>();
                if (!it.at("label").is_null()) r.label = it.at("label").get<std::string>();
                items.push_back(std::move(r));
            }
            if (!eval_labels.empty()) items = merge_labels(std::move(items), read_label_file(eval_labels));
            std::vector<std::string> labels;
            for (const auto& it : items) {
                if (!it.label) throw StageError("evaluate", "evaluation requires labels (item '" + it.id + "' has none)");
                labels.push_back(*it.label);
            }
            const auto assignment = manifest.at("clustering").get<HardAssignment>();
            manifest["evaluation"] = evaluate(assignment, labels);
            for (std::size_t i = 0; i < items.size(); ++i) manifest["items"][i]["label"] = labels[i];
            manifest["dataset"]["labeled"] = true;
            std::cout << render_eval_table(manifest["evaluation"]);
            if (!eval_out.empty()) write_text(eval_out, manifest.dump(2) + "\n");
            return 0;
        }
        if (render_cmd->parsed()) {
            std::cout << render_tables(read_json_file(render_path));
            return 0;
        }
        if (synth_cmd->parsed()) {
            const auto fixture = generate_fixture(spec);
            const Format f = synth_format.empty() ? format_from_extension(synth_out) : parse_format(synth_format);
            if (fs::path(synth_out).has_parent_path()) fs::create_directories(fs::path(synth_out).parent_path());
            save_embeddings(fixture.data, synth_out, f);
            std::cout << "wrote " << fixture.data.n() << " x " << fixture.data.d() << " to " << synth_out << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
