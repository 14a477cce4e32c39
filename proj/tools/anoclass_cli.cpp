// anoclass: command-line front end for feature extraction, memory banks,
// defect synthesis, training, evaluation, t-SNE plots and result tables.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "anoclass/backbone/resnet.hpp"
#include "anoclass/harness/config.hpp"
#include "anoclass/harness/dataset.hpp"
#include "anoclass/harness/experiment.hpp"
#include "anoclass/harness/report.hpp"
#include "anoclass/harness/tsne.hpp"
#include "anoclass/memory_bank/bank.hpp"
#include "anoclass/synth/generate.hpp"

namespace fs = std::filesystem;
using namespace anoclass;
using namespace anoclass::harness;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

ExperimentConfig resolve_config(const Globals& g) {
    ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
    if (g.seed) cfg.seeds = {*g.seed};
    return cfg;
}

fs::path out_dir(const Globals& g, const ExperimentConfig& cfg) { return g.out.empty() ? fs::path(cfg.out_dir) : fs::path(g.out); }

std::shared_ptr<const backbone::Backbone> load_backbone(const ExperimentConfig& cfg) {
    if (cfg.weights.empty()) throw ArgumentError("backbone.weights is not set (see tools/export_resnet50.py)");
    return std::make_shared<const backbone::Backbone>(backbone::Backbone::load(cfg.weights));
}

FeatureProvider provider(const ExperimentConfig& cfg) { return backbone_features(load_backbone(cfg), cfg.cache_dir); }

/// Requested categories, or every usable one under the root.
std::vector<std::string> categories(const ExperimentConfig& cfg, const std::vector<std::string>& requested) {
    if (!requested.empty()) return requested;
    if (!cfg.categories.empty()) return cfg.categories;
    return list_categories(cfg.resolved_data_root());
}

std::optional<Splits> ingest_or_skip(const ExperimentConfig& cfg, const std::string& category) {
    try {
        return ingest({cfg.resolved_data_root(), cfg.dataset, category});
    } catch (const ExcludedCategory& e) {
        std::cerr << "skipping " << category << ": " << e.what() << "\n";
        return std::nullopt;
    }
}

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg) {
    fs::create_directories(dir);
    nlohmann::json j{{"config", to_json(cfg)}, {"config_hash", config_hash(cfg)}};
    std::ofstream(dir / "run_config.json") << j.dump(2) << '\n';
}

void print_log(const TrainLog& log) {
    std::cout << "iterations: " << log.iterations;
    if (!log.records.empty())
        std::cout << ", last loss " << log.records.back().loss << ", last accuracy " << log.records.back().accuracy;
    if (log.threshold_reached) std::cout << " (accuracy threshold reached)";
    std::cout << "\n";
    if (!log.notice.empty()) std::cout << log.notice << "\n";
}

// ---------------------------------------------------------------------------

int cmd_extract(const Globals& g, const std::vector<std::string>& cats, bool pooled) {
    auto cfg = resolve_config(g);
    if (!g.out.empty()) cfg.cache_dir = g.out;
    const auto fp = provider(cfg);
    for (const auto& cat : categories(cfg, cats)) {
        const auto s = ingest_or_skip(cfg, cat);
        if (!s) continue;
        std::vector<fs::path> files = s->train_good;
        files.insert(files.end(), s->test_good.begin(), s->test_good.end());
        for (const auto& t : s->test_by_type) files.insert(files.end(), t.begin(), t.end());
        for (const auto& f : files) {
            fp.patch(f);
            if (pooled) fp.pooled(f);
        }
        std::cout << cat << ": " << files.size() << " images cached under " << cfg.cache_dir << "\n";
    }
    return 0;
}

int cmd_build_bank(const Globals& g, const std::string& category) {
    const auto cfg = resolve_config(g);
    const auto s = ingest({cfg.resolved_data_root(), cfg.dataset, category});
    const auto normals = bank_images(s, cfg, 0);
    const auto fp = provider(cfg);
    const fs::path dir = out_dir(g, cfg) / "banks";
    fs::create_directories(dir);
    std::vector<std::string> sources;
    for (const auto& f : normals) sources.push_back(f.string());
    for (auto seed : cfg.seeds) {
        const auto bank = bank_for(normals, fp, cfg.p, seed);
        const fs::path file = dir / (category + "_seed" + std::to_string(seed) + ".anob");
        memory_bank::save_bank(file, bank, sources);
        std::cout << file.string() << ": " << bank.rows() << " of " << bank.source_count() << " patch vectors\n";
    }
    return 0;
}

int cmd_gen_defects(const Globals& g, const std::string& category, std::string normals_dir, std::string dtd, std::string kind,
                    std::size_t per_class) {
    auto cfg = resolve_config(g);
    if (!dtd.empty()) cfg.dtd_root = dtd;
    if (!kind.empty()) cfg.gen_kind = synth::parse_kind(kind);
    if (per_class) cfg.per_class = per_class;
    if (cfg.dtd_root.empty()) throw ArgumentError("no texture root: pass --dtd or set synth.dtd_root");
    if (normals_dir.empty()) {
        if (category.empty()) throw ArgumentError("pass --normals <dir> or --category <name>");
        const fs::path root = cfg.resolved_data_root() / category / "train" / "good";
        normals_dir = (cfg.dataset == DatasetKind::mvtec3d_ad ? root / "rgb" : root).string();
    }
    fs::path out = !g.out.empty() ? fs::path(g.out) : !cfg.synth_dir.empty() ? fs::path(cfg.synth_dir) : fs::path(cfg.out_dir) / "synth";
    if (!category.empty() && g.out.empty()) out /= category;

    synth::SynthOptions opts;
    opts.size = cfg.synth_size;
    opts.lambda = cfg.lambda;
    opts.beta_lo = cfg.beta_min;
    opts.beta_hi = cfg.beta_max;
    const auto textures = synth::load_textures(cfg.dtd_root);
    const synth::SynthSources src(synth::load_normals(normals_dir), textures, opts);
    const auto seed = cfg.seeds.front();
    const auto items = synth::generate_pretrain_set(src, cfg.gen_kind, cfg.per_class, seed);
    synth::write_pretrain_set(out, items, seed, textures);
    std::cout << items.size() << " synthetic defects (" << synth::to_string(cfg.gen_kind) << ") written to " << out.string() << "\n";
    return 0;
}

int cmd_pretrain(const Globals& g, const std::string& model, const std::string& synth_dir, const std::string& bank_file,
                 const std::string& category, bool maml) {
    auto cfg = resolve_config(g);
    if (!model.empty()) cfg.model = parse_model(model);
    if (maml) cfg.maml = true;
    const fs::path dir = !synth_dir.empty() ? fs::path(synth_dir) : fs::path(cfg.synth_dir);
    if (dir.empty()) throw ArgumentError("pass --synth <dir> or set synth.dir");
    const auto seed = cfg.seeds.front();
    const auto fp = provider(cfg);

    std::optional<memory_bank::MemoryBank> bank;
    if (cfg.use_residual) {
        if (!bank_file.empty()) {
            bank = memory_bank::load_bank(bank_file);
        } else if (!category.empty()) {
            const auto s = ingest({cfg.resolved_data_root(), cfg.dataset, category});
            bank = bank_for(bank_images(s, cfg, 0), fp, cfg.p, seed);
        } else {
            throw ArgumentError("residual inputs need --bank <file> or --category <name>");
        }
    }
    const auto entries = synth::read_pretrain_manifest(dir);
    const auto data = synthetic_source(entries, fp, bank ? &*bank : nullptr, cfg.use_residual, cfg.cache_dir);
    const fs::path ckpt = !g.out.empty() ? fs::path(g.out) : fs::path(cfg.out_dir) / ("pretrained_" + to_string(cfg.model) + ".json");
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
    const auto r = pretrain_model(cfg, data, seed, ckpt);
    print_log(r.log);
    std::cout << "checkpoint: " << r.checkpoint.string() << "\n";
    return 0;
}

int cmd_finetune(const Globals& g, const std::string& model, const std::string& ckpt, std::size_t shots, const std::string& category) {
    auto cfg = resolve_config(g);
    if (!model.empty()) cfg.model = parse_model(model);
    if (cfg.model == ModelKind::direct) throw ArgumentError("use `evaluate` for the direct baseline");
    const auto seed = cfg.seeds.front();
    const auto s = ingest({cfg.resolved_data_root(), cfg.dataset, category});
    const auto split = select_shots(s, shots, cfg.include_good);
    const auto fp = provider(cfg);
    std::optional<memory_bank::MemoryBank> bank;
    if (cfg.use_residual) bank = bank_for(bank_images(s, cfg, shots), fp, cfg.p, seed);
    std::vector<Sample> support;
    for (const auto& f : split.support) support.push_back({model_input(bank ? &*bank : nullptr, fp.patch(f.path), cfg.use_residual), f.label});
    const std::size_t c3 = support.front().map.dim(0);
    const fs::path out = !g.out.empty() ? fs::path(g.out) : fs::path(cfg.out_dir) / (category + "_" + to_string(cfg.model) + ".json");
    if (out.has_parent_path()) fs::create_directories(out.parent_path());

    if (cfg.model == ModelKind::contrastive) {
        auto net = ckpt.empty() ? contrastive::EmbeddingNet<float>({c3, {256, 128, 64, 64}, cfg.embed_dim}, seed, cfg.tau)
                                : contrastive::load_contrastive(ckpt);
        contrastive::ContrastiveConfig cc;
        cc.lr = cfg.lr;
        cc.epochs = cfg.finetune_epochs;
        cc.seed = seed;
        print_log(contrastive::finetune(net, SampleSource::in_memory(support), shots, cc));
        contrastive::save_contrastive(out, net);
    } else {
        auto head = ckpt.empty() ? relation::RelationHead<float>({c3, 64, 8}, seed) : relation::load_relation(ckpt);
        relation::VanillaConfig vc;
        vc.epochs = shots > 1 ? cfg.vanilla_epochs : 0;
        vc.lr = cfg.lr;
        vc.seed = seed;
        print_log(relation::train_vanilla(head, SampleSource::in_memory(support), vc));
        relation::save_relation(out, head);
    }
    std::cout << "checkpoint: " << out.string() << "\n";
    return 0;
}

int cmd_evaluate(const Globals& g, const std::vector<std::string>& cats, const std::string& model, std::vector<std::size_t> shots) {
    auto cfg = resolve_config(g);
    if (!model.empty()) cfg.model = parse_model(model);
    if (!shots.empty()) cfg.shots = shots;
    const fs::path out = out_dir(g, cfg);
    write_manifest(out, cfg);
    const auto fp = provider(cfg);
    std::vector<ResultRow> rows;
    for (const auto& cat : categories(cfg, cats)) {
        const auto s = ingest_or_skip(cfg, cat);
        if (!s) continue;
        for (auto n : cfg.shots) {
            try {
                rows.push_back(run_category(cfg, *s, cat, n, fp, out, &std::cout));
                std::cout << cat << " " << n << "-shot: " << format_mean_std(rows.back().mean_pct, rows.back().std_pct) << "\n";
            } catch (const ProtocolError& e) {
                std::cerr << cat << " " << n << "-shot left blank: " << e.what() << "\n";
            }
        }
    }
    if (rows.empty()) throw ProtocolError("no category produced results");
    for (const auto& r : write_report(rows, out))
        if (r.category == kAverageLabel) std::cout << "Average " << r.shot << "-shot: " << format_mean_std(r.mean_pct, r.std_pct) << "\n";
    std::cout << "results: " << (out / "results.csv").string() << "\n";
    return 0;
}

int cmd_tsne(const Globals& g, const std::string& category, std::size_t shots, const std::string& ckpt, double perplexity) {
    auto cfg = resolve_config(g);
    const auto seed = cfg.seeds.front();
    const auto s = ingest({cfg.resolved_data_root(), cfg.dataset, category});
    const auto split = select_shots(s, shots, cfg.include_good);
    const auto fp = provider(cfg);
    std::optional<memory_bank::MemoryBank> bank;
    if (cfg.use_residual) bank = bank_for(bank_images(s, cfg, shots), fp, cfg.p, seed);
    std::vector<Sample> support, all;
    for (const auto& f : split.support) support.push_back({model_input(bank ? &*bank : nullptr, fp.patch(f.path), cfg.use_residual), f.label});
    all = support;
    for (const auto& f : split.query) all.push_back({model_input(bank ? &*bank : nullptr, fp.patch(f.path), cfg.use_residual), f.label});

    std::vector<std::vector<double>> before, after;
    std::vector<int> labels;
    for (const auto& x : all) {
        before.emplace_back(x.map.values().begin(), x.map.values().end());
        labels.push_back(x.label);
    }
    const std::size_t c3 = all.front().map.dim(0);
    auto net = ckpt.empty() ? contrastive::EmbeddingNet<float>({c3, {256, 128, 64, 64}, cfg.embed_dim}, seed, cfg.tau)
                            : contrastive::load_contrastive(ckpt);
    contrastive::ContrastiveConfig cc;
    cc.lr = cfg.lr;
    cc.epochs = cfg.finetune_epochs;
    cc.seed = seed;
    contrastive::finetune(net, SampleSource::in_memory(support), shots, cc);
    std::vector<const Tensor<float>*> maps;
    for (const auto& x : support) maps.push_back(&x.map);
    net.calibrate(contrastive::stack_maps<float>(maps));
    for (const auto& x : all) after.push_back(contrastive::embed(net, x.map));

    TsneOptions opt;
    opt.perplexity = perplexity;
    opt.seed = seed;
    const fs::path dir = out_dir(g, cfg) / "tsne";
    for (const auto& [name, pts] : {std::pair{"before", &before}, std::pair{"after", &after}}) {
        const auto y = tsne(*pts, opt);
        const fs::path stem = dir / (category + "_" + std::to_string(shots) + "shot_" + name);
        write_tsne_csv(fs::path(stem.string() + ".csv"), y, labels);
        write_tsne_plot(fs::path(stem.string() + ".png"), y, labels);
        std::cout << stem.string() << ".{csv,png}: " << y.size() << " points\n";
    }
    return 0;
}

int cmd_report(const Globals& g) {
    const auto cfg = resolve_config(g);
    const fs::path out = out_dir(g, cfg);
    const auto rows = write_report(collect_cells(out), out);
    std::cout << markdown_table(rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot anomaly classification on residual patch features"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config, "TOML configuration file")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "Run a single seed instead of experiment.seeds");
    app.add_option("--out", g.out, "Output location (directory, or checkpoint file for pretrain/finetune)");

    std::vector<std::string> cats;
    std::string category, model, synth_dir, bank_file, ckpt, normals, dtd, kind;
    std::size_t shots = 2, per_class = 0;
    std::vector<std::size_t> shot_list;
    bool pooled = false, maml = false;
    double perplexity = 30.0;

    auto* extract = app.add_subcommand("extract", "Extract and cache patch features of dataset images");
    extract->add_option("--category", cats, "Categories (default: config or all)");
    extract->add_flag("--pooled", pooled, "Also cache pooled final-stage features for the direct baseline");

    auto* build = app.add_subcommand("build-bank", "Build coreset memory banks for every configured seed");
    build->add_option("--category", category, "Category")->required();

    auto* gen = app.add_subcommand("gen-defects", "Synthesize pseudo-class defect images");
    gen->add_option("--category", category, "Use this category's train/good images as normals");
    gen->add_option("--normals", normals, "Directory of normal images");
    gen->add_option("--dtd", dtd, "Describable-textures root");
    gen->add_option("--kind", kind, "poisson or polygon");
    gen->add_option("--per-class", per_class, "Items per pseudo-class");

    auto* pre = app.add_subcommand("pretrain", "Pretrain on a synthetic defect set");
    pre->add_option("--model", model, "contrastive or vanilla");
    pre->add_option("--synth", synth_dir, "Synthetic set directory (with manifest.json)");
    pre->add_option("--bank", bank_file, "Memory bank file for residual inputs");
    pre->add_option("--category", category, "Build the bank from this category instead");
    pre->add_flag("--maml", maml, "First-order meta-learning variant (contrastive only)");

    auto* fine = app.add_subcommand("finetune", "Fine-tune on a category's support set and save the checkpoint");
    fine->add_option("--model", model, "contrastive or vanilla");
    fine->add_option("--ckpt", ckpt, "Starting checkpoint (default: fresh network)");
    fine->add_option("--shots", shots, "Shots per class")->check(CLI::Range(1, 5));
    fine->add_option("--category", category, "Category")->required();

    auto* eval = app.add_subcommand("evaluate", "Run the episodic protocol and write result tables");
    eval->add_option("--category", cats, "Categories (default: config or all)");
    eval->add_option("--model", model, "contrastive, vanilla or direct");
    eval->add_option("--shots", shot_list, "Shot counts (default: experiment.shots)");

    auto* ts = app.add_subcommand("tsne", "Write t-SNE layouts before and after the contrastive classifier");
    ts->add_option("--category", category, "Category")->required();
    ts->add_option("--shots", shots, "Shots per class")->check(CLI::Range(1, 5));
    ts->add_option("--ckpt", ckpt, "Pretrained contrastive checkpoint");
    ts->add_option("--perplexity", perplexity, "Perplexity (clamped below N/3)");

    auto* rep = app.add_subcommand("report", "Aggregate stored result cells into CSV and markdown tables");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();
    CLI11_PARSE(app, argc, argv);
    if (seed_opt->count()) g.seed = seed;

    try {
        if (*extract) return cmd_extract(g, cats, pooled);
        if (*build) return cmd_build_bank(g, category);
        if (*gen) return cmd_gen_defects(g, category, normals, dtd, kind, per_class);
        if (*pre) return cmd_pretrain(g, model, synth_dir, bank_file, category, maml);
        if (*fine) return cmd_finetune(g, model, ckpt, shots, category);
        if (*eval) return cmd_evaluate(g, cats, model, shot_list);
        if (*ts) return cmd_tsne(g, category, shots, ckpt, perplexity);
        if (*rep) return cmd_report(g);
    } catch (const anoclass::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
