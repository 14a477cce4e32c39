#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anoclass/backbone/feature_cache.hpp"
#include "anoclass/backbone/patch_features.hpp"
#include "anoclass/contrastive/contrastive.hpp"
#include "anoclass/core/episode.hpp"
#include "anoclass/harness/config.hpp"
#include "anoclass/harness/dataset.hpp"
#include "anoclass/harness/direct.hpp"
#include "anoclass/harness/report.hpp"
#include "anoclass/io/image_io.hpp"
#include "anoclass/memory_bank/bank.hpp"
#include "anoclass/nn/tensor_file.hpp"
#include "anoclass/relation/relation.hpp"

namespace anoclass::harness {

using backbone::PatchFeatureMap;

/// A (category, seed) job failed; the message carries both.
class CellError : public Error {
public:
    CellError(std::string category, std::uint64_t seed, const std::string& what)
        : Error("[" + category + ", seed " + std::to_string(seed) + "] " + what), category_(std::move(category)), seed_(seed) {}
    const std::string& category() const noexcept { return category_; }
    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::string category_;
    std::uint64_t seed_;
};

inline std::string fnv1a_hex(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Stable per-file cache name: hash of the absolute path plus the stem.
inline std::string cache_key(const fs::path& image) {
    const auto abs = fs::absolute(image).lexically_normal();
    return fnv1a_hex(abs.generic_string()) + "_" + image.stem().string();
}

/// Where the harness gets per-image descriptors. Tests plug in synthetic
/// functions; real runs use backbone_features().
struct FeatureProvider {
    std::function<PatchFeatureMap(const fs::path&)> patch;
    std::function<std::vector<float>(const fs::path&)> pooled;  // for the direct baseline
};

/// Backbone-backed provider caching every result under `cache_dir`.
inline FeatureProvider backbone_features(std::shared_ptr<const backbone::Backbone> net, const fs::path& cache_dir,
                                         backbone::PreprocessConfig pre = {}) {
    FeatureProvider p;
    p.patch = [net, cache_dir, pre](const fs::path& image) {
        const fs::path file = cache_dir / "features" / (cache_key(image) + ".anof");
        if (fs::exists(file)) return backbone::load_features(file);
        fs::create_directories(file.parent_path());
        auto f = backbone::extract_patch_features(*net, io::load_image(image), image.string(), pre);
        backbone::save_features(file, f, {image.string(), net->identifier(), pre});
        return f;
    };
    p.pooled = [net, cache_dir, pre](const fs::path& image) {
        const fs::path file = cache_dir / "pooled" / (cache_key(image) + ".anot");
        if (fs::exists(file)) return nn::load_tensors(file).at("pooled").storage();
        fs::create_directories(file.parent_path());
        auto v = net->pooled_layer4(backbone::preprocess(io::load_image(image), pre));
        Tensor<float> t({v.size()});
        std::copy(v.begin(), v.end(), t.data());
        nn::save_tensors(file, {{"pooled", std::move(t)}});
        return v;
    };
    return p;
}

/// What the classifiers see: the residual against the bank, or the raw
/// descriptors when residuals are switched off.
inline Tensor<float> model_input(const memory_bank::MemoryBank* bank, const PatchFeatureMap& f, bool use_residual) {
    if (!use_residual) return f.as_map();
    if (!bank) throw ArgumentError("residual inputs need a memory bank");
    return memory_bank::residual_map(*bank, f).as_map();
}

/// Normal images feeding the bank: train/good minus any good support shots,
/// optionally capped to the first `max_images`.
inline std::vector<fs::path> bank_images(const Splits& s, const ExperimentConfig& cfg, std::size_t shot) {
    const std::size_t skip = cfg.include_good ? std::min(shot, s.train_good.size()) : 0;
    std::vector<fs::path> out(s.train_good.begin() + static_cast<long>(skip), s.train_good.end());
    if (cfg.max_images && out.size() > cfg.max_images) out.resize(cfg.max_images);
    if (out.empty()) throw ProtocolError("no train/good images left for the memory bank");
    return out;
}

inline memory_bank::MemoryBank bank_for(const std::vector<fs::path>& normals, const FeatureProvider& fp, double p, std::uint64_t seed) {
    std::vector<PatchFeatureMap> maps;
    maps.reserve(normals.size());
    for (const auto& f : normals) maps.push_back(fp.patch(f));
    return memory_bank::build_bank(maps, p, seed);
}

/// Checkpoint path for a category; "{category}" in train.pretrained is substituted.
inline fs::path pretrained_path(const ExperimentConfig& cfg, const std::string& category) {
    std::string s = cfg.pretrained;
    const std::string tag = "{category}";
    if (auto pos = s.find(tag); pos != std::string::npos) s.replace(pos, tag.size(), category);
    return s;
}

struct CellResult {
    std::string category;
    std::size_t shot = 0;
    std::uint64_t seed = 0;
    std::string model;
    double accuracy = 0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::size_t train_iterations = 0;
    std::string notice;
    std::string config_hash;
};

inline nlohmann::json to_json(const CellResult& c) {
    return {{"category", c.category}, {"shot", c.shot},       {"seed", c.seed},
            {"model", c.model},       {"accuracy", c.accuracy}, {"correct", c.correct},
            {"total", c.total},       {"train_iterations", c.train_iterations}, {"notice", c.notice},
            {"config_hash", c.config_hash}};
}

inline CellResult cell_from_json(const nlohmann::json& j) {
    CellResult c;
    c.category = j.at("category").get<std::string>();
    c.shot = j.at("shot").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.model = j.at("model").get<std::string>();
    c.accuracy = j.at("accuracy").get<double>();
    c.correct = j.at("correct").get<std::size_t>();
    c.total = j.at("total").get<std::size_t>();
    c.train_iterations = j.value("train_iterations", std::size_t{0});
    c.notice = j.value("notice", std::string{});
    c.config_hash = j.at("config_hash").get<std::string>();
    return c;
}

inline fs::path cell_path(const fs::path& out_dir, const std::string& category, std::size_t shot, std::uint64_t seed) {
    return out_dir / "cells" / category / (std::to_string(shot) + "shot_seed" + std::to_string(seed) + ".json");
}

namespace detail {

inline std::vector<Sample> load_inputs(const std::vector<LabeledFile>& files, const FeatureProvider& fp,
                                       const memory_bank::MemoryBank* bank, bool use_residual) {
    std::vector<Sample> out;
    out.reserve(files.size());
    for (const auto& f : files) out.push_back({model_input(bank, fp.patch(f.path), use_residual), f.label});
    return out;
}

inline CellResult run_contrastive(const ExperimentConfig& cfg, const std::string& category, std::size_t shot, std::uint64_t seed,
                                  const std::vector<Sample>& support, const std::vector<Sample>& query) {
    const std::size_t c3 = support.front().map.dim(0);
    std::unique_ptr<contrastive::EmbeddingNet<float>> net;
    if (cfg.pretrain) {
        net = std::make_unique<contrastive::EmbeddingNet<float>>(contrastive::load_contrastive(pretrained_path(cfg, category)));
    } else {
        net = std::make_unique<contrastive::EmbeddingNet<float>>(contrastive::EmbeddingArch{c3, {256, 128, 64, 64}, cfg.embed_dim}, seed, cfg.tau);
    }
    contrastive::ContrastiveConfig cc;
    cc.lr = cfg.lr;
    cc.epochs = cfg.finetune_epochs;
    cc.seed = seed;
    const auto log = contrastive::finetune(*net, SampleSource::in_memory(support), shot, cc);

    std::vector<const Tensor<float>*> maps;
    std::vector<int> labels;
    for (const auto& s : support) {
        maps.push_back(&s.map);
        labels.push_back(s.label);
    }
    net->calibrate(contrastive::stack_maps<float>(maps));
    std::vector<std::vector<double>> sup;
    for (const auto& s : support) sup.push_back(contrastive::embed(*net, s.map));
    CellResult r{category, shot, seed, "contrastive", 0, 0, query.size(), log.iterations, log.notice, {}};
    for (const auto& q : query) r.correct += contrastive::classify_embeddings(sup, labels, contrastive::embed(*net, q.map)) == q.label;
    return r;
}

inline CellResult run_vanilla(const ExperimentConfig& cfg, const std::string& category, std::size_t shot, std::uint64_t seed,
                              const std::vector<Sample>& support, const std::vector<Sample>& query) {
    const std::size_t c3 = support.front().map.dim(0);
    std::unique_ptr<relation::RelationHead<float>> head;
    if (cfg.pretrain) {
        head = std::make_unique<relation::RelationHead<float>>(relation::load_relation(pretrained_path(cfg, category)));
    } else {
        head = std::make_unique<relation::RelationHead<float>>(relation::RelationArch{c3, 64, 8}, seed);
    }
    TrainLog log;
    if (shot > 1) {
        relation::VanillaConfig vc;
        vc.epochs = cfg.vanilla_epochs;
        vc.lr = cfg.lr;
        vc.seed = seed;
        log = relation::train_vanilla(*head, SampleSource::in_memory(support), vc);
    } else {
        log.notice = "one-shot task: no query remains for training, the head classifies directly";
    }
    // Each support paired with its successor gives a batch of realistic pair statistics.
    std::vector<const Tensor<float>*> a, b;
    for (std::size_t i = 0; i < support.size(); ++i) {
        a.push_back(&support[i].map);
        b.push_back(&support[(i + 1) % support.size()].map);
    }
    head->calibrate(relation::stack_pairs<float>(a, b));
    CellResult r{category, shot, seed, "vanilla", 0, 0, query.size(), log.iterations, log.notice, {}};
    for (const auto& q : query) r.correct += relation::classify_vanilla(*head, support, q.map) == q.label;
    return r;
}

inline CellResult run_direct(const ExperimentConfig& cfg, const std::string& category, std::size_t shot, std::uint64_t seed,
                             const ShotSplit& split, const FeatureProvider& fp) {
    std::vector<std::vector<float>> xs, xq;
    std::vector<int> ys, yq;
    for (const auto& f : split.support) {
        xs.push_back(fp.pooled(f.path));
        ys.push_back(f.label);
    }
    for (const auto& f : split.query) {
        xq.push_back(fp.pooled(f.path));
        yq.push_back(f.label);
    }
    DirectHead head(xs.front().size(), split.class_names.size(), seed);
    train_direct(head, xs, ys, {cfg.direct_epochs, cfg.lr, seed});
    const double acc = direct_accuracy(head, xq, yq);
    const auto correct = static_cast<std::size_t>(std::llround(acc * static_cast<double>(xq.size())));
    return {category, shot, seed, "direct", acc, correct, xq.size(), cfg.direct_epochs, {}, {}};
}

}  // namespace detail

/// One (category, shot, seed) job: bank, inputs, training, classification.
inline CellResult run_cell(const ExperimentConfig& cfg, const Splits& splits, const std::string& category, std::size_t shot,
                           std::uint64_t seed, const FeatureProvider& fp) {
    const auto split = select_shots(splits, shot, cfg.include_good);
    if (split.query.empty()) throw ProtocolError("no query images for " + category);
    CellResult r;
    if (cfg.model == ModelKind::direct) {
        r = detail::run_direct(cfg, category, shot, seed, split, fp);
    } else {
        std::optional<memory_bank::MemoryBank> bank;
        if (cfg.use_residual) bank = bank_for(bank_images(splits, cfg, shot), fp, cfg.p, seed);
        const auto* bp = bank ? &*bank : nullptr;
        const auto support = detail::load_inputs(split.support, fp, bp, cfg.use_residual);
        const auto query = detail::load_inputs(split.query, fp, bp, cfg.use_residual);
        r = cfg.model == ModelKind::contrastive ? detail::run_contrastive(cfg, category, shot, seed, support, query)
                                                : detail::run_vanilla(cfg, category, shot, seed, support, query);
        r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    }
    r.config_hash = config_hash(cfg);
    return r;
}

/// Runs every seed of one (category, shot), persisting each cell as JSON.
/// Cells already on disk with the same config hash are reused.
inline ResultRow run_category(const ExperimentConfig& cfg, const Splits& splits, const std::string& category, std::size_t shot,
                              const FeatureProvider& fp, const fs::path& out_dir, std::ostream* log = nullptr) {
    const std::string hash = config_hash(cfg);
    // Seed-independent protocol check first, so an impossible split is reported once.
    select_shots(splits, shot, cfg.include_good);
    std::vector<double> accs;
    for (auto seed : cfg.seeds) {
        const fs::path file = cell_path(out_dir, category, shot, seed);
        if (fs::exists(file)) {
            try {
                nlohmann::json j;
                std::ifstream(file) >> j;
                const auto c = cell_from_json(j);
                if (c.config_hash == hash) {
                    accs.push_back(c.accuracy);
                    if (log) *log << category << " " << shot << "-shot seed " << seed << ": " << c.accuracy << " (cached)\n";
                    continue;
                }
            } catch (const std::exception&) {
                // unreadable cell: recompute
            }
        }
        CellResult c;
        try {
            c = run_cell(cfg, splits, category, shot, seed, fp);
        } catch (const std::exception& e) {
            throw CellError(category, seed, e.what());
        }
        fs::create_directories(file.parent_path());
        std::ofstream(file) << to_json(c).dump(2) << '\n';
        if (log) *log << category << " " << shot << "-shot seed " << seed << ": " << c.accuracy << "\n";
        accs.push_back(c.accuracy);
    }
    return make_row(category, shot, accs, hash);
}

/// Reads every completed cell under `out_dir/cells` and groups it into rows.
inline std::vector<ResultRow> collect_cells(const fs::path& out_dir) {
    const fs::path root = out_dir / "cells";
    if (!fs::is_directory(root)) throw ArgumentError("no result cells under " + root.string());
    std::map<std::tuple<std::string, std::size_t, std::string>, std::map<std::uint64_t, double>> groups;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file() || e.path().extension() != ".json") continue;
        nlohmann::json j;
        std::ifstream(e.path()) >> j;
        const auto c = cell_from_json(j);
        groups[{c.category, c.shot, c.config_hash}][c.seed] = c.accuracy;
    }
    std::vector<ResultRow> rows;
    for (const auto& [key, seeds] : groups) {
        std::vector<double> accs;
        for (const auto& [_, a] : seeds) accs.push_back(a);
        rows.push_back(make_row(std::get<0>(key), std::get<1>(key), accs, std::get<2>(key)));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Pretraining on synthetic pseudo-classes.

/// Model inputs of the synthetic set, computed once and kept on disk so that
/// episodes can load them lazily.
inline SampleSource synthetic_source(const std::vector<synth::SynthEntry>& entries, const FeatureProvider& fp,
                                     const memory_bank::MemoryBank* bank, bool use_residual, const fs::path& cache_dir) {
    const std::string tag = use_residual ? "res_s" + std::to_string(bank->seed()) + "_n" + std::to_string(bank->rows()) + "_" +
                                               fnv1a_hex(std::string_view(reinterpret_cast<const char*>(bank->vectors().data()),
                                                                          bank->vectors().size() * sizeof(float)))
                                         : std::string("raw");
    const fs::path dir = cache_dir / "inputs" / tag;
    fs::create_directories(dir);
    std::vector<fs::path> files;
    std::vector<int> labels;
    for (const auto& e : entries) {
        const fs::path file = dir / (cache_key(e.image) + ".anof");
        if (!fs::exists(file)) {
            const auto f = fp.patch(e.image);
            PatchFeatureMap m = f;
            if (use_residual) m.vectors = memory_bank::residual_map(*bank, f).residuals;
            backbone::save_features(file, m, {e.image.string(), tag, {}});
        }
        files.push_back(file);
        labels.push_back(e.label);
    }
    return SampleSource(std::move(labels), [files](std::size_t i) { return backbone::load_features(files.at(i)).as_map(); });
}

struct PretrainOutcome {
    TrainLog log;
    fs::path checkpoint;
};

/// Pretrains the configured model on a synthetic set and saves the checkpoint.
inline PretrainOutcome pretrain_model(const ExperimentConfig& cfg, const SampleSource& data, std::uint64_t seed, const fs::path& out) {
    const std::size_t c3 = data.load(0).dim(0);
    PretrainOutcome r{{}, out};
    if (cfg.model == ModelKind::contrastive) {
        contrastive::EmbeddingNet<float> net(contrastive::EmbeddingArch{c3, {256, 128, 64, 64}, cfg.embed_dim}, seed, cfg.tau);
        contrastive::ContrastiveConfig cc;
        cc.lr = cfg.lr;
        cc.stop_accuracy = cfg.stop_accuracy;
        cc.max_iterations = cfg.max_pretrain_iterations;
        cc.episode_classes = cfg.episode_classes;
        cc.episode_shots = cfg.episode_shots;
        cc.seed = seed;
        r.log = cfg.maml ? contrastive::maml_train(net, data, cc, cfg.lr) : contrastive::pretrain(net, data, cc);
        contrastive::save_contrastive(out, net);
    } else if (cfg.model == ModelKind::vanilla) {
        relation::RelationHead<float> head(relation::RelationArch{c3, 64, 8}, seed);
        relation::VanillaConfig vc;
        vc.mode = relation::VanillaConfig::Mode::pretrain;
        vc.lr = cfg.lr;
        vc.stop_accuracy = cfg.stop_accuracy;
        vc.max_iterations = cfg.max_pretrain_iterations;
        vc.episode_classes = cfg.episode_classes;
        vc.seed = seed;
        r.log = relation::train_vanilla(head, data, vc);
        relation::save_relation(out, head);
    } else {
        throw ArgumentError("the direct baseline has no pretraining stage");
    }
    return r;
}

}  // namespace anoclass::harness
