#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anoclass/core/errors.hpp"
#include "anoclass/harness/dataset.hpp"
#include "anoclass/harness/toml.hpp"
#include "anoclass/synth/compose.hpp"

namespace anoclass::harness {

enum class ModelKind { contrastive, vanilla, direct };

inline std::string to_string(ModelKind m) {
    switch (m) {
        case ModelKind::contrastive: return "contrastive";
        case ModelKind::vanilla: return "vanilla";
        case ModelKind::direct: return "direct";
    }
    return "?";
}

inline ModelKind parse_model(const std::string& s) {
    if (s == "contrastive") return ModelKind::contrastive;
    if (s == "vanilla") return ModelKind::vanilla;
    if (s == "direct") return ModelKind::direct;
    throw ArgumentError("unknown model '" + s + "' (expected contrastive, vanilla or direct)");
}

/// Every knob of a run. Config-file keys are "<table>.<field>" as in to_json().
struct ExperimentConfig {
    // [dataset]
    std::string data_root;  // falls back to $ANOCLASS_DATA_ROOT
    DatasetKind dataset = DatasetKind::mvtec_ad;
    std::vector<std::string> categories;  // empty: every category under the root

    // [experiment]
    std::vector<std::size_t> shots{2};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    ModelKind model = ModelKind::contrastive;
    bool use_residual = true;
    bool pretrain = true;
    bool include_good = false;
    bool maml = false;

    // [bank]
    double p = 0.10;
    std::size_t max_images = 0;  // train/good images feeding the bank; 0 = all

    // [backbone]
    std::string weights;

    // [synth]
    std::string dtd_root;
    synth::DefectKind gen_kind = synth::DefectKind::poisson;
    std::size_t per_class = 20;
    std::size_t synth_size = 256;
    double lambda = 4.0;
    double beta_min = 0.2;
    double beta_max = 0.8;
    std::string synth_dir;

    // [train]
    double lr = 1e-4;
    double tau = 1.0;
    std::size_t embed_dim = 256;
    double stop_accuracy = 0.4;
    std::size_t max_pretrain_iterations = 2000;
    std::size_t episode_classes = 10;
    std::size_t episode_shots = 2;
    std::size_t finetune_epochs = 0;  // 0: 45 / 25 / 15 by shot count
    std::size_t vanilla_epochs = 45;
    std::size_t direct_epochs = 45;
    std::string pretrained;  // checkpoint used when pretrain = true

    // [paths]
    std::string cache_dir = "anoclass_cache";
    std::string out_dir = "anoclass_out";

    std::filesystem::path resolved_data_root() const {
        if (!data_root.empty()) return data_root;
        if (const char* env = std::getenv("ANOCLASS_DATA_ROOT"); env && *env) return env;
        throw ArgumentError("no dataset root: set dataset.root in the config or ANOCLASS_DATA_ROOT");
    }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
    return {
        {"dataset", {{"root", c.data_root}, {"kind", to_string(c.dataset)}, {"categories", c.categories}}},
        {"experiment",
         {{"shots", c.shots},
          {"seeds", c.seeds},
          {"model", to_string(c.model)},
          {"use_residual", c.use_residual},
          {"pretrain", c.pretrain},
          {"include_good", c.include_good},
          {"maml", c.maml}}},
        {"bank", {{"p", c.p}, {"max_images", c.max_images}}},
        {"backbone", {{"weights", c.weights}}},
        {"synth",
         {{"dtd_root", c.dtd_root},
          {"kind", synth::to_string(c.gen_kind)},
          {"per_class", c.per_class},
          {"size", c.synth_size},
          {"lambda", c.lambda},
          {"beta_min", c.beta_min},
          {"beta_max", c.beta_max},
          {"dir", c.synth_dir}}},
        {"train",
         {{"lr", c.lr},
          {"tau", c.tau},
          {"embed_dim", c.embed_dim},
          {"stop_accuracy", c.stop_accuracy},
          {"max_pretrain_iterations", c.max_pretrain_iterations},
          {"episode_classes", c.episode_classes},
          {"episode_shots", c.episode_shots},
          {"finetune_epochs", c.finetune_epochs},
          {"vanilla_epochs", c.vanilla_epochs},
          {"direct_epochs", c.direct_epochs},
          {"pretrained", c.pretrained}}},
        {"paths", {{"cache", c.cache_dir}, {"out", c.out_dir}}},
    };
}

namespace detail {

template <typename V>
void take(const nlohmann::json& table, const char* key, V& dst, const std::string& where) {
    if (!table.contains(key)) return;
    try {
        dst = table.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ArgumentError("config key " + where + "." + key + " has the wrong type");
    }
}

}  // namespace detail

/// Overlay a parsed config tree onto `base`. Unknown tables or keys are errors
/// so typos do not pass silently.
inline ExperimentConfig apply_config(ExperimentConfig base, const nlohmann::json& tree) {
    const nlohmann::json known = to_json(base);
    for (const auto& [table, body] : tree.items()) {
        if (!known.contains(table) || !body.is_object()) throw ArgumentError("unknown config table [" + table + "]");
        for (const auto& [key, _] : body.items())
            if (!known.at(table).contains(key)) throw ArgumentError("unknown config key " + table + "." + key);
    }
    auto t = [&](const char* name) { return tree.contains(name) ? tree.at(name) : nlohmann::json::object(); };
    auto& c = base;

    const auto ds = t("dataset");
    detail::take(ds, "root", c.data_root, "dataset");
    if (ds.contains("kind")) c.dataset = parse_dataset(ds.at("kind").get<std::string>());
    detail::take(ds, "categories", c.categories, "dataset");

    const auto ex = t("experiment");
    if (ex.contains("shots") && ex.at("shots").is_number()) {
        c.shots = {ex.at("shots").get<std::size_t>()};
    } else {
        detail::take(ex, "shots", c.shots, "experiment");
    }
    detail::take(ex, "seeds", c.seeds, "experiment");
    if (ex.contains("model")) c.model = parse_model(ex.at("model").get<std::string>());
    detail::take(ex, "use_residual", c.use_residual, "experiment");
    detail::take(ex, "pretrain", c.pretrain, "experiment");
    detail::take(ex, "include_good", c.include_good, "experiment");
    detail::take(ex, "maml", c.maml, "experiment");

    const auto bk = t("bank");
    detail::take(bk, "p", c.p, "bank");
    detail::take(bk, "max_images", c.max_images, "bank");

    detail::take(t("backbone"), "weights", c.weights, "backbone");

    const auto sy = t("synth");
    detail::take(sy, "dtd_root", c.dtd_root, "synth");
    if (sy.contains("kind")) c.gen_kind = synth::parse_kind(sy.at("kind").get<std::string>());
    detail::take(sy, "per_class", c.per_class, "synth");
    detail::take(sy, "size", c.synth_size, "synth");
    detail::take(sy, "lambda", c.lambda, "synth");
    detail::take(sy, "beta_min", c.beta_min, "synth");
    detail::take(sy, "beta_max", c.beta_max, "synth");
    detail::take(sy, "dir", c.synth_dir, "synth");

    const auto tr = t("train");
    detail::take(tr, "lr", c.lr, "train");
    detail::take(tr, "tau", c.tau, "train");
    detail::take(tr, "embed_dim", c.embed_dim, "train");
    detail::take(tr, "stop_accuracy", c.stop_accuracy, "train");
    detail::take(tr, "max_pretrain_iterations", c.max_pretrain_iterations, "train");
    detail::take(tr, "episode_classes", c.episode_classes, "train");
    detail::take(tr, "episode_shots", c.episode_shots, "train");
    detail::take(tr, "finetune_epochs", c.finetune_epochs, "train");
    detail::take(tr, "vanilla_epochs", c.vanilla_epochs, "train");
    detail::take(tr, "direct_epochs", c.direct_epochs, "train");
    detail::take(tr, "pretrained", c.pretrained, "train");

    const auto pa = t("paths");
    detail::take(pa, "cache", c.cache_dir, "paths");
    detail::take(pa, "out", c.out_dir, "paths");

    for (auto n : c.shots)
        if (n < 1 || n > 5) throw ArgumentError("shot counts must lie in 1..5");
    if (c.seeds.empty()) throw ArgumentError("at least one seed is required");
    if (!(c.p > 0 && c.p <= 1)) throw ArgumentError("bank.p must lie in (0, 1]");
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {}) {
    return apply_config(std::move(base), parse_toml_file(path));
}

/// 64-bit FNV-1a of the canonical (key-sorted) JSON form, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
    const std::string text = to_json(c).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace anoclass::harness
