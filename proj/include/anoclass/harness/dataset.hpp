#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "anoclass/core/errors.hpp"
#include "anoclass/synth/generate.hpp"

namespace anoclass::harness {

namespace fs = std::filesystem;

enum class DatasetKind { mvtec_ad, mvtec3d_ad };

inline std::string to_string(DatasetKind k) { return k == DatasetKind::mvtec_ad ? "mvtec_ad" : "mvtec3d_ad"; }

inline DatasetKind parse_dataset(const std::string& s) {
    if (s == "mvtec_ad" || s == "mvtec") return DatasetKind::mvtec_ad;
    if (s == "mvtec3d_ad" || s == "mvtec3d") return DatasetKind::mvtec3d_ad;
    throw ArgumentError("unknown dataset '" + s + "' (expected mvtec_ad or mvtec3d_ad)");
}

struct DatasetSpec {
    fs::path root;
    DatasetKind kind = DatasetKind::mvtec_ad;
    std::string category;
};

/// One category's files. Defect types are alphabetical; type i has class id i.
struct Splits {
    std::vector<fs::path> train_good;
    std::vector<fs::path> test_good;
    std::vector<std::string> defect_types;
    std::vector<std::vector<fs::path>> test_by_type;
};

namespace detail {

inline fs::path image_dir(const fs::path& type_dir, DatasetKind kind) {
    // MVTec 3D keeps the 2-D image under rgb/ next to the point clouds.
    return kind == DatasetKind::mvtec3d_ad ? type_dir / "rgb" : type_dir;
}

inline std::vector<std::string> sorted_subdirs(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// Category directories under the dataset root, alphabetical.
inline std::vector<std::string> list_categories(const fs::path& root) {
    if (!fs::is_directory(root)) throw IngestionError("dataset root not found: " + root.string());
    std::vector<std::string> out;
    for (const auto& name : detail::sorted_subdirs(root))
        if (fs::is_directory(root / name / "test")) out.push_back(name);
    return out;
}

/// Reads `train/good` and `test/<type>` (or `test/<type>/rgb`) of one category.
/// Throws ExcludedCategory when fewer than two defect types exist.
inline Splits ingest(const DatasetSpec& spec) {
    if (!fs::is_directory(spec.root)) throw IngestionError("dataset root not found: " + spec.root.string());
    const fs::path cat = spec.root / spec.category;
    if (!fs::is_directory(cat)) throw IngestionError("category directory not found: " + cat.string());
    const fs::path train_good = detail::image_dir(cat / "train" / "good", spec.kind);
    const fs::path test = cat / "test";
    if (!fs::is_directory(train_good)) throw IngestionError("missing training images: " + train_good.string());
    if (!fs::is_directory(test)) throw IngestionError("missing test directory: " + test.string());

    Splits s;
    s.train_good = synth::sorted_images(train_good);
    if (s.train_good.empty()) throw IngestionError("no training images in " + train_good.string());
    for (const auto& type : detail::sorted_subdirs(test)) {
        const fs::path dir = detail::image_dir(test / type, spec.kind);
        if (!fs::is_directory(dir)) throw IngestionError("missing image directory: " + dir.string());
        auto files = synth::sorted_images(dir);
        if (type == "good") {
            s.test_good = std::move(files);
            continue;
        }
        s.defect_types.push_back(type);
        s.test_by_type.push_back(std::move(files));
    }
    if (s.defect_types.size() < 2) {
        throw ExcludedCategory("category '" + spec.category + "' has " + std::to_string(s.defect_types.size()) +
                               " defect type(s); at least two are needed for classification");
    }
    return s;
}

struct LabeledFile {
    fs::path path;
    int label = 0;
};

struct ShotSplit {
    std::vector<LabeledFile> support;
    std::vector<LabeledFile> query;
    std::vector<std::string> class_names;
};

/// First `n` files of every class are the support, the rest are queries.
inline ShotSplit select_shots(const std::vector<std::vector<fs::path>>& by_class, std::size_t n,
                              const std::vector<std::string>& names = {}) {
    if (n == 0) throw ArgumentError("shot count must be at least 1");
    std::vector<std::string> short_classes;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() <= n) {
            const std::string name = c < names.size() ? names[c] : std::to_string(c);
            short_classes.push_back(name + " (" + std::to_string(by_class[c].size()) + " images)");
        }
    }
    if (!short_classes.empty()) {
        std::string list;
        for (const auto& s : short_classes) list += (list.empty() ? "" : ", ") + s;
        throw ProtocolError(std::to_string(n) + "-shot split needs more than " + std::to_string(n) + " images per class; too few in: " + list);
    }
    ShotSplit out;
    out.class_names = names;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        for (std::size_t i = 0; i < by_class[c].size(); ++i) {
            LabeledFile f{by_class[c][i], static_cast<int>(c)};
            (i < n ? out.support : out.query).push_back(std::move(f));
        }
    }
    return out;
}

/// Shot split for a category; with `include_good` a "good" class C is added
/// whose support is the first n train/good images and whose queries are test/good.
inline ShotSplit select_shots(const Splits& s, std::size_t n, bool include_good) {
    ShotSplit out = select_shots(s.test_by_type, n, s.defect_types);
    if (include_good) {
        const int good = static_cast<int>(s.defect_types.size());
        if (s.train_good.size() < n) throw ProtocolError("not enough train/good images for " + std::to_string(n) + " good shots");
        for (std::size_t i = 0; i < n; ++i) out.support.push_back({s.train_good[i], good});
        for (const auto& f : s.test_good) out.query.push_back({f, good});
        out.class_names.push_back("good");
    }
    return out;
}

}  // namespace anoclass::harness
