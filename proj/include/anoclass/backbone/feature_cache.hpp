#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "anoclass/backbone/patch_features.hpp"
#include "anoclass/backbone/preprocess.hpp"
#include "anoclass/core/binary_io.hpp"

namespace anoclass::backbone {

// Feature cache layout (little-endian):
//   "ANOF" | u32 version | u32 h2 | u32 w2 | u32 c3 | f32[P * c3] row-major
// with a `<file>.json` sidecar describing provenance.

inline constexpr std::uint32_t kFeatureFileVersion = 1;

struct FeatureProvenance {
    std::string source_image;
    std::string backbone;
    PreprocessConfig preprocess;
};

inline nlohmann::json to_json(const FeatureProvenance& p) {
    return {{"source_image", p.source_image},
            {"backbone", p.backbone},
            {"preprocess",
             {{"resize_shorter", p.preprocess.resize_shorter},
              {"crop", p.preprocess.crop},
              {"mean", p.preprocess.mean},
              {"std", p.preprocess.std}}}};
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& file) {
    auto s = file;
    s += ".json";
    return s;
}

inline void save_features(const std::filesystem::path& path, const PatchFeatureMap& map, const FeatureProvenance& prov) {
    binio::Writer w(path);
    w.magic("ANOF");
    w.u32(kFeatureFileVersion);
    w.u32(static_cast<std::uint32_t>(map.grid_h));
    w.u32(static_cast<std::uint32_t>(map.grid_w));
    w.u32(static_cast<std::uint32_t>(map.dim()));
    w.f32_array(map.vectors.values());
    w.close();
    std::ofstream(sidecar_path(path)) << to_json(prov).dump(2) << '\n';
}

inline PatchFeatureMap load_features(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("ANOF");
    const auto version = r.u32();
    if (version != kFeatureFileVersion) throw LoadError("unsupported feature file version in " + path.string());
    const std::size_t h = r.u32(), w = r.u32(), c = r.u32();
    PatchFeatureMap map;
    map.grid_h = h;
    map.grid_w = w;
    map.vectors = Tensor<float>({h * w, c}, r.f32_array(h * w * c));
    map.source_image_id = path.stem().string();
    const auto side = sidecar_path(path);
    if (std::filesystem::exists(side)) {
        try {
            auto j = nlohmann::json::parse(std::ifstream(side));
            map.source_image_id = j.value("source_image", map.source_image_id);
        } catch (const nlohmann::json::exception&) {
            // sidecar is informational
        }
    }
    return map;
}

}  // namespace anoclass::backbone
