#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anoclass/core/errors.hpp"
#include "anoclass/core/random.hpp"
#include "anoclass/io/image_io.hpp"
#include "anoclass/synth/compose.hpp"
#include "anoclass/synth/masks.hpp"

namespace anoclass::synth {

namespace fs = std::filesystem;

/// The 47 DTD categories in alphabetical order; the index is the texture id.
inline const std::array<std::string, kTextureCategories>& dtd_categories() {
    static const std::array<std::string, kTextureCategories> names{
        "banded",     "blotchy",      "braided",    "bubbly",     "bumpy",      "chequered", "cobwebbed", "cracked",
        "crosshatched", "crystalline", "dotted",    "fibrous",    "flecked",    "freckled",  "frilly",    "gauzy",
        "grid",       "grooved",      "honeycombed", "interlaced", "knitted",   "lacelike",  "lined",     "marbled",
        "matted",     "meshed",       "paisley",    "perforated", "pitted",     "pleated",   "polka-dotted", "porous",
        "potholed",   "scaly",        "smeared",    "spiralled",  "sprinkled",  "stained",   "stratified", "striped",
        "studded",    "swirly",       "veined",     "waffled",    "woven",      "wrinkled",  "zigzagged"};
    return names;
}

inline bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

/// Image files directly inside `dir`, sorted lexicographically.
inline std::vector<fs::path> sorted_images(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

/// First file (lexicographic) of every DTD category under `dtd_root`, which
/// may point at the dataset root (containing `images/`) or at `images/` itself.
inline std::vector<fs::path> select_texture_files(const fs::path& dtd_root) {
    const fs::path base = fs::is_directory(dtd_root / "images") ? dtd_root / "images" : dtd_root;
    std::vector<fs::path> files;
    std::vector<std::string> missing;
    for (const auto& name : dtd_categories()) {
        const auto imgs = sorted_images(base / name);
        if (imgs.empty()) {
            missing.push_back(name);
        } else {
            files.push_back(imgs.front());
        }
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw IngestionError("DTD root " + dtd_root.string() + " lacks " + std::to_string(missing.size()) +
                             " categories: " + list);
    }
    return files;
}

inline std::vector<TextureSource> load_textures(const fs::path& dtd_root) {
    std::vector<TextureSource> out;
    const auto files = select_texture_files(dtd_root);
    for (std::size_t i = 0; i < files.size(); ++i)
        out.push_back({io::load_image(files[i]), static_cast<int>(i), files[i].string()});
    return out;
}

struct NormalImage {
    std::string id;
    RgbImage image;
};

/// Every image under `dir` (recursive, sorted). The id is the relative path
/// without extension, with separators replaced by '-'.
inline std::vector<NormalImage> load_normals(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IngestionError("normal image directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path()) && e.path().filename().string().find("_mask") == std::string::npos)
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<NormalImage> out;
    for (const auto& f : files) {
        std::string id = fs::relative(f, dir).replace_extension().generic_string();
        std::replace(id.begin(), id.end(), '/', '-');
        out.push_back({std::move(id), io::load_image(f)});
    }
    if (out.empty()) throw IngestionError("no images found under " + dir.string());
    return out;
}

struct SynthOptions {
    std::size_t size = 256;  // working resolution (square)
    double fg_tolerance = 12.0;
    double min_foreground = 0.01;  // below this coverage the whole image counts as foreground
    double lambda = 4.0;
    double coverage_lo = 0.01;
    double coverage_hi = 0.20;
    double beta_lo = 0.2;
    double beta_hi = 0.8;
    PolygonOptions polygon{};
    int max_attempts = 64;
};

/// Normals and textures resized to the working resolution with cached foregrounds.
class SynthSources {
public:
    SynthSources(const std::vector<NormalImage>& normals, const std::vector<TextureSource>& textures, const SynthOptions& opts)
        : opts_(opts) {
        if (normals.empty()) throw ArgumentError("defect synthesis needs at least one normal image");
        if (textures.size() != static_cast<std::size_t>(kTextureCategories))
            throw ArgumentError("defect synthesis needs one texture per category (47)");
        for (const auto& n : normals) {
            NormalImage r{n.id, io::resize(n.image, opts.size, opts.size)};
            Mask fg = foreground_mask(r.image, opts.fg_tolerance);
            // Texture-like objects fill the frame; treat the whole image as foreground then.
            if (fg.coverage() < opts.min_foreground) fg = Mask(opts.size, opts.size, 1);
            normals_.push_back(std::move(r));
            foregrounds_.push_back(std::move(fg));
        }
        for (const auto& t : textures)
            textures_.push_back({io::resize(t.image, opts.size, opts.size), t.texture_category, t.file_path});
    }

    const SynthOptions& options() const { return opts_; }
    const std::vector<NormalImage>& normals() const { return normals_; }
    const std::vector<Mask>& foregrounds() const { return foregrounds_; }
    const std::vector<TextureSource>& textures() const { return textures_; }

private:
    SynthOptions opts_;
    std::vector<NormalImage> normals_;
    std::vector<Mask> foregrounds_;
    std::vector<TextureSource> textures_;
};

/// Item `index` of pseudo-class `label`; a pure function of its arguments.
inline SyntheticDefect generate_item(const SynthSources& src, DefectKind kind, int label, std::size_t index, std::uint64_t seed) {
    const auto& opts = src.options();
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(label), index});
    const int texture = kind == DefectKind::poisson ? label : label / kPolygonShapes;
    const int n_sides = kind == DefectKind::polygon ? 3 + label % kPolygonShapes : 0;
    const std::size_t ni = uniform_index(rng, src.normals().size());
    const auto& normal = src.normals()[ni];
    const auto& fg = src.foregrounds()[ni];
    const double beta = std::uniform_real_distribution<double>(opts.beta_lo, opts.beta_hi)(rng);

    for (int attempt = 0; attempt < opts.max_attempts; ++attempt) {
        const std::uint64_t mask_seed = rng();
        Mask raw;
        if (kind == DefectKind::poisson) {
            const auto field = smoothed_poisson_field(opts.size, opts.size, mask_seed, opts.lambda);
            const double target = std::uniform_real_distribution<double>(opts.coverage_lo, opts.coverage_hi)(rng);
            raw = threshold_field(field, opts.size, opts.size,
                                  coverage_threshold(field, fg, target, opts.coverage_lo, opts.coverage_hi));
        } else {
            raw = polygon_mask(opts.size, opts.size, n_sides, mask_seed, opts.polygon, &fg).mask;
        }
        auto d = compose_defect(normal.image, fg, raw, kind, n_sides, src.textures()[static_cast<std::size_t>(texture)], beta,
                                mask_seed, normal.id);
        if (d) return std::move(*d);
    }
    throw ProtocolError("could not place a defect on '" + normal.id + "' after " + std::to_string(opts.max_attempts) + " attempts");
}

/// Balanced set: `count_per_class` items for every pseudo-class, ordered by
/// (label, index). Each item draws from its own (seed, label, index) stream,
/// so any subset or ordering of the work reproduces the same items.
inline std::vector<SyntheticDefect> generate_pretrain_set(const SynthSources& src, DefectKind kind, std::size_t count_per_class,
                                                          std::uint64_t seed) {
    if (count_per_class == 0) throw ArgumentError("count_per_class must be positive");
    std::vector<SyntheticDefect> out;
    const int classes = pseudo_class_count(kind);
    out.reserve(static_cast<std::size_t>(classes) * count_per_class);
    for (int label = 0; label < classes; ++label)
        for (std::size_t k = 0; k < count_per_class; ++k) out.push_back(generate_item(src, kind, label, k, seed));
    return out;
}

inline std::vector<SyntheticDefect> generate_pretrain_set(const std::vector<NormalImage>& normals, const fs::path& dtd_root,
                                                          DefectKind kind, std::size_t count_per_class, std::uint64_t seed,
                                                          const SynthOptions& opts = {}) {
    const SynthSources src(normals, load_textures(dtd_root), opts);
    return generate_pretrain_set(src, kind, count_per_class, seed);
}

/// Writes `<out>/<label>/<normal_id>_<idx>.png`, the matching `_mask.png`,
/// and `<out>/manifest.json`. `idx` is the running item index.
inline void write_pretrain_set(const fs::path& out, const std::vector<SyntheticDefect>& items, std::uint64_t seed,
                               const std::vector<TextureSource>& textures = {}) {
    fs::create_directories(out);
    nlohmann::json manifest;
    manifest["seed"] = seed;
    manifest["count"] = items.size();
    auto& list = manifest["items"] = nlohmann::json::array();
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& d = items[i];
        const fs::path dir = out / std::to_string(d.pseudo_label);
        fs::create_directories(dir);
        const std::string stem = d.provenance.normal_id + "_" + std::to_string(i);
        io::save_image(dir / (stem + ".png"), d.image);
        io::save_mask(dir / (stem + "_mask.png"), d.mask.mask);
        nlohmann::json rec{{"index", i},
                           {"label", d.pseudo_label},
                           {"image", (fs::path(std::to_string(d.pseudo_label)) / (stem + ".png")).generic_string()},
                           {"mask", (fs::path(std::to_string(d.pseudo_label)) / (stem + "_mask.png")).generic_string()},
                           {"kind", to_string(d.mask.kind)},
                           {"n_sides", d.mask.n_sides},
                           {"coverage", d.mask.coverage},
                           {"beta", d.beta},
                           {"normal_id", d.provenance.normal_id},
                           {"texture_id", d.provenance.texture_id},
                           {"mask_seed", d.provenance.seed}};
        const auto t = static_cast<std::size_t>(d.provenance.texture_id);
        if (t < textures.size()) rec["texture_file"] = textures[t].file_path;
        list.push_back(std::move(rec));
    }
    std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
}

struct SynthEntry {
    fs::path image;
    int label = 0;
};

/// Reads a manifest written by write_pretrain_set.
inline std::vector<SynthEntry> read_pretrain_manifest(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw LoadError("no manifest.json in " + dir.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    std::vector<SynthEntry> out;
    for (const auto& rec : j.at("items")) out.push_back({dir / rec.at("image").get<std::string>(), rec.at("label").get<int>()});
    return out;
}

}  // namespace anoclass::synth
