#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "anoclass/core/errors.hpp"
#include "anoclass/core/image.hpp"

namespace anoclass::synth {

inline constexpr int kTextureCategories = 47;
inline constexpr int kPolygonShapes = 4;  // n in {3,4,5,6}

enum class DefectKind { poisson, polygon };

inline std::string to_string(DefectKind k) { return k == DefectKind::poisson ? "poisson" : "polygon"; }

inline DefectKind parse_kind(const std::string& s) {
    if (s == "poisson") return DefectKind::poisson;
    if (s == "polygon") return DefectKind::polygon;
    throw ArgumentError("unknown defect kind '" + s + "' (expected poisson or polygon)");
}

/// Number of pseudo-classes a kind produces: 47 or 47 * 4.
inline int pseudo_class_count(DefectKind k) {
    return k == DefectKind::poisson ? kTextureCategories : kTextureCategories * kPolygonShapes;
}

inline int pseudo_label(DefectKind k, int texture_category, int n_sides = 0) {
    if (texture_category < 0 || texture_category >= kTextureCategories) throw ArgumentError("texture category out of range");
    if (k == DefectKind::poisson) return texture_category;
    if (n_sides < 3 || n_sides > 6) throw ArgumentError("polygon sides must be in {3,4,5,6}");
    return texture_category * kPolygonShapes + (n_sides - 3);
}

struct TextureSource {
    RgbImage image;
    int texture_category = 0;
    std::string file_path;
};

struct DefectMask {
    Mask mask;
    DefectKind kind = DefectKind::poisson;
    int n_sides = 0;  // polygon only
    double coverage = 0;
};

struct Provenance {
    std::string normal_id;
    int texture_id = 0;
    std::uint64_t seed = 0;
};

struct SyntheticDefect {
    RgbImage image;
    DefectMask mask;
    int pseudo_label = 0;
    double beta = 0;
    Provenance provenance;
};

/// Blend `texture` into `normal` on fg ∧ raw with ratio beta. Returns nullopt
/// when the intersection is empty so the caller can draw a new mask.
/// Out-of-mask pixels are copied verbatim.
inline std::optional<SyntheticDefect> compose_defect(const RgbImage& normal, const Mask& fg, const Mask& raw_mask,
                                                     DefectKind kind, int n_sides, const TextureSource& texture,
                                                     double beta, std::uint64_t seed, std::string normal_id = {}) {
    const std::size_t h = normal.height, w = normal.width;
    if (!texture.image.same_size(h, w) || fg.height != h || fg.width != w || raw_mask.height != h || raw_mask.width != w) {
        throw ShapeError("compose_defect inputs must share one (H, W)");
    }
    if (beta < 0 || beta > 1) throw ArgumentError("beta must lie in [0, 1]");
    Mask ma = fg & raw_mask;
    if (ma.empty_mask()) return std::nullopt;

    RgbImage out = normal;
    for (std::size_t i = 0; i < h * w; ++i) {
        if (!ma.bits[i]) continue;
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = (1.0 - beta) * normal.pixels[3 * i + c] + beta * texture.image.pixels[3 * i + c];
            out.pixels[3 * i + c] = static_cast<std::uint8_t>(std::lround(v));
        }
    }
    SyntheticDefect d;
    d.image = std::move(out);
    d.mask.coverage = ma.coverage();
    d.mask.mask = std::move(ma);
    d.mask.kind = kind;
    d.mask.n_sides = kind == DefectKind::polygon ? n_sides : 0;
    d.pseudo_label = pseudo_label(kind, texture.texture_category, n_sides);
    d.beta = beta;
    d.provenance = {std::move(normal_id), texture.texture_category, seed};
    return d;
}

}  // namespace anoclass::synth
