#pragma once

#include <array>

#include "anoclass/core/errors.hpp"
#include "anoclass/core/image.hpp"
#include "anoclass/core/tensor.hpp"
#include "anoclass/io/image_io.hpp"

namespace anoclass::backbone {

struct PreprocessConfig {
    std::size_t resize_shorter = 256;
    std::size_t crop = 224;
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> std{0.229f, 0.224f, 0.225f};
};

inline constexpr std::size_t kMinImageSide = 64;

/// Resize the shorter side, center-crop and channel-normalize into a (3, crop, crop) tensor.
inline Tensor<float> preprocess(const RgbImage& img, const PreprocessConfig& cfg = {}) {
    if (img.height < kMinImageSide || img.width < kMinImageSide) {
        throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " is smaller than the 64x64 minimum");
    }
    if (cfg.crop > cfg.resize_shorter) throw ArgumentError("crop size exceeds resize size");
    const RgbImage cropped = io::center_crop(io::resize_shorter_side(img, cfg.resize_shorter), cfg.crop, cfg.crop);
    Tensor<float> out({3, cfg.crop, cfg.crop});
    for (std::size_t y = 0; y < cfg.crop; ++y) {
        for (std::size_t x = 0; x < cfg.crop; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const float v = static_cast<float>(cropped.at(y, x, c)) / 255.0f;
                out.at(c, y, x) = (v - cfg.mean[c]) / cfg.std[c];
            }
        }
    }
    return out;
}

}  // namespace anoclass::backbone
