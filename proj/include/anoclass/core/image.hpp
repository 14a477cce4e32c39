#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "anoclass/core/errors.hpp"

namespace anoclass {

/// 8-bit interleaved RGB image.
struct RgbImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;  // height * width * 3, row-major, RGB

    RgbImage() = default;
    RgbImage(std::size_t h, std::size_t w, std::array<std::uint8_t, 3> fill = {0, 0, 0})
        : height(h), width(w), pixels(h * w * 3) {
        for (std::size_t i = 0; i < h * w; ++i) {
            pixels[3 * i] = fill[0];
            pixels[3 * i + 1] = fill[1];
            pixels[3 * i + 2] = fill[2];
        }
    }

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

    void set(std::size_t y, std::size_t x, std::array<std::uint8_t, 3> rgb) {
        for (std::size_t c = 0; c < 3; ++c) at(y, x, c) = rgb[c];
    }

    bool same_size(std::size_t h, std::size_t w) const { return height == h && width == w; }

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Binary H x W mask, one byte per pixel holding 0 or 1.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), bits(h * w, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }

    std::size_t popcount() const {
        return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
    }
    double coverage() const { return bits.empty() ? 0.0 : static_cast<double>(popcount()) / static_cast<double>(bits.size()); }
    bool empty_mask() const { return popcount() == 0; }

    /// True if every set pixel of *this is also set in `other`.
    bool subset_of(const Mask& other) const {
        if (other.height != height || other.width != width) return false;
        for (std::size_t i = 0; i < bits.size(); ++i) {
            if (bits[i] && !other.bits[i]) return false;
        }
        return true;
    }

    friend Mask operator&(const Mask& a, const Mask& b) {
        if (a.height != b.height || a.width != b.width) throw ShapeError("mask intersection of different sizes");
        Mask out(a.height, a.width);
        for (std::size_t i = 0; i < a.bits.size(); ++i) out.bits[i] = static_cast<std::uint8_t>(a.bits[i] & b.bits[i]);
        return out;
    }

    friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace anoclass
