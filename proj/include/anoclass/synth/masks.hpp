#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <random>
#include <vector>

#include "anoclass/core/errors.hpp"
#include "anoclass/core/image.hpp"
#include "anoclass/core/random.hpp"

namespace anoclass::synth {

namespace detail {

inline bool within(const RgbImage& img, std::size_t a, std::size_t b, double tolerance) {
    for (std::size_t c = 0; c < 3; ++c) {
        const int d = std::abs(int(img.pixels[3 * a + c]) - int(img.pixels[3 * b + c]));
        if (d > tolerance) return false;
    }
    return true;
}

/// Keep only the largest 4-connected component of `mask` (lowest first pixel wins ties).
inline Mask largest_component(const Mask& mask) {
    const std::size_t h = mask.height, w = mask.width;
    std::vector<int> label(h * w, -1);
    std::vector<std::size_t> sizes;
    std::deque<std::size_t> queue;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (!mask.bits[start] || label[start] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        sizes.push_back(0);
        label[start] = id;
        queue.push_back(start);
        while (!queue.empty()) {
            const std::size_t p = queue.front();
            queue.pop_front();
            ++sizes.back();
            const std::size_t y = p / w, x = p % w;
            const std::array<std::pair<long, long>, 4> nbrs{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
            for (auto [dy, dx] : nbrs) {
                const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
                if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
                const std::size_t q = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
                if (mask.bits[q] && label[q] < 0) {
                    label[q] = id;
                    queue.push_back(q);
                }
            }
        }
    }
    Mask out(h, w);
    if (sizes.empty()) return out;
    const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    for (std::size_t i = 0; i < h * w; ++i) out.bits[i] = label[i] == best ? 1 : 0;
    return out;
}

}  // namespace detail

/// Foreground of an image with a quasi-uniform background.
///
/// Background is flood-filled from every border pixel: a pixel joins when each
/// channel differs by at most `tolerance` (8-bit levels) from the neighbour it
/// was reached from. The largest 4-connected component of the complement is
/// returned. A fully uniform image yields an all-zero mask.
inline Mask foreground_mask(const RgbImage& img, double tolerance = 12.0) {
    const std::size_t h = img.height, w = img.width;
    if (h == 0 || w == 0) throw ShapeError("foreground_mask on empty image");
    std::vector<std::uint8_t> background(h * w, 0);
    std::deque<std::size_t> queue;
    auto seed = [&](std::size_t y, std::size_t x) {
        const std::size_t p = y * w + x;
        if (!background[p]) {
            background[p] = 1;
            queue.push_back(p);
        }
    };
    for (std::size_t x = 0; x < w; ++x) {
        seed(0, x);
        seed(h - 1, x);
    }
    for (std::size_t y = 0; y < h; ++y) {
        seed(y, 0);
        seed(y, w - 1);
    }
    while (!queue.empty()) {
        const std::size_t p = queue.front();
        queue.pop_front();
        const std::size_t y = p / w, x = p % w;
        const std::array<std::pair<long, long>, 4> nbrs{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
        for (auto [dy, dx] : nbrs) {
            const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
            if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
            const std::size_t q = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
            if (!background[q] && detail::within(img, p, q, tolerance)) {
                background[q] = 1;
                queue.push_back(q);
            }
        }
    }
    Mask fg(h, w);
    for (std::size_t i = 0; i < h * w; ++i) fg.bits[i] = background[i] ? 0 : 1;
    return detail::largest_component(fg);
}

inline constexpr std::size_t kBoxSize = 5;

/// Per-pixel Poisson(lambda) samples smoothed by a 5x5 box mean (window
/// clipped at the borders). Deterministic per seed.
inline std::vector<double> smoothed_poisson_field(std::size_t h, std::size_t w, std::uint64_t seed, double lambda) {
    if (!(lambda > 0)) throw ArgumentError("poisson lambda must be positive");
    Rng rng = make_rng(seed, {0x706f6973ULL});
    std::poisson_distribution<int> dist(lambda);
    std::vector<double> raw(h * w);
    for (auto& v : raw) v = dist(rng);
    // Separable box mean via running sums.
    const long r = kBoxSize / 2;
    std::vector<double> rows(h * w), counts_x(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0;
            int n = 0;
            for (long k = -r; k <= r; ++k) {
                const long xx = static_cast<long>(x) + k;
                if (xx < 0 || xx >= static_cast<long>(w)) continue;
                s += raw[y * w + static_cast<std::size_t>(xx)];
                ++n;
            }
            rows[y * w + x] = s;
            counts_x[y * w + x] = n;
        }
    }
    std::vector<double> out(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0, n = 0;
            for (long k = -r; k <= r; ++k) {
                const long yy = static_cast<long>(y) + k;
                if (yy < 0 || yy >= static_cast<long>(h)) continue;
                s += rows[static_cast<std::size_t>(yy) * w + x];
                n += counts_x[static_cast<std::size_t>(yy) * w + x];
            }
            out[y * w + x] = s / n;
        }
    }
    return out;
}

inline Mask threshold_field(const std::vector<double>& field, std::size_t h, std::size_t w, double threshold) {
    Mask m(h, w);
    for (std::size_t i = 0; i < field.size(); ++i) m.bits[i] = field[i] >= threshold ? 1 : 0;
    return m;
}

/// Smoothed Poisson noise thresholded at `threshold` (>= marks the defect).
inline Mask poisson_noise_mask(std::size_t h, std::size_t w, std::uint64_t seed, double lambda, double threshold) {
    if (threshold < 0) throw ArgumentError("poisson threshold must be non-negative");
    return threshold_field(smoothed_poisson_field(h, w, seed, lambda), h, w, threshold);
}

/// Threshold for `field` whose coverage of `region` is closest to `target`,
/// preferring thresholds whose coverage lies in [lo, hi].
inline double coverage_threshold(const std::vector<double>& field, const Mask& region, double target, double lo, double hi) {
    std::vector<double> values;
    for (std::size_t i = 0; i < field.size(); ++i)
        if (region.bits[i]) values.push_back(field[i]);
    if (values.empty()) return std::numeric_limits<double>::infinity();
    std::sort(values.begin(), values.end(), std::greater<>());
    const double n = static_cast<double>(values.size());
    double best = values.front();
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < values.size();) {
        std::size_t j = i;
        while (j < values.size() && values[j] == values[i]) ++j;
        const double cov = static_cast<double>(j) / n;  // coverage of threshold values[i]
        const bool in_range = cov >= lo && cov <= hi;
        const double score = std::abs(cov - target) + (in_range ? 0.0 : 1.0);
        if (score < best_score) {
            best_score = score;
            best = values[i];
        }
        if (cov > hi && cov > target) break;
        i = j;
    }
    return best;
}

struct Point2 {
    double x = 0;
    double y = 0;
};

struct PolygonMask {
    Mask mask;
    std::vector<Point2> vertices;
};

/// Shoelace area of a simple polygon.
inline double polygon_area(const std::vector<Point2>& v) {
    double s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto& a = v[i];
        const auto& b = v[(i + 1) % v.size()];
        s += a.x * b.y - b.x * a.y;
    }
    return std::abs(s) / 2;
}

struct PolygonOptions {
    double scale = 0.5;   // circle radius = scale * min(H, W) / 2
    double jitter = 0.5;  // angular jitter as a fraction of half the vertex spacing, in [0, 1)
};

/// Filled convex n-gon (n in {3,4,5,6}) with vertices on a circle at jittered
/// angles. The centre is drawn from `foreground` when given and non-empty,
/// then clamped so the circle stays inside the image.
inline PolygonMask polygon_mask(std::size_t h, std::size_t w, int n_sides, std::uint64_t seed,
                                const PolygonOptions& opts = {}, const Mask* foreground = nullptr) {
    if (n_sides < 3 || n_sides > 6) throw ArgumentError("polygon sides must be in {3,4,5,6}, got " + std::to_string(n_sides));
    if (!(opts.scale > 0 && opts.scale <= 1)) throw ArgumentError("polygon scale must be in (0, 1]");
    if (opts.jitter < 0 || opts.jitter >= 1) throw ArgumentError("polygon jitter must be in [0, 1)");
    Rng rng = make_rng(seed, {0x706f6c79ULL});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double radius = opts.scale * static_cast<double>(std::min(h, w)) / 2.0;

    double cx = unit(rng) * static_cast<double>(w), cy = unit(rng) * static_cast<double>(h);
    if (foreground && !foreground->empty_mask()) {
        std::vector<std::size_t> fg;
        for (std::size_t i = 0; i < foreground->bits.size(); ++i)
            if (foreground->bits[i]) fg.push_back(i);
        const std::size_t pick = fg[uniform_index(rng, fg.size())];
        cx = static_cast<double>(pick % w) + 0.5;
        cy = static_cast<double>(pick / w) + 0.5;
    }
    cx = std::clamp(cx, radius, static_cast<double>(w) - radius);
    cy = std::clamp(cy, radius, static_cast<double>(h) - radius);

    const double spacing = 2.0 * std::numbers::pi / n_sides;
    const double start = unit(rng) * spacing;
    std::vector<Point2> verts;
    for (int k = 0; k < n_sides; ++k) {
        const double a = start + k * spacing + (unit(rng) - 0.5) * opts.jitter * spacing;
        verts.push_back({cx + radius * std::cos(a), cy + radius * std::sin(a)});
    }

    Mask m(h, w);
    auto inside = [&](double px, double py) {
        // Vertices are in increasing angle order, so all cross products share a sign.
        for (std::size_t i = 0; i < verts.size(); ++i) {
            const auto& a = verts[i];
            const auto& b = verts[(i + 1) % verts.size()];
            if ((b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x) < 0) return false;
        }
        return true;
    };
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) m.at(y, x) = inside(x + 0.5, y + 0.5) ? 1 : 0;
    return {std::move(m), std::move(verts)};
}

}  // namespace anoclass::synth
