#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "anoclass/core/errors.hpp"
#include "anoclass/core/random.hpp"

namespace anoclass::harness {

struct TsneOptions {
    double perplexity = 30.0;  // clamped below N/3
    std::size_t iterations = 1000;
    double learning_rate = 200.0;
    double exaggeration = 12.0;
    std::size_t exaggeration_iters = 250;
    std::uint64_t seed = 1;
};

struct Point2d {
    double x = 0;
    double y = 0;
};

inline double effective_perplexity(double requested, std::size_t n) {
    const double cap = (static_cast<double>(n) - 1.0) / 3.0;
    return std::min(requested, cap);
}

namespace detail {

inline std::vector<double> pairwise_sq_distances(const std::vector<std::vector<double>>& x) {
    const std::size_t n = x.size();
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < x[i].size(); ++k) {
                const double t = x[i][k] - x[j][k];
                s += t * t;
            }
            d[i * n + j] = d[j * n + i] = s;
        }
    }
    return d;
}

/// Conditional affinities with per-point bandwidths found by bisection on
/// the entropy, then symmetrised and normalised.
inline std::vector<double> joint_affinities(const std::vector<double>& d2, std::size_t n, double perplexity) {
    const double target = std::log(perplexity);
    std::vector<double> p(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        // Scale-free start: distances relative to the row's mean.
        double mean = 0;
        for (std::size_t j = 0; j < n; ++j) mean += d2[i * n + j];
        mean /= static_cast<double>(n - 1);
        const double scale = mean > 0 ? mean : 1.0;
        for (int iter = 0; iter < 200; ++iter) {
            double sum = 0, weighted = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double v = std::exp(-beta * d2[i * n + j] / scale);
                p[i * n + j] = v;
                sum += v;
                weighted += v * d2[i * n + j] / scale;
            }
            sum = std::max(sum, 1e-300);
            const double entropy = std::log(sum) + beta * weighted / sum;
            for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= sum;
            const double diff = entropy - target;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
            } else {
                hi = beta;
                beta = (beta + lo) / 2;
            }
        }
    }
    std::vector<double> joint(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) joint[i * n + j] = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);
    return joint;
}

}  // namespace detail

/// Exact t-SNE to two dimensions. Deterministic for a given seed.
inline std::vector<Point2d> tsne(const std::vector<std::vector<double>>& points, const TsneOptions& opt = {}) {
    const std::size_t n = points.size();
    if (n < 5) throw ArgumentError("t-SNE needs at least 5 points, got " + std::to_string(n));
    for (const auto& p : points)
        if (p.size() != points.front().size()) throw ShapeError("t-SNE points differ in dimension");
    const double perp = effective_perplexity(opt.perplexity, n);
    const auto P = detail::joint_affinities(detail::pairwise_sq_distances(points), n, perp);

    Rng rng = make_rng(opt.seed, {0x74736eULL});
    std::normal_distribution<double> init(0.0, 1e-4);
    std::vector<double> y(2 * n), vel(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n);
    for (auto& v : y) v = init(rng);

    std::vector<double> num(n * n);
    for (std::size_t it = 0; it < opt.iterations; ++it) {
        if (it == opt.exaggeration_iters) {
            // Fresh optimiser state for the second phase; carried-over gains
            // keep the layout oscillating instead of settling.
            std::fill(vel.begin(), vel.end(), 0.0);
            std::fill(gains.begin(), gains.end(), 1.0);
        }
        const double exag = it < opt.exaggeration_iters ? opt.exaggeration : 1.0;
        const double momentum = it < opt.exaggeration_iters ? 0.5 : 0.8;
        double z = 0;
        for (std::size_t i = 0; i < n; ++i) {
            num[i * n + i] = 0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
                const double q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = num[j * n + i] = q;
                z += 2 * q;
            }
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = std::max(num[i * n + j] / z, 1e-12);
                const double m = 4.0 * (exag * P[i * n + j] - q) * num[i * n + j];
                grad[2 * i] += m * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += m * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        for (std::size_t k = 0; k < 2 * n; ++k) {
            gains[k] = vel[k] * grad[k] < 0 ? gains[k] + 0.2 : std::max(gains[k] * 0.8, 0.01);
            vel[k] = momentum * vel[k] - opt.learning_rate * gains[k] * grad[k];
            y[k] += vel[k];
        }
        double cx = 0, cy = 0;
        for (std::size_t i = 0; i < n; ++i) {
            cx += y[2 * i];
            cy += y[2 * i + 1];
        }
        for (std::size_t i = 0; i < n; ++i) {
            y[2 * i] -= cx / static_cast<double>(n);
            y[2 * i + 1] -= cy / static_cast<double>(n);
        }
    }
    std::vector<Point2d> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = {y[2 * i], y[2 * i + 1]};
    return out;
}

/// Largest extent of the layout along either axis.
inline double layout_scale(const std::vector<Point2d>& pts) {
    double x0 = pts.front().x, x1 = x0, y0 = pts.front().y, y1 = y0;
    for (const auto& p : pts) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    return std::max(x1 - x0, y1 - y0);
}

inline void write_tsne_csv(const std::filesystem::path& path, const std::vector<Point2d>& pts, const std::vector<int>& labels) {
    if (pts.size() != labels.size()) throw ArgumentError("coordinates and labels differ in length");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out.precision(10);
    out << "x,y,label\n";
    for (std::size_t i = 0; i < pts.size(); ++i) out << pts[i].x << ',' << pts[i].y << ',' << labels[i] << '\n';
}

/// Scatter plot, one hue per label.
inline void write_tsne_plot(const std::filesystem::path& path, const std::vector<Point2d>& pts, const std::vector<int>& labels,
                            int side = 640) {
    if (pts.size() != labels.size()) throw ArgumentError("coordinates and labels differ in length");
    cv::Mat img(side, side, CV_8UC3, cv::Scalar(255, 255, 255));
    double x0 = pts.front().x, x1 = x0, y0 = pts.front().y, y1 = y0;
    for (const auto& p : pts) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    const int max_label = *std::max_element(labels.begin(), labels.end());
    const double margin = 30, span = side - 2 * margin;
    const double sx = x1 > x0 ? span / (x1 - x0) : 0, sy = y1 > y0 ? span / (y1 - y0) : 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        cv::Mat hsv(1, 1, CV_8UC3, cv::Scalar(static_cast<double>(labels[i]) * 180.0 / (max_label + 1), 220, 200)), bgr;
        cv::cvtColor(hsv, bgr, cv::COLOR_HSV2BGR);
        const auto c = bgr.at<cv::Vec3b>(0, 0);
        const cv::Point at(static_cast<int>(margin + (pts[i].x - x0) * sx), static_cast<int>(margin + (pts[i].y - y0) * sy));
        cv::circle(img, at, 6, cv::Scalar(c[0], c[1], c[2]), cv::FILLED, cv::LINE_AA);
        cv::circle(img, at, 6, cv::Scalar(60, 60, 60), 1, cv::LINE_AA);
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) throw ArgumentError("cannot write " + path.string());
}

}  // namespace anoclass::harness
