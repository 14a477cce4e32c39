#pragma once

#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "anoclass/core/errors.hpp"
#include "anoclass/core/image.hpp"

namespace anoclass::io {

inline RgbImage from_mat(const cv::Mat& bgr) {
    cv::Mat rgb;
    if (bgr.channels() == 1) {
        cv::cvtColor(bgr, rgb, cv::COLOR_GRAY2RGB);
    } else if (bgr.channels() == 4) {
        cv::cvtColor(bgr, rgb, cv::COLOR_BGRA2RGB);
    } else {
        cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    }
    if (rgb.depth() != CV_8U) rgb.convertTo(rgb, CV_8U);
    RgbImage out(static_cast<std::size_t>(rgb.rows), static_cast<std::size_t>(rgb.cols));
    for (int y = 0; y < rgb.rows; ++y) {
        const auto* row = rgb.ptr<std::uint8_t>(y);
        std::copy(row, row + rgb.cols * 3, out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * rgb.cols * 3);
    }
    return out;
}

inline cv::Mat to_mat(const RgbImage& img) {
    cv::Mat rgb(static_cast<int>(img.height), static_cast<int>(img.width), CV_8UC3);
    std::copy(img.pixels.begin(), img.pixels.end(), rgb.data);
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return bgr;
}

inline RgbImage load_image(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw LoadError("cannot decode image: " + path.string());
    return from_mat(m);
}

inline void save_image(const std::filesystem::path& path, const RgbImage& img) {
    if (!cv::imwrite(path.string(), to_mat(img))) throw LoadError("cannot write image: " + path.string());
}

inline void save_mask(const std::filesystem::path& path, const Mask& mask) {
    cv::Mat m(static_cast<int>(mask.height), static_cast<int>(mask.width), CV_8UC1);
    for (std::size_t i = 0; i < mask.bits.size(); ++i) m.data[i] = mask.bits[i] ? 255 : 0;
    if (!cv::imwrite(path.string(), m)) throw LoadError("cannot write mask: " + path.string());
}

inline Mask load_mask(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw LoadError("cannot decode mask: " + path.string());
    Mask out(static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols));
    for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = m.data[i] > 127 ? 1 : 0;
    return out;
}

/// Bilinear resize to exactly (height, width).
inline RgbImage resize(const RgbImage& img, std::size_t height, std::size_t width) {
    if (img.same_size(height, width)) return img;
    cv::Mat src(static_cast<int>(img.height), static_cast<int>(img.width), CV_8UC3,
                const_cast<std::uint8_t*>(img.pixels.data()));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0, cv::INTER_LINEAR);
    RgbImage out(height, width);
    std::copy(dst.data, dst.data + out.pixels.size(), out.pixels.begin());
    return out;
}

/// Scale so the shorter side equals `shorter`, keeping the aspect ratio.
inline RgbImage resize_shorter_side(const RgbImage& img, std::size_t shorter) {
    const double s = static_cast<double>(shorter) / static_cast<double>(std::min(img.height, img.width));
    const auto h = std::max<std::size_t>(shorter, static_cast<std::size_t>(std::lround(static_cast<double>(img.height) * s)));
    const auto w = std::max<std::size_t>(shorter, static_cast<std::size_t>(std::lround(static_cast<double>(img.width) * s)));
    return resize(img, img.height <= img.width ? shorter : h, img.width < img.height ? shorter : w);
}

inline RgbImage center_crop(const RgbImage& img, std::size_t height, std::size_t width) {
    if (img.height < height || img.width < width) throw ShapeError("center crop larger than image");
    const std::size_t y0 = (img.height - height) / 2;
    const std::size_t x0 = (img.width - width) / 2;
    RgbImage out(height, width);
    for (std::size_t y = 0; y < height; ++y) {
        std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(((y0 + y) * img.width + x0) * 3),
                    width * 3, out.pixels.begin() + static_cast<std::ptrdiff_t>(y * width * 3));
    }
    return out;
}

}  // namespace anoclass::io
