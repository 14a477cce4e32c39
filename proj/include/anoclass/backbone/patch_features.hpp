#pragma once

#include <string>
#include <vector>

#include "anoclass/backbone/preprocess.hpp"
#include "anoclass/backbone/resnet.hpp"
#include "anoclass/core/errors.hpp"
#include "anoclass/core/tensor.hpp"

namespace anoclass::backbone {

/// Aggregated patch descriptors of one image: `vectors` is (P, c3) with
/// P = grid_h * grid_w in row-major grid order.
struct PatchFeatureMap {
    Tensor<float> vectors;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::string source_image_id;

    std::size_t patches() const { return vectors.dim(0); }
    std::size_t dim() const { return vectors.dim(1); }

    /// (c3, h, w) view for convolutional heads.
    Tensor<float> as_map() const {
        Tensor<float> out({dim(), grid_h, grid_w});
        for (std::size_t p = 0; p < patches(); ++p) {
            for (std::size_t c = 0; c < dim(); ++c) out[c * patches() + p] = vectors.at(p, c);
        }
        return out;
    }
};

inline constexpr std::size_t kPatchSize = 3;

/// Zero-padded 3x3 neighbourhoods at every grid cell, stride 1.
/// Result is (h*w, c*9), each row flattened channel-major (c, ky, kx).
template <typename T>
Tensor<T> patchify(const Tensor<T>& fmap) {
    if (fmap.rank() != 3) throw ShapeError("patchify expects (c, h, w), got " + shape_str(fmap.shape()));
    const std::size_t c = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
    const std::size_t len = c * kPatchSize * kPatchSize;
    Tensor<T> out({h * w, len});
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
            T* row = out.data() + (r * w + col) * len;
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t ky = 0; ky < kPatchSize; ++ky) {
                    const long y = static_cast<long>(r + ky) - 1;
                    for (std::size_t kx = 0; kx < kPatchSize; ++kx) {
                        const long x = static_cast<long>(col + kx) - 1;
                        const bool inside = y >= 0 && x >= 0 && y < static_cast<long>(h) && x < static_cast<long>(w);
                        row[(ch * kPatchSize + ky) * kPatchSize + kx] =
                            inside ? fmap.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) : T{0};
                    }
                }
            }
        }
    }
    return out;
}

/// Window [start, end) of output `i` under 1-D adaptive average pooling of
/// `length` inputs to `target` outputs.
inline std::pair<std::size_t, std::size_t> adaptive_window(std::size_t i, std::size_t length, std::size_t target) {
    const std::size_t start = (i * length) / target;
    const std::size_t end = ((i + 1) * length + target - 1) / target;
    return {start, end};
}

/// 1-D adaptive average pooling of one flattened patch down to `target_dim` values.
template <typename T>
std::vector<T> pool_patch(std::span<const T> patch, std::size_t target_dim) {
    const std::size_t length = patch.size();
    if (target_dim == 0 || target_dim > length) {
        throw ArgumentError("pool_patch: target dimension " + std::to_string(target_dim) + " exceeds patch length " +
                            std::to_string(length));
    }
    std::vector<T> out(target_dim);
    for (std::size_t i = 0; i < target_dim; ++i) {
        const auto [start, end] = adaptive_window(i, length, target_dim);
        double s = 0;
        for (std::size_t k = start; k < end; ++k) s += static_cast<double>(patch[k]);
        out[i] = static_cast<T>(s / static_cast<double>(end - start));
    }
    return out;
}

/// Pool every row of a (P, L) patch matrix to (P, target_dim).
template <typename T>
Tensor<T> pool_patches(const Tensor<T>& patches, std::size_t target_dim) {
    const std::size_t n = patches.dim(0), len = patches.dim(1);
    Tensor<T> out({n, target_dim});
    for (std::size_t p = 0; p < n; ++p) {
        auto pooled = pool_patch(std::span<const T>(patches.data() + p * len, len), target_dim);
        std::copy(pooled.begin(), pooled.end(), out.data() + p * target_dim);
    }
    return out;
}

/// Nearest-neighbour index of a layer-2 grid cell on the coarser layer-3 grid.
inline std::size_t nearest_source(std::size_t dst, std::size_t dst_size, std::size_t src_size) {
    return (dst * src_size) / dst_size;
}

/// Upsample pooled layer-3 vectors onto the layer-2 grid by nearest-neighbour
/// replication and average them with the pooled layer-2 vectors.
inline Tensor<float> align_and_aggregate(const Tensor<float>& pooled2, const Tensor<float>& pooled3, std::size_t h2,
                                         std::size_t w2, std::size_t h3, std::size_t w3) {
    if (pooled2.dim(0) != h2 * w2 || pooled3.dim(0) != h3 * w3) throw ShapeError("pooled patch count does not match grid");
    if (pooled2.dim(1) != pooled3.dim(1)) throw ShapeError("pooled feature dimensions differ");
    if (h3 == 0 || w3 == 0 || h2 % h3 != 0 || w2 % w3 != 0) {
        throw ShapeError("layer-3 grid " + std::to_string(h3) + "x" + std::to_string(w3) +
                         " does not divide layer-2 grid " + std::to_string(h2) + "x" + std::to_string(w2));
    }
    const std::size_t d = pooled2.dim(1);
    Tensor<float> out({h2 * w2, d});
    for (std::size_t r = 0; r < h2; ++r) {
        const std::size_t sr = nearest_source(r, h2, h3);
        for (std::size_t c = 0; c < w2; ++c) {
            const std::size_t sc = nearest_source(c, w2, w3);
            const float* a = pooled2.data() + (r * w2 + c) * d;
            const float* b = pooled3.data() + (sr * w3 + sc) * d;
            float* o = out.data() + (r * w2 + c) * d;
            for (std::size_t k = 0; k < d; ++k) o[k] = (a[k] + b[k]) / 2.0f;
        }
    }
    return out;
}

/// Full descriptor pipeline for one layer pair.
inline PatchFeatureMap aggregate_features(const LayerFeatures& f2, const LayerFeatures& f3, std::string image_id = {}) {
    const std::size_t c3 = f3.channels();
    Tensor<float> pooled2 = pool_patches(patchify(f2.tensor), c3);
    Tensor<float> pooled3 = pool_patches(patchify(f3.tensor), c3);
    return PatchFeatureMap{align_and_aggregate(pooled2, pooled3, f2.height(), f2.width(), f3.height(), f3.width()),
                           f2.height(), f2.width(), std::move(image_id)};
}

inline PatchFeatureMap extract_patch_features(const Backbone& net, const RgbImage& img, std::string image_id = {},
                                              const PreprocessConfig& cfg = {}) {
    const auto [f2, f3] = net.extract(preprocess(img, cfg));
    return aggregate_features(f2, f3, std::move(image_id));
}

}  // namespace anoclass::backbone
