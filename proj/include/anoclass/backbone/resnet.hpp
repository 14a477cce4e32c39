#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "anoclass/core/errors.hpp"
#include "anoclass/core/random.hpp"
#include "anoclass/core/tensor.hpp"
#include "anoclass/nn/layers.hpp"
#include "anoclass/nn/tensor_file.hpp"

namespace anoclass::backbone {

/// One feature map of a single image, (c, h, w).
struct LayerFeatures {
    Tensor<float> tensor;
    int layer_index = 0;

    std::size_t channels() const { return tensor.dim(0); }
    std::size_t height() const { return tensor.dim(1); }
    std::size_t width() const { return tensor.dim(2); }
};

/// Bottleneck residual network layout. Parameter names follow the
/// torchvision convention (conv1, bn1, layerL.B.convK, layerL.B.downsample.{0,1}).
struct ResNetLayout {
    std::array<std::size_t, 4> blocks{3, 4, 6, 3};
    std::size_t base_width = 64;
    static constexpr std::size_t kExpansion = 4;

    std::size_t stage_channels(std::size_t stage) const { return base_width * (std::size_t{1} << (stage - 1)) * kExpansion; }
};

namespace detail {

inline const Tensor<float>& fetch(const nn::TensorMap& w, const std::string& name) {
    auto it = w.find(name);
    if (it == w.end()) throw LoadError("backbone weights missing tensor '" + name + "'");
    return it->second;
}

/// Conv followed by an inference-mode batch-norm, folded into one conv with bias.
inline nn::Conv2d<float> folded_conv(const nn::TensorMap& w, const std::string& conv, const std::string& bn,
                                     std::size_t stride, std::size_t pad) {
    const auto& weight = fetch(w, conv + ".weight");
    if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
        throw LoadError("tensor '" + conv + ".weight' is not a square conv kernel: " + shape_str(weight.shape()));
    }
    const std::size_t out = weight.dim(0), in = weight.dim(1), k = weight.dim(2);
    const auto& gamma = fetch(w, bn + ".weight");
    const auto& beta = fetch(w, bn + ".bias");
    const auto& mean = fetch(w, bn + ".running_mean");
    const auto& var = fetch(w, bn + ".running_var");
    for (const auto* t : {&gamma, &beta, &mean, &var}) {
        if (t->size() != out) throw LoadError("batch-norm '" + bn + "' does not match " + conv);
    }
    nn::Conv2d<float> c(in, out, k, stride, pad, false);
    c.weight() = weight;
    Tensor<float> bias({out});
    const std::size_t per_out = in * k * k;
    for (std::size_t o = 0; o < out; ++o) {
        const double scale = static_cast<double>(gamma[o]) / std::sqrt(static_cast<double>(var[o]) + 1e-5);
        for (std::size_t i = 0; i < per_out; ++i) {
            c.weight()[o * per_out + i] = static_cast<float>(static_cast<double>(weight[o * per_out + i]) * scale);
        }
        bias[o] = static_cast<float>(static_cast<double>(beta[o]) - static_cast<double>(mean[o]) * scale);
    }
    c.set_bias(std::move(bias));
    return c;
}

inline void relu_inplace(Tensor<float>& t) {
    for (auto& v : t.storage()) v = v > 0.0f ? v : 0.0f;
}

struct Bottleneck {
    nn::Conv2d<float> conv1, conv2, conv3;
    std::optional<nn::Conv2d<float>> downsample;

    Tensor<float> infer(const Tensor<float>& x) const {
        auto y = conv1.infer(x);
        relu_inplace(y);
        y = conv2.infer(y);
        relu_inplace(y);
        y = conv3.infer(y);
        const Tensor<float> identity = downsample ? downsample->infer(x) : x;
        if (identity.shape() != y.shape()) throw ShapeError("bottleneck residual shape mismatch");
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += identity[i];
        relu_inplace(y);
        return y;
    }
};

}  // namespace detail

/// Immutable pretrained residual backbone truncated after layer3 (and
/// optionally carrying layer4 for the direct fine-tune baseline).
/// Safe to share across threads: inference never mutates it.
class Backbone {
public:
    static Backbone load(const std::filesystem::path& path, std::size_t input_size = 224) {
        if (!std::filesystem::exists(path)) throw LoadError("backbone weights not found: " + path.string());
        nn::TensorMap weights;
        try {
            weights = nn::load_tensors(path);
        } catch (const LoadError& e) {
            throw LoadError("cannot load backbone weights " + path.string() + ": " + e.what());
        }
        return from_tensors(weights, path.string(), input_size);
    }

    static Backbone from_tensors(const nn::TensorMap& w, std::string identifier, std::size_t input_size = 224) {
        Backbone b;
        b.identifier_ = std::move(identifier);
        b.input_size_ = input_size;
        b.stem_ = detail::folded_conv(w, "conv1", "bn1", 2, 3);
        for (std::size_t stage = 1; stage <= 4; ++stage) {
            std::vector<detail::Bottleneck> blocks;
            for (std::size_t i = 0;; ++i) {
                const std::string prefix = "layer" + std::to_string(stage) + "." + std::to_string(i);
                if (!w.contains(prefix + ".conv1.weight")) break;
                const std::size_t stride = (i == 0 && stage > 1) ? 2 : 1;
                detail::Bottleneck blk{
                    detail::folded_conv(w, prefix + ".conv1", prefix + ".bn1", 1, 0),
                    detail::folded_conv(w, prefix + ".conv2", prefix + ".bn2", stride, 1),
                    detail::folded_conv(w, prefix + ".conv3", prefix + ".bn3", 1, 0),
                    std::nullopt};
                if (w.contains(prefix + ".downsample.0.weight")) {
                    blk.downsample = detail::folded_conv(w, prefix + ".downsample.0", prefix + ".downsample.1", stride, 0);
                }
                blocks.push_back(std::move(blk));
            }
            if (blocks.empty()) {
                if (stage <= 3) {
                    throw CapabilityError("backbone '" + b.identifier_ + "' has no layer" + std::to_string(stage) +
                                          "; layer2 and layer3 activations are required");
                }
                break;
            }
            b.stages_.push_back(std::move(blocks));
        }
        return b;
    }

    const std::string& identifier() const noexcept { return identifier_; }
    std::size_t input_size() const noexcept { return input_size_; }
    bool has_layer4() const noexcept { return stages_.size() >= 4; }

    /// Output channel count of layer `stage` (1-based).
    std::size_t channels(std::size_t stage) const {
        if (stage < 1 || stage > stages_.size()) throw CapabilityError("backbone has no layer" + std::to_string(stage));
        return stages_[stage - 1].back().conv3.out_channels();
    }

    /// Layer-2 and layer-3 activations of one preprocessed (3, S, S) image.
    std::pair<LayerFeatures, LayerFeatures> extract(const Tensor<float>& image) const {
        check_input(image);
        auto x = stem(image);
        x = run_stage(0, x);
        auto f2 = run_stage(1, x);
        auto f3 = run_stage(2, f2);
        return {LayerFeatures{squeeze(f2), 2}, LayerFeatures{squeeze(f3), 3}};
    }

    /// Global-average-pooled layer-4 activations, the input of the network's classification layer.
    std::vector<float> pooled_layer4(const Tensor<float>& image) const {
        if (!has_layer4()) throw CapabilityError("backbone '" + identifier_ + "' was loaded without layer4");
        check_input(image);
        auto x = stem(image);
        for (std::size_t s = 0; s < 4; ++s) x = run_stage(s, x);
        nn::GlobalAvgPool<float> gap;
        return gap.forward(x, false).storage();
    }

private:
    void check_input(const Tensor<float>& image) const {
        if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != input_size_ || image.dim(2) != input_size_) {
            throw ShapeError("backbone expects a (3, " + std::to_string(input_size_) + ", " + std::to_string(input_size_) +
                             ") image, got " + shape_str(image.shape()));
        }
    }

    Tensor<float> stem(const Tensor<float>& image) const {
        auto x = stem_.infer(image.reshaped({1, 3, image.dim(1), image.dim(2)}));
        detail::relu_inplace(x);
        return nn::MaxPool2d<float>(3, 2, 1).infer(x);
    }

    Tensor<float> run_stage(std::size_t s, Tensor<float> x) const {
        for (const auto& blk : stages_[s]) x = blk.infer(x);
        return x;
    }

    static Tensor<float> squeeze(Tensor<float> batch) {
        Shape s(batch.shape().begin() + 1, batch.shape().end());
        return std::move(batch).reshaped(std::move(s));
    }

    std::string identifier_;
    std::size_t input_size_ = 224;
    nn::Conv2d<float> stem_;
    std::vector<std::vector<detail::Bottleneck>> stages_;
};

/// Seeded random weights in the torchvision naming scheme. He-normal convs,
/// mildly perturbed batch-norm statistics. Used for tests and smoke runs
/// when pretrained weights are unavailable.
inline nn::TensorMap random_resnet_weights(const ResNetLayout& layout, std::uint64_t seed, bool include_layer4 = true) {
    nn::TensorMap w;
    Rng rng = make_rng(seed, {0x7265736eULL});
    std::normal_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
        Tensor<float> t({out, in, k, k});
        const double std = std::sqrt(2.0 / static_cast<double>(in * k * k));
        for (auto& v : t.storage()) v = static_cast<float>(unit(rng) * std);
        w.emplace(name + ".weight", std::move(t));
    };
    auto bn = [&](const std::string& name, std::size_t c) {
        Tensor<float> gamma({c}), beta({c}), mean({c}), var({c});
        for (std::size_t i = 0; i < c; ++i) {
            gamma[i] = static_cast<float>(1.0 + jitter(rng));
            beta[i] = static_cast<float>(jitter(rng));
            mean[i] = static_cast<float>(jitter(rng));
            var[i] = static_cast<float>(1.0 + jitter(rng));
        }
        w.emplace(name + ".weight", std::move(gamma));
        w.emplace(name + ".bias", std::move(beta));
        w.emplace(name + ".running_mean", std::move(mean));
        w.emplace(name + ".running_var", std::move(var));
    };
    conv("conv1", layout.base_width, 3, 7);
    bn("bn1", layout.base_width);
    std::size_t in = layout.base_width;
    const std::size_t stages = include_layer4 ? 4 : 3;
    for (std::size_t stage = 1; stage <= stages; ++stage) {
        const std::size_t width = layout.base_width * (std::size_t{1} << (stage - 1));
        const std::size_t out = width * ResNetLayout::kExpansion;
        for (std::size_t i = 0; i < layout.blocks[stage - 1]; ++i) {
            const std::string p = "layer" + std::to_string(stage) + "." + std::to_string(i);
            conv(p + ".conv1", width, in, 1);
            bn(p + ".bn1", width);
            conv(p + ".conv2", width, width, 3);
            bn(p + ".bn2", width);
            conv(p + ".conv3", out, width, 1);
            bn(p + ".bn3", out);
            if (i == 0) {
                conv(p + ".downsample.0", out, in, 1);
                bn(p + ".downsample.1", out);
            }
            in = out;
        }
    }
    return w;
}

}  // namespace anoclass::backbone
