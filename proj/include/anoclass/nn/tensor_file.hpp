#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "anoclass/core/binary_io.hpp"
#include "anoclass/core/tensor.hpp"
#include "anoclass/nn/layers.hpp"

namespace anoclass::nn {

/// Named float32 tensors, the storage behind backbone weights and checkpoints.
///
/// Layout (little-endian):
///   "ANOT" | u32 version | u32 count |
///   count x ( u32 name_len | name bytes | u32 rank | rank x u32 dim | f32 data[numel] )
using TensorMap = std::map<std::string, Tensor<float>>;

inline constexpr std::uint32_t kTensorFileVersion = 1;

inline void save_tensors(const std::filesystem::path& path, const TensorMap& tensors) {
    binio::Writer w(path);
    w.magic("ANOT");
    w.u32(kTensorFileVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        w.f32_array(t.values());
    }
    w.close();
}

inline TensorMap load_tensors(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw LoadError("weights file not found: " + path.string());
    binio::Reader r(path);
    r.expect_magic("ANOT");
    const auto version = r.u32();
    if (version != kTensorFileVersion) {
        throw LoadError("unsupported tensor file version " + std::to_string(version) + " in " + path.string());
    }
    const auto count = r.u32();
    TensorMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.u32();
        if (name_len > 4096) throw LoadError("corrupt tensor name in " + path.string());
        std::string name = r.bytes(name_len);
        const auto rank = r.u32();
        if (rank > 8) throw LoadError("corrupt tensor rank in " + path.string());
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        auto data = r.f32_array(shape_numel(shape));
        out.emplace(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
    }
    return out;
}

template <typename T>
TensorMap export_state(const ParamList<T>& params, const BufferList<T>& buffers) {
    TensorMap out;
    for (const auto& p : params) out.emplace(p.name, p.value->template cast<float>());
    for (const auto& b : buffers) out.emplace(b.name, b.value->template cast<float>());
    return out;
}

/// Copy named tensors into a model's parameters and buffers; every name must be present.
template <typename T>
void import_state(const TensorMap& state, const ParamList<T>& params, const BufferList<T>& buffers) {
    auto assign = [&](const std::string& name, Tensor<T>* dst) {
        auto it = state.find(name);
        if (it == state.end()) throw LoadError("checkpoint missing tensor '" + name + "'");
        if (it->second.shape() != dst->shape()) {
            throw LoadError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                            ", model expects " + shape_str(dst->shape()));
        }
        *dst = it->second.template cast<T>();
    };
    for (const auto& p : params) assign(p.name, p.value);
    for (const auto& b : buffers) assign(b.name, b.value);
}

}  // namespace anoclass::nn
