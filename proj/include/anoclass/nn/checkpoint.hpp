#pragma once

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "anoclass/nn/tensor_file.hpp"

namespace anoclass::nn {

// A checkpoint is a JSON descriptor at `path` plus a named-tensor blob at
// `path` + ".params". The descriptor records the blob's file name.

inline std::filesystem::path params_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".params";
    return p;
}

inline void save_checkpoint(const std::filesystem::path& path, nlohmann::json descriptor, const TensorMap& tensors) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    descriptor["params_file"] = params_path(path).filename().string();
    save_tensors(params_path(path), tensors);
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write checkpoint " + path.string());
    out << descriptor.dump(2) << '\n';
}

struct Checkpoint {
    nlohmann::json descriptor;
    TensorMap tensors;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("checkpoint not found: " + path.string());
    Checkpoint ck;
    try {
        in >> ck.descriptor;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("malformed checkpoint descriptor " + path.string() + ": " + e.what());
    }
    const auto blob = path.parent_path() / ck.descriptor.value("params_file", params_path(path).filename().string());
    ck.tensors = load_tensors(blob);
    return ck;
}

}  // namespace anoclass::nn
