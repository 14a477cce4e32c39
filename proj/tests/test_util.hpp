#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "anoclass/core/tensor.hpp"
#include "anoclass/nn/layers.hpp"

namespace anoclass::testing {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, scale);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.storage()) v = dist(rng);
    return t;
}

inline Tensor<float> random_tensor_f(Shape shape, std::uint64_t seed, float scale = 1.0f) {
    return random_tensor(std::move(shape), seed, scale).cast<float>();
}

inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Largest relative error between the analytic gradients stored in `params`
/// and central differences of `loss` (step h).
inline double max_param_grad_error(const nn::ParamList<double>& params, const std::function<double()>& loss,
                                   double h = 1e-5) {
    double worst = 0.0;
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p.value->size(); ++i) {
            const double orig = (*p.value)[i];
            (*p.value)[i] = orig + h;
            const double up = loss();
            (*p.value)[i] = orig - h;
            const double down = loss();
            (*p.value)[i] = orig;
            worst = std::max(worst, relative_error((*p.grad)[i], (up - down) / (2 * h)));
        }
    }
    return worst;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("anoclass_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace anoclass::testing
