#pragma once

#include <cmath>
#include <vector>

#include "anoclass/nn/layers.hpp"

namespace anoclass::nn {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Bound to one parameter list; moment buffers are
/// allocated lazily on the first step.
template <typename T>
class Adam {
public:
    Adam(ParamList<T> params, AdamOptions opts = {}) : params_(std::move(params)), opts_(opts) {}

    const AdamOptions& options() const noexcept { return opts_; }
    void set_lr(double lr) noexcept { opts_.lr = lr; }
    long steps() const noexcept { return t_; }

    void zero_grad() { zero_grads(params_); }

    void step() {
        if (m_.empty()) {
            for (const auto& p : params_) {
                m_.emplace_back(p.value->size(), 0.0);
                v_.emplace_back(p.value->size(), 0.0);
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& value = params_[k].value->storage();
            const auto& grad = params_[k].grad->storage();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < value.size(); ++i) {
                const double g = static_cast<double>(grad[i]);
                m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
                v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
                const double update = opts_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts_.eps);
                value[i] = static_cast<T>(static_cast<double>(value[i]) - update);
            }
        }
    }

private:
    ParamList<T> params_;
    AdamOptions opts_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

}  // namespace anoclass::nn
