#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "anoclass/core/errors.hpp"
#include "anoclass/core/random.hpp"
#include "anoclass/core/tensor.hpp"

namespace anoclass::nn {

template <typename T>
struct Param {
    std::string name;
    Tensor<T>* value;
    Tensor<T>* grad;
};

template <typename T>
struct Buffer {
    std::string name;
    Tensor<T>* value;
};

template <typename T>
using ParamList = std::vector<Param<T>>;
template <typename T>
using BufferList = std::vector<Buffer<T>>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void zero_grads(const ParamList<T>& params) {
    for (const auto& p : params) p.grad->fill(T{0});
}

inline void expect_rank(const Shape& shape, std::size_t rank, const char* who) {
    if (shape.size() != rank) {
        throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(shape));
    }
}

/// 2-D convolution via im2col + GEMM. Weight layout (out, in, k, k).
template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
           std::size_t padding = 0, bool bias = true)
        : in_(in_channels),
          out_(out_channels),
          k_(kernel),
          stride_(stride),
          pad_(padding),
          has_bias_(bias),
          weight_({out_channels, in_channels, kernel, kernel}),
          grad_weight_({out_channels, in_channels, kernel, kernel}),
          bias_({bias ? out_channels : 0}),
          grad_bias_({bias ? out_channels : 0}) {}

    void init(Rng& rng) {
        const T bound = T(1) / std::sqrt(static_cast<T>(in_ * k_ * k_));
        std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
        for (auto& w : weight_.storage()) w = static_cast<T>(dist(rng));
        for (auto& b : bias_.storage()) b = static_cast<T>(dist(rng));
    }

    std::size_t in_channels() const noexcept { return in_; }
    std::size_t out_channels() const noexcept { return out_; }
    std::size_t kernel() const noexcept { return k_; }
    std::size_t stride() const noexcept { return stride_; }
    std::size_t padding() const noexcept { return pad_; }
    bool has_bias() const noexcept { return has_bias_; }
    Tensor<T>& weight() noexcept { return weight_; }
    const Tensor<T>& weight() const noexcept { return weight_; }
    Tensor<T>& bias() noexcept { return bias_; }
    const Tensor<T>& bias() const noexcept { return bias_; }

    /// Replace the bias vector; used when folding batch-norm into the conv.
    void set_bias(Tensor<T> bias) {
        if (bias.size() != out_) throw ShapeError("conv bias length mismatch");
        bias_ = std::move(bias);
        grad_bias_ = Tensor<T>({out_});
        has_bias_ = true;
    }

    std::size_t out_size(std::size_t n) const {
        if (n + 2 * pad_ < k_) throw ShapeError("conv input smaller than kernel");
        return (n + 2 * pad_ - k_) / stride_ + 1;
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        Tensor<T> y = infer(x);
        if (train) cached_input_ = x;
        return y;
    }

    /// Stateless forward pass.
    Tensor<T> infer(const Tensor<T>& x) const {
        expect_rank(x.shape(), 4, "Conv2d");
        if (x.dim(1) != in_) {
            throw ShapeError("Conv2d: expected " + std::to_string(in_) + " input channels, got " + shape_str(x.shape()));
        }
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t ho = out_size(h), wo = out_size(w);
        Tensor<T> y({n, out_, ho, wo});
        ConstMatMap<T> wm(weight_.data(), out_, in_ * k_ * k_);
        RowMatrix<T> cols;
        for (std::size_t b = 0; b < n; ++b) {
            const T* xb = x.data() + b * in_ * h * w;
            MatMap<T> yb(y.data() + b * out_ * ho * wo, out_, ho * wo);
            if (is_pointwise()) {
                yb.noalias() = wm * ConstMatMap<T>(xb, in_, h * w);
            } else {
                im2col(xb, h, w, ho, wo, cols);
                yb.noalias() = wm * cols;
            }
            if (has_bias_) {
                for (std::size_t o = 0; o < out_; ++o) yb.row(o).array() += bias_[o];
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const Tensor<T>& x = cached_input_;
        if (x.empty()) throw ArgumentError("Conv2d::backward without a training forward");
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t ho = dy.dim(2), wo = dy.dim(3);
        Tensor<T> dx(x.shape());
        ConstMatMap<T> wm(weight_.data(), out_, in_ * k_ * k_);
        MatMap<T> gw(grad_weight_.data(), out_, in_ * k_ * k_);
        RowMatrix<T> cols;
        RowMatrix<T> dcols;
        for (std::size_t b = 0; b < n; ++b) {
            ConstMatMap<T> dyb(dy.data() + b * out_ * ho * wo, out_, ho * wo);
            const T* xb = x.data() + b * in_ * h * w;
            if (is_pointwise()) {
                gw.noalias() += dyb * ConstMatMap<T>(xb, in_, h * w).transpose();
                MatMap<T>(dx.data() + b * in_ * h * w, in_, h * w).noalias() = wm.transpose() * dyb;
            } else {
                im2col(xb, h, w, ho, wo, cols);
                gw.noalias() += dyb * cols.transpose();
                dcols.noalias() = wm.transpose() * dyb;
                col2im(dcols, h, w, ho, wo, dx.data() + b * in_ * h * w);
            }
            if (has_bias_) {
                for (std::size_t o = 0; o < out_; ++o) grad_bias_[o] += dyb.row(o).sum();
            }
        }
        return dx;
    }

    void collect(ParamList<T>& params, const std::string& prefix) {
        params.push_back({prefix + ".weight", &weight_, &grad_weight_});
        if (has_bias_) params.push_back({prefix + ".bias", &bias_, &grad_bias_});
    }

    void release_cache() { cached_input_ = Tensor<T>(); }

private:
    bool is_pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

    void im2col(const T* x, std::size_t h, std::size_t w, std::size_t ho, std::size_t wo, RowMatrix<T>& cols) const {
        cols.resize(static_cast<Eigen::Index>(in_ * k_ * k_), static_cast<Eigen::Index>(ho * wo));
        for (std::size_t c = 0; c < in_; ++c) {
            for (std::size_t ky = 0; ky < k_; ++ky) {
                for (std::size_t kx = 0; kx < k_; ++kx) {
                    T* row = cols.data() + ((c * k_ + ky) * k_ + kx) * ho * wo;
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
                            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w);
                            row[oy * wo + ox] = inside ? x[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] : T{0};
                        }
                    }
                }
            }
        }
    }

    void col2im(const RowMatrix<T>& cols, std::size_t h, std::size_t w, std::size_t ho, std::size_t wo, T* dx) const {
        for (std::size_t c = 0; c < in_; ++c) {
            for (std::size_t ky = 0; ky < k_; ++ky) {
                for (std::size_t kx = 0; kx < k_; ++kx) {
                    const T* row = cols.data() + ((c * k_ + ky) * k_ + kx) * ho * wo;
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
                            if (ix < 0 || ix >= static_cast<long>(w)) continue;
                            dx[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }

    std::size_t in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
    bool has_bias_ = true;
    Tensor<T> weight_, grad_weight_, bias_, grad_bias_;
    Tensor<T> cached_input_;
};

/// Per-channel batch normalization over (N, H, W). Training uses batch
/// statistics and updates running estimates; inference uses the running ones.
template <typename T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(std::size_t channels, T eps = T(1e-5), T momentum = T(0.1))
        : c_(channels),
          eps_(eps),
          momentum_(momentum),
          gamma_({channels}, T(1)),
          beta_({channels}, T(0)),
          grad_gamma_({channels}),
          grad_beta_({channels}),
          running_mean_({channels}, T(0)),
          running_var_({channels}, T(1)) {}

    std::size_t channels() const noexcept { return c_; }
    T eps() const noexcept { return eps_; }
    T momentum() const noexcept { return momentum_; }
    /// Momentum 1 makes the next training forward replace the running statistics.
    void set_momentum(T m) noexcept { momentum_ = m; }
    Tensor<T>& gamma() noexcept { return gamma_; }
    Tensor<T>& beta() noexcept { return beta_; }
    Tensor<T>& running_mean() noexcept { return running_mean_; }
    Tensor<T>& running_var() noexcept { return running_var_; }
    const Tensor<T>& gamma() const noexcept { return gamma_; }
    const Tensor<T>& beta() const noexcept { return beta_; }
    const Tensor<T>& running_mean() const noexcept { return running_mean_; }
    const Tensor<T>& running_var() const noexcept { return running_var_; }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        expect_rank(x.shape(), 4, "BatchNorm2d");
        if (x.dim(1) != c_) throw ShapeError("BatchNorm2d: channel mismatch " + shape_str(x.shape()));
        const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
        const std::size_t count = n * hw;
        Tensor<T> y(x.shape());
        if (!train) {
            for (std::size_t c = 0; c < c_; ++c) {
                const T scale = gamma_[c] / std::sqrt(running_var_[c] + eps_);
                const T shift = beta_[c] - running_mean_[c] * scale;
                for (std::size_t b = 0; b < n; ++b) {
                    const T* src = x.data() + (b * c_ + c) * hw;
                    T* dst = y.data() + (b * c_ + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * scale + shift;
                }
            }
            return y;
        }
        xhat_ = Tensor<T>(x.shape());
        inv_std_ = Tensor<T>({c_});
        for (std::size_t c = 0; c < c_; ++c) {
            T mean = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const T* src = x.data() + (b * c_ + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) mean += src[i];
            }
            mean /= static_cast<T>(count);
            T var = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const T* src = x.data() + (b * c_ + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) var += (src[i] - mean) * (src[i] - mean);
            }
            var /= static_cast<T>(count);
            const T inv = T(1) / std::sqrt(var + eps_);
            inv_std_[c] = inv;
            for (std::size_t b = 0; b < n; ++b) {
                const T* src = x.data() + (b * c_ + c) * hw;
                T* xh = xhat_.data() + (b * c_ + c) * hw;
                T* dst = y.data() + (b * c_ + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    xh[i] = (src[i] - mean) * inv;
                    dst[i] = gamma_[c] * xh[i] + beta_[c];
                }
            }
            const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1) : var;
            running_mean_[c] = (T(1) - momentum_) * running_mean_[c] + momentum_ * mean;
            running_var_[c] = (T(1) - momentum_) * running_var_[c] + momentum_ * unbiased;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        if (xhat_.empty()) throw ArgumentError("BatchNorm2d::backward without a training forward");
        const std::size_t n = dy.dim(0), hw = dy.dim(2) * dy.dim(3);
        const T count = static_cast<T>(n * hw);
        Tensor<T> dx(dy.shape());
        for (std::size_t c = 0; c < c_; ++c) {
            T sum_dy = 0, sum_dy_xhat = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const T* g = dy.data() + (b * c_ + c) * hw;
                const T* xh = xhat_.data() + (b * c_ + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    sum_dy += g[i];
                    sum_dy_xhat += g[i] * xh[i];
                }
            }
            grad_gamma_[c] += sum_dy_xhat;
            grad_beta_[c] += sum_dy;
            const T k = gamma_[c] * inv_std_[c] / count;
            for (std::size_t b = 0; b < n; ++b) {
                const T* g = dy.data() + (b * c_ + c) * hw;
                const T* xh = xhat_.data() + (b * c_ + c) * hw;
                T* d = dx.data() + (b * c_ + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) d[i] = k * (count * g[i] - sum_dy - xh[i] * sum_dy_xhat);
            }
        }
        return dx;
    }

    void collect(ParamList<T>& params, const std::string& prefix) {
        params.push_back({prefix + ".weight", &gamma_, &grad_gamma_});
        params.push_back({prefix + ".bias", &beta_, &grad_beta_});
    }

    void collect_buffers(BufferList<T>& buffers, const std::string& prefix) {
        buffers.push_back({prefix + ".running_mean", &running_mean_});
        buffers.push_back({prefix + ".running_var", &running_var_});
    }

    void release_cache() {
        xhat_ = Tensor<T>();
        inv_std_ = Tensor<T>();
    }

private:
    std::size_t c_ = 0;
    T eps_ = T(1e-5), momentum_ = T(0.1);
    Tensor<T> gamma_, beta_, grad_gamma_, grad_beta_, running_mean_, running_var_;
    Tensor<T> xhat_, inv_std_;
};

template <typename T>
class ReLU {
public:
    Tensor<T> forward(const Tensor<T>& x, bool train) {
        Tensor<T> y = x;
        for (auto& v : y.storage()) v = v > T{0} ? v : T{0};
        if (train) cached_output_ = y;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            if (!(cached_output_[i] > T{0})) dx[i] = T{0};
        }
        return dx;
    }

    void release_cache() { cached_output_ = Tensor<T>(); }

private:
    Tensor<T> cached_output_;
};

/// Max pooling. When the input is smaller than the window the output keeps
/// a single cell whose window is clipped to the input, so deep stacks of
/// 2x2 pools degrade gracefully on small grids.
template <typename T>
class MaxPool2d {
public:
    MaxPool2d() = default;
    MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding = 0)
        : k_(kernel), stride_(stride), pad_(padding) {}

    std::size_t out_size(std::size_t n) const { return n + 2 * pad_ >= k_ ? (n + 2 * pad_ - k_) / stride_ + 1 : 1; }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        if (!train) return infer(x);
        input_shape_ = x.shape();
        return run(x, &argmax_);
    }

    Tensor<T> infer(const Tensor<T>& x) const { return run(x, nullptr); }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(input_shape_);
        for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax_[o]] += dy[o];
        return dx;
    }

    void release_cache() {
        argmax_.clear();
        argmax_.shrink_to_fit();
    }

private:
    Tensor<T> run(const Tensor<T>& x, std::vector<std::size_t>* argmax) const {
        expect_rank(x.shape(), 4, "MaxPool2d");
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t ho = out_size(h), wo = out_size(w);
        Tensor<T> y({n, c, ho, wo});
        if (argmax) argmax->assign(y.size(), 0);
        for (std::size_t plane = 0; plane < n * c; ++plane) {
            const T* src = x.data() + plane * h * w;
            for (std::size_t oy = 0; oy < ho; ++oy) {
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    bool found = false;
                    for (std::size_t ky = 0; ky < k_; ++ky) {
                        const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        for (std::size_t kx = 0; kx < k_; ++kx) {
                            const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
                            if (ix < 0 || ix >= static_cast<long>(w)) continue;
                            const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                            if (!found || src[idx] > best) {
                                best = src[idx];
                                best_idx = idx;
                                found = true;
                            }
                        }
                    }
                    const std::size_t o = (plane * ho + oy) * wo + ox;
                    y[o] = best;
                    if (argmax) (*argmax)[o] = plane * h * w + best_idx;
                }
            }
        }
        return y;
    }

    std::size_t k_ = 2, stride_ = 2, pad_ = 0;
    std::vector<std::size_t> argmax_;
    Shape input_shape_;
};

/// (N, C, H, W) -> (N, C) spatial mean.
template <typename T>
class GlobalAvgPool {
public:
    Tensor<T> forward(const Tensor<T>& x, bool train) {
        expect_rank(x.shape(), 4, "GlobalAvgPool");
        const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
        Tensor<T> y({n, c});
        for (std::size_t plane = 0; plane < n * c; ++plane) {
            T s = 0;
            for (std::size_t i = 0; i < hw; ++i) s += x[plane * hw + i];
            y[plane] = s / static_cast<T>(hw);
        }
        if (train) input_shape_ = x.shape();
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(input_shape_);
        const std::size_t hw = input_shape_[2] * input_shape_[3];
        for (std::size_t plane = 0; plane < dy.size(); ++plane) {
            const T g = dy[plane] / static_cast<T>(hw);
            for (std::size_t i = 0; i < hw; ++i) dx[plane * hw + i] = g;
        }
        return dx;
    }

private:
    Shape input_shape_;
};

/// Fully connected layer, weight layout (out, in).
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in_features, std::size_t out_features)
        : in_(in_features),
          out_(out_features),
          weight_({out_features, in_features}),
          grad_weight_({out_features, in_features}),
          bias_({out_features}),
          grad_bias_({out_features}) {}

    void init(Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& w : weight_.storage()) w = static_cast<T>(dist(rng));
        for (auto& b : bias_.storage()) b = static_cast<T>(dist(rng));
    }

    std::size_t in_features() const noexcept { return in_; }
    std::size_t out_features() const noexcept { return out_; }
    Tensor<T>& weight() noexcept { return weight_; }
    Tensor<T>& bias() noexcept { return bias_; }
    const Tensor<T>& weight() const noexcept { return weight_; }
    const Tensor<T>& bias() const noexcept { return bias_; }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        expect_rank(x.shape(), 2, "Linear");
        if (x.dim(1) != in_) throw ShapeError("Linear: expected " + std::to_string(in_) + " features, got " + shape_str(x.shape()));
        const std::size_t n = x.dim(0);
        Tensor<T> y({n, out_});
        MatMap<T> ym(y.data(), n, out_);
        ym.noalias() = ConstMatMap<T>(x.data(), n, in_) * ConstMatMap<T>(weight_.data(), out_, in_).transpose();
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t o = 0; o < out_; ++o) y.at(b, o) += bias_[o];
        }
        if (train) cached_input_ = x;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const std::size_t n = dy.dim(0);
        ConstMatMap<T> g(dy.data(), n, out_);
        ConstMatMap<T> xm(cached_input_.data(), n, in_);
        MatMap<T>(grad_weight_.data(), out_, in_).noalias() += g.transpose() * xm;
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t o = 0; o < out_; ++o) grad_bias_[o] += dy.at(b, o);
        }
        Tensor<T> dx({n, in_});
        MatMap<T>(dx.data(), n, in_).noalias() = g * ConstMatMap<T>(weight_.data(), out_, in_);
        return dx;
    }

    void collect(ParamList<T>& params, const std::string& prefix) {
        params.push_back({prefix + ".weight", &weight_, &grad_weight_});
        params.push_back({prefix + ".bias", &bias_, &grad_bias_});
    }

    void release_cache() { cached_input_ = Tensor<T>(); }

private:
    std::size_t in_ = 0, out_ = 0;
    Tensor<T> weight_, grad_weight_, bias_, grad_bias_;
    Tensor<T> cached_input_;
};

template <typename T>
class Sigmoid {
public:
    Tensor<T> forward(const Tensor<T>& x, bool train) {
        Tensor<T> y = x;
        for (auto& v : y.storage()) v = T(1) / (T(1) + std::exp(-v));
        if (train) cached_output_ = y;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= cached_output_[i] * (T(1) - cached_output_[i]);
        return dx;
    }

private:
    Tensor<T> cached_output_;
};

/// Row-wise L2 normalization of an (N, D) matrix.
template <typename T>
class L2Normalize {
public:
    explicit L2Normalize(T eps = T(1e-12)) : eps_(eps) {}

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        expect_rank(x.shape(), 2, "L2Normalize");
        const std::size_t n = x.dim(0), d = x.dim(1);
        Tensor<T> y(x.shape());
        norms_.assign(n, T{0});
        for (std::size_t b = 0; b < n; ++b) {
            T s = 0;
            for (std::size_t i = 0; i < d; ++i) s += x.at(b, i) * x.at(b, i);
            const T norm = std::max(std::sqrt(s), eps_);
            norms_[b] = norm;
            for (std::size_t i = 0; i < d; ++i) y.at(b, i) = x.at(b, i) / norm;
        }
        if (train) cached_output_ = y;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const std::size_t n = dy.dim(0), d = dy.dim(1);
        Tensor<T> dx(dy.shape());
        for (std::size_t b = 0; b < n; ++b) {
            T dot = 0;
            for (std::size_t i = 0; i < d; ++i) dot += dy.at(b, i) * cached_output_.at(b, i);
            for (std::size_t i = 0; i < d; ++i) dx.at(b, i) = (dy.at(b, i) - cached_output_.at(b, i) * dot) / norms_[b];
        }
        return dx;
    }

private:
    T eps_;
    std::vector<T> norms_;
    Tensor<T> cached_output_;
};

/// conv3x3(pad 1, no bias) -> batch-norm -> ReLU -> 2x2 max-pool.
template <typename T>
class ConvBlock {
public:
    ConvBlock() = default;
    ConvBlock(std::size_t in_channels, std::size_t out_channels)
        : conv_(in_channels, out_channels, 3, 1, 1, false), bn_(out_channels), pool_(2, 2) {}

    void init(Rng& rng) { conv_.init(rng); }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        auto y = conv_.forward(x, train);
        y = bn_.forward(y, train);
        y = relu_.forward(y, train);
        return pool_.forward(y, train);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        auto g = pool_.backward(dy);
        g = relu_.backward(g);
        g = bn_.backward(g);
        return conv_.backward(g);
    }

    void collect(ParamList<T>& params, const std::string& prefix) {
        conv_.collect(params, prefix + ".conv");
        bn_.collect(params, prefix + ".bn");
    }

    void collect_buffers(BufferList<T>& buffers, const std::string& prefix) { bn_.collect_buffers(buffers, prefix + ".bn"); }

    void release_cache() {
        conv_.release_cache();
        bn_.release_cache();
        relu_.release_cache();
        pool_.release_cache();
    }

    std::size_t out_size(std::size_t n) const { return pool_.out_size(n); }
    void set_bn_momentum(T m) noexcept { bn_.set_momentum(m); }
    T bn_momentum() const noexcept { return bn_.momentum(); }

private:
    Conv2d<T> conv_;
    BatchNorm2d<T> bn_;
    ReLU<T> relu_;
    MaxPool2d<T> pool_;
};

}  // namespace anoclass::nn
