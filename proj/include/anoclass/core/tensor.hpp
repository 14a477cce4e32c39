#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "anoclass/core/errors.hpp"

namespace anoclass {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major tensor. Layouts used throughout: (N, C, H, W) for batches,
/// (C, H, W) for single maps, (rows, cols) for matrices.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    T& at(std::size_t c, std::size_t h, std::size_t w) { return data_[(c * shape_[1] + h) * shape_[2] + w]; }
    const T& at(std::size_t c, std::size_t h, std::size_t w) const {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    /// Same data, new shape. Element count must match.
    Tensor reshaped(Shape shape) const& {
        Tensor out = *this;
        out.reshape(std::move(shape));
        return out;
    }
    Tensor reshaped(Shape shape) && {
        reshape(std::move(shape));
        return std::move(*this);
    }
    void reshape(Shape shape) {
        if (shape_numel(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        shape_ = std::move(shape);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    Shape shape_;
    std::vector<T> data_;
};

/// Stack equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
    if (items.empty()) throw ArgumentError("stack of zero tensors");
    Shape shape = items.front().shape();
    for (const auto& t : items) {
        if (t.shape() != shape) throw ShapeError("stack: " + shape_str(t.shape()) + " vs " + shape_str(shape));
    }
    Shape out_shape{items.size()};
    out_shape.insert(out_shape.end(), shape.begin(), shape.end());
    Tensor<T> out(out_shape);
    const std::size_t step = items.front().size();
    for (std::size_t i = 0; i < items.size(); ++i) {
        std::copy(items[i].storage().begin(), items[i].storage().end(), out.storage().begin() + i * step);
    }
    return out;
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
    return stack(std::span<const Tensor<T>>(items));
}

/// Slice item `i` off the leading axis.
template <typename T>
Tensor<T> take(const Tensor<T>& batch, std::size_t i) {
    Shape shape(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t step = shape_numel(shape);
    std::vector<T> data(batch.storage().begin() + i * step, batch.storage().begin() + (i + 1) * step);
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace anoclass
