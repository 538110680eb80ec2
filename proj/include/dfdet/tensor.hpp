#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dfdet/common.hpp"
#include "dfdet/rng.hpp"

// Dense n-dimensional array of real values. Contiguous row-major storage,
// value semantics. The autograd layer (autograd.hpp) wraps Tensor in graph
// nodes; Tensor itself knows nothing about gradients.

namespace dfdet {

template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(dfdet::numel(shape_), T(0)) {}

    Tensor(Shape shape, T fill)
        : shape_(std::move(shape)), data_(dfdet::numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (dfdet::numel(shape_) != data_.size())
            throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match data length " +
                             std::to_string(data_.size()));
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    static Tensor rand_uniform(Shape shape, Rng& rng, T lo, T hi) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // 2-D accessors (rows x cols).
    T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    std::size_t rows() const { return shape_.size() > 0 ? shape_[0] : 0; }
    std::size_t cols() const { return shape_.size() > 1 ? shape_[1] : 1; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (const T& x : data_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    std::uint64_t byte_hash() const {
        return fnv1a(data_.data(), data_.size() * sizeof(T));
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out = Tensor<U>(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

}  // namespace dfdet
