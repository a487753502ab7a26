#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hemis/rng.hpp"

namespace hemis {

/// Scalar types supported by the tensor container and the HTF file format.
enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
    static constexpr DType value = DType::F32;
};
template <>
struct dtype_of<double> {
    static constexpr DType value = DType::F64;
};

/// Dense row-major n-dimensional array over float or double. The shape is
/// fixed at construction and every dimension is at least 1. Once built,
/// tensors are treated as values: safe to copy and to share read-only
/// between threads.
template <typename T>
class Tensor {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "Tensor supports float and double only");

public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

    Tensor(std::vector<std::size_t> shape, std::vector<T> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != checked_numel(shape_)) {
            throw std::invalid_argument("tensor: data length does not match shape");
        }
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    DType dtype() const { return dtype_of<T>::value; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator()(std::size_t i) { return data_[i]; }
    T operator()(std::size_t i) const { return data_[i]; }
    T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    T operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    T& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    T operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    T operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

private:
    static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
        if (shape.empty()) {
            throw std::invalid_argument("tensor: shape must have at least one dimension");
        }
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) {
                throw std::invalid_argument("tensor: dimensions must be positive");
            }
            n *= d;
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape();
}

/// Throws if the tensor holds any NaN or infinity. Every public tensor-core
/// operation runs this before returning, so non-finite values surface at the
/// op that produced them.
template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
    const T* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(p[i])) {
            throw std::runtime_error(std::string(what) + ": non-finite value at index " +
                                     std::to_string(i));
        }
    }
}

template <typename T>
Tensor<T> zeros(std::vector<std::size_t> shape) {
    return Tensor<T>(std::move(shape));
}

template <typename T>
Tensor<T> ones_like(const Tensor<T>& t) {
    Tensor<T> out(t.shape());
    out.fill(T(1));
    return out;
}

/// Normal(0, stddev^2) samples in row-major order, reproducible per seed.
template <typename T>
Tensor<T> randn(std::vector<std::size_t> shape, Rng& rng, double stddev) {
    if (!(stddev > 0.0)) {
        throw std::invalid_argument("randn: stddev must be positive");
    }
    Tensor<T> out(std::move(shape));
    T* p = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        p[i] = static_cast<T>(stddev * rng.normal());
    }
    check_finite(out, "randn");
    return out;
}

namespace detail {
template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f, const char* what) {
    if (!same_shape(a, b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0; i < a.numel(); ++i) {
        po[i] = f(pa[i], pb[i]);
    }
    check_finite(out, what);
    return out;
}
}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::zip(a, b, [](T x, T y) { return x + y; }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::zip(a, b, [](T x, T y) { return x - y; }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::zip(a, b, [](T x, T y) { return x * y; }, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::size_t i = 0; i < a.numel(); ++i) {
        po[i] = static_cast<T>(pa[i] * s);
    }
    check_finite(out, "scale");
    return out;
}

}  // namespace hemis
