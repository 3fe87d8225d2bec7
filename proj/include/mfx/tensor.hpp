#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mfx/error.hpp"

namespace mfx {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_to_string(const Shape& shape);

// Dense row-major tensor.
template <class T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
        check_dims();
    }

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_dims();
        if (shape_size(shape_) != data_.size())
            throw ShapeError("", "tensor data length " + std::to_string(data_.size()) +
                                     " does not match shape " + shape_to_string(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Elements per leading index (e.g. per example for batched tensors).
    std::size_t row_size() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
    void check_dims() const {
        for (std::size_t d : shape_)
            if (d == 0) throw ShapeError("", "tensor dimensions must be positive, got " + shape_to_string(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

inline std::string shape_to_string(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

}  // namespace mfx
