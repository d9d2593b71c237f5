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

#include "tfab/errors.hpp"

namespace tfab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major N-dimensional array of real scalars.
template <class S>
class Tensor {
public:
    using value_type = S;

    Tensor() = default;

    explicit Tensor(Shape shape, S fill = S(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
        check_dims();
    }

    Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_dims();
        if (shape_size(shape_) != data_.size()) {
            throw DimensionError("tensor of shape " + shape_str(shape_) + " needs " +
                                 std::to_string(shape_size(shape_)) + " elements, got " +
                                 std::to_string(data_.size()));
        }
    }

    /// Validating constructor for user-supplied values: rejects NaN/Inf.
    static Tensor from_values(Shape shape, std::vector<S> data) {
        Tensor t(std::move(shape), std::move(data));
        for (std::size_t i = 0; i < t.data_.size(); ++i) {
            if (!std::isfinite(t.data_[i])) {
                throw InputError("non-finite value at flat index " + std::to_string(i));
            }
        }
        return t;
    }

    static Tensor vector(std::initializer_list<S> values) {
        return from_values({values.size()}, std::vector<S>(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<S> data() noexcept { return data_; }
    std::span<const S> data() const noexcept { return data_; }
    S* raw() noexcept { return data_.data(); }
    const S* raw() const noexcept { return data_.data(); }
    std::vector<S>& storage() noexcept { return data_; }
    const std::vector<S>& storage() const noexcept { return data_; }

    S& operator[](std::size_t i) noexcept { return data_[i]; }
    const S& operator[](std::size_t i) const noexcept { return data_[i]; }

    S& at(std::size_t i0, std::size_t i1) { return data_[i0 * shape_[1] + i1]; }
    const S& at(std::size_t i0, std::size_t i1) const { return data_[i0 * shape_[1] + i1]; }
    S& at(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) {
        return data_[((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
    }
    const S& at(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) const {
        return data_[((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
    }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size()) {
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    void fill(S value) { std::fill(data_.begin(), data_.end(), value); }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    Tensor& operator-=(const Tensor& other) {
        require_same_shape(other, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
        return *this;
    }

    Tensor& operator*=(S k) {
        for (auto& v : data_) v *= k;
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, S k) { return a *= k; }
    friend Tensor operator*(S k, Tensor a) { return a *= k; }

    bool operator==(const Tensor& other) const = default;

    void require_same_shape(const Tensor& other, const char* what) const {
        if (shape_ != other.shape_) {
            throw DimensionError(std::string(what) + ": shape " + shape_str(shape_) + " vs " +
                                 shape_str(other.shape_));
        }
    }

private:
    void check_dims() const {
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (shape_[i] == 0) {
                throw DimensionError("axis " + std::to_string(i) + " of shape " + shape_str(shape_) +
                                     " is zero");
            }
        }
    }

    Shape shape_;
    std::vector<S> data_;
};

template <class S>
double dot(const Tensor<S>& a, const Tensor<S>& b) {
    a.require_same_shape(b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
    return acc;
}

template <class S>
double squared_norm(const Tensor<S>& a) {
    return dot(a, a);
}

template <class S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    a.require_same_shape(b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

template <class S>
std::size_t argmax(std::span<const S> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

}  // namespace tfab
