#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cprune/errors.hpp"

namespace cprune {

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

/// Dense N-dimensional array in row-major order (last index varies fastest).
///
/// Layout conventions used throughout the library:
///   activations  (H, W, M)      one sample, M channels
///   filter banks (d, d, M, N)   N filters of spatial size d x d over M channels
///   image stacks (count, H, W, M)
///
/// Invariant: product(shape) == data.size(). The default scalar type is
/// double; float is available for the arithmetic primitives with relaxed
/// tolerances.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(shape_product(shape_), T(0)) {}

    TensorT(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_product(shape_) != data_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static TensorT zeros(std::vector<std::size_t> shape) { return TensorT(std::move(shape)); }

    static TensorT full(std::vector<std::size_t> shape, T value) {
        TensorT t(std::move(shape));
        for (T& v : t.data_) v = value;
        return t;
    }

    static TensorT scalar(T value) { return TensorT({1}, {value}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Bounds-checked multi-index access.
    T& at(std::initializer_list<std::size_t> idx) {
        return data_[flat_index(idx)];
    }
    const T& at(std::initializer_list<std::size_t> idx) const {
        return data_[flat_index(idx)];
    }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    bool operator==(const TensorT& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

    TensorT reshaped(std::vector<std::size_t> new_shape) const {
        if (shape_product(new_shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                             shape_str(new_shape));
        }
        return TensorT(std::move(new_shape), data_);
    }

private:
    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size()) {
            throw ShapeError("index rank " + std::to_string(idx.size()) +
                             " does not match tensor rank " + std::to_string(shape_.size()));
        }
        std::size_t flat = 0;
        std::size_t axis = 0;
        for (std::size_t i : idx) {
            if (i >= shape_[axis]) {
                throw ShapeError("index " + std::to_string(i) + " out of bounds for axis " +
                                 std::to_string(axis) + " of shape " + shape_str(shape_));
            }
            flat = flat * shape_[axis] + i;
            ++axis;
        }
        return flat;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

template <typename T>
void check_finite(const TensorT<T>& t, const char* what) {
    if (!t.all_finite()) {
        throw NumericError(std::string(what) + ": non-finite values in input");
    }
}

template <typename T>
TensorT<T>& add_inplace(TensorT<T>& x, const TensorT<T>& y) {
    check_same_shape(x, y, "add");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
    return x;
}

/// y += a * x
template <typename T>
TensorT<T>& axpy_inplace(TensorT<T>& y, T a, const TensorT<T>& x) {
    check_same_shape(y, x, "axpy");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
    return y;
}

template <typename T>
TensorT<T>& scale_inplace(TensorT<T>& x, T a) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= a;
    return x;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    TensorT<T> out = a;
    add_inplace(out, b);
    return out;
}

template <typename T>
T sum(const TensorT<T>& t) {
    T s = 0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
    return s;
}

template <typename T>
T sum_squares(const TensorT<T>& t) {
    T s = 0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return s;
}

template <typename T>
T l1_norm(const TensorT<T>& t) {
    T s = 0;
    for (std::size_t i = 0; i < t.size(); ++i) s += std::abs(t[i]);
    return s;
}

template <typename T>
T max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "max_abs_diff");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        T d = std::abs(a[i] - b[i]);
        if (d > m) m = d;
    }
    return m;
}

/// max_i |a_i - b_i| / max(1, |b_i|), the relative error convention used by
/// the numeric contracts in this library.
template <typename T>
T max_rel_diff(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "max_rel_diff");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        T denom = std::max(T(1), std::abs(b[i]));
        T d = std::abs(a[i] - b[i]) / denom;
        if (d > m) m = d;
    }
    return m;
}

}  // namespace cprune
