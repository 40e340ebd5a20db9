#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "od/errors.hpp"

namespace od {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Dense row-major tensor. Scalar type is a template parameter: float for
// pipeline runs, double for verification runs.
template <class S>
struct TensorT {
    Shape shape;
    std::vector<S> data;

    TensorT() = default;
    explicit TensorT(Shape sh, S fill = S(0))
        : shape(std::move(sh)), data(size_t(shape_numel(shape)), fill) {}
    TensorT(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
        if (int64_t(data.size()) != shape_numel(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    int64_t numel() const { return int64_t(data.size()); }
    int rank() const { return int(shape.size()); }
    bool is_scalar() const { return shape.empty(); }

    // 2-D helpers
    int64_t rows() const { return shape.size() >= 1 ? shape[0] : 1; }
    int64_t cols() const { return shape.size() >= 2 ? shape[1] : 1; }

    S& operator[](int64_t i) { return data[size_t(i)]; }
    S operator[](int64_t i) const { return data[size_t(i)]; }
    S& at2(int64_t r, int64_t c) { return data[size_t(r * cols() + c)]; }
    S at2(int64_t r, int64_t c) const { return data[size_t(r * cols() + c)]; }

    S scalar() const {
        if (numel() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(shape));
        return data[0];
    }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    template <class T>
    TensorT<T> cast() const {
        TensorT<T> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = T(data[i]);
        return out;
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <class S>
TensorT<S> tensor_scalar(S v) {
    TensorT<S> t{Shape{}};
    t.data = {v};
    return t;
}

} // namespace od
