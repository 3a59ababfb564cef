#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "deblur/errors.hpp"

namespace deblur {

// Dense N-dimensional array, row-major. Activations are N x C x H x W,
// conv filters Cout x Cin x Kh x Kw, matrices rows x cols.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), T(0)) {}
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (checked_numel(shape) != data.size())
            throw ShapeError("tensor data length does not match shape " + shape_str());
    }

    static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }
    static TensorT full(std::vector<int> s, T v) {
        TensorT t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static TensorT scalar(T v) { return TensorT({1}, {v}); }

    std::size_t numel() const { return data.size(); }
    int ndim() const { return int(shape.size()); }
    int dim(int i) const { return shape[std::size_t(i)]; }
    bool empty() const { return data.empty(); }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& at2(int r, int c) { return data[std::size_t(r) * shape[1] + c]; }
    T at2(int r, int c) const { return data[std::size_t(r) * shape[1] + c]; }

    T& at4(int n, int c, int h, int w) {
        return data[((std::size_t(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    T at4(int n, int c, int h, int w) const {
        return data[((std::size_t(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << ']';
        return os.str();
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }

    static std::size_t checked_numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int e : s) {
            if (e < 0) throw ShapeError("negative extent");
            n *= std::size_t(e);
        }
        return n;
    }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// Named trainable tensor with a persistent gradient buffer.
template <typename T>
struct ParamT {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;

    ParamT() = default;
    ParamT(std::string n, TensorT<T> v) : name(std::move(n)), value(std::move(v)) {
        grad = TensorT<T>::zeros(value.shape);
    }

    void zero_grad() { grad.fill(T(0)); }
};

using Param = ParamT<float>;

} // namespace deblur
