#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gcv/common.hpp"

namespace gcv {

// Dense row-major tensor. Scalar type is selectable per run (float for
// training speed, double for gradient checks).
template <class T>
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s, T fill = T{})
        : shape(std::move(s)), data(static_cast<std::size_t>(numel_of(shape)), fill) {}

    static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<std::int64_t> s, T v) { return Tensor(std::move(s), v); }

    static Tensor from(std::vector<std::int64_t> s, std::vector<T> values) {
        Tensor t;
        t.shape = std::move(s);
        t.data = std::move(values);
        if (static_cast<std::int64_t>(t.data.size()) != numel_of(t.shape)) {
            throw ShapeError("Tensor::from: data length does not match shape");
        }
        return t;
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto e : s) {
            if (e < 0) {
                throw ShapeError("Tensor: negative extent");
            }
            n *= e;
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    std::int64_t last_dim() const { return shape.empty() ? 1 : shape.back(); }

    // Number of rows when viewed as [rows, last_dim].
    std::int64_t rows() const {
        std::int64_t d = last_dim();
        return d == 0 ? 0 : numel() / d;
    }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            os << (i ? "," : "") << shape[i];
        }
        os << "]";
        return os.str();
    }
};

template <class To, class From>
Tensor<To> cast_tensor(const Tensor<From>& x) {
    Tensor<To> y;
    y.shape = x.shape;
    y.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        y.data[i] = static_cast<To>(x.data[i]);
    }
    return y;
}

template <class T>
bool all_finite(const Tensor<T>& x) {
    for (T v : x.data) {
        if (!std::isfinite(static_cast<double>(v))) {
            return false;
        }
    }
    return true;
}

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape && a.data == b.data;
}

// sign with sign(0) = 0, matching "no movement when the gradient vanishes".
template <class T>
Tensor<T> sign_tensor(const Tensor<T>& x) {
    Tensor<T> y = Tensor<T>::zeros(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        y[i] = x[i] > T(0) ? T(1) : (x[i] < T(0) ? T(-1) : T(0));
    }
    return y;
}

// Elementwise clamp of cur into the L-inf ball of radius eps around origin.
template <class T>
Tensor<T> clamp_ball(const Tensor<T>& cur, const Tensor<T>& origin, T eps) {
    if (!cur.same_shape(origin)) {
        throw ShapeError("clamp_ball: shape mismatch " + cur.shape_str() + " vs " + origin.shape_str());
    }
    Tensor<T> y = cur;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        T lo = origin[i] - eps;
        T hi = origin[i] + eps;
        if (y[i] < lo) {
            y[i] = lo;
        } else if (y[i] > hi) {
            y[i] = hi;
        }
    }
    return y;
}

// Argmax with ties broken toward the lowest index.
template <class T>
int argmax_lowest(const T* v, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
        if (v[i] > v[best]) {
            best = i;
        }
    }
    return best;
}

template <class T>
std::uint64_t tensor_hash(const Tensor<T>& x) {
    std::uint64_t h = fnv1a(x.shape.data(), x.shape.size() * sizeof(std::int64_t));
    return fnv1a(x.data.data(), x.data.size() * sizeof(T), h);
}

}  // namespace gcv
