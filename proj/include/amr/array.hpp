#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "amr/common.hpp"
#include "amr/rng.hpp"

namespace amr {

// Plain dense value: shape + row-major data. No graph involvement.
template <class T>
struct Array {
    Shape shape;
    std::vector<T> v;

    Array() = default;
    explicit Array(Shape s, T fill = T(0)) : shape(std::move(s)), v(shape_numel(shape), fill) {}

    static Array from(Shape s, std::vector<T> data) {
        if (shape_numel(s) != data.size())
            throw ShapeError("Array::from: data size does not match shape " + shape_str(s));
        Array a;
        a.shape = std::move(s);
        a.v = std::move(data);
        return a;
    }

    std::size_t size() const { return v.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    T& operator[](std::size_t i) { return v[i]; }
    const T& operator[](std::size_t i) const { return v[i]; }

    bool same_shape(const Array& o) const { return shape == o.shape; }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    void fill_uniform(Rng& rng, T lo, T hi) {
        for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    }
    void fill_normal(Rng& rng, T mean, T std) {
        for (auto& x : v) x = static_cast<T>(rng.normal(mean, std));
    }

    template <class U>
    Array<U> cast() const {
        Array<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

inline Shape row_major_strides(const Shape& s) {
    Shape st(s.size());
    long long acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[i] = static_cast<int>(acc);
        acc *= s[i];
    }
    return st;
}

// numpy-style trailing-dimension broadcast of two shapes.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const std::string& op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(op + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

}  // namespace amr
