#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "core/common.hpp"
#include "core/rng.hpp"

namespace avdit {

// Plain dense row-major array. No view semantics: every tensor owns its
// buffer, which keeps aliasing and determinism questions out of the autodiff
// layer.
template <class T>
struct Array {
    Shape shape;
    std::vector<T> v;

    Array() = default;
    explicit Array(Shape s) : shape(std::move(s)), v(static_cast<size_t>(avdit::numel(shape)), T(0)) {}
    Array(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
        check_shape(static_cast<int64_t>(v.size()) == avdit::numel(shape),
                    "buffer length does not match shape " + shape_str(shape));
    }

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    static Array zeros(Shape s) { return Array(std::move(s)); }

    static Array full(Shape s, T value) {
        Array a(std::move(s));
        std::fill(a.v.begin(), a.v.end(), value);
        return a;
    }

    static Array randn(Shape s, Rng& rng, double std = 1.0) {
        Array a(std::move(s));
        rng.fill_normal(a.v.data(), a.numel(), 0.0, std);
        return a;
    }

    template <class U>
    Array<U> cast() const {
        Array<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }
};

template <class T>
double max_abs_diff(const Array<T>& a, const Array<T>& b) {
    check_shape(a.shape == b.shape, "max_abs_diff shape mismatch");
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i])));
    return m;
}

}  // namespace avdit
