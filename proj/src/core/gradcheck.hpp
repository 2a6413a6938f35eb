#pragma once

#include <functional>

#include "core/param.hpp"

namespace avdit {

// |g - ghat| / (|g| + |ghat| + delta)
inline double grad_rel_err(double g, double ghat, double delta = 1e-12) {
    return std::abs(g - ghat) / (std::abs(g) + std::abs(ghat) + delta);
}

// Central difference of a scalar objective with respect to one element of a
// parameter. The objective must be a deterministic function of the current
// parameter values.
template <class T>
T finite_diff_at(const std::function<T()>& f, Parameter<T>& p, int64_t idx, T h) {
    check_contract(h > T(0), "finite_diff: step h must be positive");
    check_contract(idx >= 0 && idx < p.value.numel(), "finite_diff: index out of range");
    T saved = p.value.v[static_cast<size_t>(idx)];
    p.value.v[static_cast<size_t>(idx)] = saved + h;
    T fp = f();
    p.value.v[static_cast<size_t>(idx)] = saved - h;
    T fm = f();
    p.value.v[static_cast<size_t>(idx)] = saved;
    return (fp - fm) / (T(2) * h);
}

// Elementwise central-difference gradient for a whole parameter tensor.
template <class T>
Array<T> finite_diff_grad(const std::function<T()>& f, Parameter<T>& p, T h) {
    check_contract(h > T(0), "finite_diff: step h must be positive");
    Array<T> g(p.value.shape);
    for (int64_t i = 0; i < p.value.numel(); ++i) g.v[static_cast<size_t>(i)] = finite_diff_at(f, p, i, h);
    return g;
}

}  // namespace avdit
