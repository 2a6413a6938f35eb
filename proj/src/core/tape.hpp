#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "core/param.hpp"
#include "core/tensor.hpp"

namespace avdit {

template <class T>
class Tape;

// Handle to a tape node.
struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

namespace detail {

template <class T>
using EigenRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

// Walks the output of a permutation in linear order, mapping each output
// position back to its source offset in the input layout.
template <class T, class F>
void permute_walk(const Shape& in_shape, const std::vector<int>& perm, F&& f) {
    const int nd = static_cast<int>(in_shape.size());
    Shape out_shape(nd);
    for (int i = 0; i < nd; ++i) out_shape[i] = in_shape[perm[i]];
    auto in_strides = strides_of(in_shape);
    auto out_strides = strides_of(out_shape);
    const int64_t n = numel(in_shape);
    for (int64_t lin = 0; lin < n; ++lin) {
        int64_t rem = lin;
        int64_t src_off = 0;
        for (int i = 0; i < nd; ++i) {
            int64_t ix = rem / out_strides[i];
            rem %= out_strides[i];
            src_off += ix * in_strides[perm[i]];
        }
        f(src_off, lin);
    }
}

}  // namespace detail

// Reverse-mode autodiff tape. Eager evaluation: each op computes its output
// immediately and records a closure that applies the chain rule. backward()
// walks nodes in exact reverse creation order, which is a valid reverse
// topological order because inputs always precede outputs.
//
// Determinism: all reductions run in fixed index order; matmul delegates to
// Eigen (single-threaded), which is run-to-run deterministic for a given
// build. Identical inputs therefore yield bit-identical outputs.
template <class T>
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- node access ----

    const Shape& shape(Var v) const { return nodes_[v.id].shape; }
    const std::vector<T>& data(Var v) const { return nodes_[v.id].data; }
    Array<T> array(Var v) const { return Array<T>(nodes_[v.id].shape, nodes_[v.id].data); }
    int64_t node_count() const { return static_cast<int64_t>(nodes_.size()); }

    // Gradient of a node after backward(); empty if the node was not reached.
    const std::vector<T>& grad_of(Var v) const { return nodes_[v.id].grad; }

    // ---- leaves ----

    Var leaf(Parameter<T>& p) {
        Var v = push(p.value.shape, p.value.v, grad_enabled_ && p.trainable);
        nodes_[v.id].param = &p;
        if (nodes_[v.id].needs_grad) leaf_ids_.push_back(v.id);
        return v;
    }

    Var constant(const Array<T>& a) { return push(a.shape, a.v, false); }
    Var constant(Array<T>&& a) { return push(std::move(a.shape), std::move(a.v), false); }

    // ---- primitives ----

    Var matmul(Var a, Var b) {
        const Shape& sa = shape(a);
        const Shape& sb = shape(b);
        check_shape(sa.size() >= 2 && sb.size() >= 2,
                    "matmul needs >=2-d operands, got " + shape_str(sa) + " and " + shape_str(sb));
        const int64_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
        const int64_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
        check_shape(k == kb, "matmul inner dims disagree: " + shape_str(sa) + " x " + shape_str(sb));
        const bool shared_b = sb.size() == 2 && sa.size() >= 2;
        int64_t batch = 1;
        if (!shared_b) {
            check_shape(sa.size() == sb.size(), "matmul batch ranks disagree: " + shape_str(sa) +
                                                    " x " + shape_str(sb));
            for (size_t i = 0; i + 2 < sa.size(); ++i) {
                check_shape(sa[i] == sb[i], "matmul batch dims disagree: " + shape_str(sa) + " x " +
                                                shape_str(sb));
                batch *= sa[i];
            }
        } else {
            for (size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
        }
        Shape out_shape(sa);
        out_shape[out_shape.size() - 1] = n;
        std::vector<T> out(static_cast<size_t>(numel(out_shape)));
        using Mat = detail::EigenRM<T>;
        const T* pa = nodes_[a.id].data.data();
        const T* pb = nodes_[b.id].data.data();
        if (shared_b) {
            Eigen::Map<const Mat> A(pa, batch * m, k);
            Eigen::Map<const Mat> B(pb, k, n);
            Eigen::Map<Mat> C(out.data(), batch * m, n);
            C.noalias() = A * B;
        } else {
            for (int64_t i = 0; i < batch; ++i) {
                Eigen::Map<const Mat> A(pa + i * m * k, m, k);
                Eigen::Map<const Mat> B(pb + i * k * n, k, n);
                Eigen::Map<Mat> C(out.data() + i * m * n, m, n);
                C.noalias() = A * B;
            }
        }
        Var o = push(std::move(out_shape), std::move(out), wants(a) || wants(b));
        if (recording(o)) {
            record(o, [a, b, o, m, k, n, batch, shared_b](Tape& t) {
                using Mat = detail::EigenRM<T>;
                const std::vector<T>& g = t.nodes_[o.id].grad;
                const T* pa = t.nodes_[a.id].data.data();
                const T* pb = t.nodes_[b.id].data.data();
                if (t.wants(a)) {
                    std::vector<T>& ga = t.grad_buf(a);
                    if (shared_b) {
                        Eigen::Map<const Mat> G(g.data(), batch * m, n);
                        Eigen::Map<const Mat> B(pb, k, n);
                        Eigen::Map<Mat> GA(ga.data(), batch * m, k);
                        GA.noalias() += G * B.transpose();
                    } else {
                        for (int64_t i = 0; i < batch; ++i) {
                            Eigen::Map<const Mat> G(g.data() + i * m * n, m, n);
                            Eigen::Map<const Mat> B(pb + i * k * n, k, n);
                            Eigen::Map<Mat> GA(ga.data() + i * m * k, m, k);
                            GA.noalias() += G * B.transpose();
                        }
                    }
                }
                if (t.wants(b)) {
                    std::vector<T>& gb = t.grad_buf(b);
                    if (shared_b) {
                        Eigen::Map<const Mat> G(g.data(), batch * m, n);
                        Eigen::Map<const Mat> A(pa, batch * m, k);
                        Eigen::Map<Mat> GB(gb.data(), k, n);
                        GB.noalias() += A.transpose() * G;
                    } else {
                        for (int64_t i = 0; i < batch; ++i) {
                            Eigen::Map<const Mat> G(g.data() + i * m * n, m, n);
                            Eigen::Map<const Mat> A(pa + i * m * k, m, k);
                            Eigen::Map<Mat> GB(gb.data() + i * k * n, k, n);
                            GB.noalias() += A.transpose() * G;
                        }
                    }
                }
            });
        }
        return o;
    }

    Var add(Var a, Var b) { return binary_elemwise(a, b, /*sub=*/false); }
    Var sub(Var a, Var b) { return binary_elemwise(a, b, /*sub=*/true); }

    Var mul(Var a, Var b) {
        check_shape(shape(a) == shape(b), "mul shape mismatch: " + shape_str(shape(a)) + " vs " +
                                              shape_str(shape(b)));
        const auto& da = nodes_[a.id].data;
        const auto& db = nodes_[b.id].data;
        std::vector<T> out(da.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
        Var o = push(shape(a), std::move(out), wants(a) || wants(b));
        if (recording(o)) {
            record(o, [a, b, o](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                if (t.wants(a)) {
                    auto& ga = t.grad_buf(a);
                    const auto& db = t.nodes_[b.id].data;
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * db[i];
                }
                if (t.wants(b)) {
                    auto& gb = t.grad_buf(b);
                    const auto& da = t.nodes_[a.id].data;
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * da[i];
                }
            });
        }
        return o;
    }

    Var scale(Var a, T c) {
        const auto& da = nodes_[a.id].data;
        std::vector<T> out(da.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * c;
        Var o = push(shape(a), std::move(out), wants(a));
        if (recording(o)) {
            record(o, [a, o, c](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                auto& ga = t.grad_buf(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
            });
        }
        return o;
    }

    Var add_scalar(Var a, T c) {
        const auto& da = nodes_[a.id].data;
        std::vector<T> out(da.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] + c;
        Var o = push(shape(a), std::move(out), wants(a));
        if (recording(o)) {
            record(o, [a, o](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                auto& ga = t.grad_buf(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            });
        }
        return o;
    }

    // Multiply a tensor by a single-element tensor (learned gate).
    Var mul_scalar(Var a, Var s) {
        check_shape(numel(shape(s)) == 1, "mul_scalar: gate must have one element, got " +
                                              shape_str(shape(s)));
        const T sv = nodes_[s.id].data[0];
        const auto& da = nodes_[a.id].data;
        std::vector<T> out(da.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * sv;
        Var o = push(shape(a), std::move(out), wants(a) || wants(s));
        if (recording(o)) {
            record(o, [a, s, o, sv](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                if (t.wants(a)) {
                    auto& ga = t.grad_buf(a);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
                }
                if (t.wants(s)) {
                    const auto& da = t.nodes_[a.id].data;
                    T acc = T(0);
                    for (size_t i = 0; i < g.size(); ++i) acc += g[i] * da[i];
                    t.grad_buf(s)[0] += acc;
                }
            });
        }
        return o;
    }

    // x + b where b has shape [last dim of x]; the only implicit broadcast.
    Var bias_add(Var a, Var b) {
        const Shape& sa = shape(a);
        const Shape& sb = shape(b);
        check_shape(sb.size() == 1 && sb[0] == sa.back(),
                    "bias_add: bias " + shape_str(sb) + " does not match last dim of " +
                        shape_str(sa));
        const int64_t d = sb[0];
        const int64_t rows = numel(sa) / d;
        const auto& da = nodes_[a.id].data;
        const auto& db = nodes_[b.id].data;
        std::vector<T> out(da.size());
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < d; ++j) out[r * d + j] = da[r * d + j] + db[j];
        Var o = push(sa, std::move(out), wants(a) || wants(b));
        if (recording(o)) {
            record(o, [a, b, o, rows, d](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                if (t.wants(a)) {
                    auto& ga = t.grad_buf(a);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (t.wants(b)) {
                    auto& gb = t.grad_buf(b);
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                }
            });
        }
        return o;
    }

    // gelu, tanh approximation
    Var gelu(Var a) {
        const auto& da = nodes_[a.id].data;
        std::vector<T> out(da.size());
        for (size_t i = 0; i < out.size(); ++i) {
            double x = static_cast<double>(da[i]);
            double u = detail::kGeluC0 * (x + detail::kGeluC1 * x * x * x);
            out[i] = static_cast<T>(0.5 * x * (1.0 + std::tanh(u)));
        }
        Var o = push(shape(a), std::move(out), wants(a));
        if (recording(o)) {
            record(o, [a, o](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                const auto& da = t.nodes_[a.id].data;
                auto& ga = t.grad_buf(a);
                for (size_t i = 0; i < g.size(); ++i) {
                    double x = static_cast<double>(da[i]);
                    double u = detail::kGeluC0 * (x + detail::kGeluC1 * x * x * x);
                    double th = std::tanh(u);
                    double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * detail::kGeluC0 *
                                                      (1.0 + 3.0 * detail::kGeluC1 * x * x);
                    ga[i] += g[i] * static_cast<T>(d);
                }
            });
        }
        return o;
    }

    Var exp(Var a) {
        const auto& da = nodes_[a.id].data;
        std::vector<T> out(da.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(da[i]);
        Var o = push(shape(a), std::move(out), wants(a));
        if (recording(o)) {
            record(o, [a, o](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                const auto& dout = t.nodes_[o.id].data;
                auto& ga = t.grad_buf(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dout[i];
            });
        }
        return o;
    }

    // Numerically stable softmax over the last axis.
    Var softmax_lastdim(Var a) {
        const Shape& sa = shape(a);
        check_shape(!sa.empty() && sa.back() >= 1,
                    "softmax_lastdim: empty last dim in " + shape_str(sa));
        const int64_t d = sa.back();
        const int64_t rows = numel(sa) / d;
        const auto& da = nodes_[a.id].data;
        std::vector<T> out(da.size());
        for (int64_t r = 0; r < rows; ++r) {
            const T* x = da.data() + r * d;
            T* y = out.data() + r * d;
            T mx = x[0];
            for (int64_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
            T sum = T(0);
            for (int64_t j = 0; j < d; ++j) {
                y[j] = std::exp(x[j] - mx);
                sum += y[j];
            }
            T inv = T(1) / sum;
            for (int64_t j = 0; j < d; ++j) y[j] *= inv;
        }
        Var o = push(sa, std::move(out), wants(a));
        if (recording(o)) {
            record(o, [a, o, rows, d](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                const auto& y = t.nodes_[o.id].data;
                auto& ga = t.grad_buf(a);
                for (int64_t r = 0; r < rows; ++r) {
                    const T* gr = g.data() + r * d;
                    const T* yr = y.data() + r * d;
                    T dot = T(0);
                    for (int64_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
                    T* gar = ga.data() + r * d;
                    for (int64_t j = 0; j < d; ++j) gar[j] += yr[j] * (gr[j] - dot);
                }
            });
        }
        return o;
    }

    // Zero-mean unit-variance normalization over the last axis, no affine.
    Var layer_norm(Var a, T eps) {
        const Shape& sa = shape(a);
        check_shape(!sa.empty() && sa.back() >= 2,
                    "layer_norm: normalized axis must have length >= 2, got " + shape_str(sa));
        const int64_t d = sa.back();
        const int64_t rows = numel(sa) / d;
        const auto& da = nodes_[a.id].data;
        std::vector<T> out(da.size());
        std::vector<T> inv_std(static_cast<size_t>(rows));
        for (int64_t r = 0; r < rows; ++r) {
            const T* x = da.data() + r * d;
            T mu = T(0);
            for (int64_t j = 0; j < d; ++j) mu += x[j];
            mu /= static_cast<T>(d);
            T var = T(0);
            for (int64_t j = 0; j < d; ++j) {
                T c = x[j] - mu;
                var += c * c;
            }
            var /= static_cast<T>(d);
            T inv = T(1) / std::sqrt(var + eps);
            inv_std[r] = inv;
            T* y = out.data() + r * d;
            for (int64_t j = 0; j < d; ++j) y[j] = (x[j] - mu) * inv;
        }
        Var o = push(sa, std::move(out), wants(a));
        if (recording(o)) {
            record(o, [a, o, rows, d, inv = std::move(inv_std)](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                const auto& y = t.nodes_[o.id].data;
                auto& ga = t.grad_buf(a);
                for (int64_t r = 0; r < rows; ++r) {
                    const T* gr = g.data() + r * d;
                    const T* yr = y.data() + r * d;
                    T mg = T(0), mgy = T(0);
                    for (int64_t j = 0; j < d; ++j) {
                        mg += gr[j];
                        mgy += gr[j] * yr[j];
                    }
                    mg /= static_cast<T>(d);
                    mgy /= static_cast<T>(d);
                    T* gar = ga.data() + r * d;
                    for (int64_t j = 0; j < d; ++j)
                        gar[j] += inv[r] * (gr[j] - mg - yr[j] * mgy);
                }
            });
        }
        return o;
    }

    Var mean_axis(Var a, int axis) {
        const Shape& sa = shape(a);
        check_shape(axis >= 0 && axis < static_cast<int>(sa.size()),
                    "mean_axis: axis out of range for " + shape_str(sa));
        const int64_t n_ax = sa[axis];
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= sa[i];
        for (size_t i = axis + 1; i < sa.size(); ++i) inner *= sa[i];
        Shape so;
        for (int i = 0; i < static_cast<int>(sa.size()); ++i)
            if (i != axis) so.push_back(sa[i]);
        if (so.empty()) so.push_back(1);
        const auto& da = nodes_[a.id].data;
        std::vector<T> out(static_cast<size_t>(outer * inner), T(0));
        for (int64_t ou = 0; ou < outer; ++ou)
            for (int64_t x = 0; x < n_ax; ++x)
                for (int64_t in = 0; in < inner; ++in)
                    out[ou * inner + in] += da[(ou * n_ax + x) * inner + in];
        const T invn = T(1) / static_cast<T>(n_ax);
        for (auto& v : out) v *= invn;
        Var o = push(std::move(so), std::move(out), wants(a));
        if (recording(o)) {
            record(o, [a, o, outer, inner, n_ax, invn](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                auto& ga = t.grad_buf(a);
                for (int64_t ou = 0; ou < outer; ++ou)
                    for (int64_t x = 0; x < n_ax; ++x)
                        for (int64_t in = 0; in < inner; ++in)
                            ga[(ou * n_ax + x) * inner + in] += g[ou * inner + in] * invn;
            });
        }
        return o;
    }

    Var mean_all(Var a) {
        const auto& da = nodes_[a.id].data;
        T acc = T(0);
        for (T x : da) acc += x;
        const int64_t n = static_cast<int64_t>(da.size());
        std::vector<T> out{acc / static_cast<T>(n)};
        Var o = push(Shape{1}, std::move(out), wants(a));
        if (recording(o)) {
            record(o, [a, o, n](Tape& t) {
                const T g = t.nodes_[o.id].grad[0] / static_cast<T>(n);
                auto& ga = t.grad_buf(a);
                for (auto& v : ga) v += g;
            });
        }
        return o;
    }

    Var reshape(Var a, Shape s) {
        check_shape(numel(s) == numel(shape(a)),
                    "reshape: " + shape_str(shape(a)) + " -> " + shape_str(s) +
                        " changes element count");
        std::vector<T> out = nodes_[a.id].data;
        Var o = push(std::move(s), std::move(out), wants(a));
        if (recording(o)) {
            record(o, [a, o](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                auto& ga = t.grad_buf(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            });
        }
        return o;
    }

    Var permute(Var a, std::vector<int> perm) {
        const Shape& sa = shape(a);
        check_shape(perm.size() == sa.size(), "permute: rank mismatch for " + shape_str(sa));
        std::vector<bool> seen(perm.size(), false);
        for (int p : perm) {
            check_shape(p >= 0 && p < static_cast<int>(perm.size()) && !seen[p],
                        "permute: invalid permutation");
            seen[p] = true;
        }
        const Shape in_shape = sa;  // copy: push() below may reallocate nodes_
        Shape so(in_shape.size());
        for (size_t i = 0; i < perm.size(); ++i) so[i] = in_shape[perm[i]];
        std::vector<T> out(static_cast<size_t>(numel(so)));
        {
            const T* src = nodes_[a.id].data.data();
            T* dst = out.data();
            detail::permute_walk<T>(in_shape, perm,
                                    [&](int64_t src_off, int64_t lin) { dst[lin] = src[src_off]; });
        }
        Var o = push(std::move(so), std::move(out), wants(a));
        if (recording(o)) {
            record(o, [a, o, perm, in_shape](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                auto& ga = t.grad_buf(a);
                detail::permute_walk<T>(in_shape, perm, [&](int64_t src_off, int64_t lin) {
                    ga[src_off] += g[lin];
                });
            });
        }
        return o;
    }

    Var concat(Var a, Var b, int axis) {
        const Shape& sa = shape(a);
        const Shape& sb = shape(b);
        check_shape(sa.size() == sb.size(), "concat: rank mismatch " + shape_str(sa) + " vs " +
                                                shape_str(sb));
        check_shape(axis >= 0 && axis < static_cast<int>(sa.size()), "concat: bad axis");
        for (size_t i = 0; i < sa.size(); ++i)
            if (static_cast<int>(i) != axis)
                check_shape(sa[i] == sb[i], "concat: non-axis dims disagree " + shape_str(sa) +
                                                " vs " + shape_str(sb));
        Shape so(sa);
        so[axis] = sa[axis] + sb[axis];
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= sa[i];
        for (size_t i = axis + 1; i < sa.size(); ++i) inner *= sa[i];
        const int64_t na = sa[axis] * inner, nb = sb[axis] * inner;
        const auto& da = nodes_[a.id].data;
        const auto& db = nodes_[b.id].data;
        std::vector<T> out(static_cast<size_t>(numel(so)));
        for (int64_t ou = 0; ou < outer; ++ou) {
            std::copy(da.begin() + ou * na, da.begin() + (ou + 1) * na,
                      out.begin() + ou * (na + nb));
            std::copy(db.begin() + ou * nb, db.begin() + (ou + 1) * nb,
                      out.begin() + ou * (na + nb) + na);
        }
        Var o = push(std::move(so), std::move(out), wants(a) || wants(b));
        if (recording(o)) {
            record(o, [a, b, o, outer, na, nb](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                if (t.wants(a)) {
                    auto& ga = t.grad_buf(a);
                    for (int64_t ou = 0; ou < outer; ++ou)
                        for (int64_t i = 0; i < na; ++i)
                            ga[ou * na + i] += g[ou * (na + nb) + i];
                }
                if (t.wants(b)) {
                    auto& gb = t.grad_buf(b);
                    for (int64_t ou = 0; ou < outer; ++ou)
                        for (int64_t i = 0; i < nb; ++i)
                            gb[ou * nb + i] += g[ou * (na + nb) + na + i];
                }
            });
        }
        return o;
    }

    std::vector<Var> split(Var a, int axis, const std::vector<int64_t>& sizes) {
        const Shape& sa = shape(a);
        check_shape(axis >= 0 && axis < static_cast<int>(sa.size()), "split: bad axis");
        int64_t total = 0;
        for (int64_t s : sizes) total += s;
        check_shape(total == sa[axis], "split: sizes do not cover axis of " + shape_str(sa));
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= sa[i];
        for (size_t i = axis + 1; i < sa.size(); ++i) inner *= sa[i];
        const int64_t row = sa[axis] * inner;
        const auto& da = nodes_[a.id].data;
        std::vector<Var> outs;
        int64_t off = 0;
        for (int64_t s : sizes) {
            Shape so(sa);
            so[axis] = s;
            std::vector<T> out(static_cast<size_t>(outer * s * inner));
            for (int64_t ou = 0; ou < outer; ++ou)
                std::copy(da.begin() + ou * row + off * inner,
                          da.begin() + ou * row + (off + s) * inner,
                          out.begin() + ou * s * inner);
            Var o = push(std::move(so), std::move(out), wants(a));
            if (recording(o)) {
                const int64_t off_c = off, s_c = s;
                record(o, [a, o, outer, inner, row, off_c, s_c](Tape& t) {
                    const auto& g = t.nodes_[o.id].grad;
                    auto& ga = t.grad_buf(a);
                    for (int64_t ou = 0; ou < outer; ++ou)
                        for (int64_t i = 0; i < s_c * inner; ++i)
                            ga[ou * row + off_c * inner + i] += g[ou * s_c * inner + i];
                });
            }
            outs.push_back(o);
            off += s;
        }
        return outs;
    }

    // Repeat a length-1 axis n times.
    Var broadcast_axis(Var a, int axis, int64_t n) {
        const Shape& sa = shape(a);
        check_shape(axis >= 0 && axis < static_cast<int>(sa.size()), "broadcast_axis: bad axis");
        check_shape(sa[axis] == 1, "broadcast_axis: axis must have length 1 in " + shape_str(sa));
        Shape so(sa);
        so[axis] = n;
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= sa[i];
        for (size_t i = axis + 1; i < sa.size(); ++i) inner *= sa[i];
        const auto& da = nodes_[a.id].data;
        std::vector<T> out(static_cast<size_t>(outer * n * inner));
        for (int64_t ou = 0; ou < outer; ++ou)
            for (int64_t r = 0; r < n; ++r)
                std::copy(da.begin() + ou * inner, da.begin() + (ou + 1) * inner,
                          out.begin() + (ou * n + r) * inner);
        Var o = push(std::move(so), std::move(out), wants(a));
        if (recording(o)) {
            record(o, [a, o, outer, inner, n](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                auto& ga = t.grad_buf(a);
                for (int64_t ou = 0; ou < outer; ++ou)
                    for (int64_t r = 0; r < n; ++r)
                        for (int64_t i = 0; i < inner; ++i)
                            ga[ou * inner + i] += g[(ou * n + r) * inner + i];
            });
        }
        return o;
    }

    // ---- helpers built on primitives ----

    Var linear(Var x, Parameter<T>& w, Parameter<T>* b) {
        Var y = matmul(x, leaf(w));
        if (b) y = bias_add(y, leaf(*b));
        return y;
    }

    // layer_norm(x) * (1 + scale) + shift, scale/shift shaped [N, D] against
    // tokens [N, L, D].
    Var modulate(Var x, Var shift, Var scale, T eps) {
        const Shape& sx = shape(x);
        const Shape& ss = shape(scale);
        check_shape(sx.size() == 3 && ss.size() == 2 && shape(shift).size() == 2,
                    "modulate: expected tokens [N,L,D] with [N,D] shift/scale");
        check_shape(ss[1] == sx[2] && ss[0] == sx[0],
                    "modulate: shift/scale " + shape_str(ss) + " does not match tokens " +
                        shape_str(sx));
        const int64_t n = sx[0], l = sx[1], d = sx[2];
        Var y = layer_norm(x, eps);
        Var sc = broadcast_axis(reshape(add_scalar(scale, T(1)), {n, 1, d}), 1, l);
        Var sh = broadcast_axis(reshape(shift, {n, 1, d}), 1, l);
        return add(mul(y, sc), sh);
    }

    // Mean squared error against a constant target.
    Var mse(Var pred, Var target) {
        check_shape(shape(pred) == shape(target), "mse shape mismatch");
        Var d = sub(pred, target);
        return mean_all(mul(d, d));
    }

    // ---- backward ----

    void backward(Var loss) {
        check_contract(loss.valid() && numel(shape(loss)) == 1,
                       "backward: loss must be a scalar tensor");
        check_contract(grad_enabled_, "backward: tape was created with gradients disabled");
        grad_buf(loss)[0] = T(1);
        for (int32_t i = loss.id; i >= 0; --i) {
            Node& nd = nodes_[i];
            if (nd.backward && !nd.grad.empty()) nd.backward(*this);
        }
        for (int32_t id : leaf_ids_) {
            Node& nd = nodes_[id];
            if (!nd.grad.empty() && nd.param)
                nd.param->accumulate_grad(nd.grad.data(), static_cast<int64_t>(nd.grad.size()));
        }
    }

private:
    struct Node {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;
        std::function<void(Tape&)> backward;
        Parameter<T>* param = nullptr;
        bool needs_grad = false;
    };

    bool wants(Var v) const { return nodes_[v.id].needs_grad; }
    bool recording(Var v) const { return grad_enabled_ && nodes_[v.id].needs_grad; }

    std::vector<T>& grad_buf(Var v) {
        Node& n = nodes_[v.id];
        if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
        return n.grad;
    }

    Var push(Shape s, std::vector<T> data, bool needs_grad) {
        Node n;
        n.shape = std::move(s);
        n.data = std::move(data);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int32_t>(nodes_.size() - 1)};
    }

    void record(Var v, std::function<void(Tape&)> fn) { nodes_[v.id].backward = std::move(fn); }

    Var binary_elemwise(Var a, Var b, bool is_sub) {
        check_shape(shape(a) == shape(b), std::string(is_sub ? "sub" : "add") +
                                              " shape mismatch: " + shape_str(shape(a)) + " vs " +
                                              shape_str(shape(b)));
        const auto& da = nodes_[a.id].data;
        const auto& db = nodes_[b.id].data;
        std::vector<T> out(da.size());
        if (is_sub)
            for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
        else
            for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
        Var o = push(shape(a), std::move(out), wants(a) || wants(b));
        if (recording(o)) {
            record(o, [a, b, o, is_sub](Tape& t) {
                const auto& g = t.nodes_[o.id].grad;
                if (t.wants(a)) {
                    auto& ga = t.grad_buf(a);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (t.wants(b)) {
                    auto& gb = t.grad_buf(b);
                    if (is_sub)
                        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                    else
                        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                }
            });
        }
        return o;
    }

    std::vector<Node> nodes_;
    std::vector<int32_t> leaf_ids_;
    bool grad_enabled_;
};

}  // namespace avdit
