#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "dronetune/errors.hpp"
#include "dronetune/kernels.hpp"
#include "dronetune/rng.hpp"

namespace dronetune {

// Reverse-mode autodiff over dense row-major tensors. A Tensor is a cheap
// handle onto a tape node; ops build the DAG, backward() walks it once in
// reverse topological order. float for training, double for gradient
// verification. A tape and its tensors belong to one thread during a
// forward/backward pass; parallelism lives inside the kernels and above the
// module, never across a single graph.

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline Shape strides_of(const Shape& s) {
    Shape st(s.size());
    std::size_t acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad; // leaf accumulation, lazily sized
    std::vector<T> cot;  // per-backward-call scratch cotangent
    bool requires_grad = false;
    bool needs_grad = false; // this node or anything under it requires grad
    std::string_view op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return values.size(); }
};

} // namespace detail

template <typename T>
class Tensor {
public:
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;

    static Tensor zeros(Shape shape) {
        std::size_t n = detail::numel(shape);
        return from_data(std::vector<T>(n, T(0)), std::move(shape));
    }

    static Tensor full(Shape shape, T v) {
        std::size_t n = detail::numel(shape);
        return from_data(std::vector<T>(n, v), std::move(shape));
    }

    static Tensor scalar(T v) { return from_data({v}, Shape{1}); }

    static Tensor from_data(std::vector<T> data, Shape shape) {
        if (data.size() != detail::numel(shape))
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + detail::shape_str(shape));
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        n->values = std::move(data);
        return attach(std::move(n));
    }

    static Tensor attach(NodePtr n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    std::size_t size() const { return n_->values.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape[i]; }
    std::size_t rank() const { return n_->shape.size(); }

    std::vector<T>& values() { return n_->values; }
    const std::vector<T>& values() const { return n_->values; }
    std::span<T> data() { return n_->values; }
    std::span<const T> data() const { return n_->values; }

    T item() const {
        if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
        return n_->values[0];
    }

    bool requires_grad() const { return n_->requires_grad; }

    /// Marks a leaf as a differentiable parameter. Only valid on leaves.
    Tensor& set_requires_grad(bool b = true) {
        if (n_->backward_fn)
            throw std::invalid_argument("requires_grad can only be set on leaf tensors");
        n_->requires_grad = b;
        n_->needs_grad = b;
        return *this;
    }

    bool has_grad() const { return !n_->grad.empty(); }

    std::vector<T>& grad() {
        if (n_->grad.empty()) n_->grad.assign(size(), T(0));
        return n_->grad;
    }

    const std::vector<T>& grad() const { return const_cast<Tensor*>(this)->grad(); }

    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    /// Accumulates d(this)/d(leaf) into each leaf's grad. Repeated calls add.
    void backward() const;

    NodePtr node() const { return n_; }

    bool all_finite() const {
        for (T v : n_->values)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    NodePtr n_;
};

// Builds an op node. Inputs are linked (and the backward fn kept) only when
// some input participates in gradient flow, so eval-mode graphs stay flat.
template <typename T>
Tensor<T> make_op(std::string_view name, Shape shape, std::vector<T> values,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(detail::Node<T>&)> backward) {
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->op = name;
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.node()->needs_grad;
    if (needs) {
        n->needs_grad = true;
        n->inputs.reserve(inputs.size());
        for (const auto& t : inputs) n->inputs.push_back(t.node());
        n->backward_fn = std::move(backward);
    }
    return Tensor<T>::attach(std::move(n));
}

template <typename T>
void Tensor<T>::backward() const {
    if (!n_ || size() != 1)
        throw std::invalid_argument("backward() requires a scalar tensor");
    if (!n_->needs_grad) return;

    // Post-order DFS over needs_grad inputs; each node visited exactly once.
    std::vector<detail::Node<T>*> order;
    std::unordered_set<detail::Node<T>*> seen;
    struct Frame {
        detail::Node<T>* node;
        std::size_t next = 0;
    };
    std::vector<Frame> stack;
    stack.push_back({n_.get()});
    seen.insert(n_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->inputs.size()) {
            detail::Node<T>* in = f.node->inputs[f.next++].get();
            if (in->needs_grad && !seen.count(in)) {
                seen.insert(in);
                stack.push_back({in});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    for (auto* nd : order) nd->cot.assign(nd->size(), T(0));
    n_->cot[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
    for (auto* nd : order) {
        if (!nd->requires_grad) continue;
        if (nd->grad.empty()) nd->grad.assign(nd->size(), T(0));
        for (std::size_t i = 0; i < nd->size(); ++i) nd->grad[i] += nd->cot[i];
    }
}

// ---------------------------------------------------------------------------
// Raw array helpers shared by forwards and backward closures.
// ---------------------------------------------------------------------------

namespace detail {

// Right-aligned broadcast target shape of a and b.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("shapes not broadcastable: " + shape_str(a) + " vs " +
                                        shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

inline bool is_broadcastable_to(const Shape& from, const Shape& to) {
    if (from.size() > to.size()) return false;
    for (std::size_t i = 0; i < from.size(); ++i) {
        std::size_t df = from[from.size() - 1 - i];
        std::size_t dt = to[to.size() - 1 - i];
        if (df != dt && df != 1) return false;
    }
    return true;
}

// Strides of `s` right-aligned into rank r, 0 on broadcast axes.
inline Shape broadcast_strides(const Shape& s, std::size_t r) {
    Shape st = strides_of(s);
    Shape out(r, 0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::size_t axis = r - s.size() + i;
        out[axis] = (s[i] == 1) ? 0 : st[i];
    }
    return out;
}

// Walks out_shape in row-major order calling body(out_i, a_off, b_off).
template <typename F>
void for_each_bcast2(const Shape& out_shape, const Shape& sa, const Shape& sb, F&& body) {
    std::size_t n = numel(out_shape);
    std::size_t r = out_shape.size();
    if (n == 0) return;
    std::vector<std::size_t> idx(r, 0);
    std::size_t ao = 0, bo = 0;
    for (std::size_t i = 0;; ++i) {
        body(i, ao, bo);
        if (i + 1 == n) break;
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ao += sa[d];
            bo += sb[d];
            if (idx[d] < out_shape[d]) break;
            ao -= sa[d] * out_shape[d];
            bo -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

// Accumulates src (laid out as out_shape) into dst (shape target, broadcastable
// to out_shape): the grad reduction for broadcasting ops.
template <typename T>
void reduce_into(const T* src, const Shape& out_shape, T* dst, const Shape& target) {
    Shape st = broadcast_strides(target, out_shape.size());
    Shape unit(out_shape.size(), 0);
    for_each_bcast2(out_shape, st, unit,
                    [&](std::size_t i, std::size_t doff, std::size_t) { dst[doff] += src[i]; });
}

// out[i] = src[perm-mapped index]; copy-based transpose.
template <typename T>
void permute_copy(const T* src, const Shape& src_shape, const std::vector<std::size_t>& perm,
                  T* dst) {
    Shape src_strides = strides_of(src_shape);
    Shape out_shape(perm.size());
    Shape walk(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out_shape[i] = src_shape[perm[i]];
        walk[i] = src_strides[perm[i]];
    }
    Shape unit(perm.size(), 0);
    for_each_bcast2(out_shape, walk, unit,
                    [&](std::size_t i, std::size_t soff, std::size_t) { dst[i] = src[soff]; });
}

template <typename T>
void add_into(T* dst, const T* src, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops (broadcasting along size-1 axes only).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
    std::vector<T> out(detail::numel(out_shape));
    if (a.shape() == b.shape()) {
        const auto& av = a.values();
        const auto& bv = b.values();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    } else {
        Shape sa = detail::broadcast_strides(a.shape(), out_shape.size());
        Shape sb = detail::broadcast_strides(b.shape(), out_shape.size());
        const T* ap = a.values().data();
        const T* bp = b.values().data();
        detail::for_each_bcast2(out_shape, sa, sb,
                                [&](std::size_t i, std::size_t ao, std::size_t bo) {
                                    out[i] = ap[ao] + bp[bo];
                                });
    }
    return make_op<T>("add", out_shape, std::move(out), {a, b}, [out_shape](detail::Node<T>& n) {
        auto& ga = *n.inputs[0];
        auto& gb = *n.inputs[1];
        if (ga.needs_grad) detail::reduce_into(n.cot.data(), out_shape, ga.cot.data(), ga.shape);
        if (gb.needs_grad) detail::reduce_into(n.cot.data(), out_shape, gb.cot.data(), gb.shape);
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
    std::vector<T> out(detail::numel(out_shape));
    Shape sa = detail::broadcast_strides(a.shape(), out_shape.size());
    Shape sb = detail::broadcast_strides(b.shape(), out_shape.size());
    const T* ap = a.values().data();
    const T* bp = b.values().data();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = ap[i] * bp[i];
    } else {
        detail::for_each_bcast2(out_shape, sa, sb,
                                [&](std::size_t i, std::size_t ao, std::size_t bo) {
                                    out[i] = ap[ao] * bp[bo];
                                });
    }
    return make_op<T>("mul", out_shape, std::move(out), {a, b},
                      [out_shape, sa, sb](detail::Node<T>& n) {
                          auto& na = *n.inputs[0];
                          auto& nb = *n.inputs[1];
                          const T* ap = na.values.data();
                          const T* bp = nb.values.data();
                          detail::for_each_bcast2(
                              out_shape, sa, sb, [&](std::size_t i, std::size_t ao, std::size_t bo) {
                                  if (na.needs_grad) na.cot[ao] += n.cot[i] * bp[bo];
                                  if (nb.needs_grad) nb.cot[bo] += n.cot[i] * ap[ao];
                              });
                      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * av[i];
    return make_op<T>("scale", a.shape(), std::move(out), {a}, [c](detail::Node<T>& n) {
        auto& na = *n.inputs[0];
        for (std::size_t i = 0; i < n.size(); ++i) na.cot[i] += c * n.cot[i];
    });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, neg(b));
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Shape ops.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (detail::numel(shape) != a.size())
        throw std::invalid_argument("reshape " + detail::shape_str(a.shape()) + " -> " +
                                    detail::shape_str(shape) + ": element count differs");
    std::vector<T> out = a.values();
    return make_op<T>("reshape", std::move(shape), std::move(out), {a}, [](detail::Node<T>& n) {
        detail::add_into(n.inputs[0]->cot.data(), n.cot.data(), n.size());
    });
}

/// Collapses all axes after the first: [B, ...] -> [B, prod(...)].
template <typename T>
Tensor<T> flatten(const Tensor<T>& a) {
    if (a.rank() < 1) throw std::invalid_argument("flatten requires rank >= 1");
    return reshape(a, {a.dim(0), a.size() / a.dim(0)});
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, std::vector<std::size_t> perm) {
    if (perm.size() != a.rank()) throw std::invalid_argument("permute: rank mismatch");
    std::vector<bool> hit(perm.size(), false);
    for (std::size_t p : perm) {
        if (p >= perm.size() || hit[p]) throw std::invalid_argument("permute: invalid axes");
        hit[p] = true;
    }
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.dim(perm[i]);
    std::vector<T> out(a.size());
    detail::permute_copy(a.values().data(), a.shape(), perm, out.data());
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    return make_op<T>("permute", std::move(out_shape), std::move(out), {a},
                      [inv](detail::Node<T>& n) {
                          std::vector<T> tmp(n.size());
                          detail::permute_copy(n.cot.data(), n.shape, inv, tmp.data());
                          detail::add_into(n.inputs[0]->cot.data(), tmp.data(), n.size());
                      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= a.rank()) throw std::invalid_argument("slice: axis out of range");
    if (start + len > a.dim(axis)) throw std::invalid_argument("slice: range out of bounds");
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    std::size_t src_axis = a.dim(axis);
    std::vector<T> out(outer * len * inner);
    const T* src = a.values().data();
    for (std::size_t o = 0; o < outer; ++o) {
        const T* s = src + (o * src_axis + start) * inner;
        T* d = out.data() + o * len * inner;
        std::copy(s, s + len * inner, d);
    }
    return make_op<T>("slice", std::move(out_shape), std::move(out), {a},
                      [outer, inner, len, start, src_axis](detail::Node<T>& n) {
                          T* dst = n.inputs[0]->cot.data();
                          const T* g = n.cot.data();
                          for (std::size_t o = 0; o < outer; ++o) {
                              T* d = dst + (o * src_axis + start) * inner;
                              const T* s = g + o * len * inner;
                              for (std::size_t i = 0; i < len * inner; ++i) d[i] += s[i];
                          }
                      });
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
    if (a.rank() != b.rank() || axis >= a.rank())
        throw std::invalid_argument("concat: rank mismatch or bad axis");
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis && a.dim(i) != b.dim(i))
            throw std::invalid_argument("concat: shapes differ off-axis: " +
                                        detail::shape_str(a.shape()) + " vs " +
                                        detail::shape_str(b.shape()));
    Shape out_shape = a.shape();
    out_shape[axis] += b.dim(axis);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    std::size_t la = a.dim(axis), lb = b.dim(axis);
    std::vector<T> out(detail::numel(out_shape));
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy(pa + o * la * inner, pa + (o + 1) * la * inner,
                  out.data() + o * (la + lb) * inner);
        std::copy(pb + o * lb * inner, pb + (o + 1) * lb * inner,
                  out.data() + (o * (la + lb) + la) * inner);
    }
    return make_op<T>("concat", std::move(out_shape), std::move(out), {a, b},
                      [outer, inner, la, lb](detail::Node<T>& n) {
                          auto& na = *n.inputs[0];
                          auto& nb = *n.inputs[1];
                          const T* g = n.cot.data();
                          for (std::size_t o = 0; o < outer; ++o) {
                              const T* ga = g + o * (la + lb) * inner;
                              const T* gb = ga + la * inner;
                              if (na.needs_grad)
                                  for (std::size_t i = 0; i < la * inner; ++i)
                                      na.cot[o * la * inner + i] += ga[i];
                              if (nb.needs_grad)
                                  for (std::size_t i = 0; i < lb * inner; ++i)
                                      nb.cot[o * lb * inner + i] += gb[i];
                          }
                      });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, Shape shape) {
    if (!detail::is_broadcastable_to(a.shape(), shape))
        throw std::invalid_argument("broadcast_to: " + detail::shape_str(a.shape()) +
                                    " not broadcastable to " + detail::shape_str(shape));
    Shape sa = detail::broadcast_strides(a.shape(), shape.size());
    Shape unit(shape.size(), 0);
    std::vector<T> out(detail::numel(shape));
    const T* ap = a.values().data();
    detail::for_each_bcast2(shape, sa, unit,
                            [&](std::size_t i, std::size_t ao, std::size_t) { out[i] = ap[ao]; });
    Shape out_shape = shape;
    return make_op<T>("broadcast_to", std::move(shape), std::move(out), {a},
                      [out_shape](detail::Node<T>& n) {
                          detail::reduce_into(n.cot.data(), out_shape, n.inputs[0]->cot.data(),
                                              n.inputs[0]->shape);
                      });
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (T v : a.values()) acc += v;
    return make_op<T>("sum", {1}, {acc}, {a}, [](detail::Node<T>& n) {
        auto& na = *n.inputs[0];
        T g = n.cot[0];
        for (std::size_t i = 0; i < na.size(); ++i) na.cot[i] += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
    T acc = T(0);
    for (T v : a.values()) acc += v;
    T inv = T(1) / static_cast<T>(a.size());
    return make_op<T>("mean", {1}, {acc * inv}, {a}, [inv](detail::Node<T>& n) {
        auto& na = *n.inputs[0];
        T g = n.cot[0] * inv;
        for (std::size_t i = 0; i < na.size(); ++i) na.cot[i] += g;
    });
}

// ---------------------------------------------------------------------------
// Nonlinearities.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
    return make_op<T>("relu", a.shape(), std::move(out), {a}, [](detail::Node<T>& n) {
        auto& na = *n.inputs[0];
        for (std::size_t i = 0; i < n.size(); ++i)
            if (na.values[i] > T(0)) na.cot[i] += n.cot[i];
    });
}

/// Softmax along `axis` (negative counts from the end), max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, long axis = -1) {
    long r = static_cast<long>(a.rank());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("softmax: axis out of range");
    std::size_t ax = static_cast<std::size_t>(axis);
    std::size_t outer = 1, inner = 1, len = a.dim(ax);
    for (std::size_t i = 0; i < ax; ++i) outer *= a.dim(i);
    for (std::size_t i = ax + 1; i < a.rank(); ++i) inner *= a.dim(i);
    std::vector<T> out(a.size());
    const T* src = a.values().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const T* s = src + o * len * inner + in;
            T* d = out.data() + o * len * inner + in;
            T mx = s[0];
            for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, s[j * inner]);
            T total = T(0);
            for (std::size_t j = 0; j < len; ++j) {
                T e = std::exp(s[j * inner] - mx);
                d[j * inner] = e;
                total += e;
            }
            T invt = T(1) / total;
            for (std::size_t j = 0; j < len; ++j) d[j * inner] *= invt;
        }
    }
    return make_op<T>("softmax", a.shape(), std::move(out), {a},
                      [outer, inner, len](detail::Node<T>& n) {
                          auto& na = *n.inputs[0];
                          const T* y = n.values.data();
                          const T* g = n.cot.data();
                          for (std::size_t o = 0; o < outer; ++o) {
                              for (std::size_t in = 0; in < inner; ++in) {
                                  std::size_t base = o * len * inner + in;
                                  T dot = T(0);
                                  for (std::size_t j = 0; j < len; ++j)
                                      dot += g[base + j * inner] * y[base + j * inner];
                                  for (std::size_t j = 0; j < len; ++j)
                                      na.cot[base + j * inner] +=
                                          y[base + j * inner] * (g[base + j * inner] - dot);
                              }
                          }
                      });
}

/// Inverted dropout: scales kept activations by 1/(1-p) in train mode so
/// eval is the identity (and returns the input unchanged).
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double p, bool train, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw std::invalid_argument("dropout: p must lie in [0,1), got " + std::to_string(p));
    if (!train || p == 0.0) return a;
    T scale_keep = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(a.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.uniform() >= p ? scale_keep : T(0);
    std::vector<T> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * mask[i];
    return make_op<T>("dropout", a.shape(), std::move(out), {a},
                      [mask = std::move(mask)](detail::Node<T>& n) {
                          auto& na = *n.inputs[0];
                          for (std::size_t i = 0; i < n.size(); ++i)
                              na.cot[i] += n.cot[i] * mask[i];
                      });
}

// ---------------------------------------------------------------------------
// Matrix multiply: [..., m, k] x [..., k, n] with equal leading dims.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank())
        throw std::invalid_argument("matmul: ranks must match and be >= 2, got " +
                                    detail::shape_str(a.shape()) + " x " +
                                    detail::shape_str(b.shape()));
    std::size_t r = a.rank();
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < r; ++i) {
        if (a.dim(i) != b.dim(i))
            throw std::invalid_argument("matmul: leading dims differ: " +
                                        detail::shape_str(a.shape()) + " x " +
                                        detail::shape_str(b.shape()));
        batch *= a.dim(i);
    }
    std::size_t m = a.dim(r - 2), k = a.dim(r - 1), n = b.dim(r - 1);
    if (b.dim(r - 2) != k)
        throw std::invalid_argument("matmul: inner dims differ: " + detail::shape_str(a.shape()) +
                                    " x " + detail::shape_str(b.shape()));
    Shape out_shape = a.shape();
    out_shape[r - 1] = n;
    std::vector<T> out(batch * m * n);
    kernels::gemm_batched(false, false, batch, m, n, k, a.values().data(), b.values().data(),
                          out.data());
    return make_op<T>("matmul", std::move(out_shape), std::move(out), {a, b},
                      [batch, m, n, k](detail::Node<T>& n_) {
                          auto& na = *n_.inputs[0];
                          auto& nb = *n_.inputs[1];
                          const T* g = n_.cot.data();
                          if (na.needs_grad) {
                              std::vector<T> tmp(batch * m * k);
                              kernels::gemm_batched(false, true, batch, m, k, n, g,
                                                    nb.values.data(), tmp.data());
                              detail::add_into(na.cot.data(), tmp.data(), tmp.size());
                          }
                          if (nb.needs_grad) {
                              std::vector<T> tmp(batch * k * n);
                              kernels::gemm_batched(true, false, batch, k, n, m, na.values.data(),
                                                    g, tmp.data());
                              detail::add_into(nb.cot.data(), tmp.data(), tmp.size());
                          }
                      });
}

} // namespace dronetune
