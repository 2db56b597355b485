#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "segdt/errors.hpp"
#include "segdt/kernels.hpp"

namespace segdt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    if (s.empty()) return "scalar";
    std::ostringstream os;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    return os.str();
}

namespace autograd {

inline thread_local bool g_enabled = true;

inline bool enabled() { return g_enabled; }

// RAII guard: no graph is recorded while alive. Used on inference paths.
struct NoGrad {
    bool prev;
    NoGrad() : prev(g_enabled) { g_enabled = false; }
    ~NoGrad() { g_enabled = prev; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

} // namespace autograd

template <class T>
struct TensorNode {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad; // empty until touched by backward()
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::size_t numel() const { return val.size(); }

    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), T(0));
    }
};

template <class T>
class Tensor {
public:
    using Node = TensorNode<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<Node>();
        n->val.assign(shape_numel(shape), T(0));
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, T value) {
        auto n = std::make_shared<Node>();
        n->val.assign(shape_numel(shape), value);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                             std::to_string(shape_numel(shape)) + " elements, got " +
                             std::to_string(data.size()));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->val = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v) { return from_data({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->val.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t rank() const { return node_->shape.size(); }

    const std::vector<T>& values() const { return node_->val; }
    std::vector<T>& values() { return node_->val; }
    T item() const {
        if (numel() != 1)
            throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
        return node_->val[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<T>& grad() const { return node_->grad; }
    std::vector<T>& grad() { return node_->grad; }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    std::shared_ptr<Node> node() const { return node_; }
    Node* raw() const { return node_.get(); }

    // Reverse-mode pass from a scalar loss. Leaf gradients accumulate across
    // calls; intermediate gradients are rebuilt each call.
    void backward() const {
        if (numel() != 1)
            throw ShapeError("backward: loss must be scalar, got shape " + shape_str(shape()));
        std::vector<Node*> order;
        topo_sort(order);
        for (Node* n : order) {
            if (n->backward_fn) n->grad.assign(n->val.size(), T(0));
        }
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
        for (Node* n : order) {
            if (!n->grad.empty() && !kernels::all_finite(n->grad.data(), n->grad.size()))
                throw NumericError(std::string("backward: non-finite gradient from op '") +
                                   n->op + "'");
        }
    }

private:
    void topo_sort(std::vector<Node*>& order) const {
        std::unordered_set<Node*> visited;
        // explicit stack; graphs can be a few hundred nodes deep
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

template <class T>
inline void accum(TensorNode<T>& p, const T* g, std::size_t n) {
    p.ensure_grad();
    kernels::axpy(T(1), g, p.grad.data(), n);
}

template <class T, class... Parents>
inline bool grad_needed(const Parents&... ps) {
    return autograd::enabled() && (ps.requires_grad() || ...);
}

template <class T>
Tensor<T> make_node(const char* op, Shape shape, std::vector<T> val, bool needs_grad,
                    std::vector<Tensor<T>> parents,
                    std::function<void(TensorNode<T>&)> backward_fn) {
    if (!kernels::all_finite(val.data(), val.size()))
        throw NumericError(std::string(op) + ": non-finite output");
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->val = std::move(val);
    n->op = op;
    if (needs_grad) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(n));
}

// numpy-style broadcast of two shapes; dims align at the trailing edge.
inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    const std::size_t ra = a.size(), rb = b.size();
    const std::size_t r = std::max(ra, rb);
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - ra ? 1 : a[i - (r - ra)];
        const std::size_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " do not broadcast");
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides padded to rank r, stride 0 on broadcast dims.
inline std::vector<std::size_t> bcast_strides(const Shape& s, const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::size_t> full(r, 1), strides(r, 0);
    Shape padded(r, 1);
    std::copy(s.begin(), s.end(), padded.begin() + (r - s.size()));
    std::size_t acc = 1;
    for (std::size_t i = r; i-- > 0;) {
        full[i] = acc;
        acc *= padded[i];
    }
    for (std::size_t i = 0; i < r; ++i) strides[i] = padded[i] == 1 ? 0 : full[i];
    return strides;
}

// Odometer loop over the broadcast output; fn(out_index, a_index, b_index).
template <class Fn>
inline void bcast_iterate(const Shape& out, const std::vector<std::size_t>& sa,
                          const std::vector<std::size_t>& sb, Fn&& fn) {
    const std::size_t n = shape_numel(out);
    const std::size_t r = out.size();
    if (r == 0) {
        fn(0, 0, 0);
        return;
    }
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        fn(i, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

template <class T, class Fwd, class DfA, class DfB>
Tensor<T> binary_elementwise(const char* op, const Tensor<T>& a, const Tensor<T>& b,
                             Fwd fwd, DfA dfa, DfB dfb) {
    const bool same = a.shape() == b.shape();
    Shape out_shape = same ? a.shape() : broadcast_shape(op, a.shape(), b.shape());
    const std::size_t n = shape_numel(out_shape);
    std::vector<T> out(n);
    std::vector<std::size_t> sa, sb;
    if (same) {
        const T* pa = a.values().data();
        const T* pb = b.values().data();
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i], pb[i]);
    } else {
        sa = bcast_strides(a.shape(), out_shape);
        sb = bcast_strides(b.shape(), out_shape);
        const T* pa = a.values().data();
        const T* pb = b.values().data();
        bcast_iterate(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            out[i] = fwd(pa[ia], pb[ib]);
        });
    }
    const bool needs = grad_needed<T>(a, b);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [same, out_shape, sa, sb, dfa, dfb](TensorNode<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const T* av = pa.val.data();
            const T* bv = pb.val.data();
            const T* g = self.grad.data();
            const bool ga = pa.requires_grad;
            const bool gb = pb.requires_grad;
            if (ga) pa.ensure_grad();
            if (gb) pb.ensure_grad();
            if (same) {
                const std::size_t n = self.val.size();
                for (std::size_t i = 0; i < n; ++i) {
                    if (ga) pa.grad[i] += g[i] * dfa(av[i], bv[i]);
                    if (gb) pb.grad[i] += g[i] * dfb(av[i], bv[i]);
                }
            } else {
                bcast_iterate(out_shape, sa, sb,
                              [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                  if (ga) pa.grad[ia] += g[i] * dfa(av[ia], bv[ib]);
                                  if (gb) pb.grad[ib] += g[i] * dfb(av[ia], bv[ib]);
                              });
            }
        };
    }
    return make_node(op, std::move(out_shape), std::move(out), needs, {a, b}, std::move(bw));
}

template <class T, class Fwd, class Dfdx>
Tensor<T> unary_elementwise(const char* op, const Tensor<T>& a, Fwd fwd, Dfdx dfdx) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    const T* pa = a.values().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i]);
    const bool needs = grad_needed<T>(a);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [dfdx](TensorNode<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            const std::size_t n = self.val.size();
            for (std::size_t i = 0; i < n; ++i)
                p.grad[i] += self.grad[i] * dfdx(p.val[i], self.val[i]);
        };
    }
    return make_node(op, a.shape(), std::move(out), needs, {a}, std::move(bw));
}

template <class T>
inline void transpose_2d(const T* src, T* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_elementwise<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_elementwise<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_elementwise<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return detail::unary_elementwise<T>(
        "scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return detail::unary_elementwise<T>(
        "add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

// GELU with the tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class T>
Tensor<T> gelu_tanh(const Tensor<T>& a) {
    constexpr double kC = 0.7978845608028653558798921198687; // sqrt(2/pi)
    constexpr double kA = 0.044715;
    return detail::unary_elementwise<T>(
        "gelu_tanh", a,
        [](T x) {
            const double xd = static_cast<double>(x);
            const double u = kC * (xd + kA * xd * xd * xd);
            return static_cast<T>(0.5 * xd * (1.0 + std::tanh(u)));
        },
        [](T x, T) {
            const double xd = static_cast<double>(x);
            const double u = kC * (xd + kA * xd * xd * xd);
            const double t = std::tanh(u);
            const double du = kC * (1.0 + 3.0 * kA * xd * xd);
            return static_cast<T>(0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du);
        });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary_elementwise<T>(
        "sigmoid", a,
        [](T x) { return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x)))); },
        [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    const bool needs = detail::grad_needed<T>(a);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [](TensorNode<T>& self) {
            detail::accum(*self.parents[0], self.grad.data(), self.grad.size());
        };
    }
    return detail::make_node("reshape", std::move(new_shape), a.values(), needs, {a},
                             std::move(bw));
}

namespace detail {

template <class T>
std::vector<T> permute_values(const std::vector<T>& src, const Shape& in_shape,
                              const std::vector<std::size_t>& axes) {
    const std::size_t r = in_shape.size();
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    std::vector<std::size_t> gather(r);
    for (std::size_t i = 0; i < r; ++i) gather[i] = in_strides[axes[i]];
    std::vector<T> out(src.size());
    std::vector<std::size_t> idx(r, 0);
    std::size_t is = 0;
    for (std::size_t o = 0; o < out.size(); ++o) {
        out[o] = src[is];
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            is += gather[d];
            if (idx[d] < out_shape[d]) break;
            is -= gather[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    return out;
}

} // namespace detail

template <class T>
Tensor<T> permute(const Tensor<T>& a, std::vector<std::size_t> axes) {
    const std::size_t r = a.rank();
    if (axes.size() != r)
        throw ShapeError("permute: axes size " + std::to_string(axes.size()) +
                         " does not match rank of " + shape_str(a.shape()));
    std::vector<bool> seen(r, false);
    for (auto ax : axes) {
        if (ax >= r || seen[ax])
            throw ShapeError("permute: invalid axis permutation for " + shape_str(a.shape()));
        seen[ax] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[axes[i]];
    auto out = detail::permute_values(a.values(), a.shape(), axes);
    const bool needs = detail::grad_needed<T>(a);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        std::vector<std::size_t> inverse(r);
        for (std::size_t i = 0; i < r; ++i) inverse[axes[i]] = i;
        bw = [inverse, out_shape](TensorNode<T>& self) {
            auto back = detail::permute_values(self.grad, out_shape, inverse);
            detail::accum(*self.parents[0], back.data(), back.size());
        };
    }
    return detail::make_node("permute", std::move(out_shape), std::move(out), needs, {a},
                             std::move(bw));
}

// Swap the last two axes; convenience for attention.
template <class T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
    std::vector<std::size_t> axes(a.rank());
    std::iota(axes.begin(), axes.end(), 0);
    if (axes.size() < 2)
        throw ShapeError("transpose_last2: rank < 2, shape " + shape_str(a.shape()));
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(a, axes);
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
    Shape out_shape = s0;
    std::size_t axis_total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size())
            throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
        for (std::size_t d = 0; d < s.size(); ++d) {
            if (d != axis && s[d] != s0[d])
                throw ShapeError("concat: shapes " + shape_str(s0) + " and " + shape_str(s) +
                                 " differ off-axis");
        }
        axis_total += s[axis];
    }
    out_shape[axis] = axis_total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

    std::vector<T> out(shape_numel(out_shape));
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t block = p.shape()[axis] * inner;
        const T* src = p.values().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(src + o * block, src + (o + 1) * block,
                      out.data() + o * axis_total * inner + offset);
        offset += block;
    }

    bool needs = autograd::enabled();
    if (needs) {
        bool any = false;
        for (const auto& p : parts) any = any || p.requires_grad();
        needs = any;
    }
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        std::vector<std::size_t> blocks(parts.size());
        for (std::size_t i = 0; i < parts.size(); ++i) blocks[i] = parts[i].shape()[axis] * inner;
        bw = [outer, inner, axis_total, blocks](TensorNode<T>& self) {
            std::size_t offset = 0;
            for (std::size_t i = 0; i < self.parents.size(); ++i) {
                auto& p = *self.parents[i];
                if (p.requires_grad) {
                    p.ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o) {
                        const T* g = self.grad.data() + o * axis_total * inner + offset;
                        kernels::axpy(T(1), g, p.grad.data() + o * blocks[i], blocks[i]);
                    }
                }
                offset += blocks[i];
            }
        };
    }
    return detail::make_node("concat", std::move(out_shape), std::move(out), needs, parts,
                             std::move(bw));
}

template <class T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis,
                             const std::vector<std::size_t>& sizes) {
    const Shape& s = a.shape();
    if (axis >= s.size()) throw ShapeError("split: axis out of range for " + shape_str(s));
    std::size_t total = 0;
    for (auto sz : sizes) total += sz;
    if (total != s[axis])
        throw ShapeError("split: sizes sum to " + std::to_string(total) + ", axis extent is " +
                         std::to_string(s[axis]) + " in " + shape_str(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const std::size_t axis_total = s[axis];

    std::vector<Tensor<T>> outs;
    outs.reserve(sizes.size());
    std::size_t offset = 0;
    const bool needs = detail::grad_needed<T>(a);
    for (auto sz : sizes) {
        Shape os = s;
        os[axis] = sz;
        const std::size_t block = sz * inner;
        std::vector<T> v(outer * block);
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(a.values().data() + o * axis_total * inner + offset,
                      a.values().data() + o * axis_total * inner + offset + block,
                      v.data() + o * block);
        std::function<void(TensorNode<T>&)> bw;
        if (needs) {
            const std::size_t off = offset;
            bw = [outer, inner, axis_total, block, off](TensorNode<T>& self) {
                auto& p = *self.parents[0];
                p.ensure_grad();
                for (std::size_t o = 0; o < outer; ++o)
                    kernels::axpy(T(1), self.grad.data() + o * block,
                                  p.grad.data() + o * axis_total * inner + off, block);
            };
        }
        outs.push_back(
            detail::make_node("split", std::move(os), std::move(v), needs, {a}, std::move(bw)));
        offset += block;
    }
    return outs;
}

// ---------------------------------------------------------------------------
// Matmul / linear
// ---------------------------------------------------------------------------

// 2D (m,k)x(k,n) or batched 3D (B,m,k)x(B,k,n).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    std::size_t batch = 1, m, k, n;
    Shape out_shape;
    if (sa.size() == 2 && sb.size() == 2) {
        m = sa[0];
        k = sa[1];
        n = sb[1];
        if (sb[0] != k)
            throw ShapeError("matmul: " + shape_str(sa) + " vs " + shape_str(sb));
        out_shape = {m, n};
    } else if (sa.size() == 3 && sb.size() == 3) {
        if (sa[0] != sb[0] || sa[2] != sb[1])
            throw ShapeError("matmul: " + shape_str(sa) + " vs " + shape_str(sb));
        batch = sa[0];
        m = sa[1];
        k = sa[2];
        n = sb[2];
        out_shape = {batch, m, n};
    } else {
        throw ShapeError("matmul: unsupported ranks " + shape_str(sa) + " vs " + shape_str(sb));
    }
    std::vector<T> out(batch * m * n);
    for (std::size_t bi = 0; bi < batch; ++bi)
        kernels::gemm_nn(a.values().data() + bi * m * k, b.values().data() + bi * k * n,
                         out.data() + bi * m * n, m, n, k, false);
    const bool needs = detail::grad_needed<T>(a, b);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [batch, m, k, n](TensorNode<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const T* g = self.grad.data();
            if (pa.requires_grad) {
                pa.ensure_grad();
                // dA = dC * B^T
                for (std::size_t bi = 0; bi < batch; ++bi)
                    kernels::gemm_nt(g + bi * m * n, pb.val.data() + bi * k * n,
                                     pa.grad.data() + bi * m * k, m, k, n, true);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                // dB = A^T * dC, via explicit transpose of A
                std::vector<T> at(m * k);
                for (std::size_t bi = 0; bi < batch; ++bi) {
                    detail::transpose_2d(pa.val.data() + bi * m * k, at.data(), m, k);
                    kernels::gemm_nn(at.data(), g + bi * m * n, pb.grad.data() + bi * k * n, k,
                                     n, m, true);
                }
            }
        };
    }
    return detail::make_node("matmul", std::move(out_shape), std::move(out), needs, {a, b},
                             std::move(bw));
}

// x(..., K) * W(K, N) + b(N). Leading dims flattened through a 2D GEMM.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const Shape& sx = x.shape();
    if (sx.empty() || w.rank() != 2 || sx.back() != w.dim(0))
        throw ShapeError("linear: input " + shape_str(sx) + " vs weight " + shape_str(w.shape()));
    const std::size_t kdim = w.dim(0), ndim = w.dim(1);
    const std::size_t rows = x.numel() / kdim;
    auto x2 = reshape(x, {rows, kdim});
    auto y2 = add(matmul(x2, w), b);
    Shape out = sx;
    out.back() = ndim;
    return reshape(y2, out);
}

// ---------------------------------------------------------------------------
// Row ops (last axis)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& a) {
    const Shape& s = a.shape();
    if (s.empty() || s.back() < 1)
        throw ShapeError("softmax: last axis must have extent >= 1, shape " + shape_str(s));
    const std::size_t d = s.back();
    const std::size_t rows = a.numel() / d;
    std::vector<T> out(a.numel());
    const T* src = a.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = src + r * d;
        T* orow = out.data() + r * d;
        const T mx = kernels::max(row, d);
        T denom = T(0);
        for (std::size_t j = 0; j < d; ++j) {
            orow[j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)));
            denom += orow[j];
        }
        kernels::scale(orow, T(1) / denom, orow, d);
    }
    const bool needs = detail::grad_needed<T>(a);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [d, rows](TensorNode<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.val.data() + r * d;
                const T* g = self.grad.data() + r * d;
                const T dotgy = kernels::dot(g, y, d);
                T* pg = p.grad.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) pg[j] += y[j] * (g[j] - dotgy);
            }
        };
    }
    return detail::make_node("softmax", s, std::move(out), needs, {a}, std::move(bw));
}

// Last-axis normalization without learned affine; modulation is applied by
// the caller when needed.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& a, T eps = T(1e-6)) {
    const Shape& s = a.shape();
    if (s.empty() || s.back() < 1)
        throw ShapeError("layer_norm: last axis must have extent >= 1, shape " + shape_str(s));
    const std::size_t d = s.back();
    const std::size_t rows = a.numel() / d;
    std::vector<T> out(a.numel());
    std::vector<T> inv_std(rows);
    const T* src = a.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = src + r * d;
        const T mean = kernels::sum(row, d) / static_cast<T>(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[r] = inv;
        T* orow = out.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) orow[j] = (row[j] - mean) * inv;
    }
    const bool needs = detail::grad_needed<T>(a);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [d, rows, inv_std](TensorNode<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            const T dinv = T(1) / static_cast<T>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.val.data() + r * d;
                const T* g = self.grad.data() + r * d;
                const T gmean = kernels::sum(g, d) * dinv;
                const T gymean = kernels::dot(g, y, d) * dinv;
                T* pg = p.grad.data() + r * d;
                for (std::size_t j = 0; j < d; ++j)
                    pg[j] += inv_std[r] * (g[j] - gmean - y[j] * gymean);
            }
        };
    }
    return detail::make_node("layer_norm", s, std::move(out), needs, {a}, std::move(bw));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reduce_sum(const Tensor<T>& a) {
    const T total = kernels::sum(a.values().data(), a.numel());
    const bool needs = detail::grad_needed<T>(a);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [](TensorNode<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            const T g = self.grad[0];
            for (auto& x : p.grad) x += g;
        };
    }
    return detail::make_node("reduce_sum", Shape{1}, std::vector<T>{total}, needs, {a},
                             std::move(bw));
}

template <class T>
Tensor<T> reduce_mean(const Tensor<T>& a) {
    return scale(reduce_sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mse: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = a.numel();
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T d = pa[i] - pb[i];
        acc += d * d;
    }
    acc /= static_cast<T>(n);
    const bool needs = detail::grad_needed<T>(a, b);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [n](TensorNode<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const T c = self.grad[0] * T(2) / static_cast<T>(n);
            if (pa.requires_grad) pa.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const T d = c * (pa.val[i] - pb.val[i]);
                if (pa.requires_grad) pa.grad[i] += d;
                if (pb.requires_grad) pb.grad[i] -= d;
            }
        };
    }
    return detail::make_node("mse", Shape{1}, std::vector<T>{acc}, needs, {a, b}, std::move(bw));
}

// Element type conversion; the result is a fresh leaf detached from any graph.
template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& a) {
    const From* src = a.values().data();
    std::vector<To> v(a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) v[i] = static_cast<To>(src[i]);
    return Tensor<To>::from_data(a.shape(), std::move(v));
}

} // namespace segdt
