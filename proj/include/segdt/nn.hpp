#pragma once

#include <cmath>
#include <memory>

#include "segdt/rng.hpp"
#include "segdt/tensor.hpp"

namespace segdt {

// Inverted dropout; identity when not training or p == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& a, double p, bool training, Rng& rng) {
    if (!training || p <= 0.0) return a;
    if (p >= 1.0) throw ShapeError("dropout: rate must be < 1");
    const std::size_t n = a.numel();
    auto mask = std::make_shared<std::vector<T>>(n);
    const T keep_inv = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < n; ++i)
        (*mask)[i] = rng.uniform() < p ? T(0) : keep_inv;
    std::vector<T> out(n);
    const T* src = a.values().data();
    kernels::mul(src, mask->data(), out.data(), n);
    const bool needs = detail::grad_needed<T>(a);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [mask](TensorNode<T>& self) {
            auto& p0 = *self.parents[0];
            p0.ensure_grad();
            const std::size_t n = self.val.size();
            for (std::size_t i = 0; i < n; ++i) self.grad[i] *= (*mask)[i];
            kernels::axpy(T(1), self.grad.data(), p0.grad.data(), n);
        };
    }
    return detail::make_node("dropout", a.shape(), std::move(out), needs, {a}, std::move(bw));
}

// Stochastic depth over axis 0: each sample is zeroed with probability p and
// survivors are rescaled by 1/(1-p). Identity when not training or p == 0.
template <class T>
Tensor<T> drop_path(const Tensor<T>& a, double p, bool training, Rng& rng) {
    if (!training || p <= 0.0) return a;
    if (p >= 1.0) throw ShapeError("drop_path: rate must be < 1");
    if (a.rank() < 1) throw ShapeError("drop_path: needs a batch axis");
    const std::size_t batch = a.dim(0);
    const std::size_t per = a.numel() / batch;
    auto keep = std::make_shared<std::vector<T>>(batch);
    const T keep_inv = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t b = 0; b < batch; ++b)
        (*keep)[b] = rng.uniform() < p ? T(0) : keep_inv;
    std::vector<T> out(a.numel());
    const T* src = a.values().data();
    for (std::size_t b = 0; b < batch; ++b)
        kernels::scale(src + b * per, (*keep)[b], out.data() + b * per, per);
    const bool needs = detail::grad_needed<T>(a);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [keep, batch, per](TensorNode<T>& self) {
            auto& p0 = *self.parents[0];
            p0.ensure_grad();
            for (std::size_t b = 0; b < batch; ++b)
                kernels::axpy((*keep)[b], self.grad.data() + b * per,
                              p0.grad.data() + b * per, per);
        };
    }
    return detail::make_node("drop_path", a.shape(), std::move(out), needs, {a}, std::move(bw));
}

// Multi-head scaled dot-product attention over already-projected q/k/v of
// shape (B, S, D); kv sequence length may differ from the query's.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t num_heads) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
        throw ShapeError("attention: expected rank-3 q/k/v, got " + shape_str(q.shape()) +
                         ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
    const std::size_t B = q.dim(0), Sq = q.dim(1), D = q.dim(2);
    const std::size_t Skv = k.dim(1);
    if (k.dim(0) != B || v.dim(0) != B || v.dim(1) != Skv || k.dim(2) != D || v.dim(2) != D)
        throw ShapeError("attention: inconsistent shapes " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
    if (num_heads == 0 || D % num_heads != 0)
        throw ShapeError("attention: width " + std::to_string(D) + " not divisible by " +
                         std::to_string(num_heads) + " heads");
    const std::size_t dh = D / num_heads;

    auto to_heads = [&](const Tensor<T>& x, std::size_t S) {
        auto r = reshape(x, {B, S, num_heads, dh});
        auto p = permute(r, {0, 2, 1, 3});
        return reshape(p, {B * num_heads, S, dh});
    };
    auto qh = to_heads(q, Sq);
    auto kh = to_heads(k, Skv);
    auto vh = to_heads(v, Skv);

    auto scores = scale(matmul(qh, transpose_last2(kh)),
                        static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto attn = softmax(scores);
    auto ctx = matmul(attn, vh); // (B*H, Sq, dh)
    auto merged = permute(reshape(ctx, {B, num_heads, Sq, dh}), {0, 2, 1, 3});
    return reshape(merged, {B, Sq, D});
}

namespace detail {

struct Conv2dDims {
    std::size_t B, C, H, W, O, kh, kw, stride, pad, Ho, Wo;
};

// Unpack one sample into columns: col[(c*kh+dy)*kw+dx][oy*Wo+ox].
template <class T>
void im2col(const T* x, const Conv2dDims& d, T* col) {
    const std::size_t cols = d.Ho * d.Wo;
    for (std::size_t c = 0; c < d.C; ++c) {
        for (std::size_t dy = 0; dy < d.kh; ++dy) {
            for (std::size_t dx = 0; dx < d.kw; ++dx) {
                T* dst = col + ((c * d.kh + dy) * d.kw + dx) * cols;
                for (std::size_t oy = 0; oy < d.Ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * d.stride + dy) -
                        static_cast<std::ptrdiff_t>(d.pad);
                    for (std::size_t ox = 0; ox < d.Wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * d.stride + dx) -
                            static_cast<std::ptrdiff_t>(d.pad);
                        T vpix = T(0);
                        if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(d.H) && ix >= 0 &&
                            ix < static_cast<std::ptrdiff_t>(d.W))
                            vpix = x[(c * d.H + iy) * d.W + ix];
                        dst[oy * d.Wo + ox] = vpix;
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_accum(const T* col, const Conv2dDims& d, T* gx) {
    const std::size_t cols = d.Ho * d.Wo;
    for (std::size_t c = 0; c < d.C; ++c) {
        for (std::size_t dy = 0; dy < d.kh; ++dy) {
            for (std::size_t dx = 0; dx < d.kw; ++dx) {
                const T* src = col + ((c * d.kh + dy) * d.kw + dx) * cols;
                for (std::size_t oy = 0; oy < d.Ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * d.stride + dy) -
                        static_cast<std::ptrdiff_t>(d.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.H)) continue;
                    for (std::size_t ox = 0; ox < d.Wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * d.stride + dx) -
                            static_cast<std::ptrdiff_t>(d.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.W)) continue;
                        gx[(c * d.H + iy) * d.W + ix] += src[oy * d.Wo + ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

// x (B,C,H,W), w (O,C,kh,kw), b (O). Zero padding, square stride.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride, std::size_t pad) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " weight " +
                         shape_str(w.shape()));
    detail::Conv2dDims d;
    d.B = x.dim(0);
    d.C = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.O = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = pad;
    if (w.dim(1) != d.C)
        throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    if (b.numel() != d.O)
        throw ShapeError("conv2d: bias size " + std::to_string(b.numel()) + " vs " +
                         std::to_string(d.O) + " filters");
    if (d.H + 2 * pad < d.kh || d.W + 2 * pad < d.kw)
        throw ShapeError("conv2d: kernel larger than padded input");
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;

    const std::size_t Q = d.C * d.kh * d.kw;
    const std::size_t cols = d.Ho * d.Wo;
    auto colbuf = std::make_shared<std::vector<T>>(d.B * Q * cols);
    std::vector<T> out(d.B * d.O * cols);
    const T* bias = b.values().data();
    for (std::size_t bi = 0; bi < d.B; ++bi) {
        T* col = colbuf->data() + bi * Q * cols;
        detail::im2col(x.values().data() + bi * d.C * d.H * d.W, d, col);
        T* o = out.data() + bi * d.O * cols;
        kernels::gemm_nn(w.values().data(), col, o, d.O, cols, Q, false);
        for (std::size_t oc = 0; oc < d.O; ++oc) {
            const T bv = bias[oc];
            T* row = o + oc * cols;
            for (std::size_t j = 0; j < cols; ++j) row[j] += bv;
        }
    }
    const bool needs = detail::grad_needed<T>(x, w, b);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [d, Q, cols, colbuf](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            auto& pb = *self.parents[2];
            const T* g = self.grad.data();
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t bi = 0; bi < d.B; ++bi)
                    for (std::size_t oc = 0; oc < d.O; ++oc)
                        pb.grad[oc] += kernels::sum(g + (bi * d.O + oc) * cols, cols);
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                for (std::size_t bi = 0; bi < d.B; ++bi)
                    kernels::gemm_nt(g + bi * d.O * cols, colbuf->data() + bi * Q * cols,
                                     pw.grad.data(), d.O, Q, cols, true);
            }
            if (px.requires_grad) {
                px.ensure_grad();
                std::vector<T> wt(Q * d.O);
                detail::transpose_2d(pw.val.data(), wt.data(), d.O, Q);
                std::vector<T> gcol(Q * cols);
                for (std::size_t bi = 0; bi < d.B; ++bi) {
                    kernels::gemm_nn(wt.data(), g + bi * d.O * cols, gcol.data(), Q, cols, d.O,
                                     false);
                    detail::col2im_accum(gcol.data(), d,
                                         px.grad.data() + bi * d.C * d.H * d.W);
                }
            }
        };
    }
    return detail::make_node("conv2d", Shape{d.B, d.O, d.Ho, d.Wo}, std::move(out), needs,
                             {x, w, b}, std::move(bw));
}

// Nearest-neighbor 2x upsampling of (B,C,H,W).
template <class T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("upsample_nearest2: expected BCHW, got " +
                                        shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<T> out(B * C * 4 * H * W);
    const T* src = x.values().data();
    const std::size_t Wo = 2 * W;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* plane = src + bc * H * W;
        T* oplane = out.data() + bc * 4 * H * W;
        for (std::size_t y = 0; y < H; ++y) {
            T* row0 = oplane + (2 * y) * Wo;
            for (std::size_t xq = 0; xq < W; ++xq) {
                const T v = plane[y * W + xq];
                row0[2 * xq] = v;
                row0[2 * xq + 1] = v;
            }
            std::copy(row0, row0 + Wo, row0 + Wo);
        }
    }
    const bool needs = detail::grad_needed<T>(x);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [B, C, H, W, Wo](TensorNode<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (std::size_t bc = 0; bc < B * C; ++bc) {
                const T* gplane = self.grad.data() + bc * 4 * H * W;
                T* pg = p.grad.data() + bc * H * W;
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t xq = 0; xq < W; ++xq)
                        pg[y * W + xq] += gplane[(2 * y) * Wo + 2 * xq] +
                                          gplane[(2 * y) * Wo + 2 * xq + 1] +
                                          gplane[(2 * y + 1) * Wo + 2 * xq] +
                                          gplane[(2 * y + 1) * Wo + 2 * xq + 1];
            }
        };
    }
    return detail::make_node("upsample_nearest2", Shape{B, C, 2 * H, 2 * W}, std::move(out),
                             needs, {x}, std::move(bw));
}

namespace detail {

// token (i,j) <-> feature layout c-major then (dy,dx) within the patch.
// kToTokens copies grid -> tokens, otherwise tokens -> grid.
template <class T, bool kToTokens>
void patch_copy(T* grid, T* tokens, std::size_t B, std::size_t C, std::size_t H,
                std::size_t W, std::size_t P) {
    const std::size_t gh = H / P, gw = W / P;
    const std::size_t feat = C * P * P;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t ti = 0; ti < gh; ++ti)
            for (std::size_t tj = 0; tj < gw; ++tj) {
                T* tok = tokens + ((b * gh + ti) * gw + tj) * feat;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t dy = 0; dy < P; ++dy)
                        for (std::size_t dx = 0; dx < P; ++dx) {
                            const std::size_t gi =
                                ((b * C + c) * H + ti * P + dy) * W + tj * P + dx;
                            const std::size_t fi = (c * P + dy) * P + dx;
                            if constexpr (kToTokens)
                                tok[fi] = grid[gi];
                            else
                                grid[gi] = tok[fi];
                        }
            }
    }
}

} // namespace detail

// (B,C,H,W) -> (B, S, C*P*P) with S = (H/P)*(W/P), tokens in row-major grid order.
template <class T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t P) {
    if (x.rank() != 4) throw ShapeError("patchify: expected BCHW, got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (P == 0 || H % P != 0 || W % P != 0)
        throw ShapeError("patchify: grid " + shape_str(x.shape()) + " not divisible by patch " +
                         std::to_string(P));
    const std::size_t S = (H / P) * (W / P);
    const std::size_t feat = C * P * P;
    std::vector<T> out(B * S * feat);
    detail::patch_copy<T, true>(const_cast<T*>(x.values().data()), out.data(), B, C, H, W, P);
    const bool needs = detail::grad_needed<T>(x);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [B, C, H, W, P](TensorNode<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            std::vector<T> gx(p.val.size());
            detail::patch_copy<T, false>(gx.data(), self.grad.data(), B, C, H, W, P);
            kernels::axpy(T(1), gx.data(), p.grad.data(), gx.size());
        };
    }
    return detail::make_node("patchify", Shape{B, S, feat}, std::move(out), needs, {x},
                             std::move(bw));
}

// Inverse of patchify: (B, S, C*P*P) -> (B,C,H,W).
template <class T>
Tensor<T> unpatchify(const Tensor<T>& t, std::size_t C, std::size_t H, std::size_t W,
                     std::size_t P) {
    if (t.rank() != 3) throw ShapeError("unpatchify: expected (B,S,F), got " +
                                        shape_str(t.shape()));
    const std::size_t B = t.dim(0);
    if (P == 0 || H % P != 0 || W % P != 0 || t.dim(1) != (H / P) * (W / P) ||
        t.dim(2) != C * P * P)
        throw ShapeError("unpatchify: tokens " + shape_str(t.shape()) +
                         " do not match grid " + std::to_string(C) + "x" + std::to_string(H) +
                         "x" + std::to_string(W) + " patch " + std::to_string(P));
    std::vector<T> out(B * C * H * W);
    detail::patch_copy<T, false>(out.data(), const_cast<T*>(t.values().data()), B, C, H, W, P);
    const bool needs = detail::grad_needed<T>(t);
    std::function<void(TensorNode<T>&)> bw;
    if (needs) {
        bw = [B, C, H, W, P](TensorNode<T>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            std::vector<T> gt(p.val.size());
            detail::patch_copy<T, true>(self.grad.data(), gt.data(), B, C, H, W, P);
            kernels::axpy(T(1), gt.data(), p.grad.data(), gt.size());
        };
    }
    return detail::make_node("unpatchify", Shape{B, C, H, W}, std::move(out), needs, {t},
                             std::move(bw));
}

} // namespace segdt
