#pragma once

#include <string>
#include <vector>

#include "segdt/rng.hpp"
#include "segdt/tensor.hpp"

namespace segdt {

// Linear interpolation path between data (s=0) and noise (s=1):
//   z_s = (1-s) * z0 + s * eps
// with constant target velocity u = z0 - eps pointing from noise to data.
// Inputs are treated as constants; no graph is recorded through them.
template <class T>
Tensor<T> make_noisy(const Tensor<T>& z0, const Tensor<T>& eps, const std::vector<T>& s) {
    if (z0.shape() != eps.shape())
        throw ShapeError("make_noisy: z0 " + shape_str(z0.shape()) + " vs eps " +
                         shape_str(eps.shape()));
    if (z0.rank() < 1 || z0.dim(0) != s.size())
        throw ShapeError("make_noisy: batch " + std::to_string(z0.rank() ? z0.dim(0) : 0) +
                         " vs " + std::to_string(s.size()) + " time values");
    const std::size_t batch = s.size();
    const std::size_t per = z0.numel() / batch;
    std::vector<T> out(z0.numel());
    const T* a = z0.values().data();
    const T* e = eps.values().data();
    for (std::size_t b = 0; b < batch; ++b) {
        const T sb = s[b];
        const T cb = T(1) - sb;
        for (std::size_t i = 0; i < per; ++i)
            out[b * per + i] = cb * a[b * per + i] + sb * e[b * per + i];
    }
    return Tensor<T>::from_data(z0.shape(), std::move(out));
}

template <class T>
Tensor<T> target_velocity(const Tensor<T>& z0, const Tensor<T>& eps) {
    if (z0.shape() != eps.shape())
        throw ShapeError("target_velocity: z0 " + shape_str(z0.shape()) + " vs eps " +
                         shape_str(eps.shape()));
    std::vector<T> out(z0.numel());
    kernels::sub(z0.values().data(), eps.values().data(), out.data(), out.size());
    return Tensor<T>::from_data(z0.shape(), std::move(out));
}

// One training objective evaluation: per-sample s ~ U[0,1), eps ~ N(0,1),
// then MSE between the predicted and the target velocity. `vel` is called as
// vel(z_s, s, y) and must return a tensor shaped like z0.
template <class T, class VelocityFn>
Tensor<T> flow_loss(const Tensor<T>& z0, const Tensor<T>& y, Rng& rng, VelocityFn&& vel) {
    if (z0.rank() < 1) throw ShapeError("flow_loss: z0 must have a batch axis");
    const std::size_t batch = z0.dim(0);
    std::vector<T> s(batch);
    for (auto& x : s) x = static_cast<T>(rng.uniform());
    std::vector<T> noise(z0.numel());
    rng.fill_normal(std::span<T>(noise));
    auto eps = Tensor<T>::from_data(z0.shape(), std::move(noise));
    auto z_s = make_noisy(z0, eps, s);
    auto u = target_velocity(z0, eps);
    auto v = vel(z_s, s, y);
    return mse(v, u);
}

// Euler integration of dz/ds along decreasing s. Starting from z at s=1,
// takes `steps` equal steps of size 1/steps, evaluating the velocity at the
// left endpoint of each interval: s_t = 1 - (t-1)/steps for t = 1..steps.
// Exact whenever the velocity field is constant in s and z.
template <class T, class VelocityFn>
Tensor<T> euler_sample(Tensor<T> z, const Tensor<T>& y, int steps, VelocityFn&& vel) {
    if (steps < 1) throw ShapeError("euler_sample: steps must be >= 1");
    autograd::NoGrad guard;
    const std::size_t batch = z.rank() ? z.dim(0) : 0;
    const T ds = T(1) / static_cast<T>(steps);
    for (int t = 1; t <= steps; ++t) {
        const T s_t = T(1) - static_cast<T>(t - 1) / static_cast<T>(steps);
        std::vector<T> s(batch, s_t);
        Tensor<T> v;
        try {
            v = vel(z, s, y);
        } catch (const NumericError& e) {
            throw NumericError("euler_sample: step " + std::to_string(t) + ": " + e.what());
        }
        if (v.shape() != z.shape())
            throw ShapeError("euler_sample: velocity " + shape_str(v.shape()) +
                             " vs state " + shape_str(z.shape()));
        std::vector<T> next(z.numel());
        const T* zp = z.values().data();
        const T* vp = v.values().data();
        for (std::size_t i = 0; i < next.size(); ++i) next[i] = zp[i] + vp[i] * ds;
        if (!kernels::all_finite(next.data(), next.size()))
            throw NumericError("euler_sample: non-finite state at step " + std::to_string(t));
        z = Tensor<T>::from_data(z.shape(), std::move(next));
    }
    return z;
}

} // namespace segdt
