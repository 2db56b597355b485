#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "segdt/kernels.hpp"
#include "segdt/tensor.hpp"

namespace segdt {

template <class T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
struct AdamConfig {
    T lr = T(1e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

// Adam with bias correction. Moment buffers are keyed by parameter name so
// the same optimizer instance can be reused across steps.
template <class T>
class Adam {
public:
    explicit Adam(AdamConfig<T> cfg = {}) : cfg_(cfg) {}

    T lr() const { return cfg_.lr; }
    void set_lr(T lr) { cfg_.lr = lr; }
    std::uint64_t step_count() const { return t_; }

    void step(NamedParams<T>& params) {
        ++t_;
        const T bias1 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg_.beta1), t_));
        const T bias2 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg_.beta2), t_));
        for (auto& [name, p] : params) {
            if (!p.has_grad())
                throw std::runtime_error("adam: parameter '" + name + "' has no gradient");
            auto& st = state_[name];
            if (st.m.size() != p.numel()) {
                st.m.assign(p.numel(), T(0));
                st.v.assign(p.numel(), T(0));
            }
            kernels::adam_update(p.values().data(), p.grad().data(), st.m.data(), st.v.data(),
                                 p.numel(), cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps, bias1,
                                 bias2);
            if (!kernels::all_finite(p.values().data(), p.numel()))
                throw NumericError("adam: non-finite parameter '" + name + "' after update");
        }
    }

    void zero_grad(NamedParams<T>& params) {
        for (auto& [name, p] : params) p.zero_grad();
    }

private:
    struct Moments {
        std::vector<T> m, v;
    };
    AdamConfig<T> cfg_;
    std::uint64_t t_ = 0;
    std::unordered_map<std::string, Moments> state_;
};

} // namespace segdt
