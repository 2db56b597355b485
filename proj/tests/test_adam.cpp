#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "segdt/adam.hpp"
#include "segdt/tensor.hpp"

using namespace segdt;

TEST_CASE("zero gradient leaves parameters unchanged") {
    auto p = TensorF::from_data({3}, {1, 2, 3}).set_requires_grad(true);
    p.grad().assign(3, 0.0f);
    NamedParams<float> params = {{"p", p}};
    Adam<float> opt({.lr = 0.1f});
    opt.step(params);
    CHECK(p.values() == std::vector<float>{1, 2, 3});
    CHECK(opt.step_count() == 1);
}

TEST_CASE("first step with unit gradient moves by about lr") {
    auto p = TensorF::from_data({1}, {0.0f}).set_requires_grad(true);
    p.grad().assign(1, 1.0f);
    NamedParams<float> params = {{"p", p}};
    Adam<float> opt({.lr = 0.1f});
    opt.step(params);
    // bias-corrected first step: m_hat = g, v_hat = g^2, delta = lr*g/(|g|+eps)
    CHECK(p.values()[0] == doctest::Approx(-0.1).epsilon(1e-4));
}

TEST_CASE("converges on a scalar quadratic") {
    auto p = TensorF::from_data({1}, {0.0f}).set_requires_grad(true);
    NamedParams<float> params = {{"p", p}};
    Adam<float> opt({.lr = 0.1f});
    for (int i = 0; i < 1000; ++i) {
        opt.zero_grad(params);
        auto diff = add_scalar(p, -3.0f);
        auto loss = reduce_sum(mul(diff, diff));
        loss.backward();
        opt.step(params);
    }
    CHECK(std::fabs(p.values()[0] - 3.0f) < 1e-2);
}

TEST_CASE("missing gradient is reported by name") {
    auto a = TensorF::from_data({1}, {0.0f}).set_requires_grad(true);
    auto b = TensorF::from_data({1}, {0.0f}).set_requires_grad(true);
    a.grad().assign(1, 0.5f);
    NamedParams<float> params = {{"alpha", a}, {"beta", b}};
    Adam<float> opt;
    CHECK_THROWS_WITH_AS(opt.step(params), doctest::Contains("beta"), std::runtime_error);
}

TEST_CASE("lr can change between steps") {
    Adam<float> opt({.lr = 1e-4f});
    CHECK(opt.lr() == 1e-4f);
    opt.set_lr(1e-5f);
    CHECK(opt.lr() == 1e-5f);
}

TEST_CASE("grads are left untouched by the step") {
    auto p = TensorF::from_data({2}, {1.0f, 1.0f}).set_requires_grad(true);
    p.grad() = {0.25f, -0.5f};
    NamedParams<float> params = {{"p", p}};
    Adam<float> opt;
    opt.step(params);
    CHECK(p.grad() == std::vector<float>{0.25f, -0.5f});
    opt.zero_grad(params);
    CHECK(p.grad() == std::vector<float>{0.0f, 0.0f});
}
