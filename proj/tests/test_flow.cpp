#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "segdt/adam.hpp"
#include "segdt/codec.hpp"
#include "segdt/dit.hpp"
#include "segdt/flow.hpp"
#include "segdt/image.hpp"
#include "segdt/kernels.hpp"
#include "segdt/tensor.hpp"

using namespace segdt;

TEST_CASE("make_noisy endpoints and midpoint") {
    auto z0 = TensorF::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto eps = TensorF::from_data({2, 3}, {-1, -2, -3, -4, -5, -6});

    auto at0 = make_noisy(z0, eps, {0.0f, 0.0f});
    CHECK(at0.values() == z0.values());
    auto at1 = make_noisy(z0, eps, {1.0f, 1.0f});
    CHECK(at1.values() == eps.values());
    auto mid = make_noisy(z0, eps, {0.5f, 0.5f});
    for (auto v : mid.values()) CHECK(v == 0.0f);

    // per-sample times
    auto mixed = make_noisy(z0, eps, {0.0f, 1.0f});
    CHECK(mixed.values() == std::vector<float>{1, 2, 3, -4, -5, -6});

    CHECK_THROWS_AS(make_noisy(z0, TensorF::zeros({2, 2}), {0.f, 0.f}), ShapeError);
    CHECK_THROWS_AS(make_noisy(z0, eps, {0.5f}), ShapeError);
}

TEST_CASE("target velocity points from noise to data") {
    auto z0 = TensorF::from_data({1, 4}, {1, 2, 3, 4});
    auto eps = TensorF::from_data({1, 4}, {0.5f, 0.5f, 0.5f, 0.5f});
    auto u = target_velocity(z0, eps);
    CHECK(u.values() == std::vector<float>{0.5f, 1.5f, 2.5f, 3.5f});

    // moving from eps along u for unit time lands exactly on z0
    auto z1 = add(eps, u);
    CHECK(z1.values() == z0.values());
}

TEST_CASE("flow_loss is deterministic for a fixed seed and differentiable") {
    auto z0 = TensorF::from_data({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto y = TensorF::zeros({2, 1, 2, 2});
    auto w = TensorF::full({1}, 0.5f).set_requires_grad(true);

    auto run = [&](std::uint64_t seed) {
        Rng rng(seed);
        return flow_loss(z0, y, rng, [&](const TensorF& z_s, const std::vector<float>& s,
                                         const TensorF&) {
            (void)s;
            return mul(z_s, reshape(w, Shape{1, 1, 1, 1}));
        });
    };
    auto l1 = run(123);
    auto l2 = run(123);
    CHECK(l1.item() == l2.item());
    CHECK(l1.item() > 0.0f);
    auto l3 = run(999);
    CHECK(l3.item() != l1.item());

    w.zero_grad();
    l1.backward();
    REQUIRE(w.has_grad());
    CHECK(w.grad()[0] != 0.0f);
}

TEST_CASE("euler integration is exact for constant velocity fields") {
    auto z_init = TensorF::from_data({1, 2, 2, 2}, {0, 1, -1, 2, 0.5f, -0.5f, 3, -3});
    auto c = TensorF::from_data({1, 2, 2, 2}, {1, -2, 0.25f, 4, 0, 1.5f, -1, 2});
    auto y = TensorF::zeros({1, 2, 2, 2});

    auto vel = [&](const TensorF& z, const std::vector<float>& s, const TensorF&) {
        (void)z;
        (void)s;
        return c;
    };
    for (int steps : {1, 2, 5, 15, 50}) {
        CAPTURE(steps);
        auto z = euler_sample(z_init, y, steps, vel);
        for (std::size_t i = 0; i < z.numel(); ++i)
            CHECK(z.values()[i] ==
                  doctest::Approx(z_init.values()[i] + c.values()[i]).epsilon(1e-6));
    }
}

TEST_CASE("euler visits the documented time grid") {
    auto z = TensorF::zeros({1, 1});
    auto y = TensorF::zeros({1, 1});
    std::vector<float> seen;
    auto vel = [&](const TensorF&, const std::vector<float>& s, const TensorF&) {
        seen.push_back(s[0]);
        return TensorF::zeros({1, 1});
    };
    euler_sample(z, y, 4, vel);
    REQUIRE(seen.size() == 4);
    CHECK(seen[0] == doctest::Approx(1.0));
    CHECK(seen[1] == doctest::Approx(0.75));
    CHECK(seen[2] == doctest::Approx(0.5));
    CHECK(seen[3] == doctest::Approx(0.25));
}

TEST_CASE("euler runs without recording a graph") {
    auto z = TensorF::zeros({1, 1}).set_requires_grad(true);
    auto y = TensorF::zeros({1, 1});
    bool grad_seen = false;
    auto out = euler_sample(z, y, 2, [&](const TensorF& zt, const std::vector<float>&,
                                         const TensorF&) {
        grad_seen = grad_seen || autograd::enabled();
        return mul(zt, zt);
    });
    CHECK_FALSE(grad_seen);
    CHECK_FALSE(out.requires_grad());
}

TEST_CASE("euler error reporting") {
    auto z = TensorF::zeros({1, 2});
    auto y = TensorF::zeros({1, 2});
    CHECK_THROWS_AS(euler_sample(z, y, 0, [](auto&, auto&, auto&) { return TensorF(); }),
                    ShapeError);

    // non-finite state is reported with the failing step index
    int calls = 0;
    auto bad = [&](const TensorF&, const std::vector<float>&, const TensorF&) {
        ++calls;
        if (calls == 3)
            return TensorF::from_data({1, 2},
                                      {std::numeric_limits<float>::infinity(), 0.0f});
        return TensorF::zeros({1, 2});
    };
    CHECK_THROWS_WITH_AS(euler_sample(z, y, 5, bad), doctest::Contains("step 3"),
                         NumericError);

    auto wrong_shape = [](const TensorF&, const std::vector<float>&, const TensorF&) {
        return TensorF::zeros({2, 2});
    };
    CHECK_THROWS_AS(euler_sample(z, y, 2, wrong_shape), ShapeError);
}

TEST_CASE("flow_loss falls monotonically through training, smoothed over 10-step windows") {
    // Desk-scale run on a one-pair dataset, sixteen (s, eps) draws per step.
    // The frozen recipe pins data, init, draw order, and the kernel backend
    // so the loss curve is reproducible everywhere. The smoothed curve must
    // descend strictly until it reaches the stochastic-estimator floor, stay
    // under that floor afterwards, and end far below where it started.
    auto saved = kernels::active_backend();
    kernels::set_backend(kernels::Backend::scalar);

    Rng drng(37);
    std::vector<float> iv(3 * 32 * 32);
    for (auto& x : iv) x = static_cast<float>(drng.uniform());
    auto image = TensorF::from_data({3, 32, 32}, std::move(iv));
    Mask mask;
    mask.height = 32;
    mask.width = 32;
    mask.data.assign(32 * 32, 0);
    for (size_t y = 0; y < 32; ++y)
        for (size_t x = 0; x < 32; ++x) {
            const double dy = (y + 0.5 - 12.0) / 7.0;
            const double dx = (x + 0.5 - 15.0) / 9.0;
            if (dy * dy + dx * dx <= 1.0) mask.at(y, x) = 1;
        }

    PassthroughCodec<float> codec{CodecConfig{}};
    TensorF z0_one, y_one;
    {
        autograd::NoGrad ng;
        z0_one = codec.encode(mask_to_tensor3(mask));
        y_one = codec.encode(image);
    }
    const size_t B = 16;
    std::vector<float> z0r, yr;
    for (size_t b = 0; b < B; ++b) {
        z0r.insert(z0r.end(), z0_one.values().begin(), z0_one.values().end());
        yr.insert(yr.end(), y_one.values().begin(), y_one.values().end());
    }
    auto z0 = TensorF::from_data({B, 4, 4, 4}, std::move(z0r));
    auto y = TensorF::from_data({B, 4, 4, 4}, std::move(yr));

    DiTConfig cfg;
    cfg.latent_channels = 4;
    cfg.latent_h = 4;
    cfg.latent_w = 4;
    cfg.patch = 2;
    cfg.hidden = 64;
    cfg.depth = 2;
    cfg.heads = 4;
    cfg.time_freq = 256;
    Rng init(14);
    auto params = init_dit<float>(cfg, init);
    auto named = params.named();
    AdamConfig<float> acfg;
    acfg.lr = 8e-3f;
    Adam<float> opt(acfg);
    Rng rng(6);
    auto vel = [&](const TensorF& zs, const std::vector<float>& s, const TensorF& yy) {
        return dit_forward(params, zs, s, yy, true, &rng).velocity;
    };

    std::vector<float> losses;
    for (int step = 0; step < 300; ++step) {
        if (step == 240) opt.set_lr(8e-3f / 5.0f);
        auto loss = flow_loss(z0, y, rng, vel);
        losses.push_back(loss.values()[0]);
        loss.backward();
        opt.step(named);
        opt.zero_grad(named);
    }
    kernels::set_backend(saved);

    std::vector<double> wm;
    for (size_t s0 = 0; s0 + 10 <= losses.size(); s0 += 10) {
        double m = 0.0;
        for (size_t i = 0; i < 10; ++i) m += losses[s0 + i];
        wm.push_back(m / 10.0);
    }
    REQUIRE(wm.size() == 30);
    const double floor_cap = 0.15 * wm[0];
    for (size_t k = 1; k < wm.size(); ++k) {
        INFO("window ", k, ": ", wm[k - 1], " -> ", wm[k]);
        CHECK(wm[k] <= std::max(wm[k - 1], floor_cap));
    }
    CHECK(wm.back() < 0.05 * wm[0]);
}
