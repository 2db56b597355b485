#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "gradcheck.hpp"
#include "segdt/dit.hpp"
#include "segdt/flow.hpp"

using namespace segdt;
using segdt::testing::gradcheck;
using segdt::testing::randn;

namespace {

DiTConfig desk_config() {
    DiTConfig cfg;
    cfg.latent_channels = 4;
    cfg.latent_h = 4;
    cfg.latent_w = 4;
    cfg.patch = 2; // S = 4
    cfg.hidden = 8;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.mlp_ratio = 4;
    cfg.time_freq = 16;
    return cfg;
}

template <class T>
void randomize_params(DiTParams<T>& p, Rng& rng, double scale = 0.3) {
    for (auto& [name, t] : p.named())
        for (auto& v : t.values()) v = static_cast<T>(rng.normal() * scale);
}

} // namespace

TEST_CASE("count_params full scale is near ten million") {
    DiTConfig cfg; // defaults are the full-scale architecture
    const std::size_t n = count_params(cfg);
    CHECK(n >= 8960000);
    CHECK(n <= 10940000);
    // the closed form and the allocated parameters agree
    Rng rng(1);
    DiTConfig small = desk_config();
    auto params = init_dit<float>(small, rng);
    std::size_t total = 0;
    for (auto& [name, t] : params.named()) total += t.numel();
    CHECK(total == count_params(small));
}

TEST_CASE("count_params closed form at depth zero and linearity in depth") {
    DiTConfig cfg = desk_config();
    cfg.depth = 0;
    // hand count: two patch embedders (16*8+8 each), pos 4*8, time mlp
    // (16*8+8)+(8*8+8), final mod 8*16+16, final linear 8*32+32
    const std::size_t expected = 2 * (16 * 8 + 8) + 4 * 8 + (16 * 8 + 8) + (8 * 8 + 8) +
                                 (8 * 16 + 16) + (8 * 32 + 32);
    CHECK(count_params(cfg) == expected);

    DiTConfig d1 = cfg, d12 = cfg, d13 = cfg;
    d1.depth = 1;
    d12.depth = 12;
    d13.depth = 13;
    const std::size_t block = count_params(d1) - count_params(cfg);
    CHECK(count_params(d12) == count_params(cfg) + 12 * block);
    CHECK(count_params(d13) - count_params(d12) == block);
}

TEST_CASE("config validation") {
    DiTConfig cfg = desk_config();
    cfg.latent_h = 5;
    CHECK_THROWS_AS(cfg.validate(), ShapeError);
    cfg = desk_config();
    cfg.heads = 3; // 8 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), ShapeError);
    cfg = desk_config();
    cfg.time_freq = 15;
    CHECK_THROWS_AS(cfg.validate(), ShapeError);
}

TEST_CASE("forward output shapes at desk scale") {
    Rng rng(2);
    auto cfg = desk_config();
    auto p = init_dit<float>(cfg, rng);
    auto z = testing::randn(rng, {0, 0}); // unused, silence lints
    (void)z;
    std::vector<float> zv(2 * 4 * 4 * 4), yv(zv.size());
    for (auto& x : zv) x = float(rng.normal());
    for (auto& x : yv) x = float(rng.normal());
    auto z_t = TensorF::from_data({2, 4, 4, 4}, zv);
    auto y = TensorF::from_data({2, 4, 4, 4}, yv);
    auto out = dit_forward(p, z_t, {0.5f, 0.25f}, y);
    CHECK(out.velocity.shape() == Shape{2, 4, 4, 4});
    CHECK(out.variance.shape() == Shape{2, 4, 4, 4});

    CHECK_THROWS_AS(dit_forward(p, z_t, {0.5f}, y), ShapeError);
    CHECK_THROWS_AS(dit_forward(p, TensorF::zeros({2, 3, 4, 4}), {0.5f, 0.5f}, y), ShapeError);
}

TEST_CASE("timestep features: endpoints and injectivity on the sampling grid") {
    auto f0 = timestep_features<float>({0.0f}, 16);
    for (int i = 0; i < 8; ++i) {
        CHECK(f0.values()[i] == 0.0f);      // sine half
        CHECK(f0.values()[8 + i] == 1.0f);  // cosine half
    }
    CHECK_THROWS_AS(timestep_features<float>({1.5f}, 16), DataError);
    CHECK_THROWS_AS(timestep_features<float>({-0.1f}, 16), DataError);

    // the 15-step sampling grid gets pairwise distinct features
    const int T = 15;
    std::vector<float> grid;
    for (int t = 1; t <= T; ++t) grid.push_back(1.0f - float(t - 1) / T);
    auto feats = timestep_features<float>(grid, 256);
    for (int i = 0; i < T; ++i)
        for (int j = i + 1; j < T; ++j) {
            float maxdiff = 0;
            for (int k = 0; k < 256; ++k)
                maxdiff = std::max(maxdiff, std::fabs(feats.values()[i * 256 + k] -
                                                      feats.values()[j * 256 + k]));
            CAPTURE(i);
            CAPTURE(j);
            CHECK(maxdiff > 1e-3f);
        }
}

TEST_CASE("block is the identity at zero-gate initialization") {
    Rng rng(3);
    auto cfg = desk_config();
    auto p = init_dit<float>(cfg, rng);
    std::vector<float> zv(1 * 4 * 8), yv(zv.size()), tv(8);
    for (auto& x : zv) x = float(rng.normal());
    for (auto& x : yv) x = float(rng.normal());
    for (auto& x : tv) x = float(rng.normal());
    auto z = TensorF::from_data({1, 4, 8}, zv);
    auto y = TensorF::from_data({1, 4, 8}, yv);
    auto t_act = TensorF::from_data({1, 8}, tv);
    auto out = dit_block(p.blocks[0], z, t_act, y, cfg.heads, 0.0, false, nullptr);
    CHECK(out.values() == z.values()); // bitwise: gates are exactly zero
}

TEST_CASE("model output at init is the tiled final bias, independent of inputs") {
    Rng rng(4);
    auto cfg = desk_config();
    auto p = init_dit<float>(cfg, rng);
    std::vector<float> z1(1 * 4 * 4 * 4), z2(z1.size()), y1(z1.size()), y2(z1.size());
    for (auto& x : z1) x = float(rng.normal());
    for (auto& x : z2) x = float(rng.normal() * 3);
    for (auto& x : y1) x = float(rng.normal());
    for (auto& x : y2) x = float(rng.normal() * 2);
    auto o1 = dit_forward(p, TensorF::from_data({1, 4, 4, 4}, z1), {0.7f},
                          TensorF::from_data({1, 4, 4, 4}, y1));
    auto o2 = dit_forward(p, TensorF::from_data({1, 4, 4, 4}, z2), {0.7f},
                          TensorF::from_data({1, 4, 4, 4}, y2));
    CHECK(o1.velocity.values() == o2.velocity.values());
    CHECK(o1.variance.values() == o2.variance.values());

    // every token carries final_b, so each patch cell c,dy,dx repeats it
    const auto& fb = p.final_b.values();
    const std::size_t P = cfg.patch;
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t yy = 0; yy < 4; ++yy)
            for (std::size_t xx = 0; xx < 4; ++xx) {
                const float want = fb[(c * P + yy % P) * P + xx % P];
                CHECK(o1.velocity.values()[(c * 4 + yy) * 4 + xx] == doctest::Approx(want));
            }
}

TEST_CASE("block matches an inline recomposition of its sub-ops") {
    Rng rng(5);
    auto cfg = desk_config();
    auto p = init_dit<double>(cfg, rng);
    randomize_params(p, rng);
    const auto& bp = p.blocks[1];
    auto z = randn(rng, {2, 4, 8});
    auto y = randn(rng, {2, 4, 8});
    auto t_act = randn(rng, {2, 8});

    auto got = dit_block(bp, z, t_act, y, cfg.heads, 0.0, false, nullptr);

    // reference composition, written out longhand
    auto mod = linear(t_act, bp.mod_w, bp.mod_b);
    auto parts = split(mod, 1, {8, 8, 8, 8, 8, 8});
    auto r3 = [](const Tensor<double>& t) { return reshape(t, {2, 1, 8}); };
    auto g1 = r3(parts[0]), b1 = r3(parts[1]), a1 = r3(parts[2]);
    auto g2 = r3(parts[3]), b2 = r3(parts[4]), a2 = r3(parts[5]);
    auto sa_in = add(mul(g1, layer_norm(z)), b1);
    auto sa = linear(attention(linear(sa_in, bp.sa_wq, bp.sa_bq),
                               linear(sa_in, bp.sa_wk, bp.sa_bk),
                               linear(sa_in, bp.sa_wv, bp.sa_bv), 2),
                     bp.sa_wo, bp.sa_bo);
    auto z1 = add(z, mul(a1, sa));
    auto cn = add(mul(layer_norm(z1), bp.ca_norm_g), bp.ca_norm_b);
    auto ca = linear(attention(linear(cn, bp.ca_wq, bp.ca_bq),
                               linear(y, bp.ca_wk, bp.ca_bk),
                               linear(y, bp.ca_wv, bp.ca_bv), 2),
                     bp.ca_wo, bp.ca_bo);
    auto z2 = add(z1, ca);
    auto ff_in = add(mul(g2, layer_norm(z2)), b2);
    auto ff = linear(gelu_tanh(linear(ff_in, bp.ff_w1, bp.ff_b1)), bp.ff_w2, bp.ff_b2);
    auto want = add(z2, mul(a2, ff));

    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(got.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-12));
}

TEST_CASE("single token self-attention stays finite") {
    Rng rng(6);
    DiTConfig cfg = desk_config();
    cfg.latent_h = 2;
    cfg.latent_w = 2; // S = 1
    auto p = init_dit<float>(cfg, rng);
    randomize_params(p, rng, 0.2);
    std::vector<float> zv(1 * 4 * 2 * 2);
    for (auto& x : zv) x = float(rng.normal());
    auto z = TensorF::from_data({1, 4, 2, 2}, zv);
    auto out = dit_forward(p, z, {0.5f}, z);
    CHECK(out.velocity.shape() == Shape{1, 4, 2, 2});
}

TEST_CASE("full model gradient check against finite differences") {
    Rng rng(7);
    auto cfg = desk_config();
    auto p = init_dit<double>(cfg, rng);
    randomize_params(p, rng, 0.25);

    auto z_t = randn(rng, {2, 4, 4, 4});
    auto y = randn(rng, {2, 4, 4, 4});
    auto u = randn(rng, {2, 4, 4, 4});
    auto w = randn(rng, {2, 4, 4, 4});
    const std::vector<double> s = {0.3, 0.8};

    std::vector<TensorD> leaves;
    for (auto& [name, t] : p.named()) leaves.push_back(t);

    SUBCASE("velocity mse, the training objective") {
        gradcheck(leaves, [&] {
            auto out = dit_forward(p, z_t, s, y);
            return mse(out.velocity, u);
        });
    }
    SUBCASE("combined loss covering the variance head") {
        gradcheck(leaves, [&] {
            auto out = dit_forward(p, z_t, s, y);
            return add(mse(out.velocity, u), mse(out.variance, w));
        });
    }
}
