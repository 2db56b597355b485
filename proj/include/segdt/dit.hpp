#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "segdt/adam.hpp"
#include "segdt/nn.hpp"
#include "segdt/rng.hpp"
#include "segdt/tensor.hpp"

namespace segdt {

struct DiTConfig {
    std::size_t latent_channels = 4; // C'
    std::size_t latent_h = 32;       // H'
    std::size_t latent_w = 32;       // W'
    std::size_t patch = 2;           // P
    std::size_t hidden = 192;        // D
    std::size_t depth = 12;
    std::size_t heads = 3;
    std::size_t mlp_ratio = 4;
    std::size_t time_freq = 256; // sinusoidal feature width, must be even
    double drop_path = 0.0;

    std::size_t tokens() const { return (latent_h / patch) * (latent_w / patch); }
    std::size_t patch_feat() const { return latent_channels * patch * patch; }

    void validate() const {
        if (patch == 0 || latent_h % patch != 0 || latent_w % patch != 0)
            throw ShapeError("DiTConfig: latent grid " + std::to_string(latent_h) + "x" +
                             std::to_string(latent_w) + " not divisible by patch " +
                             std::to_string(patch));
        if (heads == 0 || hidden % heads != 0)
            throw ShapeError("DiTConfig: hidden " + std::to_string(hidden) +
                             " not divisible by heads " + std::to_string(heads));
        if (time_freq % 2 != 0)
            throw ShapeError("DiTConfig: time_freq must be even");
        if (drop_path < 0.0 || drop_path >= 1.0)
            throw ShapeError("DiTConfig: drop_path must be in [0,1)");
    }
};

// Exact scalar parameter count for a config, computed from the layer shapes.
inline std::size_t count_params(const DiTConfig& cfg) {
    auto lin = [](std::size_t in, std::size_t out) { return in * out + out; };
    const std::size_t D = cfg.hidden;
    const std::size_t pf = cfg.patch_feat();
    const std::size_t block = lin(D, 6 * D)            // modulation projection
                              + 4 * lin(D, D)          // self-attention q/k/v/out
                              + 2 * D                  // cross-attention norm affine
                              + 4 * lin(D, D)          // cross-attention q/k/v/out
                              + lin(D, cfg.mlp_ratio * D) + lin(cfg.mlp_ratio * D, D);
    return 2 * lin(pf, D)                       // input + condition patch embedders
           + cfg.tokens() * D                   // positional embedding
           + lin(cfg.time_freq, D) + lin(D, D)  // timestep MLP
           + cfg.depth * block                  //
           + lin(D, 2 * D)                      // final modulation
           + lin(D, 2 * pf);                    // final linear
}

template <class T>
struct DiTBlockParams {
    Tensor<T> mod_w, mod_b; // D -> 6D, order (g1, b1, a1, g2, b2, a2)
    Tensor<T> sa_wq, sa_bq, sa_wk, sa_bk, sa_wv, sa_bv, sa_wo, sa_bo;
    Tensor<T> ca_norm_g, ca_norm_b; // learned affine on the cross-attn query norm
    Tensor<T> ca_wq, ca_bq, ca_wk, ca_bk, ca_wv, ca_bv, ca_wo, ca_bo;
    Tensor<T> ff_w1, ff_b1, ff_w2, ff_b2;
};

template <class T>
struct DiTParams {
    DiTConfig cfg;
    Tensor<T> patch_w_in, patch_b_in;     // input stream embedder
    Tensor<T> patch_w_cond, patch_b_cond; // condition stream embedder
    Tensor<T> pos_embed;                  // (S, D), input stream only
    Tensor<T> t_w1, t_b1, t_w2, t_b2;     // timestep MLP
    std::vector<DiTBlockParams<T>> blocks;
    Tensor<T> final_mod_w, final_mod_b; // D -> 2D, order (gf, bf)
    Tensor<T> final_w, final_b;         // D -> 2*C'*P^2

    NamedParams<T> named() {
        NamedParams<T> out;
        auto put = [&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); };
        put("patch_embed.in.weight", patch_w_in);
        put("patch_embed.in.bias", patch_b_in);
        put("patch_embed.cond.weight", patch_w_cond);
        put("patch_embed.cond.bias", patch_b_cond);
        put("pos_embed", pos_embed);
        put("time_mlp.0.weight", t_w1);
        put("time_mlp.0.bias", t_b1);
        put("time_mlp.1.weight", t_w2);
        put("time_mlp.1.bias", t_b2);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "blocks." + std::to_string(i) + ".";
            auto& b = blocks[i];
            put(p + "mod.weight", b.mod_w);
            put(p + "mod.bias", b.mod_b);
            put(p + "self_attn.q.weight", b.sa_wq);
            put(p + "self_attn.q.bias", b.sa_bq);
            put(p + "self_attn.k.weight", b.sa_wk);
            put(p + "self_attn.k.bias", b.sa_bk);
            put(p + "self_attn.v.weight", b.sa_wv);
            put(p + "self_attn.v.bias", b.sa_bv);
            put(p + "self_attn.out.weight", b.sa_wo);
            put(p + "self_attn.out.bias", b.sa_bo);
            put(p + "cross_attn.norm.weight", b.ca_norm_g);
            put(p + "cross_attn.norm.bias", b.ca_norm_b);
            put(p + "cross_attn.q.weight", b.ca_wq);
            put(p + "cross_attn.q.bias", b.ca_bq);
            put(p + "cross_attn.k.weight", b.ca_wk);
            put(p + "cross_attn.k.bias", b.ca_bk);
            put(p + "cross_attn.v.weight", b.ca_wv);
            put(p + "cross_attn.v.bias", b.ca_bv);
            put(p + "cross_attn.out.weight", b.ca_wo);
            put(p + "cross_attn.out.bias", b.ca_bo);
            put(p + "ffn.0.weight", b.ff_w1);
            put(p + "ffn.0.bias", b.ff_b1);
            put(p + "ffn.1.weight", b.ff_w2);
            put(p + "ffn.1.bias", b.ff_b2);
        }
        put("final.mod.weight", final_mod_w);
        put("final.mod.bias", final_mod_b);
        put("final.linear.weight", final_w);
        put("final.linear.bias", final_b);
        return out;
    }
};

namespace detail {

// PyTorch-style Linear init: W and b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
// The nonzero biases matter: the zero-initialized gates recover gradient
// signal through them once training starts.
template <class T>
Tensor<T> uniform_init(Rng& rng, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::from_data(std::move(shape), std::move(v)).set_requires_grad(true);
}

template <class T>
Tensor<T> zeros_param(Shape shape) {
    return Tensor<T>::zeros(std::move(shape)).set_requires_grad(true);
}

} // namespace detail

template <class T>
DiTParams<T> init_dit(const DiTConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t D = cfg.hidden;
    const std::size_t pf = cfg.patch_feat();
    const std::size_t S = cfg.tokens();
    DiTParams<T> p;
    p.cfg = cfg;
    auto lin = [&](std::size_t in, std::size_t out, Tensor<T>& w, Tensor<T>& b) {
        w = detail::uniform_init<T>(rng, {in, out}, in);
        b = detail::uniform_init<T>(rng, {out}, in);
    };
    lin(pf, D, p.patch_w_in, p.patch_b_in);
    lin(pf, D, p.patch_w_cond, p.patch_b_cond);
    {
        std::vector<T> v(S * D);
        for (auto& x : v) x = static_cast<T>(rng.normal() * 0.02);
        p.pos_embed = Tensor<T>::from_data({S, D}, std::move(v)).set_requires_grad(true);
    }
    lin(cfg.time_freq, D, p.t_w1, p.t_b1);
    lin(D, D, p.t_w2, p.t_b2);
    p.blocks.resize(cfg.depth);
    for (auto& b : p.blocks) {
        b.mod_w = detail::zeros_param<T>({D, 6 * D});
        b.mod_b = detail::zeros_param<T>({6 * D});
        lin(D, D, b.sa_wq, b.sa_bq);
        lin(D, D, b.sa_wk, b.sa_bk);
        lin(D, D, b.sa_wv, b.sa_bv);
        lin(D, D, b.sa_wo, b.sa_bo);
        b.ca_norm_g = Tensor<T>::full({D}, T(1)).set_requires_grad(true);
        b.ca_norm_b = detail::zeros_param<T>({D});
        lin(D, D, b.ca_wq, b.ca_bq);
        lin(D, D, b.ca_wk, b.ca_bk);
        lin(D, D, b.ca_wv, b.ca_bv);
        b.ca_wo = detail::zeros_param<T>({D, D}); // gate: block starts as identity
        b.ca_bo = detail::zeros_param<T>({D});
        lin(D, cfg.mlp_ratio * D, b.ff_w1, b.ff_b1);
        lin(cfg.mlp_ratio * D, D, b.ff_w2, b.ff_b2);
    }
    p.final_mod_w = detail::zeros_param<T>({D, 2 * D});
    p.final_mod_b = detail::zeros_param<T>({2 * D});
    lin(D, 2 * pf, p.final_w, p.final_b);
    return p;
}

// Sinusoidal features of the diffusion time: s is scaled by 1000, the first
// half of the feature vector is sine, the second half cosine, frequencies
// fall geometrically from 1 to ~1/10^4.
template <class T>
Tensor<T> timestep_features(const std::vector<T>& s, std::size_t freq_dim) {
    if (freq_dim % 2 != 0) throw ShapeError("timestep_features: odd feature width");
    const std::size_t half = freq_dim / 2;
    for (auto x : s)
        if (!(x >= T(0) && x <= T(1)))
            throw DataError("timestep_features: s=" + std::to_string(static_cast<double>(x)) +
                            " outside [0,1]");
    std::vector<T> out(s.size() * freq_dim);
    constexpr double kLogMaxPeriod = 9.210340371976184; // ln(10000)
    for (std::size_t b = 0; b < s.size(); ++b) {
        const double t = static_cast<double>(s[b]) * 1000.0;
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-kLogMaxPeriod * static_cast<double>(i) /
                                         static_cast<double>(half));
            out[b * freq_dim + i] = static_cast<T>(std::sin(t * freq));
            out[b * freq_dim + half + i] = static_cast<T>(std::cos(t * freq));
        }
    }
    return Tensor<T>::from_data({s.size(), freq_dim}, std::move(out));
}

namespace detail {

// (B, 6D) -> six (B, 1, D) chunks ready to broadcast over tokens
template <class T>
std::vector<Tensor<T>> chunk_modulation(const Tensor<T>& mod, std::size_t n) {
    const std::size_t B = mod.dim(0);
    const std::size_t D = mod.dim(1) / n;
    auto parts = split(mod, 1, std::vector<std::size_t>(n, D));
    std::vector<Tensor<T>> out;
    out.reserve(n);
    for (auto& p : parts) out.push_back(reshape(p, {B, 1, D}));
    return out;
}

} // namespace detail

// One transformer block. z: (B,S,D) input tokens, t_act: gelu of the time
// embedding (B,D), y_tok: (B,S,D) condition tokens.
template <class T>
Tensor<T> dit_block(const DiTBlockParams<T>& bp, const Tensor<T>& z, const Tensor<T>& t_act,
                    const Tensor<T>& y_tok, std::size_t heads, double drop_path_rate,
                    bool training, Rng* rng) {
    if (z.shape() != y_tok.shape())
        throw ShapeError("dit_block: tokens " + shape_str(z.shape()) + " vs condition " +
                         shape_str(y_tok.shape()));
    Rng dummy(0);
    Rng& dp_rng = rng ? *rng : dummy;
    if (training && drop_path_rate > 0.0 && !rng)
        throw ShapeError("dit_block: drop_path needs an rng in training mode");

    auto mods = detail::chunk_modulation(linear(t_act, bp.mod_w, bp.mod_b), 6);
    const auto &g1 = mods[0], &b1 = mods[1], &a1 = mods[2];
    const auto &g2 = mods[3], &b2 = mods[4], &a2 = mods[5];

    auto sa_in = add(mul(g1, layer_norm(z)), b1);
    auto sa = linear(attention(linear(sa_in, bp.sa_wq, bp.sa_bq),
                               linear(sa_in, bp.sa_wk, bp.sa_bk),
                               linear(sa_in, bp.sa_wv, bp.sa_bv), heads),
                     bp.sa_wo, bp.sa_bo);
    auto z1 = add(z, mul(a1, drop_path(sa, drop_path_rate, training, dp_rng)));

    auto cn = add(mul(layer_norm(z1), bp.ca_norm_g), bp.ca_norm_b);
    auto ca = linear(attention(linear(cn, bp.ca_wq, bp.ca_bq),
                               linear(y_tok, bp.ca_wk, bp.ca_bk),
                               linear(y_tok, bp.ca_wv, bp.ca_bv), heads),
                     bp.ca_wo, bp.ca_bo);
    auto z2 = add(z1, drop_path(ca, drop_path_rate, training, dp_rng));

    auto ff_in = add(mul(g2, layer_norm(z2)), b2);
    auto ff = linear(gelu_tanh(linear(ff_in, bp.ff_w1, bp.ff_b1)), bp.ff_w2, bp.ff_b2);
    return add(z2, mul(a2, drop_path(ff, drop_path_rate, training, dp_rng)));
}

template <class T>
struct ModelOutput {
    Tensor<T> velocity;
    Tensor<T> variance;
};

// Full denoiser: z_t and y are (B, C', H', W') latents, s holds one time
// value per sample. Returns the velocity and variance heads, each C' deep.
template <class T>
ModelOutput<T> dit_forward(const DiTParams<T>& p, const Tensor<T>& z_t,
                           const std::vector<T>& s, const Tensor<T>& y,
                           bool training = false, Rng* rng = nullptr) {
    const auto& cfg = p.cfg;
    const Shape want = {s.size(), cfg.latent_channels, cfg.latent_h, cfg.latent_w};
    if (z_t.shape() != want)
        throw ShapeError("dit_forward: z_t " + shape_str(z_t.shape()) + ", expected " +
                         shape_str(want));
    if (y.shape() != want)
        throw ShapeError("dit_forward: y " + shape_str(y.shape()) + ", expected " +
                         shape_str(want));

    auto tok = add(linear(patchify(z_t, cfg.patch), p.patch_w_in, p.patch_b_in), p.pos_embed);
    auto y_tok = linear(patchify(y, cfg.patch), p.patch_w_cond, p.patch_b_cond);

    auto t_feat = timestep_features(s, cfg.time_freq);
    auto t_emb = linear(gelu_tanh(linear(t_feat, p.t_w1, p.t_b1)), p.t_w2, p.t_b2);
    auto t_act = gelu_tanh(t_emb);

    for (const auto& b : p.blocks)
        tok = dit_block(b, tok, t_act, y_tok, cfg.heads, cfg.drop_path, training, rng);

    auto fmods = detail::chunk_modulation(linear(t_act, p.final_mod_w, p.final_mod_b), 2);
    auto h = add(mul(fmods[0], layer_norm(tok)), fmods[1]);
    auto out = linear(h, p.final_w, p.final_b);
    auto grid = unpatchify(out, 2 * cfg.latent_channels, cfg.latent_h, cfg.latent_w, cfg.patch);
    auto heads2 = split(grid, 1, {cfg.latent_channels, cfg.latent_channels});
    return {heads2[0], heads2[1]};
}

} // namespace segdt
