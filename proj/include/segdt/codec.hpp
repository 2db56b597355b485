#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "segdt/adam.hpp"
#include "segdt/errors.hpp"
#include "segdt/image.hpp"
#include "segdt/nn.hpp"
#include "segdt/rng.hpp"
#include "segdt/tensor.hpp"

namespace segdt {

struct CodecConfig {
    std::size_t in_channels = 3;
    std::size_t latent_channels = 4;
    std::size_t downsample = 8;
    std::size_t base_width = 16;
};

enum class CodecKind : uint32_t { passthrough = 0, conv = 1 };

// Image <-> latent map with an 8x spatial reduction. Deterministic in both
// directions; decode() keeps an invocation counter so training code can prove
// it never touched the decoder.
template <typename T>
class Codec {
public:
    explicit Codec(CodecConfig cfg) : cfg_(cfg) {}
    virtual ~Codec() = default;

    const CodecConfig& config() const { return cfg_; }
    virtual CodecKind kind() const = 0;
    virtual NamedParams<T> named() = 0;

    // (C,H,W) or (B,C,H,W), values in [0,1], H and W divisible by the factor.
    Tensor<T> encode(const Tensor<T>& image) {
        check_rank_channels(image, cfg_.in_channels, "encode");
        const std::size_t H = image.dim(image.rank() - 2), W = image.dim(image.rank() - 1);
        if (H % cfg_.downsample != 0 || W % cfg_.downsample != 0)
            throw DataError("encode: " + std::to_string(H) + "x" + std::to_string(W) +
                            " not divisible by " + std::to_string(cfg_.downsample));
        for (T v : image.values())
            if (!(v >= T(0) && v <= T(1)))
                throw DataError("encode: pixel values outside [0,1]");
        Tensor<T> z = do_encode(as_batch(image));
        return image.rank() == 3 ? reshape(z, {z.dim(1), z.dim(2), z.dim(3)}) : z;
    }

    // (C',H',W') or (B,C',H',W') -> 3-channel images in [0,1].
    Tensor<T> decode(const Tensor<T>& latent) {
        check_rank_channels(latent, cfg_.latent_channels, "decode");
        ++decode_calls_;
        Tensor<T> x = do_decode(as_batch(latent));
        return latent.rank() == 3 ? reshape(x, {x.dim(1), x.dim(2), x.dim(3)}) : x;
    }

    std::size_t decode_calls() const { return decode_calls_; }
    void reset_decode_calls() { decode_calls_ = 0; }

protected:
    virtual Tensor<T> do_encode(const Tensor<T>& x) = 0;
    virtual Tensor<T> do_decode(const Tensor<T>& z) = 0;

    CodecConfig cfg_;

private:
    static void check_rank_channels(const Tensor<T>& t, std::size_t want_c, const char* who) {
        if (t.rank() != 3 && t.rank() != 4)
            throw ShapeError(std::string(who) + ": want rank 3 or 4, got " +
                             shape_str(t.shape()));
        std::size_t c = t.rank() == 3 ? t.dim(0) : t.dim(1);
        if (c != want_c)
            throw ShapeError(std::string(who) + ": expected " + std::to_string(want_c) +
                             " channels, got " + std::to_string(c));
    }

    static Tensor<T> as_batch(const Tensor<T>& t) {
        if (t.rank() == 3) return reshape(t, {1, t.dim(0), t.dim(1), t.dim(2)});
        return t;
    }

    std::size_t decode_calls_ = 0;
};

namespace detail {

// Rows of the fixed channel lift: identity RGB plus a luminance channel.
inline std::array<std::array<double, 3>, 4> lift_matrix() {
    return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1.0 / 3, 1.0 / 3, 1.0 / 3}}};
}

// Left pseudoinverse of the 4x3 lift, solved from the normal equations.
inline std::array<std::array<double, 4>, 3> lift_pinv() {
    auto A = lift_matrix();
    double ata[3][3] = {};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int r = 0; r < 4; ++r) ata[i][j] += A[r][i] * A[r][j];
    // invert the 3x3 by Gauss-Jordan
    double aug[3][6] = {};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) aug[i][j] = ata[i][j];
        aug[i][3 + i] = 1.0;
    }
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(aug[r][col]) > std::abs(aug[piv][col])) piv = r;
        for (int j = 0; j < 6; ++j) std::swap(aug[col][j], aug[piv][j]);
        double d = aug[col][col];
        for (int j = 0; j < 6; ++j) aug[col][j] /= d;
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            double f = aug[r][col];
            for (int j = 0; j < 6; ++j) aug[r][j] -= f * aug[col][j];
        }
    }
    std::array<std::array<double, 4>, 3> pinv{};
    for (int i = 0; i < 3; ++i)
        for (int r = 0; r < 4; ++r) {
            double s = 0;
            for (int j = 0; j < 3; ++j) s += aug[i][3 + j] * A[r][j];
            pinv[i][r] = s;
        }
    return pinv;
}

} // namespace detail

// Training-free codec: per-channel bilinear 8x downsample, fixed linear lift
// 3 -> 4 channels; decode applies the pseudoinverse, upsamples, clamps.
// decode(encode(x)) equals bilinear down-then-up of x.
template <typename T>
class PassthroughCodec : public Codec<T> {
public:
    explicit PassthroughCodec(CodecConfig cfg = {}) : Codec<T>(cfg) {
        if (cfg.in_channels != 3 || cfg.latent_channels != 4)
            throw DataError("PassthroughCodec: fixed to 3 -> 4 channels");
    }

    CodecKind kind() const override { return CodecKind::passthrough; }
    NamedParams<T> named() override { return {}; }

protected:
    Tensor<T> do_encode(const Tensor<T>& x) override {
        const std::size_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
        const std::size_t h = H / this->cfg_.downsample, w = W / this->cfg_.downsample;
        const std::vector<T>& v = x.values();
        auto A = detail::lift_matrix();
        std::vector<T> down(B * 3 * h * w);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < 3; ++c)
                bilinear_resize_plane(v.data() + (b * 3 + c) * H * W, H, W,
                                      down.data() + (b * 3 + c) * h * w, h, w);
        std::vector<T> z(B * 4 * h * w);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < 4; ++c)
                for (std::size_t i = 0; i < h * w; ++i) {
                    double s = 0;
                    for (std::size_t k = 0; k < 3; ++k)
                        s += A[c][k] * double(down[(b * 3 + k) * h * w + i]);
                    z[(b * 4 + c) * h * w + i] = static_cast<T>(s);
                }
        return Tensor<T>::from_data({B, 4, h, w}, std::move(z));
    }

    Tensor<T> do_decode(const Tensor<T>& z) override {
        const std::size_t B = z.dim(0), h = z.dim(2), w = z.dim(3);
        const std::size_t H = h * this->cfg_.downsample, W = w * this->cfg_.downsample;
        const std::vector<T>& v = z.values();
        auto pinv = detail::lift_pinv();
        std::vector<T> mixed(B * 3 * h * w);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < h * w; ++i) {
                    double s = 0;
                    for (std::size_t k = 0; k < 4; ++k)
                        s += pinv[c][k] * double(v[(b * 4 + k) * h * w + i]);
                    mixed[(b * 3 + c) * h * w + i] = static_cast<T>(s);
                }
        std::vector<T> out(B * 3 * H * W);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < 3; ++c)
                bilinear_resize_plane(mixed.data() + (b * 3 + c) * h * w, h, w,
                                      out.data() + (b * 3 + c) * H * W, H, W);
        for (T& x : out) x = std::clamp(x, T(0), T(1));
        return Tensor<T>::from_data({B, 3, H, W}, std::move(out));
    }
};

// Small strided-conv autoencoder: three 2x encoder stages (width w, 2w, 4w)
// plus a pointwise head to C' channels; mirrored nearest-upsample decoder
// ending in a sigmoid.
template <typename T>
class ConvCodec : public Codec<T> {
public:
    explicit ConvCodec(CodecConfig cfg, Rng& rng) : Codec<T>(cfg) {
        const std::size_t w = cfg.base_width;
        enc_w_.resize(4);
        enc_b_.resize(4);
        dec_w_.resize(4);
        dec_b_.resize(4);
        std::array<std::size_t, 5> enc_ch = {cfg.in_channels, w, 2 * w, 4 * w,
                                             cfg.latent_channels};
        std::array<std::size_t, 5> dec_ch = {cfg.latent_channels, 4 * w, 2 * w, w,
                                             cfg.in_channels};
        for (int i = 0; i < 4; ++i) {
            enc_w_[i] = conv_init(enc_ch[i + 1], enc_ch[i], rng);
            enc_b_[i] = bias_init(enc_ch[i + 1], enc_ch[i], rng);
            dec_w_[i] = conv_init(dec_ch[i + 1], dec_ch[i], rng);
            dec_b_[i] = bias_init(dec_ch[i + 1], dec_ch[i], rng);
        }
    }

    CodecKind kind() const override { return CodecKind::conv; }

    NamedParams<T> named() override {
        NamedParams<T> out;
        for (int i = 0; i < 4; ++i) {
            out.emplace_back("enc." + std::to_string(i) + ".weight", enc_w_[i]);
            out.emplace_back("enc." + std::to_string(i) + ".bias", enc_b_[i]);
        }
        for (int i = 0; i < 4; ++i) {
            out.emplace_back("dec." + std::to_string(i) + ".weight", dec_w_[i]);
            out.emplace_back("dec." + std::to_string(i) + ".bias", dec_b_[i]);
        }
        return out;
    }

protected:
    Tensor<T> do_encode(const Tensor<T>& x) override {
        Tensor<T> h = x;
        for (int i = 0; i < 4; ++i) {
            std::size_t stride = i < 3 ? 2 : 1;
            h = conv2d(h, enc_w_[i], enc_b_[i], stride, 1);
            if (i < 3) h = gelu_tanh(h);
        }
        return h;
    }

    Tensor<T> do_decode(const Tensor<T>& z) override {
        Tensor<T> h = conv2d(z, dec_w_[0], dec_b_[0], 1, 1);
        h = gelu_tanh(h);
        for (int i = 1; i < 4; ++i) {
            h = upsample_nearest2(h);
            h = conv2d(h, dec_w_[i], dec_b_[i], 1, 1);
            h = i < 3 ? gelu_tanh(h) : sigmoid(h);
        }
        return h;
    }

private:
    Tensor<T> conv_init(std::size_t co, std::size_t ci, Rng& rng) {
        T bound = T(1) / std::sqrt(T(ci * 9));
        std::vector<T> v(co * ci * 9);
        for (T& x : v) x = static_cast<T>(rng.uniform(-double(bound), double(bound)));
        Tensor<T> t = Tensor<T>::from_data({co, ci, 3, 3}, std::move(v));
        t.set_requires_grad(true);
        return t;
    }
    Tensor<T> bias_init(std::size_t co, std::size_t ci, Rng& rng) {
        T bound = T(1) / std::sqrt(T(ci * 9));
        std::vector<T> v(co);
        for (T& x : v) x = static_cast<T>(rng.uniform(-double(bound), double(bound)));
        Tensor<T> t = Tensor<T>::from_data({co}, std::move(v));
        t.set_requires_grad(true);
        return t;
    }

    std::vector<Tensor<T>> enc_w_, enc_b_, dec_w_, dec_b_;
};

// Stack (3,H,W) images into one (B,3,H,W) constant batch.
template <typename T>
Tensor<T> stack_images(const std::vector<Tensor<T>>& images,
                       const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw DataError("stack_images: empty batch");
    const Shape& s0 = images.at(indices[0]).shape();
    if (s0.size() != 3) throw ShapeError("stack_images: want (C,H,W), got " + shape_str(s0));
    std::size_t per = shape_numel(s0);
    std::vector<T> out(indices.size() * per);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensor<T>& im = images.at(indices[i]);
        if (im.shape() != s0)
            throw ShapeError("stack_images: mixed shapes " + shape_str(s0) + " vs " +
                             shape_str(im.shape()));
        std::copy(im.values().begin(), im.values().end(), out.begin() + i * per);
    }
    return Tensor<T>::from_data({indices.size(), s0[0], s0[1], s0[2]}, std::move(out));
}

// Reconstruction training: Adam on pixel MSE of decode(encode(x)).
// Returns the mean loss per epoch. Deterministic for a fixed rng state.
template <typename T>
std::vector<T> train_codec(Codec<T>& codec, const std::vector<Tensor<T>>& images,
                           std::size_t epochs, T lr, std::size_t batch_size, Rng& rng) {
    if (images.empty()) throw DataError("train_codec: empty dataset");
    if (batch_size == 0) throw DataError("train_codec: batch size must be positive");
    NamedParams<T> params = codec.named();
    if (params.empty()) throw DataError("train_codec: codec has no trainable parameters");
    AdamConfig<T> acfg;
    acfg.lr = lr;
    Adam<T> opt(acfg);
    std::vector<std::size_t> order(images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<T> epoch_loss;
    for (std::size_t e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        double total = 0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::size_t end = std::min(start + batch_size, order.size());
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            Tensor<T> x = stack_images(images, idx);
            Tensor<T> recon = codec.decode(codec.encode(x));
            Tensor<T> loss = mse(recon, x);
            loss.backward();
            opt.step(params);
            opt.zero_grad(params);
            total += double(loss.item());
            ++steps;
        }
        epoch_loss.push_back(static_cast<T>(total / double(steps)));
    }
    return epoch_loss;
}

} // namespace segdt
