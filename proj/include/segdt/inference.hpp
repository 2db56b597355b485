#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segdt/codec.hpp"
#include "segdt/dit.hpp"
#include "segdt/flow.hpp"
#include "segdt/image.hpp"
#include "segdt/metrics.hpp"

namespace segdt {

struct InferenceConfig {
    int steps = 15;
    double threshold = 0.2;
    std::uint64_t seed = 0;
    bool batch = false; // run all images through one batched sampler call
};

inline void check_inference_config(const InferenceConfig& cfg) {
    if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0))
        throw DataError("inference: threshold " + std::to_string(cfg.threshold) +
                        " outside (0,1)");
    if (cfg.steps < 1) throw DataError("inference: steps must be >= 1");
}

struct SegmentationMask {
    Mask mask;
    std::string image_id;
    std::string checkpoint_id;
    InferenceConfig config;
};

// Channel-mean grayscale of a decoded (3,H,W) image, then strict > threshold.
// A pixel exactly at the threshold stays background.
inline Mask binarize(const Tensor<float>& image3, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw DataError("binarize: threshold " + std::to_string(threshold) + " outside (0,1)");
    if (image3.rank() != 3 || image3.dim(0) != 3)
        throw ShapeError("binarize: expected (3,H,W), got " + shape_str(image3.shape()));
    for (float v : image3.values())
        if (!(v >= 0.0f && v <= 1.0f))
            throw DataError("binarize: pixel value " + std::to_string(v) + " outside [0,1]");
    return tensor_gray_threshold(image3, static_cast<float>(threshold));
}

namespace detail {

// One standard-normal latent per image, drawn from Rng(seed + index) so any
// subset of images can be reproduced independently.
inline std::vector<float> image_noise(const DiTConfig& cfg, std::uint64_t seed,
                                      std::uint64_t index) {
    std::vector<float> z(cfg.latent_channels * cfg.latent_h * cfg.latent_w);
    Rng rng(seed + index);
    rng.fill_normal(std::span<float>(z));
    return z;
}

// Runs the sampler for a stack of pre-encoded conditions and per-image noise,
// returning decoded (N,3,H,W) pixels.
inline Tensor<float> sample_decode(const DiTParams<float>& params, Codec<float>& codec,
                                   const Tensor<float>& y, Tensor<float> z, int steps) {
    auto vel = [&](const Tensor<float>& zs, const std::vector<float>& s,
                   const Tensor<float>& yy) {
        return dit_forward(params, zs, s, yy).velocity;
    };
    auto z0 = euler_sample(std::move(z), y, steps, vel);
    autograd::NoGrad ng;
    auto decoded = codec.decode(z0);
    if (!kernels::all_finite(decoded.values().data(), decoded.numel()))
        throw NumericError("segment: non-finite decode output");
    return decoded;
}

inline void check_latent_shape(const DiTConfig& cfg, const Shape& got) {
    const Shape want = {cfg.latent_channels, cfg.latent_h, cfg.latent_w};
    if (got != want)
        throw ShapeError("segment: codec latent " + shape_str(got) +
                         " does not match model input " + shape_str(want));
}

} // namespace detail

// Decoded grayscale pixels for each image, before thresholding. One noise
// draw per image; cfg.batch selects one batched sampler call versus a loop
// (bitwise identical results, every op is per-sample independent).
inline std::vector<Tensor<float>> segment_gray(const DiTParams<float>& params,
                                               Codec<float>& codec,
                                               const std::vector<Tensor<float>>& images,
                                               const InferenceConfig& cfg) {
    check_inference_config(cfg);
    const auto& mc = params.cfg;
    const std::size_t per = mc.latent_channels * mc.latent_h * mc.latent_w;
    std::vector<Tensor<float>> grays;
    grays.reserve(images.size());

    auto encode_one = [&](const Tensor<float>& image) {
        autograd::NoGrad ng;
        auto y = codec.encode(image);
        detail::check_latent_shape(mc, y.shape());
        return y;
    };
    auto gray_of = [](const Tensor<float>& px3) {
        const std::size_t h = px3.dim(1), w = px3.dim(2);
        std::vector<float> g(3 * h * w);
        const float* p = px3.values().data();
        for (std::size_t i = 0; i < h * w; ++i) {
            const float m = (p[i] + p[h * w + i] + p[2 * h * w + i]) / 3.0f;
            g[i] = g[h * w + i] = g[2 * h * w + i] = m;
        }
        return Tensor<float>::from_data({3, h, w}, std::move(g));
    };

    if (cfg.batch && !images.empty()) {
        std::vector<float> yv, zv;
        yv.reserve(images.size() * per);
        zv.reserve(images.size() * per);
        for (std::size_t i = 0; i < images.size(); ++i) {
            auto y = encode_one(images[i]);
            yv.insert(yv.end(), y.values().begin(), y.values().end());
            auto z = detail::image_noise(mc, cfg.seed, i);
            zv.insert(zv.end(), z.begin(), z.end());
        }
        const Shape bshape = {images.size(), mc.latent_channels, mc.latent_h, mc.latent_w};
        auto decoded = detail::sample_decode(params, codec,
                                             Tensor<float>::from_data(bshape, std::move(yv)),
                                             Tensor<float>::from_data(bshape, std::move(zv)),
                                             cfg.steps);
        autograd::NoGrad ng;
        const std::size_t h = decoded.dim(2), w = decoded.dim(3);
        for (std::size_t i = 0; i < images.size(); ++i) {
            std::vector<float> px(3 * h * w);
            std::copy_n(decoded.values().data() + i * 3 * h * w, 3 * h * w, px.data());
            grays.push_back(gray_of(Tensor<float>::from_data({3, h, w}, std::move(px))));
        }
        return grays;
    }

    for (std::size_t i = 0; i < images.size(); ++i) {
        auto y = encode_one(images[i]);
        const Shape one = {std::size_t(1), mc.latent_channels, mc.latent_h, mc.latent_w};
        auto z = Tensor<float>::from_data(one, detail::image_noise(mc, cfg.seed, i));
        auto decoded = detail::sample_decode(params, codec, reshape(y, one), std::move(z),
                                             cfg.steps);
        autograd::NoGrad ng;
        const std::size_t h = decoded.dim(2), w = decoded.dim(3);
        grays.push_back(gray_of(reshape(decoded, {std::size_t(3), h, w})));
    }
    return grays;
}

inline std::vector<SegmentationMask> segment_all(const DiTParams<float>& params,
                                                 Codec<float>& codec,
                                                 const std::vector<Tensor<float>>& images,
                                                 const std::vector<std::string>& ids,
                                                 const InferenceConfig& cfg,
                                                 const std::string& checkpoint_id = "") {
    if (!ids.empty() && ids.size() != images.size())
        throw DataError("segment: " + std::to_string(images.size()) + " images vs " +
                        std::to_string(ids.size()) + " ids");
    auto grays = segment_gray(params, codec, images, cfg);
    std::vector<SegmentationMask> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < grays.size(); ++i) {
        SegmentationMask sm;
        sm.mask = binarize(grays[i], cfg.threshold);
        sm.image_id = ids.empty() ? "" : ids[i];
        sm.checkpoint_id = checkpoint_id;
        sm.config = cfg;
        out.push_back(std::move(sm));
    }
    return out;
}

// Single-image form; `index` offsets the noise stream exactly as the same
// position in a multi-image run would.
inline SegmentationMask segment(const DiTParams<float>& params, Codec<float>& codec,
                                const Tensor<float>& image, const InferenceConfig& cfg,
                                std::uint64_t index = 0, const std::string& image_id = "",
                                const std::string& checkpoint_id = "") {
    InferenceConfig shifted = cfg;
    shifted.seed = cfg.seed + index;
    auto masks = segment_all(params, codec, {image}, {image_id}, shifted, checkpoint_id);
    auto out = std::move(masks.front());
    out.config = cfg;
    return out;
}

inline std::vector<double> default_threshold_grid() {
    std::vector<double> t;
    for (int i = 0; i <= 8; ++i) t.push_back(0.10 + 0.05 * i);
    return t;
}

struct SweepEntry {
    double threshold;
    double mean_dice;
};

struct SweepResult {
    std::vector<SweepEntry> table;
    double best_threshold;
    double best_dice;
};

// Pure core of the threshold sweep: grayscale predictions are binarized at
// each threshold and scored against ground truth. Ties on mean Dice resolve
// to the lowest threshold.
inline SweepResult sweep_from_grays(const std::vector<Tensor<float>>& grays,
                                    const std::vector<Mask>& gt,
                                    const std::vector<double>& thresholds) {
    if (grays.empty()) throw DataError("sweep_threshold: empty validation set");
    if (grays.size() != gt.size())
        throw DataError("sweep_threshold: " + std::to_string(grays.size()) +
                        " predictions vs " + std::to_string(gt.size()) + " ground truths");
    if (thresholds.empty()) throw DataError("sweep_threshold: empty threshold grid");
    SweepResult res;
    for (double t : thresholds) {
        double dice_sum = 0.0;
        for (std::size_t i = 0; i < grays.size(); ++i) {
            auto pred = binarize(grays[i], t);
            auto counts = confusion(pred, gt[i]);
            dice_sum += compute_metrics(counts).dice;
        }
        res.table.push_back({t, dice_sum / static_cast<double>(grays.size())});
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < res.table.size(); ++i)
        if (res.table[i].mean_dice > res.table[best].mean_dice) best = i;
    res.best_threshold = res.table[best].threshold;
    res.best_dice = res.table[best].mean_dice;
    return res;
}

// Samples one latent per image, then scores every threshold against that
// single decode; the sampler never reruns per threshold.
inline SweepResult sweep_threshold(const DiTParams<float>& params, Codec<float>& codec,
                                   const std::vector<Tensor<float>>& images,
                                   const std::vector<Mask>& gt, const InferenceConfig& cfg,
                                   const std::vector<double>& thresholds =
                                       default_threshold_grid()) {
    if (images.empty()) throw DataError("sweep_threshold: empty validation set");
    for (double t : thresholds)
        if (!(t > 0.0 && t < 1.0))
            throw DataError("sweep_threshold: threshold " + std::to_string(t) +
                            " outside (0,1)");
    auto grays = segment_gray(params, codec, images, cfg);
    return sweep_from_grays(grays, gt, thresholds);
}

} // namespace segdt
