#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "segdt/adam.hpp"
#include "segdt/codec.hpp"
#include "segdt/dit.hpp"
#include "segdt/flow.hpp"
#include "segdt/image.hpp"

namespace segdt {

struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    std::size_t lr_drop_epoch = 50; // epochs >= this index run at lr / lr_drop_factor
    double lr_drop_factor = 10.0;
    std::uint64_t seed = 0;
    std::string loss_log_path; // per-step CSV, skipped when empty
};

struct TrainResult {
    std::vector<float> step_losses;  // one entry per optimizer step
    std::vector<double> lr_by_epoch; // learning rate used in each epoch
    std::size_t steps = 0;
    std::string loss_csv; // "epoch,step,loss" rows, step is the global index
};

inline void check_train_config(const TrainConfig& t) {
    if (!(t.lr > 0.0)) throw DataError("train: lr must be positive");
    if (t.batch_size == 0) throw DataError("train: batch_size must be positive");
    if (t.epochs == 0) throw DataError("train: epochs must be positive");
    if (t.lr_drop_epoch >= t.epochs)
        throw DataError("train: lr_drop_epoch " + std::to_string(t.lr_drop_epoch) +
                        " must be < epochs " + std::to_string(t.epochs));
    if (!(t.lr_drop_factor > 0.0)) throw DataError("train: lr_drop_factor must be positive");
}

// Trains the denoiser on (image, mask) pairs. Both sides of each pair are
// pushed through the codec encoder once up front (masks replicated to three
// channels); the decoder is never touched. Each epoch shuffles the pair
// order, walks it in batches of tcfg.batch_size (last batch may be short),
// and takes one Adam step per batch on the velocity-matching loss.
template <class T>
TrainResult train_dit(DiTParams<T>& params, Codec<T>& codec,
                      const std::vector<Tensor<T>>& images, const std::vector<Mask>& masks,
                      const TrainConfig& tcfg) {
    check_train_config(tcfg);
    if (images.empty()) throw DataError("train: empty dataset");
    if (images.size() != masks.size())
        throw DataError("train: " + std::to_string(images.size()) + " images vs " +
                        std::to_string(masks.size()) + " masks");

    const auto& cfg = params.cfg;
    const Shape lat_shape = {cfg.latent_channels, cfg.latent_h, cfg.latent_w};
    const std::size_t n = images.size();
    const std::size_t per = cfg.latent_channels * cfg.latent_h * cfg.latent_w;

    // Pre-encode every pair into fixed latents; training never re-runs the codec.
    std::vector<std::vector<T>> z0_store(n), y_store(n);
    {
        autograd::NoGrad no_grad;
        for (std::size_t i = 0; i < n; ++i) {
            if (images[i].shape() != images[0].shape())
                throw ShapeError("train: image " + std::to_string(i) + " " +
                                 shape_str(images[i].shape()) + " vs " +
                                 shape_str(images[0].shape()));
            if (images[i].rank() != 3 || masks[i].height != images[i].dim(1) ||
                masks[i].width != images[i].dim(2))
                throw ShapeError("train: mask " + std::to_string(i) +
                                 " does not match its image size");
            auto y = codec.encode(images[i]);
            auto z0 = codec.encode(tensor_cast<T>(mask_to_tensor3(masks[i])));
            if (y.shape() != lat_shape)
                throw ShapeError("train: latent " + shape_str(y.shape()) +
                                 " does not match model input " + shape_str(lat_shape));
            y_store[i] = y.values();
            z0_store[i] = z0.values();
        }
    }

    auto stack = [&](const std::vector<std::vector<T>>& store,
                     const std::size_t* idx, std::size_t count) {
        std::vector<T> out;
        out.reserve(count * per);
        for (std::size_t b = 0; b < count; ++b)
            out.insert(out.end(), store[idx[b]].begin(), store[idx[b]].end());
        return Tensor<T>::from_data({count, cfg.latent_channels, cfg.latent_h, cfg.latent_w},
                                    std::move(out));
    };

    auto named = params.named();
    AdamConfig<T> acfg;
    acfg.lr = static_cast<T>(tcfg.lr);
    Adam<T> opt(acfg);
    Rng rng(tcfg.seed);

    auto vel = [&](const Tensor<T>& z_s, const std::vector<T>& s, const Tensor<T>& y) {
        return dit_forward(params, z_s, s, y, true, &rng).velocity;
    };

    TrainResult res;
    std::ostringstream csv;
    csv << "epoch,step,loss\n";
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const double lr_e =
            epoch >= tcfg.lr_drop_epoch ? tcfg.lr / tcfg.lr_drop_factor : tcfg.lr;
        opt.set_lr(static_cast<T>(lr_e));
        res.lr_by_epoch.push_back(lr_e);
        rng.shuffle(order);

        for (std::size_t start = 0; start < n; start += tcfg.batch_size) {
            const std::size_t count = std::min(tcfg.batch_size, n - start);
            T loss_val;
            try {
                auto z0 = stack(z0_store, order.data() + start, count);
                auto y = stack(y_store, order.data() + start, count);
                auto loss = flow_loss(z0, y, rng, vel);
                loss_val = loss.values()[0];
                loss.backward();
                opt.step(named);
                opt.zero_grad(named);
            } catch (const NumericError& e) {
                throw NumericError("train: step " + std::to_string(step) + ": " + e.what());
            }
            res.step_losses.push_back(static_cast<float>(loss_val));
            csv << epoch << ',' << step << ',' << std::setprecision(9) << loss_val << '\n';
            ++step;
        }
    }

    res.steps = step;
    res.loss_csv = csv.str();
    if (!tcfg.loss_log_path.empty()) {
        std::ofstream out(tcfg.loss_log_path, std::ios::binary);
        if (!out) throw DataError("train: cannot open loss log " + tcfg.loss_log_path);
        out << res.loss_csv;
        if (!out) throw DataError("train: write failure on " + tcfg.loss_log_path);
    }
    return res;
}

} // namespace segdt
