#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "segdt/checkpoint.hpp"
#include "segdt/codec.hpp"
#include "segdt/data_io.hpp"
#include "segdt/dit.hpp"
#include "segdt/errors.hpp"
#include "segdt/image.hpp"
#include "segdt/image_io.hpp"
#include "segdt/inference.hpp"
#include "segdt/metrics.hpp"
#include "segdt/trainer.hpp"

namespace fs = std::filesystem;
using namespace segdt;

namespace {

// Operator mistakes: bad flags, bad config keys, malformed values. Exit 1.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

template <class T>
T parse_value(const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw UsageError("config: key '" + key + "' wants true/false, got '" + text + "'");
    } else {
        std::istringstream in(text);
        T v{};
        in >> v;
        if (in.fail() || !in.eof())
            throw UsageError("config: bad value '" + text + "' for key '" + key + "'");
        return v;
    }
}

// Flag names double as config-file keys. A key set on the command line wins
// over the file; the file wins over defaults.
struct OptionRegistry {
    CLI::App* cmd = nullptr;
    std::map<std::string, std::pair<CLI::Option*, std::function<void(const std::string&)>>>
        keys;

    template <class T>
    CLI::Option* add(const std::string& key, T& var, const std::string& help) {
        auto* opt = cmd->add_option("--" + key, var, help);
        keys[key] = {opt, [&var, key](const std::string& s) { var = parse_value<T>(key, s); }};
        return opt;
    }

    CLI::Option* add_flag(const std::string& key, bool& var, const std::string& help) {
        auto* opt = cmd->add_flag("--" + key, var, help);
        keys[key] = {opt,
                     [&var, key](const std::string& s) { var = parse_value<bool>(key, s); }};
        return opt;
    }

    void apply_config(const std::string& path) const {
        if (path.empty()) return;
        std::ifstream in(path);
        if (!in) throw UsageError("config: cannot open '" + path + "'");
        std::string line;
        std::size_t lineno = 0;
        auto trim = [](std::string s) {
            const char* ws = " \t\r";
            auto a = s.find_first_not_of(ws);
            if (a == std::string::npos) return std::string();
            auto b = s.find_last_not_of(ws);
            return s.substr(a, b - a + 1);
        };
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw UsageError("config: line " + std::to_string(lineno) +
                                 " is not 'key = value'");
            std::string key = trim(line.substr(0, eq));
            std::string val = trim(line.substr(eq + 1));
            auto it = keys.find(key);
            if (it == keys.end())
                throw UsageError("config: unknown key '" + key + "' (line " +
                                 std::to_string(lineno) + ")");
            if (it->second.first->count() > 0) continue; // explicit flag wins
            it->second.second(val);
        }
    }
};

std::uint64_t seed_default() {
    const char* env = std::getenv("SEGDT_SEED");
    if (!env || !*env) return 0;
    return parse_value<std::uint64_t>("SEGDT_SEED", env);
}

std::string make_run_dir(const std::string& requested, std::uint64_t seed) {
    std::string dir = requested;
    if (dir.empty()) {
        auto now = std::chrono::system_clock::now();
        std::time_t tt = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", std::localtime(&tt));
        std::string base = std::string("runs/") + buf + "-s" + std::to_string(seed);
        dir = base;
        for (int k = 2; fs::exists(dir); ++k) dir = base + "-" + std::to_string(k);
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::is_directory(dir))
        throw DataError("cannot create run directory '" + dir + "': " + ec.message());
    return dir;
}

void write_text_file(const std::string& path, const std::string& text) {
    fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw DataError("failed writing '" + path + "'");
}

// Accepts a manifest.csv path or the dataset directory containing one.
DatasetManifest open_manifest(const std::string& data) {
    if (data.empty()) throw UsageError("--data is required");
    std::string path = data;
    if (fs::is_directory(path)) path = (fs::path(path) / "manifest.csv").string();
    return read_manifest(path);
}

struct LoadedSplit {
    std::vector<std::string> ids;
    std::vector<TensorF> images;
    std::vector<Mask> masks;
};

LoadedSplit load_split_arrays(const DatasetManifest& m, const std::string& split,
                              std::size_t h, std::size_t w) {
    auto pairs = load_split(m, split, h, w);
    if (pairs.empty())
        throw DataError("no entries in split '" + split + "' of " + m.root);
    LoadedSplit out;
    for (auto& p : pairs) {
        out.ids.push_back(p.id);
        out.images.push_back(std::move(p.image));
        out.masks.push_back(std::move(p.mask));
    }
    return out;
}

ImageU8 mask_image(const Mask& m) {
    ImageU8 img(m.height, m.width, 1);
    for (std::size_t i = 0; i < m.data.size(); ++i) img.pixels[i] = m.data[i] ? 255 : 0;
    return img;
}

Mask image_mask(const ImageU8& img) {
    Mask m(img.height, img.width);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        unsigned sum = 0;
        for (std::size_t c = 0; c < img.channels; ++c) sum += img.pixels[i * img.channels + c];
        m.data[i] = sum >= 128 * img.channels ? 1 : 0;
    }
    return m;
}

// Model-config flags shared by count-params and train.
struct ModelOpts {
    std::size_t latent_channels = 4;
    std::size_t image_size = 256;
    std::size_t patch = 2;
    std::size_t hidden = 192;
    std::size_t depth = 12;
    std::size_t heads = 3;
    std::size_t mlp_ratio = 4;
    std::size_t time_freq = 256;
    double drop_path = 0.0;

    void add_to(OptionRegistry& reg) {
        reg.add("latent-channels", latent_channels, "latent channels C'");
        reg.add("image-size", image_size, "square input edge in pixels");
        reg.add("patch", patch, "token patch edge P");
        reg.add("hidden", hidden, "transformer width D");
        reg.add("depth", depth, "transformer blocks");
        reg.add("heads", heads, "attention heads");
        reg.add("mlp-ratio", mlp_ratio, "feed-forward expansion");
        reg.add("time-freq", time_freq, "sinusoidal time feature width");
        reg.add("drop-path", drop_path, "stochastic depth rate");
    }

    DiTConfig dit_config(std::size_t downsample) const {
        if (downsample == 0 || image_size % downsample != 0)
            throw DataError("image size " + std::to_string(image_size) +
                            " not divisible by codec downsample " +
                            std::to_string(downsample));
        DiTConfig cfg;
        cfg.latent_channels = latent_channels;
        cfg.latent_h = image_size / downsample;
        cfg.latent_w = image_size / downsample;
        cfg.patch = patch;
        cfg.hidden = hidden;
        cfg.depth = depth;
        cfg.heads = heads;
        cfg.mlp_ratio = mlp_ratio;
        cfg.time_freq = time_freq;
        cfg.drop_path = drop_path;
        cfg.validate();
        return cfg;
    }
};

struct CodecOpts {
    std::string codec = "passthrough"; // passthrough | conv
    std::string codec_ckpt;
    std::size_t downsample = 8;
    std::size_t base_width = 16;

    void add_to(OptionRegistry& reg) {
        reg.add("codec", codec, "codec kind: passthrough or conv");
        reg.add("codec-ckpt", codec_ckpt, "trained codec checkpoint (overrides --codec)");
        reg.add("downsample", downsample, "codec spatial reduction");
        reg.add("base-width", base_width, "conv codec base channel width");
    }

    std::unique_ptr<Codec<float>> make(std::uint64_t seed) const {
        if (!codec_ckpt.empty()) return load_codec_checkpoint(codec_ckpt);
        CodecConfig cc;
        cc.downsample = downsample;
        cc.base_width = base_width;
        if (codec == "passthrough") return std::make_unique<PassthroughCodec<float>>(cc);
        if (codec == "conv") {
            Rng rng(seed);
            return std::make_unique<ConvCodec<float>>(cc, rng);
        }
        throw UsageError("unknown codec '" + codec + "' (want passthrough or conv)");
    }
};

struct LoadedModel {
    ModelCheckpointMeta meta;
    DiTParams<float> params;
};

LoadedModel load_model(const std::string& path) {
    if (path.empty()) throw UsageError("--checkpoint is required");
    auto meta = peek_model_checkpoint(path);
    Rng rng(0);
    LoadedModel lm{meta, init_dit<float>(meta.config, rng)};
    load_model_checkpoint(path, lm.params);
    return lm;
}

double mean_dice(const std::vector<TensorF>& grays, const std::vector<Mask>& gt,
                 double threshold) {
    return sweep_from_grays(grays, gt, {threshold}).table[0].mean_dice;
}

std::string format_double(double v) {
    std::ostringstream out;
    out.precision(9);
    out << v;
    return out.str();
}

// ---------------------------------------------------------------------------
// subcommands

struct GenDataCmd {
    SyntheticSpec spec;
    std::string out;

    void setup(OptionRegistry& reg) {
        spec.seed = seed_default();
        reg.add("out", out, "dataset output directory")->required();
        reg.add("count", spec.count, "number of image/mask pairs");
        reg.add("grid", spec.grid, "square image edge");
        reg.add("min-ellipses", spec.min_ellipses, "fewest lesions per image");
        reg.add("max-ellipses", spec.max_ellipses, "most lesions per image");
        reg.add("noise-amp", spec.noise_amp, "additive noise amplitude");
        reg.add("intensity-gradient", spec.intensity_gradient, "apply background ramp");
        reg.add("seed", spec.seed, "generator seed");
        reg.add("val-frac", spec.val_frac, "validation fraction");
        reg.add("test-frac", spec.test_frac, "test fraction");
        reg.add("min-axis-frac", spec.min_axis_frac, "smallest semi-axis / edge");
        reg.add("max-axis-frac", spec.max_axis_frac, "largest semi-axis / edge");
    }

    int run() const {
        auto manifest = generate_synthetic(spec, out);
        std::size_t train = 0, val = 0, test = 0;
        for (const auto& e : manifest.entries) {
            if (e.split == "train") ++train;
            else if (e.split == "val") ++val;
            else ++test;
        }
        std::cout << "wrote " << manifest.entries.size() << " pairs to " << out << " (train "
                  << train << ", val " << val << ", test " << test << ")\n";
        return 0;
    }
};

struct TrainCodecCmd {
    std::string data, out;
    std::size_t image_size = 256;
    std::size_t epochs = 20;
    double lr = 1e-3;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
    CodecOpts codec;

    void setup(OptionRegistry& reg) {
        seed = seed_default();
        reg.add("data", data, "dataset directory or manifest.csv")->required();
        reg.add("out", out, "run directory (default runs/<timestamp>-s<seed>)");
        reg.add("image-size", image_size, "square input edge in pixels");
        reg.add("epochs", epochs, "reconstruction epochs");
        reg.add("lr", lr, "Adam learning rate");
        reg.add("batch", batch, "batch size");
        reg.add("seed", seed, "init and shuffle seed");
        codec.add_to(reg);
    }

    int run() const {
        if (codec.codec != "conv")
            throw UsageError("train-codec requires --codec conv");
        auto manifest = open_manifest(data);
        auto split = load_split_arrays(manifest, "train", image_size, image_size);
        CodecConfig cc;
        cc.downsample = codec.downsample;
        cc.base_width = codec.base_width;
        Rng rng(seed);
        ConvCodec<float> cdc(cc, rng);
        auto losses = train_codec<float>(cdc, split.images, epochs, static_cast<float>(lr),
                                         batch, rng);
        std::string run_dir = make_run_dir(out, seed);
        std::string ckpt = (fs::path(run_dir) / "codec.ckpt").string();
        save_codec_checkpoint(ckpt, cdc);
        std::ostringstream csv;
        csv << "epoch,loss\n";
        for (std::size_t e = 0; e < losses.size(); ++e)
            csv << e << ',' << format_double(losses[e]) << "\n";
        write_text_file((fs::path(run_dir) / "codec_loss.csv").string(), csv.str());
        std::cout << "codec checkpoint: " << ckpt << "\n"
                  << "final reconstruction loss: " << format_double(losses.back()) << "\n";
        return 0;
    }
};

struct TrainCmd {
    std::string data, out;
    ModelOpts model;
    CodecOpts codec;
    TrainConfig tcfg;

    void setup(OptionRegistry& reg) {
        tcfg.seed = seed_default();
        reg.add("data", data, "dataset directory or manifest.csv")->required();
        reg.add("out", out, "run directory (default runs/<timestamp>-s<seed>)");
        model.add_to(reg);
        codec.add_to(reg);
        reg.add("lr", tcfg.lr, "Adam learning rate");
        reg.add("batch", tcfg.batch_size, "batch size");
        reg.add("epochs", tcfg.epochs, "training epochs");
        reg.add("lr-drop-epoch", tcfg.lr_drop_epoch, "first epoch at the reduced rate");
        reg.add("lr-drop-factor", tcfg.lr_drop_factor, "divide lr by this at the drop");
        reg.add("seed", tcfg.seed, "init, shuffle, and noise seed");
    }

    int run() {
        auto manifest = open_manifest(data);
        auto split = load_split_arrays(manifest, "train", model.image_size, model.image_size);
        auto cdc = codec.make(tcfg.seed);
        DiTConfig cfg = model.dit_config(cdc->config().downsample);
        Rng init(tcfg.seed);
        auto params = init_dit<float>(cfg, init);

        std::string run_dir = make_run_dir(out, tcfg.seed);
        tcfg.loss_log_path = (fs::path(run_dir) / "loss.csv").string();
        auto result = train_dit(params, *cdc, split.images, split.masks, tcfg);

        std::string ckpt = (fs::path(run_dir) / "model.ckpt").string();
        save_model_checkpoint(ckpt, cfg, params, tcfg.seed,
                              static_cast<std::uint32_t>(tcfg.epochs));
        std::cout << "trained " << result.steps << " steps on " << split.images.size()
                  << " pairs\n"
                  << "final loss: " << format_double(result.step_losses.back()) << "\n"
                  << "checkpoint: " << ckpt << "\n"
                  << "loss log: " << tcfg.loss_log_path << "\n";
        return 0;
    }
};

struct InferCmd {
    std::string data, out, checkpoint, split = "test";
    CodecOpts codec;
    InferenceConfig icfg;
    bool no_overlay = false;

    void setup(OptionRegistry& reg) {
        icfg.seed = seed_default();
        reg.add("data", data, "dataset directory or manifest.csv")->required();
        reg.add("out", out, "run directory (default runs/<timestamp>-s<seed>)");
        reg.add("checkpoint", checkpoint, "model checkpoint")->required();
        reg.add("split", split, "manifest split (empty = all)");
        codec.add_to(reg);
        reg.add("steps", icfg.steps, "sampler steps T");
        reg.add("threshold", icfg.threshold, "foreground threshold");
        reg.add("seed", icfg.seed, "noise seed");
        reg.add_flag("batch", icfg.batch, "sample all images in one batch");
        reg.add_flag("no-overlay", no_overlay, "skip contour overlays");
    }

    int run() const {
        check_inference_config(icfg);
        auto lm = load_model(checkpoint);
        auto cdc = codec.make(icfg.seed);
        const std::size_t edge = lm.meta.config.latent_h * cdc->config().downsample;
        auto manifest = open_manifest(data);
        auto ds = load_split_arrays(manifest, split, edge, edge);

        auto masks = segment_all(lm.params, *cdc, ds.images, ds.ids, icfg, checkpoint);
        std::string run_dir = make_run_dir(out, icfg.seed);
        for (std::size_t i = 0; i < masks.size(); ++i) {
            auto mask_path = fs::path(run_dir) / "masks" / (ds.ids[i] + "_pred.png");
            fs::create_directories(mask_path.parent_path());
            write_image(mask_path.string(), mask_image(masks[i].mask));
            if (!no_overlay) {
                auto over_path = fs::path(run_dir) / "overlays" / (ds.ids[i] + ".png");
                fs::create_directories(over_path.parent_path());
                write_image(over_path.string(),
                            overlay_contours(tensor_to_image(ds.images[i]), ds.masks[i],
                                             masks[i].mask));
            }
        }
        std::cout << "wrote " << masks.size() << " masks to " << run_dir << "/masks\n";
        return 0;
    }
};

struct EvalCmd {
    std::string data, pred, out, split = "test";

    void setup(OptionRegistry& reg) {
        reg.add("data", data, "dataset directory or manifest.csv")->required();
        reg.add("pred", pred, "directory of <id>_pred.png masks")->required();
        reg.add("out", out, "run directory (default runs/<timestamp>-s0)");
        reg.add("split", split, "manifest split (empty = all)");
    }

    int run() const {
        auto manifest = open_manifest(data);
        auto entries = manifest.entries;
        std::vector<std::pair<std::string, Mask>> pred_masks;
        std::size_t edge = 0;
        for (const auto& e : entries) {
            if (!split.empty() && e.split != split) continue;
            auto path = fs::path(pred) / (e.id + "_pred.png");
            if (!fs::exists(path))
                throw DataError("missing prediction for id '" + e.id + "': " + path.string());
            auto m = image_mask(read_image(path.string()));
            if (edge == 0) edge = m.height;
            pred_masks.emplace_back(e.id, std::move(m));
        }
        if (pred_masks.empty()) throw DataError("no entries in split '" + split + "'");

        auto ds = load_split_arrays(manifest, split, edge, edge);
        std::vector<std::pair<std::string, Mask>> gt_masks;
        for (std::size_t i = 0; i < ds.ids.size(); ++i)
            gt_masks.emplace_back(ds.ids[i], std::move(ds.masks[i]));

        auto report = evaluate_dataset(pred_masks, gt_masks);
        std::string run_dir = make_run_dir(out, 0);
        std::string csv_path = (fs::path(run_dir) / "metrics.csv").string();
        write_text_file(csv_path, report_csv(report));
        std::cout << report_text(report) << "metrics: " << csv_path << "\n";
        return 0;
    }
};

struct CountParamsCmd {
    ModelOpts model;
    std::size_t downsample = 8;

    void setup(OptionRegistry& reg) {
        model.add_to(reg);
        reg.add("downsample", downsample, "codec spatial reduction");
    }

    int run() const {
        std::cout << count_params(model.dit_config(downsample)) << "\n";
        return 0;
    }
};

struct BenchStepsCmd {
    std::string data, out, checkpoint, split = "test";
    CodecOpts codec;
    InferenceConfig icfg;

    void setup(OptionRegistry& reg) {
        icfg.seed = seed_default();
        reg.add("data", data, "dataset directory or manifest.csv")->required();
        reg.add("out", out, "run directory (default runs/<timestamp>-s<seed>)");
        reg.add("checkpoint", checkpoint, "model checkpoint")->required();
        reg.add("split", split, "manifest split (empty = all)");
        codec.add_to(reg);
        reg.add("threshold", icfg.threshold, "foreground threshold");
        reg.add("seed", icfg.seed, "noise seed");
        reg.add_flag("batch", icfg.batch, "sample all images in one batch");
    }

    int run() const {
        check_inference_config(icfg);
        auto lm = load_model(checkpoint);
        auto cdc = codec.make(icfg.seed);
        const std::size_t edge = lm.meta.config.latent_h * cdc->config().downsample;
        auto manifest = open_manifest(data);
        auto ds = load_split_arrays(manifest, split, edge, edge);

        std::ostringstream csv;
        csv << "steps,mean_dice,wall_time_s\n";
        for (int T : {1, 2, 5, 10, 15, 25, 50}) {
            InferenceConfig cfg = icfg;
            cfg.steps = T;
            auto t0 = std::chrono::steady_clock::now();
            auto grays = segment_gray(lm.params, *cdc, ds.images, cfg);
            auto t1 = std::chrono::steady_clock::now();
            double wall = std::chrono::duration<double>(t1 - t0).count();
            csv << T << ',' << format_double(mean_dice(grays, ds.masks, cfg.threshold)) << ','
                << format_double(wall) << "\n";
        }
        std::string run_dir = make_run_dir(out, icfg.seed);
        std::string csv_path = (fs::path(run_dir) / "bench.csv").string();
        write_text_file(csv_path, csv.str());
        std::cout << csv.str() << "bench table: " << csv_path << "\n";
        return 0;
    }
};

struct SweepThresholdCmd {
    std::string data, out, checkpoint, split = "val";
    CodecOpts codec;
    InferenceConfig icfg;

    void setup(OptionRegistry& reg) {
        icfg.seed = seed_default();
        reg.add("data", data, "dataset directory or manifest.csv")->required();
        reg.add("out", out, "run directory (default runs/<timestamp>-s<seed>)");
        reg.add("checkpoint", checkpoint, "model checkpoint")->required();
        reg.add("split", split, "manifest split (empty = all)");
        codec.add_to(reg);
        reg.add("steps", icfg.steps, "sampler steps T");
        reg.add("seed", icfg.seed, "noise seed");
        reg.add_flag("batch", icfg.batch, "sample all images in one batch");
    }

    int run() const {
        check_inference_config(icfg);
        auto lm = load_model(checkpoint);
        auto cdc = codec.make(icfg.seed);
        const std::size_t edge = lm.meta.config.latent_h * cdc->config().downsample;
        auto manifest = open_manifest(data);
        auto ds = load_split_arrays(manifest, split, edge, edge);

        auto res = sweep_threshold(lm.params, *cdc, ds.images, ds.masks, icfg);
        std::ostringstream csv;
        csv << "threshold,mean_dice\n";
        for (const auto& row : res.table)
            csv << format_double(row.threshold) << ',' << format_double(row.mean_dice) << "\n";
        std::string run_dir = make_run_dir(out, icfg.seed);
        write_text_file((fs::path(run_dir) / "sweep.csv").string(), csv.str());
        write_text_file((fs::path(run_dir) / "best_threshold.txt").string(),
                        format_double(res.best_threshold) + "\n");
        std::cout << csv.str() << "best threshold: " << format_double(res.best_threshold)
                  << " (mean dice " << format_double(res.best_dice) << ")\n";
        return 0;
    }
};

struct SubEntry {
    CLI::App* cmd;
    OptionRegistry reg;
    std::string config_path;
    std::function<int()> run;
};

template <class Cmd>
void add_subcommand(CLI::App& app, std::vector<std::unique_ptr<SubEntry>>& subs,
                    const std::string& name, const std::string& help) {
    auto entry = std::make_unique<SubEntry>();
    entry->cmd = app.add_subcommand(name, help);
    entry->reg.cmd = entry->cmd;
    entry->cmd->add_option("--config", entry->config_path,
                           "key = value file; flags override it");
    auto impl = std::make_shared<Cmd>();
    impl->setup(entry->reg);
    entry->run = [impl]() { return impl->run(); };
    subs.push_back(std::move(entry));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent rectified-flow segmentation toolkit"};
    app.require_subcommand(1);

    std::vector<std::unique_ptr<SubEntry>> subs;
    add_subcommand<GenDataCmd>(app, subs, "gen-data", "write a synthetic lesion dataset");
    add_subcommand<TrainCodecCmd>(app, subs, "train-codec",
                                  "train the conv codec by reconstruction");
    add_subcommand<TrainCmd>(app, subs, "train", "train the velocity model");
    add_subcommand<InferCmd>(app, subs, "infer", "segment a dataset split");
    add_subcommand<EvalCmd>(app, subs, "eval", "score predictions against ground truth");
    add_subcommand<CountParamsCmd>(app, subs, "count-params",
                                   "print the model parameter count");
    add_subcommand<BenchStepsCmd>(app, subs, "bench-steps",
                                  "dice and wall time across sampler step counts");
    add_subcommand<SweepThresholdCmd>(app, subs, "sweep-threshold",
                                      "pick the best foreground threshold");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    }

    try {
        for (auto& sub : subs) {
            if (!sub->cmd->parsed()) continue;
            sub->reg.apply_config(sub->config_path);
            return sub->run();
        }
        std::cerr << app.help() << "\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
