#include "segdt/data_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "segdt/errors.hpp"
#include "segdt/image_io.hpp"
#include "segdt/rng.hpp"

namespace fs = std::filesystem;

namespace segdt {

Mask rasterize_ellipses(std::size_t h, std::size_t w, const std::vector<EllipseSpec>& es) {
    Mask m(h, w);
    for (const auto& e : es) {
        if (e.ry <= 0 || e.rx <= 0) throw DataError("rasterize_ellipses: nonpositive axis");
        const double c = std::cos(e.theta), s = std::sin(e.theta);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double py = double(y) + 0.5 - e.cy;
                const double px = double(x) + 0.5 - e.cx;
                const double u = (px * c + py * s) / e.rx;
                const double v = (-px * s + py * c) / e.ry;
                if (u * u + v * v <= 1.0) m.at(y, x) = 1;
            }
    }
    return m;
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
    if (spec.grid < 8) throw DataError("generate_synthetic: grid below 8x8");
    if (spec.count == 0) throw DataError("generate_synthetic: zero count");
    if (spec.min_ellipses < 1 || spec.max_ellipses < spec.min_ellipses)
        throw DataError("generate_synthetic: bad ellipse count range");
    if (spec.val_frac < 0 || spec.test_frac < 0 || spec.val_frac + spec.test_frac >= 1.0)
        throw DataError("generate_synthetic: bad split fractions");

    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");

    Rng rng(spec.seed);
    const std::size_t g = spec.grid;
    const std::size_t n_test = std::size_t(std::floor(spec.test_frac * double(spec.count)));
    const std::size_t n_val = std::size_t(std::floor(spec.val_frac * double(spec.count)));
    const std::size_t n_train = spec.count - n_val - n_test;

    DatasetManifest man;
    man.root = out_dir;
    for (std::size_t i = 0; i < spec.count; ++i) {
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "synth_%05zu", i);
        const std::string id = idbuf;

        std::size_t n_ell =
            std::size_t(rng.uniform_int(std::int64_t(spec.min_ellipses),
                                        std::int64_t(spec.max_ellipses)));
        std::vector<EllipseSpec> es;
        for (std::size_t k = 0; k < n_ell; ++k) {
            EllipseSpec e;
            e.cy = rng.uniform(0.3, 0.7) * double(g);
            e.cx = rng.uniform(0.3, 0.7) * double(g);
            e.ry = rng.uniform(spec.min_axis_frac, spec.max_axis_frac) * double(g);
            e.rx = rng.uniform(spec.min_axis_frac, spec.max_axis_frac) * double(g);
            e.theta = rng.uniform(0.0, 3.141592653589793);
            es.push_back(e);
        }
        Mask mask = rasterize_ellipses(g, g, es);

        // lesion darker than the surrounding skin, each with a channel tint
        double bg = rng.uniform(0.7, 0.9);
        double fg = rng.uniform(0.2, 0.4);
        double bg_tint[3], fg_tint[3];
        for (int c = 0; c < 3; ++c) {
            bg_tint[c] = bg + rng.uniform(-0.05, 0.05);
            fg_tint[c] = fg + rng.uniform(-0.05, 0.05);
        }
        double gy = 0, gx = 0;
        if (spec.intensity_gradient) {
            gy = rng.uniform(-0.15, 0.15);
            gx = rng.uniform(-0.15, 0.15);
        }

        ImageU8 img(g, g, 3);
        for (std::size_t y = 0; y < g; ++y)
            for (std::size_t x = 0; x < g; ++x) {
                double grad = gy * (double(y) / double(g - 1) - 0.5) +
                              gx * (double(x) / double(g - 1) - 0.5);
                for (int c = 0; c < 3; ++c) {
                    double v = (mask.at(y, x) ? fg_tint[c] : bg_tint[c]) + grad;
                    v += spec.noise_amp * rng.normal();
                    v = std::clamp(v, 0.0, 1.0);
                    img.at(y, x, std::size_t(c)) = uint8_t(std::lround(v * 255.0));
                }
            }

        ImageU8 mimg(g, g, 1);
        for (std::size_t p = 0; p < mask.data.size(); ++p)
            mimg.pixels[p] = mask.data[p] ? 255 : 0;

        ManifestEntry ent;
        ent.id = id;
        ent.image = "images/" + id + ".png";
        ent.mask = "masks/" + id + "_mask.png";
        ent.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        write_png((fs::path(out_dir) / ent.image).string(), img);
        write_png((fs::path(out_dir) / ent.mask).string(), mimg);
        man.entries.push_back(std::move(ent));
    }
    std::sort(man.entries.begin(), man.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
    write_manifest((fs::path(out_dir) / "manifest.csv").string(), man);
    return man;
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_manifest: cannot open " + path);
    f << "id,image,mask,split\n";
    for (const auto& e : m.entries)
        f << e.id << ',' << e.image << ',' << e.mask << ',' << e.split << '\n';
    if (!f) throw DataError("write_manifest: write failure on " + path);
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("read_manifest: cannot open " + path);
    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    if (m.root.empty()) m.root = ".";
    std::string line;
    if (!std::getline(f, line) || line != "id,image,mask,split")
        throw DataError("read_manifest: bad header in " + path);
    std::set<std::string> seen;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::array<std::string, 4> cols;
        std::size_t start = 0;
        for (int c = 0; c < 4; ++c) {
            std::size_t comma = line.find(',', start);
            if (c < 3 && comma == std::string::npos)
                throw DataError("read_manifest: malformed row '" + line + "' in " + path);
            if (c == 3 && comma != std::string::npos)
                throw DataError("read_manifest: too many columns in '" + line + "'");
            cols[std::size_t(c)] = line.substr(start, comma - start);
            start = comma + 1;
        }
        if (!seen.insert(cols[0]).second)
            throw DataError("read_manifest: duplicate id " + cols[0]);
        m.entries.push_back({cols[0], cols[1], cols[2], cols[3]});
    }
    std::sort(m.entries.begin(), m.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
    return m;
}

namespace {

bool supported_ext(const fs::path& p) {
    std::string e = p.extension().string();
    for (auto& c : e) c = char(std::tolower(c));
    return e == ".png" || e == ".pgm" || e == ".ppm" || e == ".pnm";
}

} // namespace

ScanResult scan_isic_dir(const std::string& images_dir, const std::string& masks_dir,
                         const std::string& mask_suffix) {
    if (!fs::is_directory(images_dir))
        throw DataError("scan_isic_dir: not a directory: " + images_dir);
    if (!fs::is_directory(masks_dir))
        throw DataError("scan_isic_dir: not a directory: " + masks_dir);

    // index mask files by stem
    std::map<std::string, fs::path> masks;
    for (const auto& de : fs::directory_iterator(masks_dir)) {
        if (!de.is_regular_file() || !supported_ext(de.path())) continue;
        std::string stem = de.path().stem().string();
        if (!masks.emplace(stem, de.path()).second)
            throw DataError("scan_isic_dir: duplicate mask stem " + stem);
    }

    ScanResult out;
    out.manifest.root = "";
    std::map<std::string, fs::path> images;
    for (const auto& de : fs::directory_iterator(images_dir)) {
        if (!de.is_regular_file() || !supported_ext(de.path())) continue;
        std::string stem = de.path().stem().string();
        if (!images.emplace(stem, de.path()).second)
            throw DataError("scan_isic_dir: duplicate image stem " + stem);
    }
    for (const auto& [stem, ipath] : images) {
        auto it = masks.find(stem + mask_suffix);
        if (it == masks.end()) {
            out.unmatched.push_back(ipath.filename().string());
            continue;
        }
        ManifestEntry e;
        e.id = stem;
        e.image = ipath.string();
        e.mask = it->second.string();
        e.split = "";
        out.manifest.entries.push_back(std::move(e));
    }
    if (out.manifest.entries.empty())
        throw DataError("scan_isic_dir: no image/mask pairs found under " + images_dir);
    return out;
}

std::pair<Tensor<float>, Mask> load_pair(const std::string& image_path,
                                         const std::string& mask_path, std::size_t target_h,
                                         std::size_t target_w) {
    ImageU8 img = read_image(image_path);
    ImageU8 mimg = read_image(mask_path);
    return {load_image_tensor(img, target_h, target_w), resize_mask(mimg, target_h, target_w)};
}

std::vector<LoadedPair> load_split(const DatasetManifest& m, const std::string& split,
                                   std::size_t target_h, std::size_t target_w) {
    std::vector<LoadedPair> out;
    fs::path root = m.root.empty() ? fs::path(".") : fs::path(m.root);
    for (const auto& e : m.entries) {
        if (!split.empty() && e.split != split) continue;
        fs::path ip = fs::path(e.image).is_absolute() ? fs::path(e.image) : root / e.image;
        fs::path mp = fs::path(e.mask).is_absolute() ? fs::path(e.mask) : root / e.mask;
        auto [img, mask] = load_pair(ip.string(), mp.string(), target_h, target_w);
        out.push_back({e.id, std::move(img), std::move(mask)});
    }
    if (out.empty())
        throw DataError("load_split: no entries for split '" + split + "'");
    return out;
}

} // namespace segdt
