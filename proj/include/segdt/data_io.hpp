#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segdt/image.hpp"
#include "segdt/tensor.hpp"

namespace segdt {

struct ManifestEntry {
    std::string id;
    std::string image;  // path relative to the manifest root
    std::string mask;
    std::string split;  // train | val | test
};

struct DatasetManifest {
    std::string root;   // directory all relative paths resolve against
    std::vector<ManifestEntry> entries;  // sorted by id
};

struct SyntheticSpec {
    std::size_t count = 200;
    std::size_t grid = 32;          // square H = W
    std::size_t min_ellipses = 1;
    std::size_t max_ellipses = 2;
    double noise_amp = 0.03;        // additive, in [0,1] pixel units
    bool intensity_gradient = true;
    std::uint64_t seed = 0;
    double val_frac = 0.1;
    double test_frac = 0.1;
    // lesion semi-axes as fractions of the grid edge
    double min_axis_frac = 0.20;
    double max_axis_frac = 0.42;
};

struct EllipseSpec {
    double cy, cx;    // center
    double ry, rx;    // semi-axes
    double theta;     // rotation, radians
};

// Exact pixel-center rasterization of an ellipse union.
Mask rasterize_ellipses(std::size_t h, std::size_t w, const std::vector<EllipseSpec>& es);

// Writes images/<id>.png, masks/<id>_mask.png and manifest.csv under out_dir.
// Byte-deterministic for a fixed spec.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

void write_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& path);

struct ScanResult {
    DatasetManifest manifest;            // split left empty
    std::vector<std::string> unmatched;  // image files without a mask partner
};

// Pairs every image stem with "<stem><suffix>.<ext>" in masks_dir.
ScanResult scan_isic_dir(const std::string& images_dir, const std::string& masks_dir,
                         const std::string& mask_suffix = "_segmentation");

// Image resized to (3,target_h,target_w) in [0,1]; mask resized then
// binarized at half scale.
std::pair<Tensor<float>, Mask> load_pair(const std::string& image_path,
                                         const std::string& mask_path, std::size_t target_h,
                                         std::size_t target_w);

struct LoadedPair {
    std::string id;
    Tensor<float> image;
    Mask mask;
};

// All pairs of one split (or every split when `split` is empty), in id order.
std::vector<LoadedPair> load_split(const DatasetManifest& m, const std::string& split,
                                   std::size_t target_h, std::size_t target_w);

} // namespace segdt
