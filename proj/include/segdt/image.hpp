#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "segdt/errors.hpp"
#include "segdt/tensor.hpp"

namespace segdt {

// Interleaved 8-bit image, row-major, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
    size_t width = 0;
    size_t height = 0;
    size_t channels = 0;
    std::vector<uint8_t> pixels;

    ImageU8() = default;
    ImageU8(size_t h, size_t w, size_t c)
        : width(w), height(h), channels(c), pixels(h * w * c, 0) {}

    uint8_t& at(size_t y, size_t x, size_t c) {
        return pixels[(y * width + x) * channels + c];
    }
    uint8_t at(size_t y, size_t x, size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }
    size_t numel() const { return height * width * channels; }
};

// Binary mask, one byte per pixel, values strictly 0 or 1.
struct Mask {
    size_t width = 0;
    size_t height = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(size_t h, size_t w) : width(w), height(h), data(h * w, 0) {}

    uint8_t& at(size_t y, size_t x) { return data[y * width + x]; }
    uint8_t at(size_t y, size_t x) const { return data[y * width + x]; }
    size_t count() const;
};

// Bilinear resample of one plane with half-pixel-center alignment:
// src coordinate of output pixel i is (i + 0.5) * (in / out) - 0.5, clamped.
template <typename T>
void bilinear_resize_plane(const T* src, size_t src_h, size_t src_w,
                           T* dst, size_t dst_h, size_t dst_w) {
    if (src_h == 0 || src_w == 0 || dst_h == 0 || dst_w == 0)
        throw ShapeError("bilinear_resize_plane: empty plane");
    const T sy = static_cast<T>(src_h) / static_cast<T>(dst_h);
    const T sx = static_cast<T>(src_w) / static_cast<T>(dst_w);
    for (size_t oy = 0; oy < dst_h; ++oy) {
        T fy = (static_cast<T>(oy) + T(0.5)) * sy - T(0.5);
        fy = std::clamp(fy, T(0), static_cast<T>(src_h - 1));
        size_t y0 = static_cast<size_t>(fy);
        size_t y1 = std::min(y0 + 1, src_h - 1);
        T wy = fy - static_cast<T>(y0);
        for (size_t ox = 0; ox < dst_w; ++ox) {
            T fx = (static_cast<T>(ox) + T(0.5)) * sx - T(0.5);
            fx = std::clamp(fx, T(0), static_cast<T>(src_w - 1));
            size_t x0 = static_cast<size_t>(fx);
            size_t x1 = std::min(x0 + 1, src_w - 1);
            T wx = fx - static_cast<T>(x0);
            T top = src[y0 * src_w + x0] * (T(1) - wx) + src[y0 * src_w + x1] * wx;
            T bot = src[y1 * src_w + x0] * (T(1) - wx) + src[y1 * src_w + x1] * wx;
            dst[oy * dst_w + ox] = top * (T(1) - wy) + bot * wy;
        }
    }
}

// Resize to target size, returning float planes in the source value range.
// Gray input is replicated to 3 channels first. Identity size is a copy.
std::vector<float> resize_to_planes3(const ImageU8& img, size_t out_h, size_t out_w);

// (3,H,W) tensor in [0,1]: optional resize, then /255.
Tensor<float> image_to_tensor(const ImageU8& img);
Tensor<float> load_image_tensor(const ImageU8& img, size_t out_h, size_t out_w);

// Resize (channels averaged to gray first), then threshold at 0.5 of full scale.
Mask resize_mask(const ImageU8& img, size_t out_h, size_t out_w);

// Clamp values (C,H,W) with C in {1,3} to [0,1], scale by 255, round to nearest.
ImageU8 tensor_to_image(const Tensor<float>& t);

// {0,1} mask replicated to a (3,H,W) float tensor.
Tensor<float> mask_to_tensor3(const Mask& m);

// Channel-mean gray of a (3,H,W) tensor, then strict `gray > threshold`.
Mask tensor_gray_threshold(const Tensor<float>& t, float threshold);

// Base image with ground-truth contour in green and predicted contour in blue;
// pixels on both contours come out cyan. Contour = foreground pixel with a
// 4-neighbor that is background or off the grid.
ImageU8 overlay_contours(const ImageU8& base, const Mask& gt, const Mask& pred);

} // namespace segdt
