#include "segdt/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "segdt/errors.hpp"

namespace segdt {

size_t Mask::count() const {
    size_t n = 0;
    for (uint8_t v : data) n += (v != 0);
    return n;
}

namespace {

void check_image(const ImageU8& img, const char* who) {
    if (img.width == 0 || img.height == 0)
        throw DataError(std::string(who) + ": empty image");
    if (img.channels != 1 && img.channels != 3)
        throw DataError(std::string(who) + ": expected 1 or 3 channels, got " +
                        std::to_string(img.channels));
    if (img.pixels.size() != img.numel())
        throw DataError(std::string(who) + ": pixel buffer size mismatch");
}

// Deinterleave into per-channel planes, gray replicated to 3.
std::vector<float> planes3(const ImageU8& img) {
    const size_t hw = img.height * img.width;
    std::vector<float> out(3 * hw);
    for (size_t i = 0; i < hw; ++i) {
        if (img.channels == 1) {
            float v = static_cast<float>(img.pixels[i]);
            out[i] = v;
            out[hw + i] = v;
            out[2 * hw + i] = v;
        } else {
            out[i] = static_cast<float>(img.pixels[3 * i]);
            out[hw + i] = static_cast<float>(img.pixels[3 * i + 1]);
            out[2 * hw + i] = static_cast<float>(img.pixels[3 * i + 2]);
        }
    }
    return out;
}

} // namespace

std::vector<float> resize_to_planes3(const ImageU8& img, size_t out_h, size_t out_w) {
    check_image(img, "resize_to_planes3");
    if (out_h == 0 || out_w == 0)
        throw DataError("resize_to_planes3: zero target size");
    std::vector<float> src = planes3(img);
    if (out_h == img.height && out_w == img.width) return src;
    const size_t hw_in = img.height * img.width;
    const size_t hw_out = out_h * out_w;
    std::vector<float> dst(3 * hw_out);
    for (size_t c = 0; c < 3; ++c)
        bilinear_resize_plane(src.data() + c * hw_in, img.height, img.width,
                              dst.data() + c * hw_out, out_h, out_w);
    return dst;
}

Tensor<float> image_to_tensor(const ImageU8& img) {
    return load_image_tensor(img, img.height, img.width);
}

Tensor<float> load_image_tensor(const ImageU8& img, size_t out_h, size_t out_w) {
    std::vector<float> planes = resize_to_planes3(img, out_h, out_w);
    for (float& v : planes) v /= 255.0f;
    return Tensor<float>::from_data({3, out_h, out_w}, planes);
}

Mask resize_mask(const ImageU8& img, size_t out_h, size_t out_w) {
    std::vector<float> planes = resize_to_planes3(img, out_h, out_w);
    const size_t hw = out_h * out_w;
    Mask m(out_h, out_w);
    for (size_t i = 0; i < hw; ++i) {
        float gray = (planes[i] + planes[hw + i] + planes[2 * hw + i]) / 3.0f;
        m.data[i] = gray / 255.0f > 0.5f ? 1 : 0;
    }
    return m;
}

ImageU8 tensor_to_image(const Tensor<float>& t) {
    const Shape& s = t.shape();
    if (s.size() != 3 || (s[0] != 1 && s[0] != 3))
        throw ShapeError("tensor_to_image: want (1|3,H,W), got " + shape_str(s));
    ImageU8 img(s[1], s[2], s[0]);
    const std::vector<float>& v = t.values();
    const size_t hw = s[1] * s[2];
    for (size_t c = 0; c < s[0]; ++c)
        for (size_t i = 0; i < hw; ++i) {
            float x = std::clamp(v[c * hw + i], 0.0f, 1.0f) * 255.0f;
            img.pixels[i * s[0] + c] = static_cast<uint8_t>(std::lround(x));
        }
    return img;
}

Tensor<float> mask_to_tensor3(const Mask& m) {
    if (m.width == 0 || m.height == 0 || m.data.size() != m.width * m.height)
        throw DataError("mask_to_tensor3: malformed mask");
    const size_t hw = m.height * m.width;
    std::vector<float> v(3 * hw);
    for (size_t i = 0; i < hw; ++i) {
        float x = m.data[i] ? 1.0f : 0.0f;
        v[i] = x;
        v[hw + i] = x;
        v[2 * hw + i] = x;
    }
    return Tensor<float>::from_data({3, m.height, m.width}, v);
}

Mask tensor_gray_threshold(const Tensor<float>& t, float threshold) {
    const Shape& s = t.shape();
    if (s.size() != 3 || s[0] != 3)
        throw ShapeError("tensor_gray_threshold: want (3,H,W), got " + shape_str(s));
    const std::vector<float>& v = t.values();
    const size_t hw = s[1] * s[2];
    Mask m(s[1], s[2]);
    for (size_t i = 0; i < hw; ++i) {
        float gray = (v[i] + v[hw + i] + v[2 * hw + i]) / 3.0f;
        m.data[i] = gray > threshold ? 1 : 0;
    }
    return m;
}

namespace {

bool on_contour(const Mask& m, size_t y, size_t x) {
    if (!m.at(y, x)) return false;
    if (y == 0 || !m.at(y - 1, x)) return true;
    if (y + 1 >= m.height || !m.at(y + 1, x)) return true;
    if (x == 0 || !m.at(y, x - 1)) return true;
    if (x + 1 >= m.width || !m.at(y, x + 1)) return true;
    return false;
}

} // namespace

ImageU8 overlay_contours(const ImageU8& base, const Mask& gt, const Mask& pred) {
    check_image(base, "overlay_contours");
    if (gt.height != base.height || gt.width != base.width ||
        pred.height != base.height || pred.width != base.width)
        throw ShapeError("overlay_contours: mask size differs from image");
    ImageU8 out(base.height, base.width, 3);
    for (size_t y = 0; y < base.height; ++y)
        for (size_t x = 0; x < base.width; ++x) {
            uint8_t r, g, b;
            if (base.channels == 1) {
                r = g = b = base.at(y, x, 0);
            } else {
                r = base.at(y, x, 0);
                g = base.at(y, x, 1);
                b = base.at(y, x, 2);
            }
            bool on_gt = on_contour(gt, y, x);
            bool on_pred = on_contour(pred, y, x);
            if (on_gt || on_pred) {
                r = 0;
                g = on_gt ? 255 : 0;
                b = on_pred ? 255 : 0;
            }
            out.at(y, x, 0) = r;
            out.at(y, x, 1) = g;
            out.at(y, x, 2) = b;
        }
    return out;
}

} // namespace segdt
