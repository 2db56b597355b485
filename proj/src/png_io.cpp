#include "segdt/image_io.hpp"

#include <zlib.h>

#include <cctype>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "segdt/errors.hpp"

namespace segdt {

namespace {

const unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

uint32_t get_u32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const unsigned char* data, size_t len) {
    put_u32(out, static_cast<uint32_t>(len));
    size_t type_pos = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + len);
    uLong crc = crc32(0L, out.data() + type_pos, static_cast<uInt>(4 + len));
    put_u32(out, static_cast<uint32_t>(crc));
}

std::vector<unsigned char> read_file_bytes(const std::string& path, const char* who) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(std::string(who) + ": cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (f.bad()) throw DataError(std::string(who) + ": read failure on " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const unsigned char* data, size_t len,
                      const char* who) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(std::string(who) + ": cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
    if (!f) throw DataError(std::string(who) + ": write failure on " + path);
}

std::vector<unsigned char> zlib_compress(const unsigned char* data, size_t len) {
    uLongf bound = compressBound(static_cast<uLong>(len));
    std::vector<unsigned char> out(bound);
    if (compress2(out.data(), &bound, data, static_cast<uLong>(len), Z_DEFAULT_COMPRESSION) != Z_OK)
        throw DataError("write_png: deflate failure");
    out.resize(bound);
    return out;
}

std::vector<unsigned char> zlib_decompress(const unsigned char* data, size_t len,
                                           size_t expected) {
    std::vector<unsigned char> out(expected);
    uLongf out_len = static_cast<uLongf>(expected);
    int rc = uncompress(out.data(), &out_len, data, static_cast<uLong>(len));
    if (rc != Z_OK || out_len != expected)
        throw DataError("read_png: corrupt compressed stream");
    return out;
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

bool is_pnm_magic(const std::vector<unsigned char>& b) {
    return b.size() >= 2 && b[0] == 'P' &&
           (b[1] == '2' || b[1] == '3' || b[1] == '5' || b[1] == '6');
}

} // namespace

void write_png(const std::string& path, const ImageU8& img) {
    if (img.width == 0 || img.height == 0 || (img.channels != 1 && img.channels != 3))
        throw DataError("write_png: bad image dimensions");
    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(img.width));
    put_u32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);                                    // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);            // color type
    ihdr.push_back(0);                                    // compression
    ihdr.push_back(0);                                    // filter method
    ihdr.push_back(0);                                    // no interlace

    const size_t stride = img.width * img.channels;
    std::vector<unsigned char> raw((stride + 1) * img.height);
    for (size_t y = 0; y < img.height; ++y) {
        raw[y * (stride + 1)] = 0;                        // filter type none
        std::memcpy(raw.data() + y * (stride + 1) + 1, img.pixels.data() + y * stride, stride);
    }
    std::vector<unsigned char> idat = zlib_compress(raw.data(), raw.size());

    std::vector<unsigned char> out(kPngSig, kPngSig + 8);
    append_chunk(out, "IHDR", ihdr.data(), ihdr.size());
    append_chunk(out, "IDAT", idat.data(), idat.size());
    append_chunk(out, "IEND", nullptr, 0);
    write_file_bytes(path, out.data(), out.size(), "write_png");
}

ImageU8 read_png(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path, "read_png");
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
        throw DataError("read_png: not a PNG file: " + path);

    size_t pos = 8;
    uint32_t width = 0, height = 0;
    int bit_depth = -1, color_type = -1;
    std::vector<unsigned char> idat;
    bool saw_end = false;
    while (pos + 8 <= bytes.size() && !saw_end) {
        uint32_t len = get_u32(bytes.data() + pos);
        if (pos + 12 + size_t(len) > bytes.size())
            throw DataError("read_png: truncated chunk in " + path);
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const unsigned char* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("read_png: malformed IHDR in " + path);
            width = get_u32(data);
            height = get_u32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            if (data[10] != 0 || data[11] != 0)
                throw DataError("read_png: unsupported compression/filter method in " + path);
            if (data[12] != 0)
                throw DataError("read_png: interlaced PNG unsupported: " + path);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_end = true;
        }
        pos += 12 + len;
    }
    if (!saw_end)
        throw DataError("read_png: truncated file (missing IEND) in " + path);
    if (width == 0 || height == 0 || idat.empty())
        throw DataError("read_png: missing image data in " + path);
    if (bit_depth != 8)
        throw DataError("read_png: unsupported bit depth " + std::to_string(bit_depth) +
                        " in " + path);
    size_t src_ch;
    switch (color_type) {
        case 0: src_ch = 1; break;
        case 2: src_ch = 3; break;
        case 4: src_ch = 2; break;
        case 6: src_ch = 4; break;
        default:
            throw DataError("read_png: unsupported color type " + std::to_string(color_type) +
                            " in " + path);
    }

    const size_t stride = size_t(width) * src_ch;
    std::vector<unsigned char> raw = zlib_decompress(idat.data(), idat.size(),
                                                     (stride + 1) * height);
    // undo per-scanline filters in place
    std::vector<unsigned char> prev(stride, 0);
    std::vector<unsigned char> line(stride);
    const size_t bpp = src_ch;
    ImageU8 img(height, width, src_ch == 2 ? 1 : (src_ch == 4 ? 3 : src_ch));
    for (size_t y = 0; y < height; ++y) {
        unsigned char filter = raw[y * (stride + 1)];
        const unsigned char* srow = raw.data() + y * (stride + 1) + 1;
        for (size_t i = 0; i < stride; ++i) {
            int x = srow[i];
            int a = i >= bpp ? line[i - bpp] : 0;
            int b = prev[i];
            int c = i >= bpp ? prev[i - bpp] : 0;
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: x += paeth(a, b, c); break;
                default: throw DataError("read_png: bad filter type in " + path);
            }
            line[i] = static_cast<unsigned char>(x & 0xff);
        }
        // strip alpha while copying out
        for (size_t px = 0; px < width; ++px)
            for (size_t c2 = 0; c2 < img.channels; ++c2)
                img.at(y, px, c2) = line[px * src_ch + c2];
        prev = line;
    }
    return img;
}

void write_pnm(const std::string& path, const ImageU8& img) {
    if (img.width == 0 || img.height == 0 || (img.channels != 1 && img.channels != 3))
        throw DataError("write_pnm: bad image dimensions");
    std::ostringstream head;
    head << (img.channels == 1 ? "P5" : "P6") << "\n"
         << img.width << " " << img.height << "\n255\n";
    std::string h = head.str();
    std::vector<unsigned char> out(h.begin(), h.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    write_file_bytes(path, out.data(), out.size(), "write_pnm");
}

ImageU8 read_pnm(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path, "read_pnm");
    if (!is_pnm_magic(bytes))
        throw DataError("read_pnm: not a PGM/PPM file: " + path);
    char kind = static_cast<char>(bytes[1]);
    size_t pos = 2;
    auto next_int = [&](const char* what) -> long {
        // skip whitespace and # comments between header fields
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= bytes.size() || !std::isdigit(bytes[pos]))
            throw DataError(std::string("read_pnm: missing ") + what + " in " + path);
        long v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            ++pos;
        }
        return v;
    };
    long w = next_int("width");
    long h = next_int("height");
    long maxval = next_int("maxval");
    if (w <= 0 || h <= 0) throw DataError("read_pnm: bad dimensions in " + path);
    if (maxval <= 0 || maxval > 255)
        throw DataError("read_pnm: unsupported bit depth (maxval " + std::to_string(maxval) +
                        ") in " + path);
    size_t channels = (kind == '3' || kind == '6') ? 3 : 1;
    ImageU8 img(static_cast<size_t>(h), static_cast<size_t>(w), channels);
    size_t n = img.numel();
    if (kind == '5' || kind == '6') {
        ++pos;  // single whitespace byte after maxval
        if (pos + n > bytes.size()) throw DataError("read_pnm: truncated pixel data in " + path);
        std::memcpy(img.pixels.data(), bytes.data() + pos, n);
    } else {
        for (size_t i = 0; i < n; ++i) {
            long v = next_int("pixel");
            if (v < 0 || v > maxval) throw DataError("read_pnm: pixel out of range in " + path);
            img.pixels[i] = static_cast<uint8_t>(v);
        }
    }
    if (maxval != 255)
        for (uint8_t& p : img.pixels)
            p = static_cast<uint8_t>((p * 255 + maxval / 2) / maxval);
    return img;
}

ImageU8 read_image(const std::string& path) {
    std::vector<unsigned char> head = read_file_bytes(path, "read_image");
    if (head.size() >= 8 && std::memcmp(head.data(), kPngSig, 8) == 0) return read_png(path);
    if (is_pnm_magic(head)) return read_pnm(path);
    throw DataError("read_image: unsupported format: " + path);
}

void write_image(const std::string& path, const ImageU8& img) {
    auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")
        write_pnm(path, img);
    else
        write_png(path, img);
}

} // namespace segdt
