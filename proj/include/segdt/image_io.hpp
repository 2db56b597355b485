#pragma once

#include <string>

#include "segdt/image.hpp"

namespace segdt {

// 8-bit PNG. Writes color type 0 (gray) or 2 (RGB) with no filtering.
// Reads color types 0/2/4/6 (alpha dropped), all five scanline filters,
// no interlace, bit depth 8 only.
ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

// Binary and ASCII PGM/PPM (P2/P3/P5/P6), maxval up to 255.
ImageU8 read_pnm(const std::string& path);
void write_pnm(const std::string& path, const ImageU8& img);

// Sniffs the magic bytes; write picks the format from the extension
// (.pgm/.ppm -> PNM, anything else -> PNG).
ImageU8 read_image(const std::string& path);
void write_image(const std::string& path, const ImageU8& img);

} // namespace segdt
