#pragma once

#include <string>

#include "emt/image.hpp"

namespace emt {

// Minimal PNG codec: 8-bit gray/RGB/RGBA, non-interlaced, zlib-compressed.
// Writing always emits filter type 0 scanlines, so output bytes are a pure
// function of the pixel data. Values round to 8 bits on write.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

}  // namespace emt
