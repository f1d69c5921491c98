#include "emt/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include <zlib.h>

namespace emt {

namespace {

const unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

std::uint32_t get_u32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void write_chunk(std::vector<unsigned char>& out, const char type[4],
                 const std::vector<unsigned char>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + type_at, static_cast<uInt>(4 + data.size()));
    put_u32(out, crc);
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DataError("write_png: supports 1 or 3 channels, got " +
                        std::to_string(img.channels));
    if (img.height <= 0 || img.width <= 0) throw DataError("write_png: empty image");

    const int bpp = img.channels;
    const std::size_t stride = static_cast<std::size_t>(img.width) * bpp;
    std::vector<unsigned char> raw((stride + 1) * img.height);
    std::size_t at = 0;
    for (int y = 0; y < img.height; ++y) {
        raw[at++] = 0;  // filter: none
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < bpp; ++c) {
                const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
                raw[at++] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }

    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw NumericError("write_png: deflate failed");
    comp.resize(comp_len);

    std::vector<unsigned char> out(kSignature, kSignature + 8);
    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);                                  // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);          // gray or truecolor
    ihdr.push_back(0);                                  // compression
    ihdr.push_back(0);                                  // filter method
    ihdr.push_back(0);                                  // non-interlaced
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", comp);
    write_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("write_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("write_png: short write to " + path);
}

Image read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_png: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
        throw DataError("read_png: not a PNG file: " + path);

    int width = 0, height = 0, channels = 0;
    std::vector<unsigned char> idat;
    std::size_t at = 8;
    while (at + 8 <= bytes.size()) {
        const std::uint32_t len = get_u32(&bytes[at]);
        if (at + 12 + len > bytes.size()) throw DataError("read_png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(&bytes[at + 4]);
        const unsigned char* data = &bytes[at + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            width = static_cast<int>(get_u32(data));
            height = static_cast<int>(get_u32(data + 4));
            const int depth = data[8], color = data[9], interlace = data[12];
            if (depth != 8 || interlace != 0)
                throw DataError("read_png: only 8-bit non-interlaced images are supported");
            if (color == 0) channels = 1;
            else if (color == 2) channels = 3;
            else if (color == 6) channels = 4;
            else throw DataError("read_png: unsupported color type");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        at += 12 + len;
    }
    if (width <= 0 || height <= 0 || channels == 0 || idat.empty())
        throw DataError("read_png: missing image data in " + path);

    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    std::vector<unsigned char> raw((stride + 1) * height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw DataError("read_png: corrupt image data in " + path);

    // Undo per-scanline filtering in place.
    const int bpp = channels;
    std::vector<unsigned char> prev(stride, 0);
    std::vector<unsigned char> line(stride);
    Image img(height, width, channels);
    for (int y = 0; y < height; ++y) {
        const unsigned char* src = &raw[static_cast<std::size_t>(y) * (stride + 1)];
        const int filter = src[0];
        for (std::size_t i = 0; i < stride; ++i) {
            const int x = src[1 + i];
            const int a = i >= static_cast<std::size_t>(bpp) ? line[i - bpp] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
            int v;
            switch (filter) {
                case 0: v = x; break;
                case 1: v = x + a; break;
                case 2: v = x + b; break;
                case 3: v = x + (a + b) / 2; break;
                case 4: v = x + paeth(a, b, c); break;
                default: throw DataError("read_png: unknown filter type");
            }
            line[i] = static_cast<unsigned char>(v & 0xFF);
        }
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(y, x, c) = line[static_cast<std::size_t>(x) * channels + c] / 255.0;
        prev = line;
    }
    return img;
}

}  // namespace emt
