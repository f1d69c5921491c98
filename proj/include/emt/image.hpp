#pragma once

#include <array>
#include <vector>

#include "emt/common.hpp"

namespace emt {

// Dense interleaved image, values in [0,1], double precision throughout so
// rendering and crop geometry stay deterministic across platforms.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;  // row-major, channel-interleaved

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

// Bilinear sample at continuous pixel coordinates; outside the image reads 0.
double sample_bilinear(const Image& img, double x, double y, int c);

// Crops the square [cx-side/2, cx+side/2) x [cy-side/2, cy+side/2) (source
// pixel coordinates) and resizes to out_size x out_size. Out-of-bounds source
// area contributes zeros, so border crops come back padded.
Image crop_resize(const Image& src, double cx, double cy, double side, int out_size);

void fill(Image& img, const std::array<double, 3>& rgb);
void draw_rect(Image& img, int x0, int y0, int x1, int y1, const std::array<double, 3>& rgb);
void draw_disc(Image& img, double cx, double cy, double r, const std::array<double, 3>& rgb);

// Averages 2*radius+1 taps along direction (dx, dy), clamping at the border —
// a directional box filter used for simulated motion blur.
Image directional_blur(const Image& img, int radius, int dx, int dy);

// Multiplies every value by gain and clamps back to [0,1].
void apply_gain(Image& img, double gain);

// Luminance image (single channel) from an RGB image.
Image to_gray(const Image& img);

}  // namespace emt
