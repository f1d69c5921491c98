#include "emt/image.hpp"

#include <algorithm>
#include <cmath>

namespace emt {

double sample_bilinear(const Image& img, double x, double y, int c) {
    // Pixel i covers [i, i+1); its center sits at i+0.5.
    const double qx = x - 0.5, qy = y - 0.5;
    const int x0 = static_cast<int>(std::floor(qx));
    const int y0 = static_cast<int>(std::floor(qy));
    const double fx = qx - x0, fy = qy - y0;

    auto px = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) return 0.0;
        return img.at(yy, xx, c);
    };
    const double top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
    const double bot = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

Image crop_resize(const Image& src, double cx, double cy, double side, int out_size) {
    if (side <= 0.0 || out_size <= 0) throw DataError("crop_resize: non-positive geometry");
    Image out(out_size, out_size, src.channels);
    const double step = side / out_size;
    const double x_origin = cx - side / 2.0;
    const double y_origin = cy - side / 2.0;
    for (int oy = 0; oy < out_size; ++oy) {
        const double sy = y_origin + (oy + 0.5) * step;
        for (int ox = 0; ox < out_size; ++ox) {
            const double sx = x_origin + (ox + 0.5) * step;
            for (int c = 0; c < src.channels; ++c)
                out.at(oy, ox, c) = sample_bilinear(src, sx, sy, c);
        }
    }
    return out;
}

void fill(Image& img, const std::array<double, 3>& rgb) {
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) img.at(y, x, c) = rgb[c % 3];
}

void draw_rect(Image& img, int x0, int y0, int x1, int y1, const std::array<double, 3>& rgb) {
    const int ax = std::max(0, std::min(x0, x1));
    const int ay = std::max(0, std::min(y0, y1));
    const int bx = std::min(img.width - 1, std::max(x0, x1));
    const int by = std::min(img.height - 1, std::max(y0, y1));
    for (int y = ay; y <= by; ++y)
        for (int x = ax; x <= bx; ++x)
            for (int c = 0; c < img.channels; ++c) img.at(y, x, c) = rgb[c % 3];
}

void draw_disc(Image& img, double cx, double cy, double r, const std::array<double, 3>& rgb) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1.0)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + r + 1.0)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1.0)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + r + 1.0)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            // Linear coverage over a one-pixel band straddling the boundary, so
            // the apparent edge tracks sub-pixel motion instead of snapping to
            // the pixel grid.
            const double cov =
                std::clamp(r + 0.5 - std::sqrt(dx * dx + dy * dy), 0.0, 1.0);
            if (cov <= 0.0) continue;
            for (int c = 0; c < img.channels; ++c)
                img.at(y, x, c) = (1.0 - cov) * img.at(y, x, c) + cov * rgb[c % 3];
        }
    }
}

Image directional_blur(const Image& img, int radius, int dx, int dy) {
    if (radius <= 0) return img;
    Image out(img.height, img.width, img.channels);
    const double inv = 1.0 / (2 * radius + 1);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const int sy = std::clamp(y + k * dy, 0, img.height - 1);
                    const int sx = std::clamp(x + k * dx, 0, img.width - 1);
                    acc += img.at(sy, sx, c);
                }
                out.at(y, x, c) = acc * inv;
            }
        }
    }
    return out;
}

void apply_gain(Image& img, double gain) {
    for (double& v : img.data) v = std::clamp(v * gain, 0.0, 1.0);
}

Image to_gray(const Image& img) {
    Image out(img.height, img.width, 1);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            if (img.channels >= 3) {
                out.at(y, x, 0) = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                                  0.114 * img.at(y, x, 2);
            } else {
                out.at(y, x, 0) = img.at(y, x, 0);
            }
        }
    }
    return out;
}

}  // namespace emt
