#pragma once

#include <algorithm>
#include <cmath>

#include "emt/common.hpp"

namespace emt {

// Axis-aligned box in normalized coordinates: center + extent, all in [0,1].
struct BoundingBox {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

    double x0() const { return cx - w / 2.0; }
    double y0() const { return cy - h / 2.0; }
    double x1() const { return cx + w / 2.0; }
    double y1() const { return cy + h / 2.0; }
    double area() const { return w * h; }

    bool valid() const {
        return cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && w > 0.0 && w <= 1.0 &&
               h > 0.0 && h <= 1.0;
    }

    // Pulls the box back inside the unit square, preserving extent where
    // possible (extent itself is clamped first).
    BoundingBox clamped() const {
        BoundingBox b = *this;
        b.w = std::clamp(b.w, 1e-6, 1.0);
        b.h = std::clamp(b.h, 1e-6, 1.0);
        b.cx = std::clamp(b.cx, b.w / 2.0, 1.0 - b.w / 2.0);
        b.cy = std::clamp(b.cy, b.h / 2.0, 1.0 - b.h / 2.0);
        return b;
    }
};

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
    const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
    return std::max(iw, 0.0) * std::max(ih, 0.0);
}

// Area from the same corner differences the intersection uses, so identical
// boxes overlap themselves exactly (w*h can differ from x1()-x0() by an ulp).
inline double corner_area(const BoundingBox& a) {
    return std::max(a.x1() - a.x0(), 0.0) * std::max(a.y1() - a.y0(), 0.0);
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
    const double inter = intersection_area(a, b);
    const double uni = corner_area(a) + corner_area(b) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// Generalized IoU in (-1, 1]: IoU minus the fraction of the enclosing box not
// covered by the union.
inline double giou(const BoundingBox& a, const BoundingBox& b) {
    const double inter = intersection_area(a, b);
    const double uni = corner_area(a) + corner_area(b) - inter;
    const double ew = std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0());
    const double eh = std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0());
    const double enc = ew * eh;
    const double i = uni > 0.0 ? inter / uni : 0.0;
    return enc > 0.0 ? i - (enc - uni) / enc : i;
}

// Center distance in pixels, given the image extent the boxes are
// normalized against.
inline double center_error_px(const BoundingBox& a, const BoundingBox& b, double width,
                              double height) {
    const double dx = (a.cx - b.cx) * width;
    const double dy = (a.cy - b.cy) * height;
    return std::sqrt(dx * dx + dy * dy);
}

// Center distance normalized by the ground-truth extent (second argument).
inline double center_error_norm(const BoundingBox& pred, const BoundingBox& gt) {
    const double nx = gt.w > 0.0 ? (pred.cx - gt.cx) / gt.w : 1e9;
    const double ny = gt.h > 0.0 ? (pred.cy - gt.cy) / gt.h : 1e9;
    return std::sqrt(nx * nx + ny * ny);
}

}  // namespace emt
