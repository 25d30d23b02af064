#pragma once

#include <algorithm>

namespace objex {

// Axis-aligned box (x1, y1, x2, y2) in the localization net's normalized
// frame, 0..frame on each axis independently of the source aspect ratio.
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
};

// Clamps raw coordinates into [0, frame]. If an axis collapses (x2 <= x1),
// substitutes the minimal valid box of side `min_side` centered at the
// midpoint of the raw pair, itself clamped to fit the frame.
inline Box clamp_box(Box b, double frame, double min_side = 10.0) {
    auto clamp_axis = [&](double& lo, double& hi) {
        lo = std::clamp(lo, 0.0, frame);
        hi = std::clamp(hi, 0.0, frame);
        if (hi <= lo) {
            double mid = std::clamp(0.5 * (lo + hi), min_side * 0.5, frame - min_side * 0.5);
            lo = mid - min_side * 0.5;
            hi = mid + min_side * 0.5;
        }
    };
    clamp_axis(b.x1, b.x2);
    clamp_axis(b.y1, b.y2);
    return b;
}

// Maps a normalized-frame box to source-image pixel coordinates (each axis
// scaled independently to its image extent).
inline Box box_to_pixels(const Box& b, double frame, int img_w, int img_h) {
    const double sx = img_w / frame;
    const double sy = img_h / frame;
    return {b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy};
}

inline Box box_from_pixels(const Box& px, double frame, int img_w, int img_h) {
    const double sx = frame / img_w;
    const double sy = frame / img_h;
    return {px.x1 * sx, px.y1 * sy, px.x2 * sx, px.y2 * sy};
}

}  // namespace objex
