#include "objex/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace objex {

Tensor image_to_tensor(const Image& img, int h, int w) {
    const Image r = (img.h == h && img.w == w) ? img : resize_bilinear(img, h, w);
    Tensor t({h, w, 3});
    t.data = r.px;
    return t;
}

Box localize(const Image& img, const Network& loc, const ModelConfig& cfg) {
    const Tensor out = loc.forward(image_to_tensor(img, loc.config().in_h, loc.config().in_w));
    if (out.size() != 4)
        throw std::runtime_error("localization net emitted " + std::to_string(out.size()) +
                                 " values, expected 4");
    return clamp_box({out[0], out[1], out[2], out[3]}, cfg.frame, cfg.min_box_side);
}

CropResult crop_resize(const Image& img, const Box& box, const ModelConfig& cfg) {
    Box px = box_to_pixels(box, cfg.frame, img.w, img.h);
    CropResult res;
    // Boxes narrower than 2 source pixels degrade bilinear sampling; expand
    // around the center and flag it.
    auto widen = [&](double& lo, double& hi, double limit) {
        if (hi - lo < 2.0) {
            const double mid = std::clamp(0.5 * (lo + hi), 1.0, limit - 1.0);
            lo = mid - 1.0;
            hi = mid + 1.0;
            res.expanded = true;
        }
    };
    widen(px.x1, px.x2, img.w);
    widen(px.y1, px.y2, img.h);
    res.px_box = px;
    res.crop = crop_resize_px(img, px.x1, px.y1, px.x2, px.y2, cfg.seg.in_h, cfg.seg.in_w);
    return res;
}

Mask binarize(const Tensor& probabilities, int side, double threshold) {
    Mask m(side, side);
    for (int i = 0; i < side * side; ++i) m.v[i] = probabilities[i] > threshold ? 1 : 0;
    return m;
}

MaskPrediction segment(const Image& crop, const Network& seg, const ModelConfig& cfg) {
    if (crop.h != seg.config().in_h || crop.w != seg.config().in_w)
        throw std::runtime_error("segmentation input is " + std::to_string(crop.h) + "x" +
                                 std::to_string(crop.w) + ", configured for " +
                                 std::to_string(seg.config().in_h) + "x" +
                                 std::to_string(seg.config().in_w));
    MaskPrediction p;
    p.probabilities = seg.forward(image_to_tensor(crop, crop.h, crop.w));
    p.binary = binarize(p.probabilities, cfg.mask_side, cfg.threshold);
    return p;
}

Mask paint_back(const Mask& m, const Box& px_box, int img_h, int img_w) {
    Mask full(img_h, img_w);
    const double bw = px_box.x2 - px_box.x1, bh = px_box.y2 - px_box.y1;
    if (bw <= 0 || bh <= 0) return full;
    const int y_lo = std::max(0, static_cast<int>(std::floor(px_box.y1)));
    const int y_hi = std::min(img_h, static_cast<int>(std::ceil(px_box.y2)));
    const int x_lo = std::max(0, static_cast<int>(std::floor(px_box.x1)));
    const int x_hi = std::min(img_w, static_cast<int>(std::ceil(px_box.x2)));
    for (int y = y_lo; y < y_hi; ++y) {
        int v = static_cast<int>((y + 0.5 - px_box.y1) / bh * m.h);
        v = std::clamp(v, 0, m.h - 1);
        for (int x = x_lo; x < x_hi; ++x) {
            int u = static_cast<int>((x + 0.5 - px_box.x1) / bw * m.w);
            u = std::clamp(u, 0, m.w - 1);
            full.at(y, x) = m.at(v, u);
        }
    }
    return full;
}

Mask target_mask(const Mask& gt, const Box& px_box, int m) {
    return crop_mask_nearest(gt, px_box.x1, px_box.y1, px_box.x2, px_box.y2, m, m);
}

Extraction extract(const Image& img, const Network& loc, const Network& seg,
                   const ModelConfig& cfg) {
    Extraction e;
    e.box = localize(img, loc, cfg);
    const CropResult cr = crop_resize(img, e.box, cfg);
    e.mask = segment(cr.crop, seg, cfg);
    e.full_mask = paint_back(e.mask.binary, cr.px_box, img.h, img.w);
    return e;
}

}  // namespace objex
