#pragma once

#include <optional>
#include <string>
#include <vector>

#include "objex/box.hpp"
#include "objex/image.hpp"

namespace objex {

struct Sample {
    std::string id;
    Image image;
    Mask mask;          // groundtruth, >= 1 foreground pixel
    Box tight_box_px;   // minimal box around foreground, pixel edge coords
    std::string superpixel_ref;  // cache key, filled when maps are prepared

    // L_i in the normalized frame of a given profile.
    Box tight_box(double frame) const {
        return box_from_pixels(tight_box_px, frame, image.w, image.h);
    }
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<std::string> skipped;  // unpaired or otherwise unusable files
};

// Minimal axis-aligned box containing all foreground pixels, in pixel edge
// coordinates (a lone pixel at (r,c) yields the unit box c,r,c+1,r+1).
// Throws if the mask is empty.
Box derive_tight_box(const Mask& m, const std::string& context);

// Loads `<path>/images/<id>.png` + `<path>/masks/<id>.png` pairs (masks may
// also be .pgm). Unpaired files are collected in `skipped` with a warning.
Dataset load_dataset(const std::string& path);

struct SynthConfig {
    int count = 100;
    uint64_t seed = 0;
    int size = 64;
    // Minimum RGB distance between object color and background base color.
    double color_margin = 0.45;
    int min_radius = 7;
    int max_radius = 20;
    int max_distractors = 5;
    // Probability of thin appendages on the salient shape (tails, spikes).
    // They stretch the tight groundtruth box the way limbs and handles do in
    // natural photos.
    double protrusion_prob = 0.6;
};

// Renders `count` images of one salient shape (disk / rectangle / triangle)
// over a textured, cluttered background, plus exact masks. Deterministic per
// seed; writes the directory layout load_dataset expects.
void gen_synthetic(const std::string& out_dir, const SynthConfig& cfg);

}  // namespace objex
