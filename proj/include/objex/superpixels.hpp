#pragma once

#include <string>
#include <vector>

#include "objex/box.hpp"
#include "objex/image.hpp"

namespace objex {

struct SuperpixelMap {
    int h = 0, w = 0;
    std::vector<int> labels;       // per-pixel segment id, contiguous regions
    std::vector<uint8_t> boundary; // v_j: on a segment boundary or image border
    int segment_count = 0;

    int label(int y, int x) const { return labels[static_cast<std::size_t>(y) * w + x]; }
    bool on_boundary(int y, int x) const { return boundary[static_cast<std::size_t>(y) * w + x] != 0; }
};

// SLIC over-segmentation: k-means in (L,a,b,x,y) with grid-seeded centers at
// interval S = sqrt(HW/K), 2S x 2S search window, distance
// D = sqrt(d_lab^2 + (d_xy/S)^2 m^2), fixed iteration count, then a
// connectivity pass that merges orphan regions into the largest adjacent
// segment. Deterministic: no RNG anywhere.
SuperpixelMap slic(const Image& img, int target_segments, double compactness = 10.0,
                   int iterations = 10);

// Mean of v over c points sampled in equal arc-length steps along the box
// perimeter (start at the top-left corner, clockwise), each rounded to the
// nearest pixel. Box is in source-image pixel coordinates and is clamped
// inside the image first.
double boundary_fraction(const SuperpixelMap& map, const Box& px_box, int c);

// Disk cache: 16-bit PGM label map plus a JSON sidecar. Key is the image
// content hash; over-segmentation runs once per training image.
std::string superpixel_cache_key(const Image& img, int target_segments, double compactness);
bool load_cached_superpixels(const std::string& dir, const std::string& key, SuperpixelMap* out);
void store_cached_superpixels(const std::string& dir, const std::string& key,
                              const SuperpixelMap& map);

// Recomputes the boundary flags from labels (4-neighborhood + image border).
void recompute_boundary(SuperpixelMap& map);

}  // namespace objex
