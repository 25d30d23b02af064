#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace objex {

// RGB image, values in [0,1], h x w x 3 row-major.
struct Image {
    int h = 0, w = 0;
    std::vector<double> px;

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_ * 3, 0.0) {}

    double& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return px[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
};

// Binary mask, 0 = background, 1 = foreground.
struct Mask {
    int h = 0, w = 0;
    std::vector<uint8_t> v;

    Mask() = default;
    Mask(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0) {}

    uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    std::size_t count() const;
};

Image read_image_png(const std::string& path);
void write_image_png(const std::string& path, const Image& img);

// Masks are stored as 8-bit grayscale PNG with values 0 / 255. PGM (P5) is
// accepted on read and written when the extension is .pgm.
Mask read_mask(const std::string& path);
void write_mask(const std::string& path, const Mask& m);

// 16-bit PGM (P5, maxval 65535, big-endian samples) used for cached
// superpixel label maps.
void write_pgm16(const std::string& path, const std::vector<uint16_t>& v, int h, int w);
std::vector<uint16_t> read_pgm16(const std::string& path, int* h, int* w);

// Bilinear sampling with clamp-to-edge, pixel-center convention: output cell
// (u,v) samples the source at the center of the matching sub-rectangle.
Image resize_bilinear(const Image& src, int oh, int ow);

// Crops the continuous rectangle [x1,x2) x [y1,y2) in pixel coordinates and
// resizes it to oh x ow with bilinear sampling.
Image crop_resize_px(const Image& src, double x1, double y1, double x2, double y2, int oh, int ow);

// Nearest-neighbor mask sampling over the same rectangle geometry.
Mask crop_mask_nearest(const Mask& src, double x1, double y1, double x2, double y2, int oh, int ow);

uint64_t content_hash(const Image& img);

}  // namespace objex
