#include "objex/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <png.h>

namespace objex {

namespace {

struct PngReader {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) fclose(fp);
    }
};

struct PngWriter {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) fclose(fp);
    }
};

// Decodes any PNG into 8-bit interleaved samples with `channels` channels.
std::vector<uint8_t> decode_png(const std::string& path, int channels, int* h, int* w) {
    PngReader r;
    r.fp = fopen(path.c_str(), "rb");
    if (!r.fp) throw std::runtime_error("cannot open image: " + path);
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    r.info = png_create_info_struct(r.png);
    if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("failed to decode PNG: " + path);
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);

    png_set_strip_16(r.png);
    png_set_packing(r.png);
    png_set_expand(r.png);
    png_set_strip_alpha(r.png);
    if (channels == 3)
        png_set_gray_to_rgb(r.png);
    else
        png_set_rgb_to_gray_fixed(r.png, 1, -1, -1);
    png_read_update_info(r.png, r.info);

    *h = static_cast<int>(png_get_image_height(r.png, r.info));
    *w = static_cast<int>(png_get_image_width(r.png, r.info));
    if (static_cast<int>(png_get_channels(r.png, r.info)) != channels)
        throw std::runtime_error("unexpected channel count after decode: " + path);

    std::vector<uint8_t> data(static_cast<std::size_t>(*h) * *w * channels);
    std::vector<png_bytep> rows(*h);
    for (int y = 0; y < *h; ++y)
        rows[y] = data.data() + static_cast<std::size_t>(y) * *w * channels;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return data;
}

void encode_png(const std::string& path, const uint8_t* data, int h, int w, int channels) {
    PngWriter wr;
    wr.fp = fopen(path.c_str(), "wb");
    if (!wr.fp) throw std::runtime_error("cannot write image: " + path);
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    wr.info = png_create_info_struct(wr.png);
    if (setjmp(png_jmpbuf(wr.png))) throw std::runtime_error("failed to encode PNG: " + path);
    png_init_io(wr.png, wr.fp);
    png_set_IHDR(wr.png, wr.info, w, h, 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y)
        rows[y] = const_cast<png_bytep>(data + static_cast<std::size_t>(y) * w * channels);
    png_write_image(wr.png, rows.data());
    png_write_end(wr.png, nullptr);
}

bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

uint8_t to_byte(double v) {
    const double s = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<uint8_t>(s);
}

// Reads a PGM (P5) header, leaving the stream at the start of pixel data.
void read_pgm_header(std::ifstream& f, const std::string& path, int* w, int* h, int* maxval) {
    std::string magic;
    f >> magic;
    if (magic != "P5") throw std::runtime_error("not a P5 PGM: " + path);
    auto next_int = [&]() {
        int v;
        // skip whitespace and '#' comments
        while (true) {
            int c = f.peek();
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
        f >> v;
        return v;
    };
    *w = next_int();
    *h = next_int();
    *maxval = next_int();
    f.get();  // single whitespace before raster
}

}  // namespace

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::accumulate(v.begin(), v.end(), std::size_t{0}));
}

Image read_image_png(const std::string& path) {
    int h = 0, w = 0;
    auto bytes = decode_png(path, 3, &h, &w);
    Image img(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.px[i] = bytes[i] / 255.0;
    return img;
}

void write_image_png(const std::string& path, const Image& img) {
    std::vector<uint8_t> bytes(img.px.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(img.px[i]);
    encode_png(path, bytes.data(), img.h, img.w, 3);
}

Mask read_mask(const std::string& path) {
    int h = 0, w = 0;
    std::vector<uint8_t> bytes;
    if (has_suffix(path, ".pgm")) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open mask: " + path);
        int maxval;
        read_pgm_header(f, path, &w, &h, &maxval);
        if (maxval != 255) throw std::runtime_error("mask PGM must have maxval 255: " + path);
        bytes.resize(static_cast<std::size_t>(h) * w);
        f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw std::runtime_error("truncated mask PGM: " + path);
    } else {
        bytes = decode_png(path, 1, &h, &w);
    }
    Mask m(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) m.v[i] = bytes[i] > 127 ? 1 : 0;
    return m;
}

void write_mask(const std::string& path, const Mask& m) {
    std::vector<uint8_t> bytes(m.v.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = m.v[i] ? 255 : 0;
    if (has_suffix(path, ".pgm")) {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write mask: " + path);
        f << "P5\n" << m.w << " " << m.h << "\n255\n";
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    } else {
        encode_png(path, bytes.data(), m.h, m.w, 1);
    }
}

void write_pgm16(const std::string& path, const std::vector<uint16_t>& v, int h, int w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write PGM: " + path);
    f << "P5\n" << w << " " << h << "\n65535\n";
    for (uint16_t s : v) {
        const char bytes[2] = {static_cast<char>(s >> 8), static_cast<char>(s & 0xff)};
        f.write(bytes, 2);
    }
}

std::vector<uint16_t> read_pgm16(const std::string& path, int* h, int* w) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open PGM: " + path);
    int maxval;
    read_pgm_header(f, path, w, h, &maxval);
    if (maxval != 65535) throw std::runtime_error("expected 16-bit PGM: " + path);
    std::vector<uint16_t> v(static_cast<std::size_t>(*h) * *w);
    for (auto& s : v) {
        unsigned char b[2];
        f.read(reinterpret_cast<char*>(b), 2);
        s = static_cast<uint16_t>((b[0] << 8) | b[1]);
    }
    if (!f) throw std::runtime_error("truncated PGM: " + path);
    return v;
}

namespace {

inline double sample_bilinear(const Image& src, double x, double y, int c) {
    x = std::clamp(x, 0.0, static_cast<double>(src.w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(src.h - 1));
    const int x0 = static_cast<int>(x);
    const int y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, src.w - 1);
    const int y1 = std::min(y0 + 1, src.h - 1);
    const double fx = x - x0, fy = y - y0;
    return (1 - fy) * ((1 - fx) * src.at(y0, x0, c) + fx * src.at(y0, x1, c)) +
           fy * ((1 - fx) * src.at(y1, x0, c) + fx * src.at(y1, x1, c));
}

}  // namespace

Image crop_resize_px(const Image& src, double x1, double y1, double x2, double y2, int oh, int ow) {
    Image out(oh, ow);
    const double bw = x2 - x1, bh = y2 - y1;
    for (int v = 0; v < oh; ++v) {
        const double sy = y1 + (v + 0.5) * bh / oh - 0.5;
        for (int u = 0; u < ow; ++u) {
            const double sx = x1 + (u + 0.5) * bw / ow - 0.5;
            for (int c = 0; c < 3; ++c) out.at(v, u, c) = sample_bilinear(src, sx, sy, c);
        }
    }
    return out;
}

Image resize_bilinear(const Image& src, int oh, int ow) {
    return crop_resize_px(src, 0.0, 0.0, src.w, src.h, oh, ow);
}

Mask crop_mask_nearest(const Mask& src, double x1, double y1, double x2, double y2, int oh, int ow) {
    Mask out(oh, ow);
    const double bw = x2 - x1, bh = y2 - y1;
    for (int v = 0; v < oh; ++v) {
        int sy = static_cast<int>(std::lround(y1 + (v + 0.5) * bh / oh - 0.5));
        sy = std::clamp(sy, 0, src.h - 1);
        for (int u = 0; u < ow; ++u) {
            int sx = static_cast<int>(std::lround(x1 + (u + 0.5) * bw / ow - 0.5));
            sx = std::clamp(sx, 0, src.w - 1);
            out.at(v, u) = src.at(sy, sx);
        }
    }
    return out;
}

uint64_t content_hash(const Image& img) {
    // FNV-1a over the quantized pixel bytes plus dimensions.
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](uint8_t b) {
        h ^= b;
        h *= 1099511628211ull;
    };
    for (int v : {img.h, img.w})
        for (int i = 0; i < 4; ++i) mix(static_cast<uint8_t>(v >> (8 * i)));
    for (double p : img.px) mix(to_byte(p));
    return h;
}

}  // namespace objex
