#include "objex/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <stdexcept>

#include "objex/rng.hpp"

namespace fs = std::filesystem;

namespace objex {

Box derive_tight_box(const Mask& m, const std::string& context) {
    int x0 = m.w, x1 = -1, y0 = m.h, y1 = -1;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(y, x)) {
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw std::runtime_error("mask has no foreground pixels: " + context);
    return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 + 1),
            static_cast<double>(y1 + 1)};
}

Dataset load_dataset(const std::string& path) {
    const fs::path images = fs::path(path) / "images";
    const fs::path masks = fs::path(path) / "masks";
    if (!fs::is_directory(images) || !fs::is_directory(masks))
        throw std::runtime_error("dataset directory must contain images/ and masks/: " + path);

    std::map<std::string, fs::path> image_files, mask_files;
    for (const auto& e : fs::directory_iterator(images))
        if (e.path().extension() == ".png") image_files[e.path().stem().string()] = e.path();
    for (const auto& e : fs::directory_iterator(masks)) {
        const auto ext = e.path().extension();
        if (ext == ".png" || ext == ".pgm") mask_files[e.path().stem().string()] = e.path();
    }

    Dataset ds;
    for (const auto& [id, img_path] : image_files) {
        auto it = mask_files.find(id);
        if (it == mask_files.end()) {
            ds.skipped.push_back(img_path.string() + " (no mask)");
            continue;
        }
        Sample s;
        s.id = id;
        s.image = read_image_png(img_path.string());
        s.mask = read_mask(it->second.string());
        if (s.mask.h != s.image.h || s.mask.w != s.image.w)
            throw std::runtime_error("mask dimensions differ from image: " + it->second.string());
        s.tight_box_px = derive_tight_box(s.mask, it->second.string());
        ds.samples.push_back(std::move(s));
    }
    for (const auto& [id, mask_path] : mask_files)
        if (!image_files.count(id)) ds.skipped.push_back(mask_path.string() + " (no image)");

    if (ds.samples.empty()) throw std::runtime_error("no usable samples in dataset: " + path);
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct Shape {
    int kind = 0;  // 0 disk, 1 rectangle, 2 triangle
    double cx = 0, cy = 0, r = 0;
    double ax = 0, ay = 0, bx = 0, by = 0, tx = 0, ty = 0;  // triangle vertices
    double rw = 0, rh = 0, rot = 0;                          // rectangle half-extents + angle

    bool contains(double x, double y) const {
        switch (kind) {
            case 0:
                return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
            case 1: {
                const double c = std::cos(rot), s = std::sin(rot);
                const double u = c * (x - cx) + s * (y - cy);
                const double v = -s * (x - cx) + c * (y - cy);
                return std::abs(u) <= rw && std::abs(v) <= rh;
            }
            default: {
                auto side = [](double x1, double y1, double x2, double y2, double px, double py) {
                    return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
                };
                const double d1 = side(ax, ay, bx, by, x, y);
                const double d2 = side(bx, by, tx, ty, x, y);
                const double d3 = side(tx, ty, ax, ay, x, y);
                const bool neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
                const bool pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
                return !(neg && pos);
            }
        }
    }
};

// Thin capsule attached to the main shape, pointing outward.
struct Appendage {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0, half_w = 0;

    bool contains(double x, double y) const {
        const double dx = x1 - x0, dy = y1 - y0;
        const double len2 = dx * dx + dy * dy;
        double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double px = x0 + t * dx - x, py = y0 + t * dy - y;
        return px * px + py * py <= half_w * half_w;
    }
};

Shape random_shape(Rng& rng, int size, double min_r, double max_r) {
    Shape s;
    s.kind = static_cast<int>(rng.uniform_int(3));
    s.r = min_r + rng.uniform() * (max_r - min_r);
    const double margin = s.r + 2.0;
    s.cx = margin + rng.uniform() * (size - 2.0 * margin);
    s.cy = margin + rng.uniform() * (size - 2.0 * margin);
    if (s.kind == 1) {
        s.rw = s.r * (0.6 + 0.4 * rng.uniform());
        s.rh = s.r * (0.6 + 0.4 * rng.uniform());
        s.rot = rng.uniform() * 3.14159265358979323846;
    } else if (s.kind == 2) {
        for (int i = 0; i < 3; ++i) {
            const double ang = (i + rng.uniform() * 0.6) * 2.0 * 3.14159265358979323846 / 3.0;
            const double rad = s.r * (0.7 + 0.3 * rng.uniform());
            const double px = s.cx + rad * std::cos(ang);
            const double py = s.cy + rad * std::sin(ang);
            if (i == 0) { s.ax = px; s.ay = py; }
            else if (i == 1) { s.bx = px; s.by = py; }
            else { s.tx = px; s.ty = py; }
        }
    }
    return s;
}

std::array<double, 3> random_color(Rng& rng) {
    return {rng.uniform(), rng.uniform(), rng.uniform()};
}

double color_dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    double d = 0;
    for (int c = 0; c < 3; ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
    return std::sqrt(d);
}

// Low-frequency value noise: a coarse random lattice, bilinearly upsampled.
std::vector<double> value_noise(Rng& rng, int size, int cells, double amp) {
    const int g = cells + 1;
    std::vector<double> grid(static_cast<std::size_t>(g) * g);
    for (auto& v : grid) v = (rng.uniform() * 2.0 - 1.0) * amp;
    std::vector<double> out(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double gy = static_cast<double>(y) / size * cells;
            const double gx = static_cast<double>(x) / size * cells;
            const int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
            const double fy = gy - y0, fx = gx - x0;
            out[static_cast<std::size_t>(y) * size + x] =
                (1 - fy) * ((1 - fx) * grid[y0 * g + x0] + fx * grid[y0 * g + x0 + 1]) +
                fy * ((1 - fx) * grid[(y0 + 1) * g + x0] + fx * grid[(y0 + 1) * g + x0 + 1]);
        }
    return out;
}

}  // namespace

void gen_synthetic(const std::string& out_dir, const SynthConfig& cfg) {
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");

    for (int idx = 0; idx < cfg.count; ++idx) {
        // Per-image substream: image k is identical regardless of count.
        Rng rng(Rng::mix(cfg.seed ^ Rng::fnv1a("synth")) + static_cast<uint64_t>(idx));

        const int size = cfg.size;
        auto bg = random_color(rng);
        auto fg = random_color(rng);
        while (color_dist(fg, bg) < cfg.color_margin) fg = random_color(rng);

        const auto noise = value_noise(rng, size, 6, 0.12);
        const auto fine = value_noise(rng, size, 16, 0.05);

        Image img(size, size);
        Mask mask(size, size);

        const Shape obj = random_shape(rng, size, cfg.min_radius, cfg.max_radius);

        // Appendages stretch the tight box past the body, like limbs do.
        std::vector<Appendage> tails;
        if (rng.uniform() < cfg.protrusion_prob) {
            const int n_tails = 1 + static_cast<int>(rng.uniform_int(2));
            for (int t = 0; t < n_tails; ++t) {
                Appendage a;
                const double ang = rng.uniform() * 2.0 * 3.14159265358979323846;
                const double dir_x = std::cos(ang), dir_y = std::sin(ang);
                // Start just inside the body edge, extend outward.
                double r = obj.r;
                while (r > 0.5 && !obj.contains(obj.cx + r * dir_x, obj.cy + r * dir_y))
                    r -= 0.5;
                const double len = 6.0 + rng.uniform() * 8.0;
                a.x0 = obj.cx + (r - 1.0) * dir_x;
                a.y0 = obj.cy + (r - 1.0) * dir_y;
                a.x1 = std::clamp(a.x0 + len * dir_x, 1.0, size - 2.0);
                a.y1 = std::clamp(a.y0 + len * dir_y, 1.0, size - 2.0);
                a.half_w = 0.7 + rng.uniform() * 0.8;
                tails.push_back(a);
            }
        }

        // Distractors: background-toned clutter, never painted over the object.
        std::vector<Shape> clutter;
        std::vector<std::array<double, 3>> clutter_colors;
        const int n_clutter = static_cast<int>(rng.uniform_int(cfg.max_distractors + 1));
        for (int i = 0; i < n_clutter; ++i) {
            clutter.push_back(random_shape(rng, size, 2.0, 6.0));
            auto col = bg;
            for (int c = 0; c < 3; ++c)
                col[c] = std::clamp(col[c] + (rng.uniform() * 2.0 - 1.0) * 0.25, 0.0, 1.0);
            clutter_colors.push_back(col);
        }

        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * size + x;
                std::array<double, 3> col = bg;
                for (int k = 0; k < n_clutter; ++k)
                    if (clutter[k].contains(x + 0.5, y + 0.5)) col = clutter_colors[k];
                bool inside = obj.contains(x + 0.5, y + 0.5);
                for (const auto& t : tails) inside = inside || t.contains(x + 0.5, y + 0.5);
                if (inside) {
                    col = fg;
                    mask.at(y, x) = 1;
                }
                for (int c = 0; c < 3; ++c)
                    img.at(y, x, c) = std::clamp(col[c] + noise[i] + fine[i], 0.0, 1.0);
            }

        // The shape placement keeps a margin inside the frame, so the mask is
        // never empty; guard anyway.
        if (mask.count() == 0) mask.at(static_cast<int>(obj.cy), static_cast<int>(obj.cx)) = 1;

        char name[32];
        std::snprintf(name, sizeof(name), "synth_%05d", idx);
        write_image_png((fs::path(out_dir) / "images" / (std::string(name) + ".png")).string(), img);
        write_mask((fs::path(out_dir) / "masks" / (std::string(name) + ".png")).string(), mask);
    }
}

}  // namespace objex
