#include "objex/superpixels.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace objex {

namespace {

// sRGB -> CIELAB (D65).
void rgb_to_lab(double r, double g, double b, double* L, double* A, double* B) {
    auto lin = [](double u) {
        return u <= 0.04045 ? u / 12.92 : std::pow((u + 0.055) / 1.055, 2.4);
    };
    const double rl = lin(r), gl = lin(g), bl = lin(b);
    double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    x /= 0.95047;
    z /= 1.08883;
    auto f = [](double t) {
        return t > 0.008856 ? std::cbrt(t) : 7.787 * t + 16.0 / 116.0;
    };
    const double fx = f(x), fy = f(y), fz = f(z);
    *L = 116.0 * fy - 16.0;
    *A = 500.0 * (fx - fy);
    *B = 200.0 * (fy - fz);
}

struct Center {
    double l = 0, a = 0, b = 0, x = 0, y = 0;
};

}  // namespace

void recompute_boundary(SuperpixelMap& map) {
    map.boundary.assign(static_cast<std::size_t>(map.h) * map.w, 0);
    for (int y = 0; y < map.h; ++y) {
        for (int x = 0; x < map.w; ++x) {
            bool b = (y == 0 || y == map.h - 1 || x == 0 || x == map.w - 1);
            const int l = map.label(y, x);
            if (!b && map.label(y - 1, x) != l) b = true;
            if (!b && map.label(y + 1, x) != l) b = true;
            if (!b && map.label(y, x - 1) != l) b = true;
            if (!b && map.label(y, x + 1) != l) b = true;
            map.boundary[static_cast<std::size_t>(y) * map.w + x] = b ? 1 : 0;
        }
    }
}

SuperpixelMap slic(const Image& img, int target_segments, double compactness, int iterations) {
    const int h = img.h, w = img.w;
    const std::size_t n = static_cast<std::size_t>(h) * w;
    if (target_segments < 1) throw std::invalid_argument("target_segments must be >= 1");
    if (static_cast<std::size_t>(target_segments) > n)
        throw std::invalid_argument("target_segments exceeds pixel count");
    if (compactness <= 0.0) throw std::invalid_argument("compactness must be positive");

    std::vector<double> lab(n * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            rgb_to_lab(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), &lab[3 * i],
                       &lab[3 * i + 1], &lab[3 * i + 2]);
        }

    const double S = std::sqrt(static_cast<double>(n) / target_segments);

    // Grid seeding at interval S, offset S/2.
    std::vector<Center> centers;
    for (double cy = S / 2.0; cy < h; cy += S)
        for (double cx = S / 2.0; cx < w; cx += S) {
            Center c;
            c.x = std::min(cx, w - 1.0);
            c.y = std::min(cy, h - 1.0);
            const std::size_t i =
                static_cast<std::size_t>(std::lround(c.y)) * w + static_cast<std::size_t>(std::lround(c.x));
            c.l = lab[3 * i];
            c.a = lab[3 * i + 1];
            c.b = lab[3 * i + 2];
            centers.push_back(c);
        }

    std::vector<int> labels(n, 0);
    std::vector<double> dist(n);
    const double m2_s2 = (compactness * compactness) / (S * S);

    for (int it = 0; it < iterations; ++it) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const Center& c = centers[k];
            const int y0 = std::max(0, static_cast<int>(c.y - S));
            const int y1 = std::min(h, static_cast<int>(c.y + S) + 1);
            const int x0 = std::max(0, static_cast<int>(c.x - S));
            const int x1 = std::min(w, static_cast<int>(c.x + S) + 1);
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * w + x;
                    const double dl = lab[3 * i] - c.l;
                    const double da = lab[3 * i + 1] - c.a;
                    const double db = lab[3 * i + 2] - c.b;
                    const double dx = x - c.x;
                    const double dy = y - c.y;
                    const double d = dl * dl + da * da + db * db + (dx * dx + dy * dy) * m2_s2;
                    if (d < dist[i]) {
                        dist[i] = d;
                        labels[i] = static_cast<int>(k);
                    }
                }
        }
        // Recompute centers.
        std::vector<Center> acc(centers.size());
        std::vector<int> cnt(centers.size(), 0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                Center& a = acc[labels[i]];
                a.l += lab[3 * i];
                a.a += lab[3 * i + 1];
                a.b += lab[3 * i + 2];
                a.x += x;
                a.y += y;
                ++cnt[labels[i]];
            }
        for (std::size_t k = 0; k < centers.size(); ++k) {
            if (cnt[k] == 0) continue;  // orphan center, keep previous position
            centers[k] = {acc[k].l / cnt[k], acc[k].a / cnt[k], acc[k].b / cnt[k],
                          acc[k].x / cnt[k], acc[k].y / cnt[k]};
        }
    }

    // Connectivity enforcement: relabel connected components, then merge any
    // component that is not the largest of its original label into the
    // largest adjacent component.
    SuperpixelMap map;
    map.h = h;
    map.w = w;
    map.labels.assign(n, -1);

    struct Comp {
        int orig = 0;
        std::size_t size = 0;
        std::vector<int> px;  // flat pixel indices
    };
    std::vector<Comp> comps;
    std::vector<int> stack;
    for (std::size_t start = 0; start < n; ++start) {
        if (map.labels[start] != -1) continue;
        const int id = static_cast<int>(comps.size());
        Comp comp;
        comp.orig = labels[start];
        stack.push_back(static_cast<int>(start));
        map.labels[start] = id;
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            comp.px.push_back(i);
            const int y = i / w, x = i % w;
            const int ny[4] = {y - 1, y + 1, y, y};
            const int nx[4] = {x, x, x - 1, x + 1};
            for (int d = 0; d < 4; ++d) {
                if (ny[d] < 0 || ny[d] >= h || nx[d] < 0 || nx[d] >= w) continue;
                const int j = ny[d] * w + nx[d];
                if (map.labels[j] == -1 && labels[j] == comp.orig) {
                    map.labels[j] = id;
                    stack.push_back(j);
                }
            }
        }
        comp.size = comp.px.size();
        comps.push_back(std::move(comp));
    }

    // Largest component per original label survives.
    std::vector<int> main_comp(centers.size(), -1);
    for (std::size_t c = 0; c < comps.size(); ++c) {
        const int o = comps[c].orig;
        if (main_comp[o] == -1 || comps[c].size > comps[main_comp[o]].size)
            main_comp[o] = static_cast<int>(c);
    }
    for (std::size_t c = 0; c < comps.size(); ++c) {
        if (static_cast<int>(c) == main_comp[comps[c].orig]) continue;
        // Merge into the largest adjacent surviving-or-merged component.
        int best = -1;
        std::size_t best_size = 0;
        for (int i : comps[c].px) {
            const int y = i / w, x = i % w;
            const int ny[4] = {y - 1, y + 1, y, y};
            const int nx[4] = {x, x, x - 1, x + 1};
            for (int d = 0; d < 4; ++d) {
                if (ny[d] < 0 || ny[d] >= h || nx[d] < 0 || nx[d] >= w) continue;
                const int oc = map.labels[ny[d] * w + nx[d]];
                if (oc == static_cast<int>(c)) continue;
                if (comps[oc].size > best_size) {
                    best_size = comps[oc].size;
                    best = oc;
                }
            }
        }
        if (best < 0) continue;  // isolated full-image component, cannot happen with >1 comps
        for (int i : comps[c].px) map.labels[i] = best;
        comps[best].px.insert(comps[best].px.end(), comps[c].px.begin(), comps[c].px.end());
        comps[best].size += comps[c].size;
        comps[c].px.clear();
        comps[c].size = 0;
    }

    // Compact label ids.
    std::vector<int> remap(comps.size(), -1);
    int next = 0;
    for (auto& l : map.labels) {
        if (remap[l] == -1) remap[l] = next++;
        l = remap[l];
    }
    map.segment_count = next;
    recompute_boundary(map);
    return map;
}

double boundary_fraction(const SuperpixelMap& map, const Box& px_box, int c) {
    if (c < 4) throw std::invalid_argument("boundary_fraction needs c >= 4");
    Box b = px_box;
    b.x1 = std::clamp(b.x1, 0.0, map.w - 1.0);
    b.x2 = std::clamp(b.x2, 0.0, map.w - 1.0);
    b.y1 = std::clamp(b.y1, 0.0, map.h - 1.0);
    b.y2 = std::clamp(b.y2, 0.0, map.h - 1.0);
    if (b.x2 < b.x1) std::swap(b.x1, b.x2);
    if (b.y2 < b.y1) std::swap(b.y1, b.y2);

    const double bw = b.x2 - b.x1, bh = b.y2 - b.y1;
    const double perim = 2.0 * (bw + bh);
    int hits = 0;
    if (perim <= 0.0) {
        // Degenerate rectangle: every sample lands on the same point.
        const int x = static_cast<int>(std::lround(b.x1));
        const int y = static_cast<int>(std::lround(b.y1));
        return map.on_boundary(y, x) ? 1.0 : 0.0;
    }
    for (int i = 0; i < c; ++i) {
        // Arc length from the top-left corner, clockwise.
        double t = perim * i / c;
        double x, y;
        if (t < bw) {
            x = b.x1 + t;
            y = b.y1;
        } else if (t < bw + bh) {
            x = b.x2;
            y = b.y1 + (t - bw);
        } else if (t < 2 * bw + bh) {
            x = b.x2 - (t - bw - bh);
            y = b.y2;
        } else {
            x = b.x1;
            y = b.y2 - (t - 2 * bw - bh);
        }
        const int xi = static_cast<int>(std::lround(x));
        const int yi = static_cast<int>(std::lround(y));
        if (map.on_boundary(yi, xi)) ++hits;
    }
    return static_cast<double>(hits) / c;
}

std::string superpixel_cache_key(const Image& img, int target_segments, double compactness) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%016llx_k%d_m%g",
                  static_cast<unsigned long long>(content_hash(img)), target_segments, compactness);
    return buf;
}

bool load_cached_superpixels(const std::string& dir, const std::string& key, SuperpixelMap* out) {
    const std::string base = dir + "/" + key;
    if (!std::filesystem::exists(base + ".pgm") || !std::filesystem::exists(base + ".json"))
        return false;
    std::ifstream meta(base + ".json");
    nlohmann::json j;
    meta >> j;
    SuperpixelMap map;
    auto v16 = read_pgm16(base + ".pgm", &map.h, &map.w);
    map.labels.assign(v16.begin(), v16.end());
    map.segment_count = j.at("segment_count");
    recompute_boundary(map);
    *out = std::move(map);
    return true;
}

void store_cached_superpixels(const std::string& dir, const std::string& key,
                              const SuperpixelMap& map) {
    std::filesystem::create_directories(dir);
    const std::string base = dir + "/" + key;
    std::vector<uint16_t> v16(map.labels.begin(), map.labels.end());
    write_pgm16(base + ".pgm", v16, map.h, map.w);
    nlohmann::json j;
    j["segment_count"] = map.segment_count;
    j["h"] = map.h;
    j["w"] = map.w;
    std::ofstream meta(base + ".json");
    meta << j.dump() << "\n";
}

}  // namespace objex
