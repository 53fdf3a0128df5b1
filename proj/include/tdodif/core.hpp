#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tdodif/errors.hpp"

namespace tdodif {

/// Row-major 2D raster. The coordinate frame shared by every per-pixel map.
template <class V>
struct Raster2D {
    int width = 0;
    int height = 0;
    std::vector<V> data;

    Raster2D() = default;
    Raster2D(int w, int h, V fill = V{}) : width(w), height(h), data(size_t(w) * h, fill) {
        if (w < 1 || h < 1) throw ConfigError("Raster2D dimensions must be >= 1");
    }

    V& at(int x, int y) { return data[size_t(y) * width + x]; }
    const V& at(int x, int y) const { return data[size_t(y) * width + x]; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
    size_t size() const { return data.size(); }
    bool same_dims(int w, int h) const { return width == w && height == h; }

    bool operator==(const Raster2D&) const = default;
};

using Rgb = std::array<uint8_t, 3>;
using RgbImage = Raster2D<Rgb>;

/// Per-pixel class IDs. 0 means unlabeled/ignored; valid classes are 1..num_classes.
struct LabelMap {
    Raster2D<uint8_t> grid;
    int num_classes = 0;

    LabelMap() = default;
    LabelMap(int w, int h, int c) : grid(w, h, 0), num_classes(c) {}

    int width() const { return grid.width; }
    int height() const { return grid.height; }
    uint8_t& at(int x, int y) { return grid.at(x, y); }
    uint8_t at(int x, int y) const { return grid.at(x, y); }

    size_t labeled_count() const {
        return size_t(std::count_if(grid.data.begin(), grid.data.end(),
                                    [](uint8_t v) { return v != 0; }));
    }

    bool operator==(const LabelMap&) const = default;
};

/// Per-pixel per-class probabilities (or raw scores), planar layout [c][y][x].
struct ProbMap {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    ProbMap() = default;
    ProbMap(int w, int h, int c) : width(w), height(h), channels(c),
                                   data(size_t(w) * h * c, 0.0f) {
        if (w < 1 || h < 1 || c < 1) throw ConfigError("ProbMap dimensions must be >= 1");
    }

    float& at(int c, int x, int y) { return data[(size_t(c) * height + y) * width + x]; }
    float at(int c, int x, int y) const { return data[(size_t(c) * height + y) * width + x]; }
    size_t pixel_count() const { return size_t(width) * height; }

    bool operator==(const ProbMap&) const = default;
};

/// Dense flow F=(u,v) in pixels, reference -> target.
struct FlowField {
    Raster2D<float> u, v;

    FlowField() = default;
    FlowField(int w, int h) : u(w, h, 0.0f), v(w, h, 0.0f) {}

    int width() const { return u.width; }
    int height() const { return u.height; }
};

/// Per-pixel flow reliability in [0,1].
struct ConfidenceMap {
    Raster2D<float> grid;

    ConfidenceMap() = default;
    ConfidenceMap(int w, int h, float fill = 0.0f) : grid(w, h, fill) {}

    int width() const { return grid.width; }
    int height() const { return grid.height; }
    float& at(int x, int y) { return grid.at(x, y); }
    float at(int x, int y) const { return grid.at(x, y); }
};

/// Dense feature map, one dim-length vector per pixel (interleaved layout).
struct FeatureMap {
    int width = 0;
    int height = 0;
    int dim = 0;
    std::vector<float> data;

    FeatureMap() = default;
    FeatureMap(int w, int h, int d) : width(w), height(h), dim(d),
                                      data(size_t(w) * h * d, 0.0f) {
        if (d < 1) throw ConfigError("FeatureMap dim must be >= 1");
    }

    std::span<float> at(int x, int y) {
        return {data.data() + (size_t(y) * width + x) * dim, size_t(dim)};
    }
    std::span<const float> at(int x, int y) const {
        return {data.data() + (size_t(y) * width + x) * dim, size_t(dim)};
    }
};

/// Cosine similarity in [-1,1]. Zero-norm inputs yield 0 so loss code stays total.
inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ConfigError("cosine_similarity: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * b[i];
        na += double(a[i]) * a[i];
        nb += double(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

/// 1-based class index of the maximum channel; ties break to the lowest index.
inline int argmax_channel(const ProbMap& p, int x, int y) {
    int best = 0;
    float best_v = p.at(0, x, y);
    for (int c = 1; c < p.channels; ++c) {
        float v = p.at(c, x, y);
        if (v > best_v) {
            best_v = v;
            best = c;
        }
    }
    return best + 1;
}

}  // namespace tdodif
