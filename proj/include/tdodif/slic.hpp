#pragma once

// SLIC superpixel clustering: localized k-means over CIELAB + position with
// the distance (d_c/M_c)^2 + (d_s/M_s)^2, followed by connectivity enforcement.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "tdodif/core.hpp"
#include "tdodif/errors.hpp"
#include "tdodif/png_io.hpp"

namespace tdodif {

struct PixelCoord {
    int x = 0;
    int y = 0;
    bool operator==(const PixelCoord&) const = default;
};

/// CIELAB (D65) from 8-bit sRGB.
inline std::array<double, 3> rgb_to_lab(const Rgb& rgb) {
    auto linearize = [](double c) {
        return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
    };
    double r = linearize(rgb[0] / 255.0);
    double g = linearize(rgb[1] / 255.0);
    double b = linearize(rgb[2] / 255.0);
    double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    auto f = [](double t) {
        return t > 0.008856 ? std::cbrt(t) : 7.787 * t + 16.0 / 116.0;
    };
    double fx = f(x), fy = f(y), fz = f(z);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

struct SlicParams {
    int k = 500;
    double mc = 10.0;
    int iters = 10;
    uint64_t seed = 0;

    void validate() const {
        if (k < 1) throw ConfigError("SLIC: K must be >= 1");
        if (mc <= 0) throw ConfigError("SLIC: M_c must be > 0");
        if (iters < 1) throw ConfigError("SLIC: iters must be >= 1");
    }
};

/// Center in (L, a, b, x, y) space.
using SlicCenter = std::array<double, 5>;

struct SuperpixelMap {
    Raster2D<int32_t> assignment;
    int count = 0;  // S
    std::vector<std::vector<PixelCoord>> members;
    std::vector<SlicCenter> centers;

    int width() const { return assignment.width; }
    int height() const { return assignment.height; }
};

/// Eq.-style SLIC distance: (d_c/M_c)^2 + (d_s/M_s)^2.
inline double slic_distance(const SlicCenter& pixel, const SlicCenter& center,
                            double mc, double ms) {
    double dc2 = 0.0;
    for (int i = 0; i < 3; ++i) {
        double d = pixel[i] - center[i];
        dc2 += d * d;
    }
    double dx = pixel[3] - center[3];
    double dy = pixel[4] - center[4];
    double ds2 = dx * dx + dy * dy;
    return dc2 / (mc * mc) + ds2 / (ms * ms);
}

namespace detail {

/// Merge 4-connected fragments smaller than min_size into their largest
/// adjacent component, then rebuild members/centers with compact IDs.
inline void enforce_connectivity(SuperpixelMap& sp, const std::vector<SlicCenter>& lab_xy,
                                 size_t min_size) {
    const int w = sp.width(), h = sp.height();
    const size_t n = size_t(w) * h;

    // connected-component labeling over the raw assignment
    std::vector<int32_t> comp(n, -1);
    std::vector<size_t> comp_size;
    std::vector<PixelCoord> stack;
    for (int y0 = 0; y0 < h; ++y0)
        for (int x0 = 0; x0 < w; ++x0) {
            if (comp[size_t(y0) * w + x0] >= 0) continue;
            int32_t id = int32_t(comp_size.size());
            int32_t label = sp.assignment.at(x0, y0);
            size_t sz = 0;
            stack.push_back({x0, y0});
            comp[size_t(y0) * w + x0] = id;
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                ++sz;
                const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int d = 0; d < 4; ++d) {
                    int nx = x + dx[d], ny = y + dy[d];
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                    size_t ni = size_t(ny) * w + nx;
                    if (comp[ni] < 0 && sp.assignment.at(nx, ny) == label) {
                        comp[ni] = id;
                        stack.push_back({nx, ny});
                    }
                }
            }
            comp_size.push_back(sz);
        }

    // union-find over components; repeatedly fold small roots into their
    // largest adjacent root
    std::vector<int32_t> parent(comp_size.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int32_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };

    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<size_t> root_size(comp_size.size(), 0);
        for (size_t i = 0; i < comp_size.size(); ++i)
            root_size[size_t(find(int32_t(i)))] += comp_size[i];

        // best (largest) neighbor root per root
        std::vector<int32_t> best(comp_size.size(), -1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int32_t a = find(comp[size_t(y) * w + x]);
                for (auto [nx, ny] : {PixelCoord{x + 1, y}, PixelCoord{x, y + 1}}) {
                    if (nx >= w || ny >= h) continue;
                    int32_t b = find(comp[size_t(ny) * w + nx]);
                    if (a == b) continue;
                    if (best[a] < 0 || root_size[size_t(b)] > root_size[size_t(best[a])])
                        best[a] = b;
                    if (best[b] < 0 || root_size[size_t(a)] > root_size[size_t(best[b])])
                        best[b] = a;
                }
            }
        for (size_t i = 0; i < comp_size.size(); ++i) {
            int32_t r = find(int32_t(i));
            if (size_t(r) != i) continue;
            if (root_size[size_t(r)] < min_size && best[size_t(r)] >= 0) {
                parent[size_t(r)] = find(best[size_t(r)]);
                changed = true;
            }
        }
    }

    // compact final IDs
    std::vector<int32_t> remap(comp_size.size(), -1);
    int32_t next = 0;
    for (size_t i = 0; i < n; ++i) {
        int32_t r = find(comp[i]);
        if (remap[size_t(r)] < 0) remap[size_t(r)] = next++;
        sp.assignment.data[i] = remap[size_t(r)];
    }
    sp.count = next;

    sp.members.assign(size_t(next), {});
    sp.centers.assign(size_t(next), SlicCenter{});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int32_t id = sp.assignment.at(x, y);
            sp.members[size_t(id)].push_back({x, y});
            const SlicCenter& px = lab_xy[size_t(y) * w + x];
            for (int i = 0; i < 5; ++i) sp.centers[size_t(id)][i] += px[i];
        }
    for (int32_t id = 0; id < next; ++id) {
        double m = double(sp.members[size_t(id)].size());
        for (int i = 0; i < 5; ++i) sp.centers[size_t(id)][i] /= m;
    }
}

}  // namespace detail

/// Full SLIC segmentation. `energy_log`, when given, receives the Eq.-4
/// assignment energy after every k-means iteration (pre-enforcement).
inline SuperpixelMap slic_segment(const RgbImage& image, const SlicParams& params,
                                  std::vector<double>* energy_log = nullptr) {
    params.validate();
    const int w = image.width, h = image.height;
    const size_t m = size_t(w) * h;
    if (w < 2 || h < 2) throw ConfigError("SLIC: image must be at least 2x2");
    if (size_t(params.k) > m) throw ConfigError("SLIC: K exceeds pixel count");

    std::vector<SlicCenter> px(m);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto lab = rgb_to_lab(image.at(x, y));
            px[size_t(y) * w + x] = {lab[0], lab[1], lab[2], double(x), double(y)};
        }

    const double step = std::sqrt(double(m) / params.k);
    const double ms = step;

    // regular grid seeds, nudged to the lowest-gradient spot in a 3x3 window
    int nx = std::max(1, int(std::lround(w / step)));
    int ny = std::max(1, int(std::lround(h / step)));
    auto gradient = [&](int x, int y) {
        int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
        int yu = std::max(y - 1, 0), yd = std::min(y + 1, h - 1);
        double g = 0.0;
        for (int i = 0; i < 3; ++i) {
            double gx = px[size_t(y) * w + xr][i] - px[size_t(y) * w + xl][i];
            double gy = px[size_t(yd) * w + x][i] - px[size_t(yu) * w + x][i];
            g += gx * gx + gy * gy;
        }
        return g;
    };
    std::vector<SlicCenter> centers;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            int cx = std::min(int((i + 0.5) * w / nx), w - 1);
            int cy = std::min(int((j + 0.5) * h / ny), h - 1);
            int bx = cx, by = cy;
            double bg = gradient(cx, cy);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int qx = cx + dx, qy = cy + dy;
                    if (qx < 0 || qx >= w || qy < 0 || qy >= h) continue;
                    double g = gradient(qx, qy);
                    if (g < bg) {
                        bg = g;
                        bx = qx;
                        by = qy;
                    }
                }
            centers.push_back(px[size_t(by) * w + bx]);
        }

    SuperpixelMap sp;
    sp.assignment = Raster2D<int32_t>(w, h, -1);
    std::vector<double> dist(m, std::numeric_limits<double>::infinity());

    for (int iter = 0; iter < params.iters; ++iter) {
        // refresh distances to currently assigned (possibly moved) centers
        for (size_t i = 0; i < m; ++i)
            dist[i] = sp.assignment.data[i] < 0
                          ? std::numeric_limits<double>::infinity()
                          : slic_distance(px[i], centers[size_t(sp.assignment.data[i])],
                                          params.mc, ms);
        const int win = std::max(1, int(std::ceil(2.0 * ms)));
        for (size_t c = 0; c < centers.size(); ++c) {
            int cx = int(std::lround(centers[c][3]));
            int cy = int(std::lround(centers[c][4]));
            int x0 = std::max(cx - win, 0), x1 = std::min(cx + win, w - 1);
            int y0 = std::max(cy - win, 0), y1 = std::min(cy + win, h - 1);
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    size_t i = size_t(y) * w + x;
                    double d = slic_distance(px[i], centers[c], params.mc, ms);
                    if (d < dist[i]) {
                        dist[i] = d;
                        sp.assignment.data[i] = int32_t(c);
                    }
                }
        }
        // stragglers outside every window fall back to a full center scan
        for (size_t i = 0; i < m; ++i) {
            if (sp.assignment.data[i] >= 0) continue;
            for (size_t c = 0; c < centers.size(); ++c) {
                double d = slic_distance(px[i], centers[c], params.mc, ms);
                if (d < dist[i]) {
                    dist[i] = d;
                    sp.assignment.data[i] = int32_t(c);
                }
            }
        }
        if (energy_log)
            energy_log->push_back(std::accumulate(dist.begin(), dist.end(), 0.0));

        // center update: mean over assigned pixels in (L,a,b,x,y)
        std::vector<SlicCenter> sums(centers.size(), SlicCenter{});
        std::vector<size_t> counts(centers.size(), 0);
        for (size_t i = 0; i < m; ++i) {
            size_t c = size_t(sp.assignment.data[i]);
            for (int d = 0; d < 5; ++d) sums[c][d] += px[i][d];
            ++counts[c];
        }
        for (size_t c = 0; c < centers.size(); ++c)
            if (counts[c] > 0)
                for (int d = 0; d < 5; ++d) centers[c][d] = sums[c][d] / double(counts[c]);
    }

    size_t min_size = std::max<size_t>(1, m / size_t(params.k) / 4);
    detail::enforce_connectivity(sp, px, min_size);
    return sp;
}

/// Majority-vote downsampling of a superpixel assignment to fw x fh.
/// Blocks use integer ratios; remainder pixels fold into the last block.
inline SuperpixelMap downsample_superpixels(const SuperpixelMap& sp, int fw, int fh) {
    const int w = sp.width(), h = sp.height();
    if (fw < 1 || fh < 1 || fw > w || fh > h)
        throw ConfigError("downsample_superpixels: bad target size");
    const int rw = w / fw, rh = h / fh;

    SuperpixelMap out;
    out.assignment = Raster2D<int32_t>(fw, fh, 0);
    out.count = sp.count;
    std::vector<int32_t> votes(size_t(sp.count));
    for (int j = 0; j < fh; ++j)
        for (int i = 0; i < fw; ++i) {
            int x0 = i * rw, x1 = (i == fw - 1) ? w : (i + 1) * rw;
            int y0 = j * rh, y1 = (j == fh - 1) ? h : (j + 1) * rh;
            std::fill(votes.begin(), votes.end(), 0);
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) ++votes[size_t(sp.assignment.at(x, y))];
            int32_t best = 0;
            for (int32_t id = 1; id < sp.count; ++id)
                if (votes[size_t(id)] > votes[size_t(best)]) best = id;
            out.assignment.at(i, j) = best;
        }

    out.members.assign(size_t(sp.count), {});
    out.centers.assign(size_t(sp.count), SlicCenter{});
    for (int j = 0; j < fh; ++j)
        for (int i = 0; i < fw; ++i) {
            int32_t id = out.assignment.at(i, j);
            out.members[size_t(id)].push_back({i, j});
            out.centers[size_t(id)][3] += i;
            out.centers[size_t(id)][4] += j;
        }
    for (int32_t id = 0; id < out.count; ++id) {
        size_t n = out.members[size_t(id)].size();
        if (n > 0) {
            out.centers[size_t(id)][3] /= double(n);
            out.centers[size_t(id)][4] /= double(n);
        }
    }
    return out;
}

// --------------------------------------------------------- assignment on disk

/// 16-bit grayscale PNG of superpixel IDs plus a text sidecar of centers.
inline void write_superpixels(const SuperpixelMap& sp, const std::string& png_path) {
    if (sp.count > 65536) throw ConfigError("superpixel count exceeds 16-bit PNG range");
    std::vector<uint8_t> bytes(sp.assignment.size() * 2);
    for (size_t i = 0; i < sp.assignment.size(); ++i) {
        uint16_t v = uint16_t(sp.assignment.data[i]);
        bytes[2 * i] = uint8_t(v >> 8);
        bytes[2 * i + 1] = uint8_t(v);
    }
    png::write(png_path, sp.width(), sp.height(), 1, 16, bytes);

    std::ofstream f(png_path + ".centers.txt");
    if (!f) throw IoError("cannot write centers sidecar for " + png_path);
    f << sp.count << "\n";
    for (const SlicCenter& c : sp.centers)
        f << c[0] << " " << c[1] << " " << c[2] << " " << c[3] << " " << c[4] << "\n";
}

inline SuperpixelMap read_superpixels(const std::string& png_path) {
    png::Image img = png::read(png_path);
    if (img.channels != 1 || img.bit_depth != 16)
        throw FormatError("superpixel PNG must be 16-bit single-channel: " + png_path);
    SuperpixelMap sp;
    sp.assignment = Raster2D<int32_t>(img.width, img.height, 0);
    int32_t max_id = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            int32_t id = img.gray16(x, y);
            sp.assignment.at(x, y) = id;
            max_id = std::max(max_id, id);
        }
    sp.count = max_id + 1;
    sp.members.assign(size_t(sp.count), {});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            sp.members[size_t(sp.assignment.at(x, y))].push_back({x, y});

    std::ifstream f(png_path + ".centers.txt");
    if (f) {
        int n = 0;
        f >> n;
        if (n == sp.count) {
            sp.centers.assign(size_t(n), SlicCenter{});
            for (auto& c : sp.centers) f >> c[0] >> c[1] >> c[2] >> c[3] >> c[4];
        }
    }
    if (sp.centers.empty()) sp.centers.assign(size_t(sp.count), SlicCenter{});
    return sp;
}

}  // namespace tdodif
