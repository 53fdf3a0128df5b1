#pragma once

// Procedural desk-scale dataset: polygon scenes with per-region depth, a
// zoom-about-center camera (closed-form exact flow), and fog from the
// atmospheric scattering model I = J*exp(-beta*d) + A*(1 - exp(-beta*d)).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "tdodif/core.hpp"
#include "tdodif/errors.hpp"
#include "tdodif/ingest.hpp"

namespace tdodif {

struct SceneRegion {
    int class_id = 1;             // 1..C
    Rgb base_color{128, 128, 128};
    double depth = 1.0;           // meters, > 0
    std::vector<std::array<double, 2>> polygon;  // unit coordinates [0,1]^2
};

struct SceneSpec {
    uint64_t seed = 0;
    int width = 96;
    int height = 72;
    int num_classes = 0;
    std::vector<SceneRegion> layout;  // later regions with smaller depth occlude
    double zoom_per_frame = 1.05;     // > 1
    int frames = 2;
    double beta = 0.01;               // attenuation coefficient
    Rgb atmospheric_light{240, 240, 245};
    double color_jitter_sigma = 5.0;

    void validate() const {
        if (width < 2 || height < 2) throw ConfigError("scene: dimensions must be >= 2");
        if (num_classes < 1) throw ConfigError("scene: classes must be >= 1");
        if (layout.empty()) throw ConfigError("scene: no regions");
        if (zoom_per_frame <= 1.0) throw ConfigError("scene: zoom must be > 1");
        if (frames < 1) throw ConfigError("scene: frames must be >= 1");
        if (beta < 0.0) throw ConfigError("scene: beta must be >= 0");
        for (const SceneRegion& r : layout) {
            if (r.depth <= 0.0) throw ConfigError("scene: region depth must be > 0");
            if (r.class_id < 1 || r.class_id > num_classes)
                throw ConfigError("scene: region class out of range");
            if (r.polygon.size() < 3) throw ConfigError("scene: polygon needs >= 3 vertices");
        }
    }
};

namespace detail {

inline bool point_in_polygon(double x, double y,
                             const std::vector<std::array<double, 2>>& poly) {
    bool inside = false;
    for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        double xi = poly[i][0], yi = poly[i][1];
        double xj = poly[j][0], yj = poly[j][1];
        if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi)
            inside = !inside;
    }
    return inside;
}

}  // namespace detail

struct RenderedFrame {
    RgbImage clear;
    LabelMap gt;
    Raster2D<double> depth;
};

/// Render frame `frame_index`: regions scaled about the image center by
/// zoom^frame_index, front-most (smallest-depth) region wins per pixel.
inline RenderedFrame render_frame(const SceneSpec& spec, int frame_index) {
    spec.validate();
    if (frame_index < 0 || frame_index >= spec.frames)
        throw ConfigError("render_frame: frame index out of range");
    const int w = spec.width, h = spec.height;
    const double s = std::pow(spec.zoom_per_frame, double(frame_index));
    const double cx = w / 2.0, cy = h / 2.0;

    RenderedFrame out{RgbImage(w, h), LabelMap(w, h, spec.num_classes),
                      Raster2D<double>(w, h, 0.0)};
    std::mt19937_64 rng(spec.seed * 1000003ull + uint64_t(frame_index));
    std::normal_distribution<double> jitter(0.0, spec.color_jitter_sigma);

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            // inverse zoom back to frame-0 scene coordinates, in unit space
            double px = (cx + (x + 0.5 - cx) / s) / w;
            double py = (cy + (y + 0.5 - cy) / s) / h;
            const SceneRegion* front = nullptr;
            for (const SceneRegion& r : spec.layout)
                if (detail::point_in_polygon(px, py, r.polygon))
                    if (!front || r.depth < front->depth) front = &r;
            if (!front) front = &spec.layout.front();  // regions should cover the frame
            out.gt.at(x, y) = uint8_t(front->class_id);
            out.depth.at(x, y) = front->depth;
            Rgb c;
            for (int ch = 0; ch < 3; ++ch) {
                double v = double(front->base_color[size_t(ch)]) + jitter(rng);
                c[size_t(ch)] = uint8_t(std::clamp(v, 0.0, 255.0));
            }
            out.clear.at(x, y) = c;
        }
    return out;
}

/// I = J*t + A*(1-t) with transmittance t = exp(-beta*depth).
inline RgbImage apply_fog(const RgbImage& clear, const Raster2D<double>& depth, double beta,
                          const Rgb& atmospheric_light) {
    if (beta < 0.0) throw ConfigError("apply_fog: beta must be >= 0");
    if (!depth.same_dims(clear.width, clear.height))
        throw ConfigError("apply_fog: depth/image dimension mismatch");
    RgbImage out(clear.width, clear.height);
    for (size_t i = 0; i < clear.size(); ++i) {
        double t = std::exp(-beta * depth.data[i]);
        for (int ch = 0; ch < 3; ++ch) {
            double v = double(clear.data[i][size_t(ch)]) * t +
                       double(atmospheric_light[size_t(ch)]) * (1.0 - t);
            out.data[i][size_t(ch)] = uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
    return out;
}

struct ExactFlow {
    FlowField flow;       // reference -> target, on the reference grid
    ConfidenceMap conf;   // 1 where the mapped point lands in bounds
};

/// Analytic flow of the zoom camera. A scene point at reference-frame pixel q
/// sits at c + (q - c) * zoom^(tgt - ref) in the target frame.
inline ExactFlow exact_flow(const SceneSpec& spec, int ref_index, int tgt_index) {
    spec.validate();
    if (ref_index < 0 || ref_index >= spec.frames || tgt_index < 0 || tgt_index >= spec.frames)
        throw ConfigError("exact_flow: frame index out of range");
    const int w = spec.width, h = spec.height;
    const double r = std::pow(spec.zoom_per_frame, double(tgt_index - ref_index));
    const double cx = w / 2.0, cy = h / 2.0;

    ExactFlow out{FlowField(w, h), ConfidenceMap(w, h)};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double tx = cx + (x + 0.5 - cx) * r - 0.5;
            double ty = cy + (y + 0.5 - cy) * r - 0.5;
            out.flow.u.at(x, y) = float(tx - x);
            out.flow.v.at(x, y) = float(ty - y);
            bool in = tx >= -0.5 && tx < w - 0.5 && ty >= -0.5 && ty < h - 0.5;
            out.conf.at(x, y) = in ? 1.0f : 0.0f;
        }
    return out;
}

// --------------------------------------------------------------- scene file

inline SceneSpec read_scene_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open scene spec: " + path);
    SceneSpec spec;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("scene spec " + path + ":" + std::to_string(line_no) +
                              ": expected 'key = value'");
        std::string key = line.substr(0, eq);
        key.erase(key.find_last_not_of(" \t") + 1);
        key.erase(0, key.find_first_not_of(" \t"));
        std::istringstream val(line.substr(eq + 1));
        if (key == "seed") val >> spec.seed;
        else if (key == "width") val >> spec.width;
        else if (key == "height") val >> spec.height;
        else if (key == "classes") val >> spec.num_classes;
        else if (key == "frames") val >> spec.frames;
        else if (key == "zoom") val >> spec.zoom_per_frame;
        else if (key == "beta") val >> spec.beta;
        else if (key == "jitter") val >> spec.color_jitter_sigma;
        else if (key == "atmo") {
            int r, g, b;
            val >> r >> g >> b;
            spec.atmospheric_light = {uint8_t(r), uint8_t(g), uint8_t(b)};
        } else if (key == "region") {
            SceneRegion reg;
            int r, g, b;
            if (!(val >> reg.class_id >> reg.depth >> r >> g >> b))
                throw FormatError("scene spec: bad region line " + std::to_string(line_no));
            reg.base_color = {uint8_t(r), uint8_t(g), uint8_t(b)};
            double x, y;
            while (val >> x >> y) reg.polygon.push_back({x, y});
            spec.layout.push_back(std::move(reg));
        } else {
            throw ConfigError("scene spec: unknown key '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

/// A default 4-class scene: sky (far), road (near), a building block and an
/// off-center obstacle, so zoom growth and fog falloff are both exercised.
inline SceneSpec default_scene(uint64_t seed, int width = 96, int height = 72, int frames = 12,
                               double beta = 0.01) {
    SceneSpec spec;
    spec.seed = seed;
    spec.width = width;
    spec.height = height;
    spec.frames = frames;
    spec.beta = beta;
    spec.num_classes = 4;
    spec.zoom_per_frame = 1.06;
    // sky: whole upper half, maximal depth so it is most fog-degraded
    spec.layout.push_back({1, {70, 110, 180}, 400.0,
                           {{-0.6, -0.6}, {1.6, -0.6}, {1.6, 0.55}, {-0.6, 0.55}}});
    // road: lower half, near
    spec.layout.push_back({2, {90, 90, 95}, 20.0,
                           {{-0.6, 0.55}, {1.6, 0.55}, {1.6, 1.6}, {-0.6, 1.6}}});
    // building: mid-distance slab on the left
    spec.layout.push_back({3, {170, 120, 80}, 120.0,
                           {{0.05, 0.18}, {0.42, 0.18}, {0.42, 0.62}, {0.05, 0.62}}});
    // obstacle: small off-center box on the road
    spec.layout.push_back({4, {200, 60, 60}, 35.0,
                           {{0.58, 0.50}, {0.80, 0.50}, {0.80, 0.78}, {0.58, 0.78}}});
    return spec;
}

/// Write the full dataset: clear source frames + labels, foggy target frames,
/// ground-truth labels, exact flows/confidences, and two manifests. Returns
/// the target manifest; entries pair frame i (far view) with frame i+1 (the
/// later, near-view reference).
inline Manifest emit_dataset(const SceneSpec& spec, const std::string& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "probs");

    auto path_of = [&](const std::string& rel) { return (fs::path(out_dir) / rel).string(); };
    auto num = [](int i) {
        std::string s = std::to_string(i);
        return std::string(2 - std::min<size_t>(2, s.size()), '0') + s;
    };

    Manifest target, source;
    target.num_classes = source.num_classes = spec.num_classes;
    target.class_names.assign(size_t(spec.num_classes), "");
    target.class_palette.assign(size_t(spec.num_classes) + 1, Rgb{0, 0, 0});
    for (const SceneRegion& r : spec.layout) {
        if (target.class_names[size_t(r.class_id) - 1].empty()) {
            target.class_names[size_t(r.class_id) - 1] = "class" + std::to_string(r.class_id);
            target.class_palette[size_t(r.class_id)] = r.base_color;
        }
    }
    for (int c = 0; c < spec.num_classes; ++c)
        if (target.class_names[size_t(c)].empty()) {
            target.class_names[size_t(c)] = "class" + std::to_string(c + 1);
            target.class_palette[size_t(c) + 1] = {uint8_t(40 * c + 50), 90, 150};
        }
    source.class_names = target.class_names;
    source.class_palette = target.class_palette;

    for (int i = 0; i < spec.frames; ++i) {
        RenderedFrame frame = render_frame(spec, i);
        write_rgb_png(frame.clear, path_of("clear_" + num(i) + ".png"));
        write_rgb_png(apply_fog(frame.clear, frame.depth, spec.beta, spec.atmospheric_light),
                      path_of("foggy_" + num(i) + ".png"));
        write_label_png(frame.gt, path_of("gt_" + num(i) + ".png"));

        ManifestEntry src;
        src.target_image_path = "clear_" + num(i) + ".png";
        src.target_prob_path = "probs/src_" + num(i) + ".prb";
        src.gt_label_path = "gt_" + num(i) + ".png";
        source.entries.push_back(src);
    }
    for (int i = 0; i + 1 < spec.frames; ++i) {
        ExactFlow ef = exact_flow(spec, i + 1, i);
        write_flo(ef.flow, path_of("flow_" + num(i) + ".flo"));
        write_conf(ef.conf, path_of("conf_" + num(i) + ".cnf"));

        ManifestEntry e;
        e.target_image_path = "foggy_" + num(i) + ".png";
        e.target_prob_path = "probs/tgt_" + num(i) + ".prb";
        e.reference_prob_path = "probs/tgt_" + num(i + 1) + ".prb";
        e.flow_path = "flow_" + num(i) + ".flo";
        e.flow_conf_path = "conf_" + num(i) + ".cnf";
        e.gt_label_path = "gt_" + num(i) + ".png";
        target.entries.push_back(e);
    }
    // the last frame appears as a reference only, but its probs must exist;
    // give it its own flow-less entry so predictions get written for it
    {
        ManifestEntry e;
        int i = spec.frames - 1;
        e.target_image_path = "foggy_" + num(i) + ".png";
        e.target_prob_path = "probs/tgt_" + num(i) + ".prb";
        e.gt_label_path = "gt_" + num(i) + ".png";
        if (spec.frames > 1) target.entries.push_back(e);
    }

    write_manifest(source, path_of("source_manifest.txt"));
    write_manifest(target, path_of("target_manifest.txt"));
    return read_manifest(path_of("target_manifest.txt"));
}

}  // namespace tdodif
