#pragma once

// On-disk artifact readers/writers. All binary formats are little-endian
// regardless of host; PRB1/CNF1/.flo round-trip byte-identically.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tdodif/core.hpp"
#include "tdodif/errors.hpp"
#include "tdodif/png_io.hpp"

namespace tdodif {

namespace detail {

inline std::vector<uint8_t> read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 24));
}

inline uint32_t get_u32le(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

inline void put_f32le(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(out, bits);
}

inline float get_f32le(const uint8_t* p) {
    uint32_t bits = get_u32le(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------- label PNG

inline LabelMap read_label_png(const std::string& path, int num_classes) {
    png::Image img = png::read(path);
    if (img.channels != 1)
        throw FormatError("label PNG must be single-channel, got " +
                          std::to_string(img.channels) + " channels: " + path);
    if (img.bit_depth != 8)
        throw FormatError("label PNG must be 8-bit, got " +
                          std::to_string(img.bit_depth) + "-bit: " + path);
    LabelMap m(img.width, img.height, num_classes);
    m.grid.data.assign(img.data.begin(), img.data.end());
    return m;
}

inline void write_label_png(const LabelMap& m, const std::string& path) {
    std::vector<uint8_t> bytes(m.grid.data.begin(), m.grid.data.end());
    png::write(path, m.width(), m.height(), 1, 8, bytes);
}

// ------------------------------------------------------------- RGB image PNG

inline RgbImage read_rgb_png(const std::string& path) {
    png::Image img = png::read(path);
    if (img.bit_depth != 8)
        throw FormatError("RGB PNG must be 8-bit: " + path);
    RgbImage out(img.width, img.height);
    if (img.channels == 3) {
        for (size_t i = 0; i < out.size(); ++i)
            out.data[i] = {img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]};
    } else if (img.paletted) {
        if (img.palette.empty()) throw FormatError("paletted PNG without PLTE: " + path);
        for (size_t i = 0; i < out.size(); ++i) {
            uint8_t idx = img.data[i];
            if (idx >= img.palette.size()) throw FormatError("palette index out of range: " + path);
            out.data[i] = img.palette[idx];
        }
    } else {
        for (size_t i = 0; i < out.size(); ++i)
            out.data[i] = {img.data[i], img.data[i], img.data[i]};
    }
    return out;
}

inline void write_rgb_png(const RgbImage& img, const std::string& path) {
    std::vector<uint8_t> bytes;
    bytes.reserve(img.size() * 3);
    for (const Rgb& px : img.data) {
        bytes.push_back(px[0]);
        bytes.push_back(px[1]);
        bytes.push_back(px[2]);
    }
    png::write(path, img.width, img.height, 3, 8, bytes);
}

// -------------------------------------------------------------------- PRB1

inline void write_prob(const ProbMap& p, const std::string& path) {
    std::vector<uint8_t> out = {'P', 'R', 'B', '1'};
    detail::put_u32le(out, uint32_t(p.width));
    detail::put_u32le(out, uint32_t(p.height));
    detail::put_u32le(out, uint32_t(p.channels));
    for (float v : p.data) detail::put_f32le(out, v);
    detail::write_all(path, out);
}

/// `softmax_check`: verify per-pixel channel sums are 1 within `tol`.
/// `strict` turns a violation into an error; otherwise the count is returned.
inline ProbMap read_prob(const std::string& path, bool softmax_check = true,
                         bool strict = false, double tol = 1e-3,
                         size_t* violations_out = nullptr) {
    std::vector<uint8_t> bytes = detail::read_all(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "PRB1", 4) != 0)
        throw FormatError("bad PRB1 magic: " + path);
    uint32_t w = detail::get_u32le(&bytes[4]);
    uint32_t h = detail::get_u32le(&bytes[8]);
    uint32_t c = detail::get_u32le(&bytes[12]);
    size_t expected = 16 + size_t(w) * h * c * 4;
    if (bytes.size() != expected)
        throw FormatError("PRB1 truncated or oversized: " + path);
    ProbMap p{int(w), int(h), int(c)};
    for (size_t i = 0; i < p.data.size(); ++i)
        p.data[i] = detail::get_f32le(&bytes[16 + 4 * i]);

    size_t violations = 0;
    if (softmax_check) {
        for (int y = 0; y < p.height; ++y)
            for (int x = 0; x < p.width; ++x) {
                double sum = 0.0;
                for (int ch = 0; ch < p.channels; ++ch) sum += p.at(ch, x, y);
                if (std::abs(sum - 1.0) > tol) ++violations;
            }
        if (violations > 0 && strict)
            throw FormatError("PRB1 channel sums violate softmax invariant at " +
                              std::to_string(violations) + " pixels: " + path);
    }
    if (violations_out) *violations_out = violations;
    return p;
}

// -------------------------------------------------------------------- CNF1

inline void write_conf(const ConfidenceMap& m, const std::string& path) {
    std::vector<uint8_t> out = {'C', 'N', 'F', '1'};
    detail::put_u32le(out, uint32_t(m.width()));
    detail::put_u32le(out, uint32_t(m.height()));
    for (float v : m.grid.data) detail::put_f32le(out, v);
    detail::write_all(path, out);
}

inline ConfidenceMap read_conf(const std::string& path, size_t* clamped_out = nullptr) {
    std::vector<uint8_t> bytes = detail::read_all(path);
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "CNF1", 4) != 0)
        throw FormatError("bad CNF1 magic: " + path);
    uint32_t w = detail::get_u32le(&bytes[4]);
    uint32_t h = detail::get_u32le(&bytes[8]);
    if (bytes.size() != 12 + size_t(w) * h * 4)
        throw FormatError("CNF1 truncated or oversized: " + path);
    ConfidenceMap m{int(w), int(h)};
    size_t clamped = 0;
    for (size_t i = 0; i < m.grid.size(); ++i) {
        float v = detail::get_f32le(&bytes[12 + 4 * i]);
        float cv = std::clamp(v, 0.0f, 1.0f);
        if (cv != v) ++clamped;
        m.grid.data[i] = cv;
    }
    if (clamped_out) *clamped_out = clamped;
    return m;
}

// ------------------------------------------------------------ Middlebury .flo

inline constexpr float kFloMagic = 202021.25f;

inline void write_flo(const FlowField& f, const std::string& path) {
    std::vector<uint8_t> out;
    detail::put_f32le(out, kFloMagic);
    detail::put_u32le(out, uint32_t(f.width()));
    detail::put_u32le(out, uint32_t(f.height()));
    for (int y = 0; y < f.height(); ++y)
        for (int x = 0; x < f.width(); ++x) {
            detail::put_f32le(out, f.u.at(x, y));
            detail::put_f32le(out, f.v.at(x, y));
        }
    detail::write_all(path, out);
}

inline FlowField read_flo(const std::string& path) {
    std::vector<uint8_t> bytes = detail::read_all(path);
    if (bytes.size() < 12 || detail::get_f32le(bytes.data()) != kFloMagic)
        throw FormatError("bad .flo magic: " + path);
    uint32_t w = detail::get_u32le(&bytes[4]);
    uint32_t h = detail::get_u32le(&bytes[8]);
    if (bytes.size() != 12 + size_t(w) * h * 8)
        throw FormatError(".flo truncated or oversized: " + path);
    FlowField f{int(w), int(h)};
    size_t i = 12;
    for (int y = 0; y < int(h); ++y)
        for (int x = 0; x < int(w); ++x) {
            f.u.at(x, y) = detail::get_f32le(&bytes[i]);
            f.v.at(x, y) = detail::get_f32le(&bytes[i + 4]);
            i += 8;
        }
    return f;
}

// ----------------------------------------------------------------- manifest

struct ManifestEntry {
    std::string target_image_path;
    std::string target_prob_path;
    std::string reference_prob_path;  // empty = absent
    std::string flow_path;
    std::string flow_conf_path;
    std::string gt_label_path;

    bool has_flow() const { return !flow_path.empty(); }
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    int num_classes = 0;
    std::vector<std::string> class_names;      // length C
    std::vector<Rgb> class_palette;            // length C+1, index 0 = ignore color
};

inline Manifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest: " + path);
    std::filesystem::path dir = std::filesystem::path(path).parent_path();

    auto resolve = [&](const std::string& p) -> std::string {
        if (p == "-" || p.empty()) return "";
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (dir / fp).string();
    };

    Manifest m;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto err = [&](const std::string& what) {
            return FormatError("manifest " + path + ":" + std::to_string(line_no) + ": " + what);
        };
        if (line.rfind("classes", 0) == 0) {
            auto eq = line.find('=');
            if (eq == std::string::npos) throw err("expected 'classes = N'");
            m.num_classes = std::stoi(line.substr(eq + 1));
            if (m.num_classes < 1) throw err("classes must be >= 1");
            m.class_names.assign(size_t(m.num_classes), "");
            m.class_palette.assign(size_t(m.num_classes) + 1, Rgb{0, 0, 0});
            continue;
        }
        if (line.rfind("class ", 0) == 0) {
            if (m.num_classes == 0) throw err("'classes = N' must come first");
            std::istringstream ss(line.substr(6));
            int k;
            std::string eq, name;
            int r, g, b;
            if (!(ss >> k >> eq >> name >> r >> g >> b) || eq != "=")
                throw err("expected 'class k = name r g b'");
            if (k < 0 || k > m.num_classes) throw err("class index out of range");
            if (k > 0) m.class_names[size_t(k) - 1] = name;
            m.class_palette[size_t(k)] = {uint8_t(r), uint8_t(g), uint8_t(b)};
            continue;
        }
        // entry line: tab-separated paths, '-' for absent
        if (m.num_classes == 0) throw err("entry before class declarations");
        std::vector<std::string> fields;
        std::istringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        if (fields.size() < 2) throw err("entry needs at least target image and prob paths");
        fields.resize(6, "-");
        ManifestEntry e;
        e.target_image_path = resolve(fields[0]);
        e.target_prob_path = resolve(fields[1]);
        e.reference_prob_path = resolve(fields[2]);
        e.flow_path = resolve(fields[3]);
        e.flow_conf_path = resolve(fields[4]);
        e.gt_label_path = resolve(fields[5]);
        if (e.target_image_path.empty() || e.target_prob_path.empty())
            throw err("target image and prob paths are required");
        bool has_ref = !e.reference_prob_path.empty();
        bool has_flow = !e.flow_path.empty() && !e.flow_conf_path.empty();
        if (has_ref != has_flow ||
            (e.flow_path.empty() != e.flow_conf_path.empty()))
            throw err("reference/flow must co-occur");
        m.entries.push_back(std::move(e));
    }
    if (m.num_classes == 0) throw FormatError("manifest has no class declarations: " + path);
    return m;
}

inline void write_manifest(const Manifest& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open manifest for writing: " + path);
    f << "classes = " << m.num_classes << "\n";
    for (int k = 0; k <= m.num_classes; ++k) {
        const Rgb& c = m.class_palette[size_t(k)];
        std::string name = k == 0 ? "ignore" : m.class_names[size_t(k) - 1];
        f << "class " << k << " = " << name << " " << int(c[0]) << " " << int(c[1]) << " "
          << int(c[2]) << "\n";
    }
    auto field = [](const std::string& s) { return s.empty() ? std::string("-") : s; };
    for (const ManifestEntry& e : m.entries) {
        f << field(e.target_image_path) << '\t' << field(e.target_prob_path) << '\t'
          << field(e.reference_prob_path) << '\t' << field(e.flow_path) << '\t'
          << field(e.flow_conf_path) << '\t' << field(e.gt_label_path) << "\n";
    }
    if (!f) throw IoError("manifest write failed: " + path);
}

// ------------------------------------------------------------------- config

enum class DiffusionOrder { TdThenSd, SdThenTd, SdOnly, TdOnly };

inline std::string to_string(DiffusionOrder o) {
    switch (o) {
        case DiffusionOrder::TdThenSd: return "td-sd";
        case DiffusionOrder::SdThenTd: return "sd-td";
        case DiffusionOrder::SdOnly: return "sd";
        case DiffusionOrder::TdOnly: return "td";
    }
    return "td-sd";
}

inline DiffusionOrder parse_order(const std::string& s) {
    if (s == "td-sd") return DiffusionOrder::TdThenSd;
    if (s == "sd-td") return DiffusionOrder::SdThenTd;
    if (s == "sd") return DiffusionOrder::SdOnly;
    if (s == "td") return DiffusionOrder::TdOnly;
    throw ConfigError("unknown diffusion order: " + s);
}

struct PipelineConfig {
    double p = 0.2;              // confident fraction per class
    int k = 500;                 // target superpixel count
    double mc = 10.0;            // SLIC max color distance
    int slic_iters = 10;
    double t = 0.5;              // flow confidence threshold
    double alpha_t = 1.0;
    double alpha_spa = 0.1;
    double alpha_tem = 5.0;
    int rounds = 4;
    int epochs = 10;
    int n_pos = 20;
    int n_neg = 1;
    DiffusionOrder order = DiffusionOrder::TdThenSd;
    uint64_t seed = 0;
    double learning_rate = 1e-4;
    int batch_size = 2;
    int feature_stride = 4;      // downsampling factor for the loss feature grid
    std::string model = "toy";   // "toy" or "external"

    void validate() const {
        if (!(p > 0.0 && p <= 1.0)) throw ConfigError("config: p must be in (0,1]");
        if (t < 0.0 || t > 1.0) throw ConfigError("config: t must be in [0,1]");
        if (alpha_t < 0 || alpha_spa < 0 || alpha_tem < 0)
            throw ConfigError("config: loss weights must be >= 0");
        if (k < 1) throw ConfigError("config: k must be >= 1");
        if (mc <= 0) throw ConfigError("config: mc must be > 0");
        if (slic_iters < 1) throw ConfigError("config: slic_iters must be >= 1");
        if (rounds < 1) throw ConfigError("config: rounds must be >= 1");
        if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
        if (n_pos < 0 || n_neg < 0) throw ConfigError("config: n_pos/n_neg must be >= 0");
        if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
        if (feature_stride < 1) throw ConfigError("config: feature_stride must be >= 1");
        if (model != "toy" && model != "external")
            throw ConfigError("config: model must be 'toy' or 'external'");
    }
};

inline PipelineConfig read_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    PipelineConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("config " + path + ":" + std::to_string(line_no) +
                              ": expected 'key = value'");
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
            return s;
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key == "p") cfg.p = std::stod(val);
        else if (key == "k") cfg.k = std::stoi(val);
        else if (key == "mc") cfg.mc = std::stod(val);
        else if (key == "slic_iters") cfg.slic_iters = std::stoi(val);
        else if (key == "t") cfg.t = std::stod(val);
        else if (key == "alpha_t") cfg.alpha_t = std::stod(val);
        else if (key == "alpha_spa") cfg.alpha_spa = std::stod(val);
        else if (key == "alpha_tem") cfg.alpha_tem = std::stod(val);
        else if (key == "rounds") cfg.rounds = std::stoi(val);
        else if (key == "epochs") cfg.epochs = std::stoi(val);
        else if (key == "n_pos") cfg.n_pos = std::stoi(val);
        else if (key == "n_neg") cfg.n_neg = std::stoi(val);
        else if (key == "order") cfg.order = parse_order(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
        else if (key == "batch_size") cfg.batch_size = std::stoi(val);
        else if (key == "feature_stride") cfg.feature_stride = std::stoi(val);
        else if (key == "model") cfg.model = val;
        else throw ConfigError("config " + path + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

}  // namespace tdodif
