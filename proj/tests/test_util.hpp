#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "tdodif/core.hpp"

namespace tdodif::test {

/// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("tdodif_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline RgbImage random_image(int w, int h, std::mt19937_64& rng) {
    RgbImage img(w, h);
    for (Rgb& px : img.data)
        px = {uint8_t(rng() % 256), uint8_t(rng() % 256), uint8_t(rng() % 256)};
    return img;
}

inline ProbMap random_softmax(int w, int h, int c, std::mt19937_64& rng) {
    ProbMap p(w, h, c);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sum = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                p.at(ch, x, y) = float(u(rng));
                sum += p.at(ch, x, y);
            }
            for (int ch = 0; ch < c; ++ch) p.at(ch, x, y) = float(p.at(ch, x, y) / sum);
        }
    return p;
}

inline FeatureMap random_features(int w, int h, int d, std::mt19937_64& rng) {
    FeatureMap f(w, h, d);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (float& v : f.data) {
        v = float(u(rng));
        if (std::abs(v) < 0.05f) v = 0.1f;  // keep norms away from zero
    }
    return f;
}

}  // namespace tdodif::test
