#pragma once

// Superpixel-based spatial diffusion: within each superpixel, predicted
// pixels whose class already appears among the seed pseudo labels get
// labeled; everything else stays 0.

#include <cstdint>
#include <vector>

#include "tdodif/core.hpp"
#include "tdodif/errors.hpp"
#include "tdodif/slic.hpp"

namespace tdodif {

struct SpatialDiffuseStats {
    size_t seed_conflicts = 0;  // seeds disagreeing with the prediction map
};

inline LabelMap spatial_diffuse(const LabelMap& prediction, const LabelMap& init,
                                const SuperpixelMap& sp,
                                SpatialDiffuseStats* stats = nullptr) {
    const int w = prediction.width(), h = prediction.height();
    if (!init.grid.same_dims(w, h) || !sp.assignment.same_dims(w, h))
        throw ConfigError("spatial_diffuse: dimension mismatch");

    const int c_max = 256;
    // pass 1: per-superpixel presence set of seed classes
    std::vector<uint8_t> present(size_t(sp.count) * c_max, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            uint8_t seed = init.at(x, y);
            if (seed != 0)
                present[size_t(sp.assignment.at(x, y)) * c_max + seed] = 1;
        }

    // pass 2: label predicted pixels whose class is present; seeds always win
    LabelMap out(w, h, prediction.num_classes ? prediction.num_classes : init.num_classes);
    SpatialDiffuseStats local;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            uint8_t seed = init.at(x, y);
            uint8_t pred = prediction.at(x, y);
            if (seed != 0) {
                out.at(x, y) = seed;
                if (pred != seed) ++local.seed_conflicts;
                continue;
            }
            if (pred != 0 && present[size_t(sp.assignment.at(x, y)) * c_max + pred])
                out.at(x, y) = pred;
        }
    if (stats) *stats = local;
    return out;
}

}  // namespace tdodif
