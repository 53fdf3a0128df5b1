#pragma once

// Optical-flow temporal diffusion: confidence-masked forward splatting of
// reference labels/probabilities onto the target grid, then per-pixel fusion.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "tdodif/core.hpp"
#include "tdodif/errors.hpp"

namespace tdodif {

/// M_F(p) = 1 iff P_F(p) > T (strict).
inline ConfidenceMap flow_mask(const ConfidenceMap& conf, double t) {
    if (t < 0.0 || t > 1.0) throw ConfigError("flow_mask: T must be in [0,1]");
    ConfidenceMap m(conf.width(), conf.height());
    for (size_t i = 0; i < conf.grid.size(); ++i)
        m.grid.data[i] = conf.grid.data[i] > t ? 1.0f : 0.0f;
    return m;
}

struct WarpedReference {
    LabelMap labels;             // warped reference pseudo labels, 0 where no hit
    ProbMap probs;               // warped reference probability columns, 0 where no hit
    Raster2D<uint8_t> hit;       // 1 where a confident deposit landed
    Raster2D<int32_t> source;    // row-major reference index of the winning deposit, -1 if none
};

/// Forward splat: each confident reference pixel q lands at round(q + F(q)).
/// Collisions: higher P_F wins; equal P_F resolves to the larger q in
/// row-major order (so a plain ascending-q sweep with >= wins is the spec).
inline WarpedReference warp_reference(const LabelMap& ref_labels, const ProbMap& ref_probs,
                                      const FlowField& flow, const ConfidenceMap& conf,
                                      double t, int target_w, int target_h) {
    const int w = ref_labels.width(), h = ref_labels.height();
    if (!flow.u.same_dims(w, h) || !conf.grid.same_dims(w, h) ||
        ref_probs.width != w || ref_probs.height != h)
        throw ConfigError("warp_reference: reference grid dimension mismatch");

    WarpedReference out{
        LabelMap(target_w, target_h, ref_labels.num_classes),
        ProbMap(target_w, target_h, ref_probs.channels),
        Raster2D<uint8_t>(target_w, target_h, 0),
        Raster2D<int32_t>(target_w, target_h, -1),
    };
    Raster2D<float> best(target_w, target_h, -1.0f);

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float pf = conf.at(x, y);
            if (!(pf > t)) continue;
            int tx = int(std::lround(x + flow.u.at(x, y)));
            int ty = int(std::lround(y + flow.v.at(x, y)));
            if (!out.hit.in_bounds(tx, ty)) continue;
            if (pf < best.at(tx, ty)) continue;
            best.at(tx, ty) = pf;
            out.hit.at(tx, ty) = 1;
            out.source.at(tx, ty) = int32_t(y) * w + x;
            out.labels.at(tx, ty) = ref_labels.at(x, y);
            for (int c = 0; c < ref_probs.channels; ++c)
                out.probs.at(c, tx, ty) = ref_probs.at(c, x, y);
        }
    return out;
}

struct TemporalFusion {
    LabelMap labels;               // y-hat^td
    ProbMap fused_sums;            // p_t + warped probs where fusion happened
    Raster2D<uint8_t> fused_flag;  // 1 where the argmax-of-sums rule fired
};

/// Per-pixel fusion of target pseudo labels with warped reference labels:
/// both labeled -> argmax of summed probability vectors; only the warped
/// side labeled -> copy it; otherwise keep the target label.
inline TemporalFusion temporal_fuse(const LabelMap& target_init, const ProbMap& target_probs,
                                    const WarpedReference& warped) {
    const int w = target_init.width(), h = target_init.height();
    if (target_probs.width != w || target_probs.height != h ||
        !warped.hit.same_dims(w, h) || warped.probs.channels != target_probs.channels)
        throw ConfigError("temporal_fuse: dimension mismatch");

    TemporalFusion out{
        LabelMap(w, h, target_init.num_classes),
        ProbMap(w, h, target_probs.channels),
        Raster2D<uint8_t>(w, h, 0),
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            uint8_t own = target_init.at(x, y);
            bool warped_label = warped.hit.at(x, y) && warped.labels.at(x, y) != 0;
            if (warped_label && own != 0) {
                int best = 0;
                float best_v = -std::numeric_limits<float>::infinity();
                for (int c = 0; c < target_probs.channels; ++c) {
                    float sum = target_probs.at(c, x, y) + warped.probs.at(c, x, y);
                    out.fused_sums.at(c, x, y) = sum;
                    if (sum > best_v) {
                        best_v = sum;
                        best = c;
                    }
                }
                out.labels.at(x, y) = uint8_t(best + 1);
                out.fused_flag.at(x, y) = 1;
            } else if (warped_label) {
                out.labels.at(x, y) = warped.labels.at(x, y);
            } else {
                out.labels.at(x, y) = own;
            }
        }
    return out;
}

}  // namespace tdodif
