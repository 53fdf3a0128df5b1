#pragma once

// Training losses and their analytic gradients: segmentation cross-entropy,
// local spatial similarity over superpixels, and the temporal contrastive
// loss over flow correspondences.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tdodif/core.hpp"
#include "tdodif/errors.hpp"
#include "tdodif/slic.hpp"

namespace tdodif {

struct LossReport {
    double l_seg_src = 0.0;
    double l_seg_tgt = 0.0;
    double l_spa = 0.0;
    double l_tem = 0.0;
    double l_final = 0.0;
};

/// L_Final = (l_seg_src + alpha_t * l_seg_tgt) + alpha_spa * l_spa + alpha_tem * l_tem.
inline double combine(double l_seg_src, double l_seg_tgt, double l_spa, double l_tem,
                      double alpha_t, double alpha_spa, double alpha_tem) {
    if (alpha_t < 0 || alpha_spa < 0 || alpha_tem < 0)
        throw ConfigError("combine: weights must be >= 0");
    return (l_seg_src + alpha_t * l_seg_tgt) + alpha_spa * l_spa + alpha_tem * l_tem;
}

namespace detail {

/// Accumulates dL/da and dL/db for c = cos(a, b), given upstream dL/dc.
/// Zero-norm inputs contribute nothing (cos is pinned to 0 there).
inline void cosine_backward(std::span<const float> a, std::span<const float> b,
                            double upstream, std::span<double> ga, std::span<double> gb) {
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * b[i];
        na2 += double(a[i]) * a[i];
        nb2 += double(b[i]) * b[i];
    }
    if (na2 == 0.0 || nb2 == 0.0) return;
    double na = std::sqrt(na2), nb = std::sqrt(nb2);
    double c = dot / (na * nb);
    for (size_t i = 0; i < a.size(); ++i) {
        ga[i] += upstream * (b[i] / (na * nb) - c * a[i] / na2);
        gb[i] += upstream * (a[i] / (na * nb) - c * b[i] / nb2);
    }
}

}  // namespace detail

// ----------------------------------------------------------------- seg loss

enum class Domain { Source, Target };

struct SegLossResult {
    double loss = 0.0;        // unweighted mean cross-entropy (combine applies alpha_t)
    ProbMap logit_grad;       // d(alpha-weighted loss)/dlogits
    bool no_labels = false;
};

/// Mean softmax cross-entropy over nonzero-labeled pixels. The returned loss
/// is unweighted; the gradient carries alpha_t for the target domain so it
/// matches the Eq.-16 objective directly.
inline SegLossResult seg_loss(const ProbMap& logits, const LabelMap& labels, double alpha_t,
                              Domain domain) {
    if (logits.width != labels.width() || logits.height != labels.height())
        throw ConfigError("seg_loss: dimension mismatch");
    SegLossResult r;
    r.logit_grad = ProbMap(logits.width, logits.height, logits.channels);
    size_t n = labels.labeled_count();
    if (n == 0) {
        r.no_labels = true;
        return r;
    }
    double scale = domain == Domain::Target ? alpha_t : 1.0;
    std::vector<double> sm(size_t(logits.channels));
    for (int y = 0; y < logits.height; ++y)
        for (int x = 0; x < logits.width; ++x) {
            uint8_t label = labels.at(x, y);
            if (label == 0) continue;
            double mx = logits.at(0, x, y);
            for (int c = 1; c < logits.channels; ++c)
                mx = std::max(mx, double(logits.at(c, x, y)));
            double z = 0.0;
            for (int c = 0; c < logits.channels; ++c) {
                sm[size_t(c)] = std::exp(logits.at(c, x, y) - mx);
                z += sm[size_t(c)];
            }
            for (int c = 0; c < logits.channels; ++c) sm[size_t(c)] /= z;
            r.loss += -std::log(std::max(sm[size_t(label - 1)], 1e-300));
            for (int c = 0; c < logits.channels; ++c) {
                double g = sm[size_t(c)] - (c == label - 1 ? 1.0 : 0.0);
                r.logit_grad.at(c, x, y) = float(scale * g / double(n));
            }
        }
    r.loss /= double(n);
    return r;
}

// ------------------------------------------------------------- spatial loss

struct FeatureGrad {
    int width = 0, height = 0, dim = 0;
    std::vector<double> data;

    FeatureGrad() = default;
    FeatureGrad(int w, int h, int d) : width(w), height(h), dim(d),
                                       data(size_t(w) * h * d, 0.0) {}
    std::span<double> at(int x, int y) {
        return {data.data() + (size_t(y) * width + x) * dim, size_t(dim)};
    }
};

struct SpatialLossResult {
    double loss = 0.0;
    FeatureGrad grad;
};

/// L_Spa = mean over (non-empty) superpixels of 1 - mean member cosine to the
/// superpixel's feature centroid. Gradients flow through the centroid too.
inline SpatialLossResult spatial_loss(const FeatureMap& f, const SuperpixelMap& sp_down) {
    if (!sp_down.assignment.same_dims(f.width, f.height))
        throw ConfigError("spatial_loss: superpixel/feature dimension mismatch");
    SpatialLossResult r;
    r.grad = FeatureGrad(f.width, f.height, f.dim);

    size_t active = 0;
    for (const auto& members : sp_down.members)
        if (!members.empty()) ++active;
    if (active == 0) return r;

    std::vector<float> eta(size_t(f.dim));
    std::vector<double> eta_grad(size_t(f.dim));
    for (const auto& members : sp_down.members) {
        if (members.empty()) continue;
        const double n = double(members.size());
        std::fill(eta.begin(), eta.end(), 0.0f);
        for (const PixelCoord& p : members) {
            auto fp = f.at(p.x, p.y);
            for (int d = 0; d < f.dim; ++d) eta[size_t(d)] += fp[d] / float(n);
        }
        double d_sp = 0.0;
        std::fill(eta_grad.begin(), eta_grad.end(), 0.0);
        // loss contribution (1 - D_sp)/active; upstream of each cosine term
        // is -1/(n*active)
        const double up = -1.0 / (n * double(active));
        for (const PixelCoord& p : members) {
            auto fp = f.at(p.x, p.y);
            d_sp += cosine_similarity(fp, eta) / n;
            detail::cosine_backward(fp, eta, up, r.grad.at(p.x, p.y), eta_grad);
        }
        // centroid chain rule: d(eta)/d(f(q)) = I/n for every member q
        for (const PixelCoord& q : members) {
            auto gq = r.grad.at(q.x, q.y);
            for (int d = 0; d < f.dim; ++d) gq[d] += eta_grad[size_t(d)] / n;
        }
        r.loss += (1.0 - d_sp) / double(active);
    }
    return r;
}

// ------------------------------------------------------- correspondence sampling

struct PositivePair {
    PixelCoord target;     // p, in target feature grid
    PixelCoord reference;  // p', in reference feature grid
};

struct CorrespondenceSample {
    std::vector<PositivePair> positives;
    std::vector<std::vector<PixelCoord>> negatives;  // per positive, in target grid
    size_t dropped_no_negatives = 0;
};

/// Uniform positives from correspondence pixels, negatives from pixels whose
/// predicted class differs from the positive's. `ref_index` maps each target
/// grid pixel to the row-major index of its reference correspondent (-1 none).
inline CorrespondenceSample sample_correspondences(const Raster2D<uint8_t>& hit,
                                                   const Raster2D<int32_t>& ref_index,
                                                   const LabelMap& pred, int n_pos, int n_neg,
                                                   std::mt19937_64& rng) {
    if (!ref_index.same_dims(hit.width, hit.height) ||
        !pred.grid.same_dims(hit.width, hit.height))
        throw ConfigError("sample_correspondences: dimension mismatch");
    if (n_pos < 0 || n_neg < 0) throw ConfigError("sample_correspondences: negative counts");

    CorrespondenceSample s;
    std::vector<PixelCoord> candidates;
    for (int y = 0; y < hit.height; ++y)
        for (int x = 0; x < hit.width; ++x)
            if (hit.at(x, y) && ref_index.at(x, y) >= 0) candidates.push_back({x, y});
    if (candidates.empty() || n_pos == 0) return s;

    // partial Fisher-Yates for sampling without replacement
    size_t take = std::min(size_t(n_pos), candidates.size());
    for (size_t i = 0; i < take; ++i) {
        size_t j = i + size_t(rng() % (candidates.size() - i));
        std::swap(candidates[i], candidates[j]);
    }

    std::vector<std::vector<PixelCoord>> by_class(257);
    for (int y = 0; y < pred.height(); ++y)
        for (int x = 0; x < pred.width(); ++x) by_class[pred.at(x, y)].push_back({x, y});
    size_t total = size_t(hit.width) * hit.height;

    for (size_t i = 0; i < take; ++i) {
        PixelCoord p = candidates[i];
        uint8_t cls = pred.at(p.x, p.y);
        size_t pool = total - by_class[cls].size();
        if (n_neg > 0 && pool == 0) {
            ++s.dropped_no_negatives;
            continue;
        }
        std::vector<PixelCoord> negs;
        for (int k = 0; k < n_neg; ++k) {
            size_t r = rng() % pool;
            // index into the concatenation of all classes != cls
            for (int c = 0; c < 257; ++c) {
                if (c == cls) continue;
                if (r < by_class[size_t(c)].size()) {
                    negs.push_back(by_class[size_t(c)][r]);
                    break;
                }
                r -= by_class[size_t(c)].size();
            }
        }
        int32_t ri = ref_index.at(p.x, p.y);
        s.positives.push_back({p, {int(ri % hit.width), int(ri / hit.width)}});
        s.negatives.push_back(std::move(negs));
    }
    return s;
}

// ------------------------------------------------------------- temporal loss

struct TemporalLossResult {
    double loss = 0.0;
    FeatureGrad grad_target;
    FeatureGrad grad_reference;
};

/// InfoNCE-style contrastive loss over cosine similarities: positives are
/// (target, reference) correspondence features, negatives live in the target
/// feature map.
inline TemporalLossResult temporal_loss(const FeatureMap& f_t, const FeatureMap& f_r,
                                        const CorrespondenceSample& s) {
    TemporalLossResult r;
    r.grad_target = FeatureGrad(f_t.width, f_t.height, f_t.dim);
    r.grad_reference = FeatureGrad(f_r.width, f_r.height, f_r.dim);
    if (s.positives.empty()) return r;

    const double inv_p = 1.0 / double(s.positives.size());
    for (size_t i = 0; i < s.positives.size(); ++i) {
        const auto& [p, p_ref] = s.positives[i];
        auto fp = f_t.at(p.x, p.y);
        auto fpr = f_r.at(p_ref.x, p_ref.y);
        double s_pos = cosine_similarity(fp, fpr);
        const auto& negs = s.negatives[i];
        std::vector<double> s_neg(negs.size());
        for (size_t j = 0; j < negs.size(); ++j)
            s_neg[j] = cosine_similarity(fp, f_t.at(negs[j].x, negs[j].y));

        // L_i = logsumexp(s_pos, s_neg...) - s_pos, computed stably
        double mx = s_pos;
        for (double v : s_neg) mx = std::max(mx, v);
        double z = std::exp(s_pos - mx);
        for (double v : s_neg) z += std::exp(v - mx);
        r.loss += inv_p * (std::log(z) + mx - s_pos);

        double w_pos = std::exp(s_pos - mx) / z;
        detail::cosine_backward(fp, fpr, inv_p * (w_pos - 1.0), r.grad_target.at(p.x, p.y),
                                r.grad_reference.at(p_ref.x, p_ref.y));
        for (size_t j = 0; j < negs.size(); ++j) {
            double w = std::exp(s_neg[j] - mx) / z;
            detail::cosine_backward(fp, f_t.at(negs[j].x, negs[j].y), inv_p * w,
                                    r.grad_target.at(p.x, p.y),
                                    r.grad_target.at(negs[j].x, negs[j].y));
        }
    }
    return r;
}

}  // namespace tdodif
