#pragma once

// Segmentation metrics: confusion matrix, per-class IoU / mIoU with the
// class-exclusion convention, and pseudo-label coverage/quality stats.

#include <cstdint>
#include <vector>

#include "tdodif/core.hpp"
#include "tdodif/errors.hpp"

namespace tdodif {

struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<uint64_t> counts;     // [gt][pred], C x C
    std::vector<uint64_t> unlabeled;  // per gt class, prediction was 0
    uint64_t ignored = 0;             // gt == 0 pixels skipped

    explicit ConfusionMatrix(int c = 0)
        : num_classes(c), counts(size_t(c) * c, 0), unlabeled(size_t(c), 0) {}

    uint64_t& at(int gt, int pred) { return counts[size_t(gt) * num_classes + pred]; }
    uint64_t at(int gt, int pred) const { return counts[size_t(gt) * num_classes + pred]; }

    void merge(const ConfusionMatrix& other) {
        if (other.num_classes != num_classes)
            throw ConfigError("confusion merge: class count mismatch");
        for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
        for (size_t i = 0; i < unlabeled.size(); ++i) unlabeled[i] += other.unlabeled[i];
        ignored += other.ignored;
    }

    uint64_t total() const {
        uint64_t t = 0;
        for (uint64_t v : counts) t += v;
        for (uint64_t v : unlabeled) t += v;
        return t;
    }
};

inline ConfusionMatrix confusion(const LabelMap& gt, const LabelMap& pred) {
    if (!pred.grid.same_dims(gt.width(), gt.height()))
        throw ConfigError("confusion: dimension mismatch");
    int c = std::max(gt.num_classes, pred.num_classes);
    ConfusionMatrix cm(c);
    for (int y = 0; y < gt.height(); ++y)
        for (int x = 0; x < gt.width(); ++x) {
            uint8_t g = gt.at(x, y);
            if (g == 0) {
                ++cm.ignored;
                continue;
            }
            uint8_t p = pred.at(x, y);
            if (p == 0)
                ++cm.unlabeled[size_t(g) - 1];
            else
                ++cm.at(g - 1, p - 1);
        }
    return cm;
}

struct IouResult {
    std::vector<double> per_class;   // NaN for excluded classes
    std::vector<bool> included;
    double miou = 0.0;
};

/// IoU_c = TP / (TP + FP + FN). Classes absent from both gt and prediction
/// are excluded from the mean; gt-present but never-predicted classes score 0
/// and stay in.
inline IouResult miou(const ConfusionMatrix& cm) {
    IouResult r;
    r.per_class.assign(size_t(cm.num_classes), 0.0);
    r.included.assign(size_t(cm.num_classes), false);
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < cm.num_classes; ++c) {
        uint64_t tp = cm.at(c, c);
        uint64_t fn = cm.unlabeled[size_t(c)];
        uint64_t fp = 0;
        for (int g = 0; g < cm.num_classes; ++g) {
            if (g != c) {
                fn += cm.at(c, g);
                fp += cm.at(g, c);
            }
        }
        uint64_t denom = tp + fp + fn;
        if (denom == 0) continue;  // absent everywhere: excluded
        r.per_class[size_t(c)] = double(tp) / double(denom);
        r.included[size_t(c)] = true;
        sum += r.per_class[size_t(c)];
        ++n;
    }
    r.miou = n > 0 ? sum / n : 0.0;
    return r;
}

struct PseudoLabelStats {
    double labeled_fraction = 0.0;
    double pseudo_miou = 0.0;
    bool miou_empty = false;  // no pixel had both pseudo and gt labels
    std::vector<uint64_t> per_class_pixels;
};

/// Coverage over all pixels; quality as mIoU restricted to pixels where both
/// the pseudo label and the ground truth are nonzero.
inline PseudoLabelStats pseudo_stats(const LabelMap& pseudo, const LabelMap& gt) {
    if (!pseudo.grid.same_dims(gt.width(), gt.height()))
        throw ConfigError("pseudo_stats: dimension mismatch");
    PseudoLabelStats s;
    int c = std::max(gt.num_classes, pseudo.num_classes);
    s.per_class_pixels.assign(size_t(c), 0);
    ConfusionMatrix cm(c);
    uint64_t labeled = 0, both = 0;
    for (int y = 0; y < gt.height(); ++y)
        for (int x = 0; x < gt.width(); ++x) {
            uint8_t p = pseudo.at(x, y);
            uint8_t g = gt.at(x, y);
            if (p != 0) {
                ++labeled;
                ++s.per_class_pixels[size_t(p) - 1];
            }
            if (p != 0 && g != 0) {
                ++cm.at(g - 1, p - 1);
                ++both;
            }
        }
    s.labeled_fraction = double(labeled) / double(size_t(gt.width()) * gt.height());
    if (both == 0) {
        s.miou_empty = true;
        return s;
    }
    s.pseudo_miou = miou(cm).miou;
    return s;
}

}  // namespace tdodif
