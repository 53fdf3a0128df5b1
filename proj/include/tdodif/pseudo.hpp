#pragma once

// Class-balanced pseudo-label selection: dataset-wide per-class confidence
// thresholds lambda^c from a streaming histogram, then per-image selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tdodif/core.hpp"
#include "tdodif/errors.hpp"

namespace tdodif {

inline constexpr int kConfidenceBins = 4096;

struct ClassThresholds {
    std::vector<double> lambda;  // length C, values in [0,1]
    double p = 0.0;
    enum class Source { Exact, Histogram } source = Source::Histogram;
};

/// Per-class histogram of argmax confidences. Merge is associative and
/// commutative, so accumulation map-reduces over images.
struct ClassConfidenceAccumulator {
    int num_classes = 0;
    std::vector<uint64_t> bins;    // [class][bin]
    std::vector<uint64_t> counts;  // per class

    explicit ClassConfidenceAccumulator(int c = 0)
        : num_classes(c), bins(size_t(c) * kConfidenceBins, 0), counts(size_t(c), 0) {}

    static int bin_of(float conf) {
        int b = int(conf * kConfidenceBins);
        return std::clamp(b, 0, kConfidenceBins - 1);
    }

    void add(int class_id_1based, float conf) {
        size_t c = size_t(class_id_1based - 1);
        ++bins[c * kConfidenceBins + size_t(bin_of(conf))];
        ++counts[c];
    }

    void merge(const ClassConfidenceAccumulator& other) {
        if (other.num_classes != num_classes)
            throw ConfigError("accumulator merge: class count mismatch");
        for (size_t i = 0; i < bins.size(); ++i) bins[i] += other.bins[i];
        for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    }
};

inline void accumulate(const ProbMap& probs, ClassConfidenceAccumulator& acc) {
    if (probs.channels != acc.num_classes)
        throw ConfigError("accumulate: ProbMap channels != accumulator classes");
    for (int y = 0; y < probs.height; ++y)
        for (int x = 0; x < probs.width; ++x) {
            int c = argmax_channel(probs, x, y);
            acc.add(c, probs.at(c - 1, x, y));
        }
}

/// lambda^c = lower edge of the highest bin such that the histogram mass at or
/// above it reaches p * count_c. Empty classes get lambda = 1 (select nothing).
inline ClassThresholds thresholds_from_acc(const ClassConfidenceAccumulator& acc, double p) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("thresholds: p must be in (0,1]");
    ClassThresholds th;
    th.p = p;
    th.source = ClassThresholds::Source::Histogram;
    th.lambda.assign(size_t(acc.num_classes), 1.0);
    for (int c = 0; c < acc.num_classes; ++c) {
        uint64_t total = acc.counts[size_t(c)];
        if (total == 0) continue;
        uint64_t want = uint64_t(std::ceil(p * double(total)));
        uint64_t mass = 0;
        for (int b = kConfidenceBins - 1; b >= 0; --b) {
            mass += acc.bins[size_t(c) * kConfidenceBins + size_t(b)];
            if (mass >= want) {
                th.lambda[size_t(c)] = double(b) / kConfidenceBins;
                break;
            }
        }
    }
    return th;
}

/// Exact-sort thresholds over raw per-class confidence lists. The test oracle
/// and the small-dataset path; semantics match thresholds_from_acc up to bin
/// resolution: lambda^c = the k-th largest confidence, k = ceil(p * count).
inline ClassThresholds thresholds_exact(std::vector<std::vector<float>> confs, double p) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("thresholds: p must be in (0,1]");
    ClassThresholds th;
    th.p = p;
    th.source = ClassThresholds::Source::Exact;
    th.lambda.assign(confs.size(), 1.0);
    for (size_t c = 0; c < confs.size(); ++c) {
        auto& v = confs[c];
        if (v.empty()) continue;
        size_t k = size_t(std::ceil(p * double(v.size())));
        k = std::min(std::max<size_t>(k, 1), v.size());
        std::nth_element(v.begin(), v.begin() + (k - 1), v.end(), std::greater<float>());
        th.lambda[c] = double(v[k - 1]);
    }
    return th;
}

struct PseudoSelection {
    LabelMap pseudo;      // y-hat: confident labels, 0 elsewhere
    LabelMap prediction;  // y-tilde: full argmax prediction
};

/// Eq.-3 style selection with a >= comparator: a pixel keeps its argmax class
/// when its confidence reaches the class threshold, otherwise 0.
inline PseudoSelection select_pseudo_labels(const ProbMap& probs, const ClassThresholds& th) {
    if (probs.channels != int(th.lambda.size()))
        throw ConfigError("select_pseudo_labels: channel/threshold count mismatch");
    PseudoSelection out{LabelMap(probs.width, probs.height, probs.channels),
                        LabelMap(probs.width, probs.height, probs.channels)};
    for (int y = 0; y < probs.height; ++y)
        for (int x = 0; x < probs.width; ++x) {
            int c = argmax_channel(probs, x, y);
            out.prediction.at(x, y) = uint8_t(c);
            if (double(probs.at(c - 1, x, y)) >= th.lambda[size_t(c - 1)])
                out.pseudo.at(x, y) = uint8_t(c);
        }
    return out;
}

// ----------------------------------------------------------- thresholds file

inline void write_thresholds(const ClassThresholds& th, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write thresholds: " + path);
    for (size_t c = 0; c < th.lambda.size(); ++c)
        f << "class " << (c + 1) << " lambda " << th.lambda[c] << "\n";
    if (!f) throw IoError("thresholds write failed: " + path);
}

inline ClassThresholds read_thresholds(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open thresholds: " + path);
    ClassThresholds th;
    std::string word;
    size_t k;
    double v;
    while (f >> word >> k >> word >> v) {
        if (th.lambda.size() < k) th.lambda.resize(k, 1.0);
        th.lambda[k - 1] = v;
    }
    if (th.lambda.empty()) throw FormatError("thresholds file empty or malformed: " + path);
    return th;
}

}  // namespace tdodif
