#pragma once

// Desk-scale per-pixel segmentation model standing in for the paper-scale
// backbone: 9 handcrafted features -> tanh hidden layer (the feature map the
// spatial/temporal losses consume) -> class logits. Trained with Adam.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tdodif/core.hpp"
#include "tdodif/errors.hpp"
#include "tdodif/ingest.hpp"
#include "tdodif/losses.hpp"
#include "tdodif/slic.hpp"

namespace tdodif {

inline constexpr int kToyInputDim = 9;
inline constexpr int kToyHiddenDim = 16;

struct ToyModel {
    int num_classes = 0;
    std::vector<double> w1;  // [d_in][hidden]
    std::vector<double> b1;  // [hidden]
    std::vector<double> w2;  // [hidden][C]
    std::vector<double> b2;  // [C]

    static ToyModel zeros(int num_classes) {
        ToyModel m;
        m.num_classes = num_classes;
        m.w1.assign(size_t(kToyInputDim) * kToyHiddenDim, 0.0);
        m.b1.assign(kToyHiddenDim, 0.0);
        m.w2.assign(size_t(kToyHiddenDim) * num_classes, 0.0);
        m.b2.assign(size_t(num_classes), 0.0);
        return m;
    }

    /// Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)], seeded.
    static ToyModel init(int num_classes, uint64_t seed) {
        ToyModel m = zeros(num_classes);
        std::mt19937_64 rng(seed);
        auto uniform = [&](double bound) {
            return (2.0 * (double(rng()) / double(UINT64_MAX)) - 1.0) * bound;
        };
        double bound1 = 1.0 / std::sqrt(double(kToyInputDim));
        double bound2 = 1.0 / std::sqrt(double(kToyHiddenDim));
        for (double& v : m.w1) v = uniform(bound1);
        for (double& v : m.b1) v = uniform(bound1);
        for (double& v : m.w2) v = uniform(bound2);
        for (double& v : m.b2) v = uniform(bound2);
        return m;
    }

    size_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

    double* param(size_t i) {
        if (i < w1.size()) return &w1[i];
        i -= w1.size();
        if (i < b1.size()) return &b1[i];
        i -= b1.size();
        if (i < w2.size()) return &w2[i];
        i -= w2.size();
        return &b2[i];
    }
};

struct ParamGrads {
    std::vector<double> w1, b1, w2, b2;

    explicit ParamGrads(const ToyModel& m)
        : w1(m.w1.size(), 0.0), b1(m.b1.size(), 0.0),
          w2(m.w2.size(), 0.0), b2(m.b2.size(), 0.0) {}

    const double* param(size_t i) const {
        if (i < w1.size()) return &w1[i];
        i -= w1.size();
        if (i < b1.size()) return &b1[i];
        i -= b1.size();
        if (i < w2.size()) return &w2[i];
        i -= w2.size();
        return &b2[i];
    }
};

// ------------------------------------------------------------ featurization

/// (R, G, B, x/w, y/h, 3x3 gray mean, 3x3 gray std, |dx gray|, |dy gray|),
/// all in [0,1]. Borders clamp coordinates.
inline std::array<double, kToyInputDim> pixel_features(const RgbImage& img, int x, int y) {
    auto gray = [&](int px, int py) {
        px = std::clamp(px, 0, img.width - 1);
        py = std::clamp(py, 0, img.height - 1);
        const Rgb& c = img.at(px, py);
        return (double(c[0]) + c[1] + c[2]) / (3.0 * 255.0);
    };
    const Rgb& c = img.at(x, y);
    double mean = 0.0;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) mean += gray(x + dx, y + dy);
    mean /= 9.0;
    double var = 0.0;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            double d = gray(x + dx, y + dy) - mean;
            var += d * d;
        }
    double sd = std::sqrt(var / 9.0);
    double gx = std::abs(gray(x + 1, y) - gray(x - 1, y)) / 2.0;
    double gy = std::abs(gray(x, y + 1) - gray(x, y - 1)) / 2.0;
    return {c[0] / 255.0, c[1] / 255.0,       c[2] / 255.0,
            double(x) / img.width,            double(y) / img.height,
            mean,         sd,                 gx, gy};
}

struct ForwardResult {
    std::array<double, kToyHiddenDim> hidden;
    std::vector<double> logits;
};

inline ForwardResult forward(const ToyModel& m, std::span<const double> feats) {
    if (feats.size() != kToyInputDim) throw ConfigError("forward: feature dim mismatch");
    ForwardResult r;
    for (int hn = 0; hn < kToyHiddenDim; ++hn) {
        double a = m.b1[size_t(hn)];
        for (int i = 0; i < kToyInputDim; ++i)
            a += m.w1[size_t(i) * kToyHiddenDim + hn] * feats[size_t(i)];
        r.hidden[size_t(hn)] = std::tanh(a);
    }
    r.logits.assign(size_t(m.num_classes), 0.0);
    for (int c = 0; c < m.num_classes; ++c) {
        double a = m.b2[size_t(c)];
        for (int hn = 0; hn < kToyHiddenDim; ++hn)
            a += m.w2[size_t(hn) * m.num_classes + c] * r.hidden[size_t(hn)];
        r.logits[size_t(c)] = a;
    }
    return r;
}

/// Raw logits at every pixel.
inline ProbMap predict_logits(const ToyModel& m, const RgbImage& img) {
    ProbMap out(img.width, img.height, m.num_classes);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            auto fr = forward(m, pixel_features(img, x, y));
            for (int c = 0; c < m.num_classes; ++c)
                out.at(c, x, y) = float(fr.logits[size_t(c)]);
        }
    return out;
}

/// Softmax probabilities at every pixel.
inline ProbMap predict(const ToyModel& m, const RgbImage& img) {
    ProbMap out = predict_logits(m, img);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double mx = out.at(0, x, y);
            for (int c = 1; c < m.num_classes; ++c) mx = std::max(mx, double(out.at(c, x, y)));
            double z = 0.0;
            for (int c = 0; c < m.num_classes; ++c) z += std::exp(out.at(c, x, y) - mx);
            for (int c = 0; c < m.num_classes; ++c)
                out.at(c, x, y) = float(std::exp(out.at(c, x, y) - mx) / z);
        }
    return out;
}

// --------------------------------------------------------- feature-grid view

inline int feature_grid_len(int full, int stride) { return std::max(1, full / stride); }

/// High-res sample point backing feature-grid cell i.
inline int feature_sample_coord(int i, int stride, int full) {
    return std::min(i * stride + stride / 2, full - 1);
}

/// Hidden-layer features evaluated on the subsampled pixel-center grid.
inline FeatureMap feature_map(const ToyModel& m, const RgbImage& img, int stride) {
    int fw = feature_grid_len(img.width, stride);
    int fh = feature_grid_len(img.height, stride);
    FeatureMap out(fw, fh, kToyHiddenDim);
    for (int j = 0; j < fh; ++j)
        for (int i = 0; i < fw; ++i) {
            int x = feature_sample_coord(i, stride, img.width);
            int y = feature_sample_coord(j, stride, img.height);
            auto fr = forward(m, pixel_features(img, x, y));
            auto dst = out.at(i, j);
            for (int d = 0; d < kToyHiddenDim; ++d) dst[d] = float(fr.hidden[size_t(d)]);
        }
    return out;
}

// ----------------------------------------------------------------- backward

namespace detail {

inline void backprop_hidden(const ToyModel& m, std::span<const double> feats,
                            std::span<const double> hidden, std::span<const double> d_hidden,
                            ParamGrads& g) {
    for (int hn = 0; hn < kToyHiddenDim; ++hn) {
        double dpre = d_hidden[size_t(hn)] * (1.0 - hidden[size_t(hn)] * hidden[size_t(hn)]);
        g.b1[size_t(hn)] += dpre;
        for (int i = 0; i < kToyInputDim; ++i)
            g.w1[size_t(i) * kToyHiddenDim + hn] += feats[size_t(i)] * dpre;
    }
}

}  // namespace detail

/// Push per-pixel logit gradients back into parameter gradients, scaled.
inline void accumulate_logit_grads(const ToyModel& m, const RgbImage& img,
                                   const ProbMap& logit_grad, double scale, ParamGrads& g) {
    std::array<double, kToyHiddenDim> d_hidden{};
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            bool any = false;
            for (int c = 0; c < logit_grad.channels && !any; ++c)
                any = logit_grad.at(c, x, y) != 0.0f;
            if (!any) continue;
            auto feats = pixel_features(img, x, y);
            auto fr = forward(m, feats);
            d_hidden.fill(0.0);
            for (int c = 0; c < m.num_classes; ++c) {
                double dc = scale * logit_grad.at(c, x, y);
                g.b2[size_t(c)] += dc;
                for (int hn = 0; hn < kToyHiddenDim; ++hn) {
                    g.w2[size_t(hn) * m.num_classes + c] += fr.hidden[size_t(hn)] * dc;
                    d_hidden[size_t(hn)] += m.w2[size_t(hn) * m.num_classes + c] * dc;
                }
            }
            detail::backprop_hidden(m, feats, fr.hidden, d_hidden, g);
        }
}

/// Push feature-grid hidden gradients back into parameter gradients, scaled.
inline void accumulate_feature_grads(const ToyModel& m, const RgbImage& img, int stride,
                                     const FeatureGrad& fg, double scale, ParamGrads& g) {
    std::array<double, kToyHiddenDim> d_hidden{};
    int fw = feature_grid_len(img.width, stride);
    int fh = feature_grid_len(img.height, stride);
    if (fg.width != fw || fg.height != fh || fg.dim != kToyHiddenDim)
        throw ConfigError("accumulate_feature_grads: grid mismatch");
    for (int j = 0; j < fh; ++j)
        for (int i = 0; i < fw; ++i) {
            const double* col = fg.data.data() + (size_t(j) * fw + i) * kToyHiddenDim;
            bool any = false;
            for (int d = 0; d < kToyHiddenDim && !any; ++d) any = col[d] != 0.0;
            if (!any) continue;
            int x = feature_sample_coord(i, stride, img.width);
            int y = feature_sample_coord(j, stride, img.height);
            auto feats = pixel_features(img, x, y);
            auto fr = forward(m, feats);
            for (int d = 0; d < kToyHiddenDim; ++d) d_hidden[size_t(d)] = scale * col[d];
            detail::backprop_hidden(m, feats, fr.hidden, d_hidden, g);
        }
}

// --------------------------------------------------------------------- Adam

struct AdamState {
    double learning_rate = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<double> m, v;

    explicit AdamState(const ToyModel& model, double lr = 1e-4)
        : learning_rate(lr), m(model.param_count(), 0.0), v(model.param_count(), 0.0) {}
};

inline void adam_step(ToyModel& model, AdamState& st, const ParamGrads& g) {
    if (st.m.size() != model.param_count())
        throw ConfigError("adam_step: state/model size mismatch");
    ++st.step;
    double bc1 = 1.0 - std::pow(st.beta1, double(st.step));
    double bc2 = 1.0 - std::pow(st.beta2, double(st.step));
    for (size_t i = 0; i < st.m.size(); ++i) {
        double gi = *g.param(i);
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * gi;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * gi * gi;
        double mhat = st.m[i] / bc1;
        double vhat = st.v[i] / bc2;
        *model.param(i) -= st.learning_rate * mhat / (std::sqrt(vhat) + st.eps);
    }
}

// --------------------------------------------------------------- checkpoint

inline void save_model(const ToyModel& m, const std::string& path) {
    std::vector<uint8_t> out = {'T', 'O', 'Y', '1'};
    detail::put_u32le(out, uint32_t(kToyInputDim));
    detail::put_u32le(out, uint32_t(kToyHiddenDim));
    detail::put_u32le(out, uint32_t(m.num_classes));
    auto put_all = [&](const std::vector<double>& v) {
        for (double x : v) detail::put_f32le(out, float(x));
    };
    put_all(m.w1);
    put_all(m.b1);
    put_all(m.w2);
    put_all(m.b2);
    detail::write_all(path, out);
}

inline ToyModel load_model(const std::string& path) {
    std::vector<uint8_t> bytes = detail::read_all(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "TOY1", 4) != 0)
        throw FormatError("bad TOY1 magic: " + path);
    uint32_t d_in = detail::get_u32le(&bytes[4]);
    uint32_t h = detail::get_u32le(&bytes[8]);
    uint32_t c = detail::get_u32le(&bytes[12]);
    if (d_in != kToyInputDim || h != kToyHiddenDim || c < 1)
        throw FormatError("TOY1 dimension mismatch: " + path);
    ToyModel m = ToyModel::zeros(int(c));
    size_t need = 16 + m.param_count() * 4;
    if (bytes.size() != need) throw FormatError("TOY1 truncated or oversized: " + path);
    size_t off = 16;
    auto get_all = [&](std::vector<double>& v) {
        for (double& x : v) {
            x = detail::get_f32le(&bytes[off]);
            off += 4;
        }
    };
    get_all(m.w1);
    get_all(m.b1);
    get_all(m.w2);
    get_all(m.b2);
    return m;
}

// ----------------------------------------------------------------- training

/// One image's worth of training inputs. Target items may carry the spatial
/// and temporal loss machinery; source items only need labels.
struct TrainItem {
    const RgbImage* image = nullptr;
    const LabelMap* labels = nullptr;
    bool is_target = false;
    const SuperpixelMap* sp_down = nullptr;          // feature-grid superpixels
    const Raster2D<uint8_t>* hit_down = nullptr;     // feature-grid correspondence mask
    const Raster2D<int32_t>* ref_index_down = nullptr;
    const LabelMap* pred_down = nullptr;             // feature-grid prediction (negatives)
    const RgbImage* ref_image = nullptr;             // reference frame for f_r
};

struct ObjectiveResult {
    LossReport report;
    ParamGrads grads;

    explicit ObjectiveResult(const ToyModel& m) : grads(m) {}
};

/// Eq.-16 objective over one batch, with analytic parameter gradients.
/// Correspondence samples are passed in (one per item, empty for source
/// items) so the objective is deterministic given its inputs.
inline ObjectiveResult batch_objective(const ToyModel& model,
                                       const std::vector<const TrainItem*>& batch,
                                       const std::vector<CorrespondenceSample>& corr,
                                       const PipelineConfig& cfg) {
    if (corr.size() != batch.size())
        throw ConfigError("batch_objective: correspondence sample count mismatch");
    ObjectiveResult out(model);

    int n_src = 0, n_tgt = 0, n_spa = 0, n_tem = 0;
    for (const TrainItem* it : batch) {
        (it->is_target ? n_tgt : n_src)++;
        if (it->is_target && it->sp_down) ++n_spa;
        if (it->is_target && it->ref_image) ++n_tem;
    }

    for (size_t bi = 0; bi < batch.size(); ++bi) {
        const TrainItem& it = *batch[bi];
        ProbMap logits = predict_logits(model, *it.image);
        Domain dom = it.is_target ? Domain::Target : Domain::Source;
        SegLossResult seg = seg_loss(logits, *it.labels, cfg.alpha_t, dom);
        double img_weight = 1.0 / double(it.is_target ? n_tgt : n_src);
        if (it.is_target)
            out.report.l_seg_tgt += seg.loss * img_weight;
        else
            out.report.l_seg_src += seg.loss * img_weight;
        accumulate_logit_grads(model, *it.image, seg.logit_grad, img_weight, out.grads);

        if (!it.is_target) continue;
        FeatureMap f_t;
        if (it.sp_down || it.ref_image) f_t = feature_map(model, *it.image, cfg.feature_stride);

        if (it.sp_down) {
            SpatialLossResult spa = spatial_loss(f_t, *it.sp_down);
            out.report.l_spa += spa.loss / double(n_spa);
            accumulate_feature_grads(model, *it.image, cfg.feature_stride, spa.grad,
                                     cfg.alpha_spa / double(n_spa), out.grads);
        }
        if (it.ref_image) {
            FeatureMap f_r = feature_map(model, *it.ref_image, cfg.feature_stride);
            TemporalLossResult tem = temporal_loss(f_t, f_r, corr[bi]);
            out.report.l_tem += tem.loss / double(n_tem);
            accumulate_feature_grads(model, *it.image, cfg.feature_stride, tem.grad_target,
                                     cfg.alpha_tem / double(n_tem), out.grads);
            accumulate_feature_grads(model, *it.ref_image, cfg.feature_stride,
                                     tem.grad_reference, cfg.alpha_tem / double(n_tem),
                                     out.grads);
        }
    }
    out.report.l_final = combine(out.report.l_seg_src, out.report.l_seg_tgt, out.report.l_spa,
                                 out.report.l_tem, cfg.alpha_t, cfg.alpha_spa, cfg.alpha_tem);
    return out;
}

/// One pass over all items in seeded shuffled order, Adam step per batch.
/// Returns batch-count-averaged losses.
inline LossReport train_epoch(ToyModel& model, AdamState& opt, std::vector<TrainItem>& items,
                              const PipelineConfig& cfg, std::mt19937_64& rng) {
    if (items.empty()) throw ConfigError("train_epoch: no training items");
    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = 0; i + 1 < order.size(); ++i) {
        size_t j = i + size_t(rng() % (order.size() - i));
        std::swap(order[i], order[j]);
    }

    LossReport epoch;
    size_t n_batches = 0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
        std::vector<const TrainItem*> batch;
        std::vector<CorrespondenceSample> corr;
        for (size_t i = start; i < std::min(start + size_t(cfg.batch_size), order.size()); ++i) {
            const TrainItem& it = items[order[i]];
            batch.push_back(&it);
            CorrespondenceSample s;
            if (it.is_target && it.ref_image && it.hit_down && it.ref_index_down && it.pred_down)
                s = sample_correspondences(*it.hit_down, *it.ref_index_down, *it.pred_down,
                                           cfg.n_pos, cfg.n_neg, rng);
            corr.push_back(std::move(s));
        }
        ObjectiveResult obj = batch_objective(model, batch, corr, cfg);
        adam_step(model, opt, obj.grads);
        epoch.l_seg_src += obj.report.l_seg_src;
        epoch.l_seg_tgt += obj.report.l_seg_tgt;
        epoch.l_spa += obj.report.l_spa;
        epoch.l_tem += obj.report.l_tem;
        epoch.l_final += obj.report.l_final;
        ++n_batches;
    }
    epoch.l_seg_src /= double(n_batches);
    epoch.l_seg_tgt /= double(n_batches);
    epoch.l_spa /= double(n_batches);
    epoch.l_tem /= double(n_batches);
    epoch.l_final /= double(n_batches);
    return epoch;
}

}  // namespace tdodif
