#pragma once

// Closed-loop orchestration: per-round pseudo-label generation (init ->
// diffusion in the configured order) and toy-model re-training, plus
// palette visualization.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tdodif/core.hpp"
#include "tdodif/errors.hpp"
#include "tdodif/evalstats.hpp"
#include "tdodif/ingest.hpp"
#include "tdodif/losses.hpp"
#include "tdodif/pseudo.hpp"
#include "tdodif/sdiff.hpp"
#include "tdodif/slic.hpp"
#include "tdodif/synth.hpp"
#include "tdodif/tdiff.hpp"
#include "tdodif/toymodel.hpp"

namespace tdodif {

// -------------------------------------------------------------- aggregation

struct PseudoStatsAggregator {
    uint64_t labeled = 0;
    uint64_t pixels = 0;
    ConfusionMatrix cm;

    explicit PseudoStatsAggregator(int c) : cm(c) {}

    void add(const LabelMap& pseudo, const LabelMap& gt) {
        pixels += pseudo.grid.size();
        for (int y = 0; y < pseudo.height(); ++y)
            for (int x = 0; x < pseudo.width(); ++x) {
                uint8_t p = pseudo.at(x, y);
                uint8_t g = gt.at(x, y);
                if (p != 0) ++labeled;
                if (p != 0 && g != 0) ++cm.at(g - 1, p - 1);
            }
    }

    PseudoLabelStats finalize() const {
        PseudoLabelStats s;
        s.labeled_fraction = pixels ? double(labeled) / double(pixels) : 0.0;
        uint64_t both = 0;
        for (uint64_t v : cm.counts) both += v;
        if (both == 0) {
            s.miou_empty = true;
        } else {
            s.pseudo_miou = miou(cm).miou;
        }
        return s;
    }
};

// ------------------------------------------------------------- round labels

struct EntryArtifacts {
    LabelMap init;        // y-hat after thresholding
    LabelMap prediction;  // y-tilde
    LabelMap final;       // after configured diffusion
    std::optional<WarpedReference> warped;  // present when TD ran
};

struct RoundLabels {
    std::vector<EntryArtifacts> entries;
    ClassThresholds thresholds;
    PseudoLabelStats init_stats, td_stats, sd_stats;
    bool did_td = false;
    bool did_sd = false;
};

/// Superpixel maps keyed by image path; images never change between rounds so
/// SLIC runs once per image.
using SuperpixelCache = std::map<std::string, SuperpixelMap>;

inline const SuperpixelMap& cached_superpixels(SuperpixelCache& cache, const std::string& path,
                                               const PipelineConfig& cfg) {
    auto it = cache.find(path);
    if (it != cache.end()) return it->second;
    RgbImage img = read_rgb_png(path);
    SlicParams params{cfg.k, cfg.mc, cfg.slic_iters, cfg.seed};
    if (size_t(params.k) > img.size()) params.k = int(img.size());
    return cache.emplace(path, slic_segment(img, params)).first->second;
}

/// Algorithm steps 1-4 for every manifest entry: fresh thresholds from the
/// current predictions, Eq.-3 selection, then temporal and/or spatial
/// diffusion in the configured order. Prob files must already exist.
inline RoundLabels generate_round_labels(const Manifest& manifest, const PipelineConfig& cfg,
                                         SuperpixelCache& sp_cache) {
    if (manifest.entries.empty()) throw ConfigError("generate_round_labels: empty manifest");

    bool wants_td = cfg.order == DiffusionOrder::TdThenSd ||
                    cfg.order == DiffusionOrder::SdThenTd || cfg.order == DiffusionOrder::TdOnly;
    bool wants_sd = cfg.order != DiffusionOrder::TdOnly;
    bool any_flow = false;
    for (const ManifestEntry& e : manifest.entries) any_flow |= e.has_flow();
    if (wants_td && !any_flow) {
        if (cfg.order == DiffusionOrder::TdOnly)
            throw ConfigError("order requires flow but manifest has no flow entries");
        wants_td = false;  // non-sequential targets degrade to SD-only
    }

    // dataset-wide per-class thresholds from the current round's predictions
    ClassConfidenceAccumulator acc(manifest.num_classes);
    std::vector<ProbMap> probs;
    probs.reserve(manifest.entries.size());
    for (const ManifestEntry& e : manifest.entries) {
        probs.push_back(read_prob(e.target_prob_path));
        accumulate(probs.back(), acc);
    }

    RoundLabels out;
    out.thresholds = thresholds_from_acc(acc, cfg.p);
    out.did_td = wants_td;
    out.did_sd = wants_sd;

    PseudoStatsAggregator init_agg(manifest.num_classes), td_agg(manifest.num_classes),
        sd_agg(manifest.num_classes);
    bool any_gt = false;

    for (size_t i = 0; i < manifest.entries.size(); ++i) {
        const ManifestEntry& e = manifest.entries[i];
        PseudoSelection sel = select_pseudo_labels(probs[i], out.thresholds);
        EntryArtifacts art;
        art.init = sel.pseudo;
        art.prediction = sel.prediction;

        LabelMap current = art.init;
        LabelMap sd_pred = art.prediction;  // the "prediction" input for spatial diffusion

        auto run_td = [&]() {
            if (!wants_td || !e.has_flow()) return;
            FlowField flow = read_flo(e.flow_path);
            ConfidenceMap conf = read_conf(e.flow_conf_path);
            ProbMap ref_probs = read_prob(e.reference_prob_path);
            LabelMap ref_init = select_pseudo_labels(ref_probs, out.thresholds).pseudo;
            WarpedReference w = warp_reference(ref_init, ref_probs, flow, conf, cfg.t,
                                               probs[i].width, probs[i].height);
            TemporalFusion fused = temporal_fuse(current, probs[i], w);
            current = fused.labels;
            // where fusion re-selected, the prediction map follows the fused argmax
            for (int y = 0; y < current.height(); ++y)
                for (int x = 0; x < current.width(); ++x)
                    if (fused.fused_flag.at(x, y)) sd_pred.at(x, y) = current.at(x, y);
            art.warped = std::move(w);
        };
        auto run_sd = [&]() {
            if (!wants_sd) return;
            const SuperpixelMap& sp = cached_superpixels(sp_cache, e.target_image_path, cfg);
            current = spatial_diffuse(sd_pred, current, sp);
        };

        LabelMap after_td, after_sd;
        switch (cfg.order) {
            case DiffusionOrder::TdThenSd:
                run_td();
                after_td = current;
                run_sd();
                after_sd = current;
                break;
            case DiffusionOrder::SdThenTd:
                run_sd();
                after_sd = current;
                run_td();
                after_td = current;
                break;
            case DiffusionOrder::SdOnly:
                run_sd();
                after_sd = current;
                break;
            case DiffusionOrder::TdOnly:
                run_td();
                after_td = current;
                break;
        }
        art.final = current;

        if (!e.gt_label_path.empty() && std::filesystem::exists(e.gt_label_path)) {
            any_gt = true;
            LabelMap gt = read_label_png(e.gt_label_path, manifest.num_classes);
            init_agg.add(art.init, gt);
            if (wants_td) td_agg.add(after_td.grid.data.empty() ? art.init : after_td, gt);
            if (wants_sd) sd_agg.add(after_sd.grid.data.empty() ? art.final : after_sd, gt);
        }
        out.entries.push_back(std::move(art));
    }

    if (any_gt) {
        out.init_stats = init_agg.finalize();
        if (wants_td) out.td_stats = td_agg.finalize();
        if (wants_sd) out.sd_stats = sd_agg.finalize();
    }
    return out;
}

// ---------------------------------------------------------------- self-train

struct RoundRecord {
    int round_index = 0;  // 0 = source-only pretraining
    ClassThresholds thresholds;
    PseudoLabelStats init_stats, td_stats, sd_stats;
    bool did_td = false, did_sd = false;
    std::vector<LossReport> epoch_losses;
    double eval_miou = 0.0;
    bool has_eval = false;
};

struct SelfTrainResult {
    ToyModel model;
    std::vector<RoundRecord> records;
};

namespace detail {

/// Dataset-level target mIoU of the model's argmax predictions.
inline std::optional<double> eval_target_miou(const ToyModel& model, const Manifest& target) {
    ConfusionMatrix cm(target.num_classes);
    bool any = false;
    for (const ManifestEntry& e : target.entries) {
        if (e.gt_label_path.empty() || !std::filesystem::exists(e.gt_label_path)) continue;
        any = true;
        RgbImage img = read_rgb_png(e.target_image_path);
        ProbMap prob = predict(model, img);
        LabelMap gt = read_label_png(e.gt_label_path, target.num_classes);
        LabelMap pred(prob.width, prob.height, target.num_classes);
        for (int y = 0; y < prob.height; ++y)
            for (int x = 0; x < prob.width; ++x)
                pred.at(x, y) = uint8_t(argmax_channel(prob, x, y));
        cm.merge(confusion(gt, pred));
    }
    if (!any) return std::nullopt;
    return miou(cm).miou;
}

inline void downsample_nearest(const Raster2D<uint8_t>& hi, int stride, Raster2D<uint8_t>& lo) {
    for (int j = 0; j < lo.height; ++j)
        for (int i = 0; i < lo.width; ++i)
            lo.at(i, j) = hi.at(feature_sample_coord(i, stride, hi.width),
                                feature_sample_coord(j, stride, hi.height));
}

}  // namespace detail

/// Per-target-image training context owned for the duration of one round.
struct TargetTrainContext {
    RgbImage image;
    RgbImage ref_image;
    bool has_ref = false;
    LabelMap pseudo;
    SuperpixelMap sp_down;
    Raster2D<uint8_t> hit_down;
    Raster2D<int32_t> ref_index_down;
    LabelMap pred_down;
};

/// Writes toy-model predictions for every manifest entry to its prob path.
inline void write_predictions(const ToyModel& model, const Manifest& manifest) {
    for (const ManifestEntry& e : manifest.entries) {
        RgbImage img = read_rgb_png(e.target_image_path);
        std::filesystem::create_directories(
            std::filesystem::path(e.target_prob_path).parent_path());
        write_prob(predict(model, img), e.target_prob_path);
    }
}

/// The Algorithm-1 loop: source pretraining (round record 0), then
/// `cfg.rounds` rounds of pseudo-label generation + re-training with the
/// combined objective. Deterministic under cfg.seed. Pseudo labels land in
/// out_dir/round_R/pseudo_NN.png; checkpoints in out_dir/model_round_R.toy.
inline SelfTrainResult self_train(const Manifest& source, const Manifest& target,
                                  const PipelineConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    if (cfg.model == "external")
        throw ConfigError("self_train drives the toy model; use the round command for "
                          "external-model label generation");
    for (const ManifestEntry& e : source.entries)
        if (e.gt_label_path.empty())
            throw ConfigError("self_train: source manifest entries need ground-truth labels");
    if (source.num_classes != target.num_classes)
        throw ConfigError("self_train: source/target class count mismatch");

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const int C = source.num_classes;

    std::mt19937_64 master(cfg.seed);
    uint64_t init_seed = master();
    uint64_t train_seed = master();

    ToyModel model = ToyModel::init(C, init_seed);
    AdamState opt(model, cfg.learning_rate);
    std::mt19937_64 train_rng(train_seed);

    // load source data once
    std::vector<RgbImage> src_images;
    std::vector<LabelMap> src_labels;
    for (const ManifestEntry& e : source.entries) {
        src_images.push_back(read_rgb_png(e.target_image_path));
        src_labels.push_back(read_label_png(e.gt_label_path, C));
    }

    SelfTrainResult result;
    SuperpixelCache sp_cache;

    // round 0: source-only pretraining, the no-adaptation baseline
    {
        std::vector<TrainItem> items;
        for (size_t i = 0; i < src_images.size(); ++i)
            items.push_back({&src_images[i], &src_labels[i], false});
        RoundRecord rec;
        rec.round_index = 0;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch)
            rec.epoch_losses.push_back(train_epoch(model, opt, items, cfg, train_rng));
        if (auto m = detail::eval_target_miou(model, target)) {
            rec.eval_miou = *m;
            rec.has_eval = true;
        }
        save_model(model, (fs::path(out_dir) / "model_round_0.toy").string());
        result.records.push_back(std::move(rec));
    }

    const int stride = cfg.feature_stride;
    for (int round = 1; round <= cfg.rounds; ++round) {
        write_predictions(model, target);
        RoundLabels labels = generate_round_labels(target, cfg, sp_cache);

        fs::path round_dir = fs::path(out_dir) / ("round_" + std::to_string(round));
        fs::create_directories(round_dir);
        for (size_t i = 0; i < labels.entries.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "pseudo_%02zu.png", i);
            write_label_png(labels.entries[i].final, (round_dir / name).string());
        }

        // assemble target training contexts
        std::vector<TargetTrainContext> contexts(labels.entries.size());
        for (size_t i = 0; i < labels.entries.size(); ++i) {
            const ManifestEntry& e = target.entries[i];
            TargetTrainContext& ctx = contexts[i];
            ctx.image = read_rgb_png(e.target_image_path);
            ctx.pseudo = labels.entries[i].final;
            int fw = feature_grid_len(ctx.image.width, stride);
            int fh = feature_grid_len(ctx.image.height, stride);
            const SuperpixelMap& sp = cached_superpixels(sp_cache, e.target_image_path, cfg);
            ctx.sp_down = downsample_superpixels(sp, fw, fh);
            ctx.pred_down = LabelMap(fw, fh, C);
            detail::downsample_nearest(labels.entries[i].prediction.grid, stride,
                                       ctx.pred_down.grid);
            if (labels.entries[i].warped && e.has_flow()) {
                const WarpedReference& w = *labels.entries[i].warped;
                ctx.hit_down = Raster2D<uint8_t>(fw, fh, 0);
                detail::downsample_nearest(w.hit, stride, ctx.hit_down);
                ctx.ref_index_down = Raster2D<int32_t>(fw, fh, -1);
                for (int j = 0; j < fh; ++j)
                    for (int ii = 0; ii < fw; ++ii) {
                        int x = feature_sample_coord(ii, stride, ctx.image.width);
                        int y = feature_sample_coord(j, stride, ctx.image.height);
                        int32_t src = w.source.at(x, y);
                        if (src < 0) continue;
                        int qx = int(src % ctx.image.width) / stride;
                        int qy = int(src / ctx.image.width) / stride;
                        ctx.ref_index_down.at(ii, j) =
                            int32_t(std::min(qy, fh - 1)) * fw + std::min(qx, fw - 1);
                    }
                // the reference frame is the next entry's target image
                // (its prob path matches this entry's reference prob path)
                for (const ManifestEntry& cand : target.entries)
                    if (cand.target_prob_path == e.reference_prob_path) {
                        ctx.ref_image = read_rgb_png(cand.target_image_path);
                        ctx.has_ref = true;
                        break;
                    }
            }
        }

        std::vector<TrainItem> items;
        for (size_t i = 0; i < src_images.size(); ++i)
            items.push_back({&src_images[i], &src_labels[i], false});
        for (TargetTrainContext& ctx : contexts) {
            if (ctx.pseudo.labeled_count() == 0 && !ctx.has_ref) continue;
            TrainItem it;
            it.image = &ctx.image;
            it.labels = &ctx.pseudo;
            it.is_target = true;
            it.sp_down = &ctx.sp_down;
            if (ctx.has_ref) {
                it.hit_down = &ctx.hit_down;
                it.ref_index_down = &ctx.ref_index_down;
                it.pred_down = &ctx.pred_down;
                it.ref_image = &ctx.ref_image;
            }
            items.push_back(it);
        }

        RoundRecord rec;
        rec.round_index = round;
        rec.thresholds = labels.thresholds;
        rec.init_stats = labels.init_stats;
        rec.td_stats = labels.td_stats;
        rec.sd_stats = labels.sd_stats;
        rec.did_td = labels.did_td;
        rec.did_sd = labels.did_sd;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch)
            rec.epoch_losses.push_back(train_epoch(model, opt, items, cfg, train_rng));
        if (auto m = detail::eval_target_miou(model, target)) {
            rec.eval_miou = *m;
            rec.has_eval = true;
        }
        save_model(model, (fs::path(out_dir) / ("model_round_" + std::to_string(round) +
                                                ".toy")).string());
        result.records.push_back(std::move(rec));
    }

    result.model = std::move(model);
    return result;
}

// ------------------------------------------------------------- visualization

/// Palette rendering with optional 0.5 alpha blend over the input image.
/// Unlabeled pixels pass the image through (or stay black without one).
inline RgbImage visualize(const LabelMap& labels, const std::vector<Rgb>& palette,
                          const RgbImage* image = nullptr) {
    if (int(palette.size()) < labels.num_classes + 1)
        throw ConfigError("visualize: palette too short");
    if (image && !image->same_dims(labels.width(), labels.height()))
        throw ConfigError("visualize: image dimension mismatch");
    RgbImage out(labels.width(), labels.height());
    for (int y = 0; y < labels.height(); ++y)
        for (int x = 0; x < labels.width(); ++x) {
            uint8_t label = labels.at(x, y);
            if (label == 0) {
                out.at(x, y) = image ? image->at(x, y) : Rgb{0, 0, 0};
                continue;
            }
            Rgb c = palette[size_t(label)];
            if (image) {
                const Rgb& base = image->at(x, y);
                for (int ch = 0; ch < 3; ++ch)
                    c[size_t(ch)] = uint8_t((int(c[size_t(ch)]) + base[size_t(ch)]) / 2);
            }
            out.at(x, y) = c;
        }
    return out;
}

}  // namespace tdodif
