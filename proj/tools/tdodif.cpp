// tdodif: pseudo-label diffusion pipeline CLI.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "tdodif/core.hpp"
#include "tdodif/errors.hpp"
#include "tdodif/evalstats.hpp"
#include "tdodif/ingest.hpp"
#include "tdodif/losses.hpp"
#include "tdodif/pipeline.hpp"
#include "tdodif/pseudo.hpp"
#include "tdodif/sdiff.hpp"
#include "tdodif/slic.hpp"
#include "tdodif/synth.hpp"
#include "tdodif/tdiff.hpp"
#include "tdodif/toymodel.hpp"

namespace fs = std::filesystem;
using namespace tdodif;

namespace {

struct GlobalOpts {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 1;
    bool verbose = false;

    PipelineConfig load() const {
        PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : read_config(config_path);
        if (seed_set) cfg.seed = seed;
        cfg.validate();
        return cfg;
    }
};

FeatureMap prob_as_features(const ProbMap& p) {
    FeatureMap f(p.width, p.height, p.channels);
    for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x) {
            auto dst = f.at(x, y);
            for (int c = 0; c < p.channels; ++c) dst[c] = p.at(c, x, y);
        }
    return f;
}

void print_stats(const char* stage, const PseudoLabelStats& s) {
    std::printf("%-10s labeled_fraction=%.4f pseudo_miou=%s\n", stage, s.labeled_fraction,
                s.miou_empty ? "n/a" : (std::to_string(s.pseudo_miou).c_str()));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TDo-Dif pseudo-label diffusion pipeline"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "pipeline config file (key = value)");
    app.add_option("--seed", g.seed, "RNG seed override")->each([&](const std::string&) {
        g.seed_set = true;
    });
    app.add_option("--jobs", g.jobs, "worker count (pipeline stages are order-independent)");
    app.add_flag("--verbose", g.verbose, "chatty progress output");

    // ------------------------------------------------------------- synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic foggy dataset");
    std::string synth_spec, synth_out;
    int synth_frames = 12, synth_w = 96, synth_h = 72;
    double synth_beta = 0.01;
    synth->add_option("--spec", synth_spec, "scene spec file (default: built-in scene)");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--frames", synth_frames);
    synth->add_option("--beta", synth_beta);
    synth->add_option("--width", synth_w);
    synth->add_option("--height", synth_h);
    synth->callback([&] {
        SceneSpec spec = synth_spec.empty()
                             ? default_scene(g.seed_set ? g.seed : 7, synth_w, synth_h,
                                             synth_frames, synth_beta)
                             : read_scene_spec(synth_spec);
        Manifest m = emit_dataset(spec, synth_out);
        std::printf("wrote %zu target entries to %s\n", m.entries.size(), synth_out.c_str());
    });

    // -------------------------------------------------------------- slic
    auto* slic_cmd = app.add_subcommand("slic", "SLIC superpixel segmentation");
    std::string slic_image, slic_out;
    int slic_k = 500, slic_iters = 10;
    double slic_mc = 10.0;
    slic_cmd->add_option("--image", slic_image)->required();
    slic_cmd->add_option("--k", slic_k);
    slic_cmd->add_option("--mc", slic_mc);
    slic_cmd->add_option("--iters", slic_iters);
    slic_cmd->add_option("--out", slic_out, "16-bit PNG of superpixel IDs")->required();
    slic_cmd->callback([&] {
        RgbImage img = read_rgb_png(slic_image);
        SuperpixelMap sp = slic_segment(img, {slic_k, slic_mc, slic_iters, g.seed});
        write_superpixels(sp, slic_out);
        std::printf("%d superpixels -> %s\n", sp.count, slic_out.c_str());
    });

    // -------------------------------------------------------- thresholds
    auto* th_cmd = app.add_subcommand("thresholds", "per-class confidence thresholds");
    std::string th_manifest, th_out;
    double th_p = 0.2;
    th_cmd->add_option("--manifest", th_manifest)->required();
    th_cmd->add_option("--p", th_p);
    th_cmd->add_option("--out", th_out)->required();
    th_cmd->callback([&] {
        Manifest m = read_manifest(th_manifest);
        ClassConfidenceAccumulator acc(m.num_classes);
        for (const ManifestEntry& e : m.entries) accumulate(read_prob(e.target_prob_path), acc);
        write_thresholds(thresholds_from_acc(acc, th_p), th_out);
    });

    // -------------------------------------------------------------- init
    auto* init_cmd = app.add_subcommand("init", "initial pseudo-label selection");
    std::string init_probs, init_th, init_out, init_pred;
    init_cmd->add_option("--probs", init_probs)->required();
    init_cmd->add_option("--thresholds", init_th)->required();
    init_cmd->add_option("--out", init_out)->required();
    init_cmd->add_option("--pred", init_pred, "also write the full argmax prediction");
    init_cmd->callback([&] {
        ProbMap probs = read_prob(init_probs);
        PseudoSelection sel = select_pseudo_labels(probs, read_thresholds(init_th));
        write_label_png(sel.pseudo, init_out);
        if (!init_pred.empty()) write_label_png(sel.prediction, init_pred);
    });

    // ---------------------------------------------------- diffuse-spatial
    auto* sd_cmd = app.add_subcommand("diffuse-spatial", "superpixel spatial diffusion");
    std::string sd_pred, sd_init, sd_sp, sd_out;
    sd_cmd->add_option("--pred", sd_pred)->required();
    sd_cmd->add_option("--init", sd_init)->required();
    sd_cmd->add_option("--sp", sd_sp)->required();
    sd_cmd->add_option("--out", sd_out)->required();
    sd_cmd->callback([&] {
        LabelMap pred = read_label_png(sd_pred, 255);
        LabelMap init = read_label_png(sd_init, 255);
        SuperpixelMap sp = read_superpixels(sd_sp);
        write_label_png(spatial_diffuse(pred, init, sp), sd_out);
    });

    // --------------------------------------------------- diffuse-temporal
    auto* td_cmd = app.add_subcommand("diffuse-temporal", "flow-based temporal diffusion");
    std::string td_init, td_probs, td_rlabels, td_rprobs, td_flow, td_conf, td_out;
    double td_t = 0.5;
    td_cmd->add_option("--target-init", td_init)->required();
    td_cmd->add_option("--target-probs", td_probs)->required();
    td_cmd->add_option("--ref-labels", td_rlabels)->required();
    td_cmd->add_option("--ref-probs", td_rprobs)->required();
    td_cmd->add_option("--flow", td_flow)->required();
    td_cmd->add_option("--conf", td_conf)->required();
    td_cmd->add_option("--T", td_t);
    td_cmd->add_option("--out", td_out)->required();
    td_cmd->callback([&] {
        LabelMap init = read_label_png(td_init, 255);
        ProbMap probs = read_prob(td_probs);
        LabelMap rl = read_label_png(td_rlabels, 255);
        ProbMap rp = read_prob(td_rprobs);
        WarpedReference w = warp_reference(rl, rp, read_flo(td_flow), read_conf(td_conf), td_t,
                                           probs.width, probs.height);
        write_label_png(temporal_fuse(init, probs, w).labels, td_out);
    });

    // -------------------------------------------------------------- round
    auto* round_cmd = app.add_subcommand(
        "round", "one round of pseudo-label generation from existing prob files");
    std::string round_manifest, round_out;
    int round_n = 1;
    round_cmd->add_option("--manifest", round_manifest)->required();
    round_cmd->add_option("--out", round_out)->required();
    round_cmd->add_option("--round", round_n, "round index used in output naming");
    round_cmd->callback([&] {
        Manifest m = read_manifest(round_manifest);
        PipelineConfig cfg = g.load();
        SuperpixelCache cache;
        RoundLabels labels = generate_round_labels(m, cfg, cache);
        fs::path dir = fs::path(round_out) / ("round_" + std::to_string(round_n));
        fs::create_directories(dir);
        for (size_t i = 0; i < labels.entries.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "pseudo_%02zu.png", i);
            write_label_png(labels.entries[i].final, (dir / name).string());
        }
        print_stats("init", labels.init_stats);
        if (labels.did_td) print_stats("after-td", labels.td_stats);
        if (labels.did_sd) print_stats("after-sd", labels.sd_stats);
    });

    // -------------------------------------------------------------- train
    auto* train_cmd = app.add_subcommand("train", "supervised training on manifest labels");
    std::string train_manifest, train_out;
    train_cmd->add_option("--manifest", train_manifest)->required();
    train_cmd->add_option("--out", train_out, "model checkpoint path")->required();
    train_cmd->callback([&] {
        Manifest m = read_manifest(train_manifest);
        PipelineConfig cfg = g.load();
        std::vector<RgbImage> images;
        std::vector<LabelMap> labels;
        for (const ManifestEntry& e : m.entries) {
            if (e.gt_label_path.empty())
                throw ConfigError("train: manifest entry lacks a label path");
            images.push_back(read_rgb_png(e.target_image_path));
            labels.push_back(read_label_png(e.gt_label_path, m.num_classes));
        }
        std::mt19937_64 master(cfg.seed);
        ToyModel model = ToyModel::init(m.num_classes, master());
        AdamState opt(model, cfg.learning_rate);
        std::mt19937_64 rng(master());
        std::vector<TrainItem> items;
        for (size_t i = 0; i < images.size(); ++i)
            items.push_back({&images[i], &labels[i], false});
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            LossReport rep = train_epoch(model, opt, items, cfg, rng);
            if (g.verbose) std::printf("epoch %d loss %.6f\n", epoch, rep.l_final);
        }
        save_model(model, train_out);
    });

    // ----------------------------------------------------------- selftrain
    auto* st_cmd = app.add_subcommand("selftrain", "closed self-training loop");
    std::string st_source, st_target, st_out;
    st_cmd->add_option("--source", st_source)->required();
    st_cmd->add_option("--target", st_target)->required();
    st_cmd->add_option("--out", st_out)->required();
    st_cmd->callback([&] {
        Manifest src = read_manifest(st_source);
        Manifest tgt = read_manifest(st_target);
        PipelineConfig cfg = g.load();
        SelfTrainResult res = self_train(src, tgt, cfg, st_out);
        for (const RoundRecord& r : res.records) {
            std::printf("round %d", r.round_index);
            if (r.round_index > 0) {
                std::printf(" init=%.4f", r.init_stats.labeled_fraction);
                if (r.did_td) std::printf(" td=%.4f", r.td_stats.labeled_fraction);
                if (r.did_sd) std::printf(" sd=%.4f", r.sd_stats.labeled_fraction);
            }
            if (r.has_eval) std::printf(" miou=%.4f", r.eval_miou);
            std::printf("\n");
        }
    });

    // --------------------------------------------------------------- eval
    auto* eval_cmd = app.add_subcommand("eval", "mIoU of predictions against ground truth");
    std::string eval_manifest, eval_pred_dir, eval_csv;
    bool eval_stats = false;
    eval_cmd->add_option("--manifest", eval_manifest)->required();
    eval_cmd->add_option("--pred-dir", eval_pred_dir, "directory of per-image label PNGs")
        ->required();
    eval_cmd->add_flag("--stats", eval_stats, "also print pseudo-label stats");
    eval_cmd->add_option("--csv", eval_csv, "machine-readable export");
    eval_cmd->callback([&] {
        Manifest m = read_manifest(eval_manifest);
        ConfusionMatrix cm(m.num_classes);
        PseudoStatsAggregator agg(m.num_classes);
        for (const ManifestEntry& e : m.entries) {
            if (e.gt_label_path.empty()) continue;
            std::string stem = fs::path(e.target_image_path).stem().string();
            std::string pred_path = (fs::path(eval_pred_dir) / (stem + ".png")).string();
            if (!fs::exists(pred_path))
                throw IoError("missing prediction file: " + pred_path);
            LabelMap pred = read_label_png(pred_path, m.num_classes);
            LabelMap gt = read_label_png(e.gt_label_path, m.num_classes);
            cm.merge(confusion(gt, pred));
            agg.add(pred, gt);
        }
        IouResult r = miou(cm);
        for (int c = 0; c < m.num_classes; ++c) {
            if (!r.included[size_t(c)]) {
                std::printf("%-12s excluded\n", m.class_names[size_t(c)].c_str());
                continue;
            }
            std::printf("%-12s %.4f\n", m.class_names[size_t(c)].c_str(),
                        r.per_class[size_t(c)]);
        }
        std::printf("mIoU %.4f\n", r.miou);
        if (eval_stats) print_stats("pseudo", agg.finalize());
        if (!eval_csv.empty()) {
            std::ofstream csv(eval_csv);
            csv << "class,iou,included\n";
            for (int c = 0; c < m.num_classes; ++c)
                csv << m.class_names[size_t(c)] << "," << r.per_class[size_t(c)] << ","
                    << (r.included[size_t(c)] ? 1 : 0) << "\n";
            csv << "mIoU," << r.miou << ",1\n";
        }
    });

    // ------------------------------------------------------------- losses
    auto* loss_cmd = app.add_subcommand("losses", "evaluate the training losses on files");
    std::string l_feat, l_rfeat, l_sp, l_hit, l_pred;
    loss_cmd->add_option("--features", l_feat)->required();
    loss_cmd->add_option("--ref-features", l_rfeat);
    loss_cmd->add_option("--sp", l_sp);
    loss_cmd->add_option("--hit", l_hit);
    loss_cmd->add_option("--pred", l_pred);
    loss_cmd->callback([&] {
        PipelineConfig cfg = g.load();
        FeatureMap f_t = prob_as_features(read_prob(l_feat, false));
        LossReport rep;
        if (!l_sp.empty()) {
            SuperpixelMap sp = read_superpixels(l_sp);
            rep.l_spa = spatial_loss(f_t, sp).loss;
        }
        if (!l_rfeat.empty() && !l_hit.empty() && !l_pred.empty()) {
            FeatureMap f_r = prob_as_features(read_prob(l_rfeat, false));
            LabelMap hit = read_label_png(l_hit, 255);
            LabelMap pred = read_label_png(l_pred, 255);
            // file-based invocation assumes aligned grids: p' = p
            Raster2D<int32_t> ref_index(hit.width(), hit.height(), -1);
            for (int y = 0; y < hit.height(); ++y)
                for (int x = 0; x < hit.width(); ++x)
                    if (hit.at(x, y)) ref_index.at(x, y) = int32_t(y) * hit.width() + x;
            std::mt19937_64 rng(cfg.seed);
            CorrespondenceSample s = sample_correspondences(hit.grid, ref_index, pred,
                                                            cfg.n_pos, cfg.n_neg, rng);
            rep.l_tem = temporal_loss(f_t, f_r, s).loss;
        }
        rep.l_final = combine(0.0, 0.0, rep.l_spa, rep.l_tem, cfg.alpha_t, cfg.alpha_spa,
                              cfg.alpha_tem);
        std::printf("l_spa   %.8f\nl_tem   %.8f\nl_final %.8f\n", rep.l_spa, rep.l_tem,
                    rep.l_final);
    });

    // ---------------------------------------------------------------- viz
    auto* viz_cmd = app.add_subcommand("viz", "palette rendering of a label map");
    std::string viz_labels, viz_manifest, viz_image, viz_out;
    viz_cmd->add_option("--labels", viz_labels)->required();
    viz_cmd->add_option("--manifest", viz_manifest, "palette source")->required();
    viz_cmd->add_option("--image", viz_image, "optional overlay base");
    viz_cmd->add_option("--out", viz_out)->required();
    viz_cmd->callback([&] {
        Manifest m = read_manifest(viz_manifest);
        LabelMap labels = read_label_png(viz_labels, m.num_classes);
        RgbImage base;
        const RgbImage* base_ptr = nullptr;
        if (!viz_image.empty()) {
            base = read_rgb_png(viz_image);
            base_ptr = &base;
        }
        write_rgb_png(visualize(labels, m.class_palette, base_ptr), viz_out);
    });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return ConfigError::exit_code;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return FormatError::exit_code;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return IoError::exit_code;
    }
    return 0;
}
