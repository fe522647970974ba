#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "somdepth/checkpoint.hpp"
#include "somdepth/config.hpp"
#include "somdepth/image_io.hpp"
#include "somdepth/metrics.hpp"
#include "somdepth/model.hpp"
#include "somdepth/scene.hpp"
#include "somdepth/trainer.hpp"

namespace somdepth {

namespace cli_detail {

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << content;
}

inline std::string manifest_path(const std::string& data_dir, const std::string& split) {
    return (std::filesystem::path(data_dir) / (split + ".manifest")).string();
}

// normalized grayscale rendering of a depth map
inline Tensor depth_to_gray_rgb(const Tensor& depth) {
    double mn = depth.values()[0], mx = depth.values()[0];
    for (double v : depth.values()) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    const double span = mx > mn ? mx - mn : 1.0;
    const int H = depth.shape().height(), W = depth.shape().width();
    Tensor rgb = Tensor::zeros(Shape(1, 3, H, W));
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            const double g = (depth.at(0, 0, h, w) - mn) / span;
            for (int c = 0; c < 3; ++c) rgb.at(0, c, h, w) = g;
        }
    }
    return rgb;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"somdepth: memory-augmented monocular depth estimation on synthetic scenes"};
    app.require_subcommand(1);

    // shared option storage; each subcommand registers the flags it supports
    std::string config_path, out_dir, data_dir, stage1_path, model_path, input_path, output_path,
        viz_path, variant_str;
    std::uint64_t seed = 0;
    long steps = 0;
    int n_train = 0, n_val = 0, height = 0, width = 0;
    bool gt_as_prediction = false;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key = value configuration file");
        sub->add_option("--seed", seed, "run seed");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic RGB-D dataset");
    add_common(gen);
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--n-train", n_train, "training samples");
    gen->add_option("--n-val", n_val, "validation samples");
    gen->add_option("--height", height, "scene height (divisible by 32)");
    gen->add_option("--width", width, "scene width (divisible by 32)");

    CLI::App* s1 = app.add_subcommand("train-stage1", "train the depth auto-encoder");
    add_common(s1);
    s1->add_option("--data", data_dir, "dataset directory (from gen-data)")->required();
    s1->add_option("--out", out_dir, "output directory")->required();
    s1->add_option("--steps", steps, "training steps");

    CLI::App* s2 = app.add_subcommand("train-stage2", "train the depth predictor");
    add_common(s2);
    s2->add_option("--data", data_dir, "dataset directory (from gen-data)")->required();
    s2->add_option("--stage1", stage1_path, "stage-1 checkpoint")->required();
    s2->add_option("--out", out_dir, "output directory")->required();
    s2->add_option("--variant", variant_str, "pure|fpn|align|som");
    s2->add_option("--steps", steps, "training steps");

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
    add_common(ev);
    ev->add_option("--data", data_dir, "dataset directory (from gen-data)")->required();
    ev->add_option("--model", model_path, "stage-2 checkpoint");
    ev->add_option("--out", out_dir, "directory for report files");
    ev->add_flag("--gt-as-prediction", gt_as_prediction,
                 "score the ground truth against itself (fixture mode)");

    CLI::App* pr = app.add_subcommand("predict", "predict depth for one PPM image");
    add_common(pr);
    pr->add_option("--model", model_path, "stage-2 checkpoint")->required();
    pr->add_option("--input", input_path, "input PPM image")->required();
    pr->add_option("--output", output_path, "output PFM depth map")->required();
    pr->add_option("--viz", viz_path, "grayscale visualization PPM (default <output>.viz.ppm)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        // defaults, then file, then explicit flags
        TrainConfig cfg;
        if (!config_path.empty()) cfg = load_config_file(config_path, cfg);
        CLI::App* active = app.get_subcommands().front();
        if (active->count("--seed") > 0) cfg.seed = seed;
        if (active->count("--n-train") > 0) cfg.n_train = n_train;
        if (active->count("--n-val") > 0) cfg.n_val = n_val;
        if (active->count("--height") > 0) cfg.height = height;
        if (active->count("--width") > 0) cfg.width = width;
        if (active->count("--variant") > 0) cfg.variant = variant_from_name(variant_str);
        if (active->count("--steps") > 0) {
            if (active == s1) cfg.stage1_steps = steps;
            if (active == s2) cfg.stage2_steps = steps;
        }

        namespace fs = std::filesystem;
        if (gen->parsed()) {
            cfg.validate();
            DatasetSplit split =
                write_dataset(out_dir, cfg.n_train, cfg.n_val, cfg.seed, cfg.height, cfg.width);
            std::cout << "wrote " << split.train.size() << " train / " << split.val.size()
                      << " val samples under " << out_dir << "\n";
        } else if (s1->parsed()) {
            auto train = read_manifest(cli_detail::manifest_path(data_dir, "train"));
            auto val = read_manifest(cli_detail::manifest_path(data_dir, "val"));
            Stage1Result r = train_stage1(cfg, train, val);
            fs::create_directories(out_dir);
            const std::string ckpt_path = (fs::path(out_dir) / "stage1.ckpt").string();
            save_checkpoint(ckpt_path, r.checkpoint);
            cli_detail::write_text_file((fs::path(out_dir) / "stage1_log.csv").string(),
                                        training_log_csv(r.log));
            std::cout << "stage1: val l_ae " << r.val_l_ae << " (constant-median baseline "
                      << r.baseline_l_ae << ")\n"
                      << "checkpoint: " << ckpt_path << "\n";
        } else if (s2->parsed()) {
            auto train = read_manifest(cli_detail::manifest_path(data_dir, "train"));
            Checkpoint stage1 = load_checkpoint(stage1_path);
            Stage2Result r = train_stage2(cfg, train, stage1);
            fs::create_directories(out_dir);
            const std::string tag = std::string("stage2_") + variant_name(cfg.variant);
            const std::string ckpt_path = (fs::path(out_dir) / (tag + ".ckpt")).string();
            save_checkpoint(ckpt_path, r.checkpoint);
            cli_detail::write_text_file((fs::path(out_dir) / (tag + "_log.csv")).string(),
                                        training_log_csv(r.log));
            if (!r.attention_trace.empty()) {
                std::string trace;
                for (const std::string& line : r.attention_trace) trace += line + "\n";
                cli_detail::write_text_file(
                    (fs::path(out_dir) / (tag + "_attention.csv")).string(), trace);
            }
            std::cout << "final total loss " << r.log.back().total << "\n"
                      << "checkpoint: " << ckpt_path << "\n";
        } else if (ev->parsed()) {
            auto entries = read_manifest(cli_detail::manifest_path(data_dir, "val"));
            EvalResult r;
            if (gt_as_prediction) {
                for (const ManifestEntry& e : entries) {
                    SceneSample s = load_sample(e);
                    r.per_sample.push_back(compute_metrics(s.depth, s.depth));
                    r.labels.push_back(std::string(family_name(e.family)) + "/" +
                                       std::to_string(e.seed));
                }
                r.mean = average_reports(r.per_sample);
            } else {
                if (model_path.empty()) {
                    throw std::runtime_error("eval: --model is required without --gt-as-prediction");
                }
                r = evaluate(load_checkpoint(model_path), entries);
            }
            for (const std::string& err : r.errors) std::cerr << "skipped: " << err << "\n";
            std::cout << format_report({r.mean}, {"mean"});
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                cli_detail::write_text_file((fs::path(out_dir) / "report.txt").string(),
                                            format_report({r.mean}, {"mean"}));
                std::vector<MetricsReport> rows = r.per_sample;
                std::vector<std::string> labels = r.labels;
                rows.push_back(r.mean);
                labels.push_back("mean");
                cli_detail::write_text_file((fs::path(out_dir) / "report.csv").string(),
                                            report_csv(rows, labels));
            }
        } else if (pr->parsed()) {
            Checkpoint ckpt = load_checkpoint(model_path);
            TrainConfig mcfg = config_from_checkpoint(ckpt);
            Stage2Model model(mcfg);
            NamedParams params = model.params();
            load_params_from_checkpoint(ckpt, params);
            Tensor rgb = read_ppm(input_path);
            if (rgb.shape().height() != mcfg.height || rgb.shape().width() != mcfg.width) {
                throw std::runtime_error("predict: input is " + rgb.shape().str() +
                                         " but the checkpoint was trained at " +
                                         std::to_string(mcfg.height) + "x" +
                                         std::to_string(mcfg.width));
            }
            Stage2Model::Forward fwd = model.forward(rgb);
            Tensor up = upsample_prediction(fwd.depth, mcfg.height, mcfg.width);
            write_pfm(output_path, up);
            const std::string viz = viz_path.empty() ? output_path + ".viz.ppm" : viz_path;
            write_ppm(viz, cli_detail::depth_to_gray_rgb(up));
            std::cout << "wrote " << output_path << " and " << viz << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

inline int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("somdepth");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace somdepth
