#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "somdepth/checkpoint.hpp"
#include "somdepth/config.hpp"
#include "somdepth/losses.hpp"
#include "somdepth/metrics.hpp"
#include "somdepth/model.hpp"
#include "somdepth/optim.hpp"
#include "somdepth/scene.hpp"
#include "somdepth/tensor.hpp"

namespace somdepth {

// ---------------------------------------------------------------------------
// Dataset cache: samples are kept in their on-disk precision (rgb bytes,
// depth float32) and materialized into tensors per batch.
// ---------------------------------------------------------------------------

class SampleCache {
public:
    SampleCache() = default;

    explicit SampleCache(const std::vector<ManifestEntry>& entries) {
        cached_.reserve(entries.size());
        for (const ManifestEntry& e : entries) {
            SceneSample s = load_sample(e);
            Cached c;
            c.family = s.family;
            c.seed = s.seed;
            c.height = s.depth.shape().height();
            c.width = s.depth.shape().width();
            c.rgb.reserve(s.rgb.values().size());
            for (double v : s.rgb.values()) {
                c.rgb.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
            }
            c.depth.reserve(s.depth.values().size());
            for (double v : s.depth.values()) c.depth.push_back(static_cast<float>(v));
            cached_.push_back(std::move(c));
        }
    }

    std::size_t size() const { return cached_.size(); }

    SceneSample sample(std::size_t i) const {
        const Cached& c = cached_.at(i);
        SceneSample s;
        s.family = c.family;
        s.seed = c.seed;
        std::vector<double> rgb(c.rgb.size());
        for (std::size_t j = 0; j < c.rgb.size(); ++j) rgb[j] = c.rgb[j] / 255.0;
        std::vector<double> depth(c.depth.size());
        for (std::size_t j = 0; j < c.depth.size(); ++j) {
            depth[j] = static_cast<double>(c.depth[j]);
        }
        s.rgb = Tensor::from_values(Shape(1, 3, c.height, c.width), std::move(rgb));
        s.depth = Tensor::from_values(Shape(1, 1, c.height, c.width), std::move(depth));
        return s;
    }

private:
    struct Cached {
        SceneFamily family;
        std::uint64_t seed;
        int height, width;
        std::vector<unsigned char> rgb;
        std::vector<float> depth;
    };
    std::vector<Cached> cached_;
};

// Stack single samples into batch tensors (rgb [B,3,H,W], depth [B,1,H,W]).
inline std::pair<Tensor, Tensor> make_batch(const std::vector<SceneSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
    const int H = samples[0].depth.shape().height();
    const int W = samples[0].depth.shape().width();
    const int B = static_cast<int>(samples.size());
    Tensor rgb = Tensor::zeros(Shape(B, 3, H, W));
    Tensor depth = Tensor::zeros(Shape(B, 1, H, W));
    for (int b = 0; b < B; ++b) {
        if (samples[b].depth.shape() != Shape(1, 1, H, W)) {
            throw std::invalid_argument("make_batch: inconsistent sample shapes");
        }
        std::copy(samples[b].rgb.values().begin(), samples[b].rgb.values().end(),
                  rgb.values().begin() + static_cast<std::size_t>(b) * 3 * H * W);
        std::copy(samples[b].depth.values().begin(), samples[b].depth.values().end(),
                  depth.values().begin() + static_cast<std::size_t>(b) * H * W);
    }
    return {rgb, depth};
}

// ---------------------------------------------------------------------------
// Training logs
// ---------------------------------------------------------------------------

struct TrainLogEntry {
    long step = 0;
    double depth = 0.0;
    double cmrc = 0.0;
    double gradient = 0.0;
    double normal = 0.0;
    double total = 0.0;
};

inline std::string training_log_csv(const std::vector<TrainLogEntry>& log) {
    std::ostringstream os;
    os << "step,l_depth,l_cmrc,l_gradient,l_normal,total\n";
    os.precision(17);
    for (const TrainLogEntry& e : log) {
        os << e.step << "," << e.depth << "," << e.cmrc << "," << e.gradient << "," << e.normal
           << "," << e.total << "\n";
    }
    return os.str();
}

namespace detail {

inline long steps_per_epoch(std::size_t n_samples, int batch_size) {
    return static_cast<long>((n_samples + batch_size - 1) / batch_size);
}

inline std::vector<SceneSample> draw_batch(const SampleCache& cache, int batch_size, Rng& rng,
                                           bool do_augment, bool with_jitter,
                                           const AugmentConfig& aug) {
    std::vector<SceneSample> batch;
    batch.reserve(batch_size);
    for (int b = 0; b < batch_size; ++b) {
        const auto idx = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(cache.size()) - 1));
        SceneSample s = cache.sample(idx);
        if (do_augment) {
            s = with_jitter ? augment(s, aug, rng) : augment_geometric(s, aug, rng);
        }
        batch.push_back(std::move(s));
    }
    return batch;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: depth auto-encoder
// ---------------------------------------------------------------------------

struct Stage1Result {
    Checkpoint checkpoint;
    std::vector<TrainLogEntry> log;
    double val_l_ae = 0.0;
    double baseline_l_ae = 0.0;  // constant-median predictor on the same data
};

inline Stage1Result train_stage1(const TrainConfig& cfg,
                                 const std::vector<ManifestEntry>& train_entries,
                                 const std::vector<ManifestEntry>& val_entries) {
    cfg.validate();
    if (train_entries.empty() || val_entries.empty()) {
        throw std::invalid_argument("train_stage1: empty dataset");
    }
    SampleCache train_cache(train_entries);
    SampleCache val_cache(val_entries);

    Stage1Model model(cfg);
    NamedParams params = model.params();
    AdamOptimizer opt(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                      cfg.weight_decay);
    Rng data_rng(mix_seed(cfg.seed, "stage1-data"));
    const AugmentConfig aug;
    const long spe = detail::steps_per_epoch(train_cache.size(), cfg.batch_size);

    Stage1Result result;
    for (long step = 0; step < cfg.stage1_steps; ++step) {
        const double lr_scale =
            lr_decay_scale(step, cfg.lr_decay_epochs, spe, cfg.lr_decay_factor);
        auto batch = detail::draw_batch(train_cache, cfg.batch_size, data_rng, cfg.augment,
                                        /*with_jitter=*/false, aug);
        auto [rgb, depth] = make_batch(batch);
        Tensor d_low = downsample_nearest(depth, 4);

        double loss_value = 0.0;
        {
            ComputeGraph graph;
            Tensor d_hat = model.reconstruct(depth);
            Tensor loss = l_ae(d_hat, d_low);
            loss_value = loss.value();
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("train_stage1: non-finite loss at step " +
                                         std::to_string(step));
            }
            opt.zero_grad();
            graph.backward(loss);
        }
        opt.step(lr_scale);
        TrainLogEntry e;
        e.step = step;
        e.depth = loss_value;
        e.total = loss_value;
        result.log.push_back(e);
    }

    // constant-median baseline from the training set, evaluated like the model
    std::vector<double> train_depths;
    for (std::size_t i = 0; i < train_cache.size(); ++i) {
        Tensor d_low = downsample_nearest(train_cache.sample(i).depth, 4);
        train_depths.insert(train_depths.end(), d_low.values().begin(), d_low.values().end());
    }
    std::nth_element(train_depths.begin(), train_depths.begin() + train_depths.size() / 2,
                     train_depths.end());
    const double median = train_depths[train_depths.size() / 2];

    double val_sum = 0.0, base_sum = 0.0;
    for (std::size_t i = 0; i < val_cache.size(); ++i) {
        SceneSample s = val_cache.sample(i);
        Tensor d_low = downsample_nearest(s.depth, 4);
        Tensor d_hat = model.reconstruct(s.depth);
        val_sum += l_ae(d_hat, d_low).value();
        base_sum += l_ae(Tensor::full(d_low.shape(), median), d_low).value();
    }
    result.val_l_ae = val_sum / static_cast<double>(val_cache.size());
    result.baseline_l_ae = base_sum / static_cast<double>(val_cache.size());

    Checkpoint ckpt;
    for (const auto& [name, t] : params) ckpt.add(name, t.detach());
    for (const auto& [name, t] : opt.moment_tensors()) ckpt.add(name, t);
    ckpt.add("optim.t", Tensor::scalar(static_cast<double>(opt.step_count())));
    add_config_echo(ckpt, cfg);
    result.checkpoint = std::move(ckpt);
    return result;
}

// ---------------------------------------------------------------------------
// Stage 2: depth prediction from rgb, with the frozen stage-1 encoder
// providing the latent alignment targets
// ---------------------------------------------------------------------------

struct Stage2Result {
    Checkpoint checkpoint;
    std::vector<TrainLogEntry> log;
    std::vector<std::string> attention_trace;  // one line per read (som only)
};

inline void check_stage1_compatible(const TrainConfig& cfg, const TrainConfig& s1) {
    if (s1.stage_channels != cfg.stage_channels || s1.convs_per_stage != cfg.convs_per_stage ||
        s1.head_width != cfg.head_width || s1.height != cfg.height || s1.width != cfg.width) {
        throw std::invalid_argument(
            "train_stage2: stage-1 checkpoint architecture does not match the configuration");
    }
}

inline Stage2Result train_stage2(const TrainConfig& cfg,
                                 const std::vector<ManifestEntry>& train_entries,
                                 const Checkpoint& stage1_ckpt) {
    cfg.validate();
    if (train_entries.empty()) throw std::invalid_argument("train_stage2: empty dataset");
    const bool needs_targets = cfg.variant == Variant::kAlign || cfg.variant == Variant::kSom;

    // frozen depth encoder from stage 1
    TrainConfig s1_cfg = config_from_checkpoint(stage1_ckpt, cfg);
    check_stage1_compatible(cfg, s1_cfg);
    Stage1Model frozen(s1_cfg);
    NamedParams frozen_params = frozen.params();
    load_params_from_checkpoint(stage1_ckpt, frozen_params);
    for (auto& [name, t] : frozen_params) t.set_requires_grad(false);

    SampleCache train_cache(train_entries);
    Stage2Model model(cfg);
    NamedParams params = model.params();
    AdamOptimizer opt(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                      cfg.weight_decay);
    Rng data_rng(mix_seed(cfg.seed, "stage2-data"));
    const AugmentConfig aug;
    const LossSchedule sched = cfg.schedule();
    const long spe = detail::steps_per_epoch(train_cache.size(), cfg.batch_size);

    Stage2Result result;
    for (long step = 0; step < cfg.stage2_steps; ++step) {
        const double lr_scale =
            lr_decay_scale(step, cfg.lr_decay_epochs, spe, cfg.lr_decay_factor);
        auto batch = detail::draw_batch(train_cache, cfg.batch_size, data_rng, cfg.augment,
                                        /*with_jitter=*/true, aug);
        auto [rgb, depth] = make_batch(batch);
        Tensor d_low = downsample_nearest(depth, 4);

        // latent targets from the frozen encoder, outside the graph
        std::vector<Tensor> z_d;
        if (needs_targets) z_d = frozen.encode(depth).as_vector();

        TrainLogEntry e;
        e.step = step;
        {
            ComputeGraph graph;
            Stage2Model::Forward fwd = model.forward(rgb);
            LossParts parts;
            parts.depth = l_depth(fwd.depth, d_low);
            if (cfg.variant == Variant::kAlign) {
                parts.cmrc = l_cmrc(fwd.encoder_features, z_d);
            } else if (cfg.variant == Variant::kSom) {
                parts.cmrc = l_cmrc(fwd.transferred, z_d);
            }
            if (step >= sched.gradient_on_step && cfg.weights.gradient != 0.0) {
                parts.gradient = l_gradient(fwd.depth, d_low);
            }
            if (step >= sched.normal_on_step && cfg.weights.normal != 0.0) {
                parts.normal = l_normal(fwd.depth, d_low);
            }
            Tensor total = total_stage2(parts, cfg.weights, sched, step);
            e.depth = parts.depth.value();
            e.cmrc = parts.cmrc.defined() ? parts.cmrc.value() : 0.0;
            e.gradient = parts.gradient.defined() ? parts.gradient.value() : 0.0;
            e.normal = parts.normal.defined() ? parts.normal.value() : 0.0;
            e.total = total.value();
            if (!std::isfinite(e.total)) {
                throw std::runtime_error("train_stage2: non-finite loss at step " +
                                         std::to_string(step));
            }
            opt.zero_grad();
            graph.backward(total);
        }
        if (model.has_som()) {
            std::vector<std::pair<const void*, double>> scales;
            model.som().append_step_scales(scales);
            opt.step(lr_scale, &scales);
            for (int l = 0; l < model.som().level_count(); ++l) {
                result.attention_trace.push_back(
                    format_attention_line(step, l, model.som().level(l).last_alpha()));
            }
        } else {
            opt.step(lr_scale);
        }
        result.log.push_back(e);
    }

    Checkpoint ckpt;
    for (const auto& [name, t] : params) ckpt.add(name, t.detach());
    for (const auto& [name, t] : opt.moment_tensors()) ckpt.add(name, t);
    ckpt.add("optim.t", Tensor::scalar(static_cast<double>(opt.step_count())));
    add_config_echo(ckpt, cfg);
    result.checkpoint = std::move(ckpt);
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    MetricsReport mean;
    std::vector<MetricsReport> per_sample;
    std::vector<std::string> labels;
    std::vector<std::string> errors;  // unreadable samples, reported and skipped
};

inline EvalResult evaluate(const Checkpoint& ckpt, const std::vector<ManifestEntry>& entries) {
    if (entries.empty()) throw std::invalid_argument("evaluate: empty dataset");
    TrainConfig cfg = config_from_checkpoint(ckpt);
    Stage2Model model(cfg);
    NamedParams params = model.params();
    load_params_from_checkpoint(ckpt, params);

    EvalResult result;
    for (const ManifestEntry& e : entries) {
        SceneSample s;
        try {
            s = load_sample(e);
        } catch (const std::exception& ex) {
            result.errors.push_back(ex.what());
            continue;
        }
        Stage2Model::Forward fwd = model.forward(s.rgb);
        Tensor up = upsample_prediction(fwd.depth, s.depth.shape().height(),
                                        s.depth.shape().width());
        result.per_sample.push_back(compute_metrics(up, s.depth));
        result.labels.push_back(std::string(family_name(e.family)) + "/" +
                                std::to_string(e.seed));
    }
    if (result.per_sample.empty()) {
        throw std::runtime_error("evaluate: no readable samples");
    }
    result.mean = average_reports(result.per_sample);
    return result;
}

}  // namespace somdepth
