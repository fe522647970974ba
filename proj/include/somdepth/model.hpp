#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "somdepth/backbone.hpp"
#include "somdepth/checkpoint.hpp"
#include "somdepth/config.hpp"
#include "somdepth/som.hpp"

namespace somdepth {

// Input transforms. Batch norm is omitted (tiny batches), so inputs are
// scaled into the active range of the tanh stages instead.
inline Tensor normalize_rgb(const Tensor& rgb) {
    return add(scale(rgb, 2.0), Tensor::full(rgb.shape(), -1.0));
}

inline Tensor normalize_depth_input(const Tensor& depth) {
    return scale(somdepth::log(clamp(depth, kDepthMin, kDepthMax)), 0.25);
}

// Stage-1 depth auto-encoder: E_d encodes the (normalized) ground-truth
// depth map, the FPN decoder reconstructs log-depth at 1/4 resolution.
class Stage1Model {
public:
    Stage1Model() = default;

    explicit Stage1Model(const TrainConfig& cfg) {
        Rng enc_rng(mix_seed(cfg.seed, "e_d"));
        Rng dec_rng(mix_seed(cfg.seed, "d_d"));
        encoder_ = DenseEncoder(1, cfg.encoder_config(), enc_rng);
        decoder_ = FpnDecoder(cfg.stage_channels, cfg.head_width, dec_rng);
    }

    PyramidFeatures encode(const Tensor& depth) const {
        return encoder_.encode(normalize_depth_input(depth));
    }

    // reconstructed depth at 1/4 resolution
    Tensor reconstruct(const Tensor& depth) const {
        return predict_depth(decoder_.decode(encode(depth)));
    }

    NamedParams params() const {
        NamedParams p;
        encoder_.collect(p, "e_d");
        decoder_.collect(p, "d_d");
        return p;
    }

    DenseEncoder& encoder() { return encoder_; }
    const DenseEncoder& encoder() const { return encoder_; }

private:
    DenseEncoder encoder_;
    FpnDecoder decoder_;
};

// Stage-2 predictor: image encoder, optionally the SOM stack, and the
// decoder variant. Component init streams are derived from (seed, name), so
// the encoder/decoder weights are identical across variants for one seed.
class Stage2Model {
public:
    Stage2Model() = default;

    explicit Stage2Model(const TrainConfig& cfg) : variant_(cfg.variant) {
        Rng enc_rng(mix_seed(cfg.seed, "e_i"));
        encoder_ = DenseEncoder(3, cfg.encoder_config(), enc_rng);
        if (variant_ == Variant::kPure) {
            Rng dec_rng(mix_seed(cfg.seed, "p_d_pure"));
            pure_ = PureDecoder(cfg.stage_channels, cfg.head_width, dec_rng);
        } else {
            Rng dec_rng(mix_seed(cfg.seed, "p_d"));
            fpn_ = FpnDecoder(cfg.stage_channels, cfg.head_width, dec_rng);
        }
        if (variant_ == Variant::kSom) {
            Rng som_rng(mix_seed(cfg.seed, "som"));
            som_ = SomStack(cfg.memory_slots, cfg.stage_channels, cfg.height, cfg.width, som_rng);
            has_som_ = true;
        }
    }

    struct Forward {
        Tensor log_depth;
        Tensor depth;                          // exp(log_depth), 1/4 resolution
        std::vector<Tensor> encoder_features;  // Z_i per level
        std::vector<Tensor> transferred;       // Z_id per level (som only)
    };

    Forward forward(const Tensor& rgb) {
        Forward out;
        PyramidFeatures f = encoder_.encode(normalize_rgb(rgb));
        out.encoder_features = f.as_vector();
        if (variant_ == Variant::kPure) {
            out.log_depth = pure_.decode(f.f4);
        } else if (has_som_) {
            PyramidFeatures t = som_.transfer(f);
            out.transferred = t.as_vector();
            out.log_depth = fpn_.decode(t);
        } else {
            out.log_depth = fpn_.decode(f);
        }
        out.depth = predict_depth(out.log_depth);
        return out;
    }

    NamedParams params() const {
        NamedParams p;
        encoder_.collect(p, "e_i");
        if (variant_ == Variant::kPure) {
            pure_.collect(p, "dec");
        } else {
            fpn_.collect(p, "dec");
        }
        if (has_som_) som_.collect(p, "som");
        return p;
    }

    Variant variant() const { return variant_; }
    bool has_som() const { return has_som_; }
    SomStack& som() {
        if (!has_som_) throw std::logic_error("Stage2Model: variant has no memory stack");
        return som_;
    }
    DenseEncoder& encoder() { return encoder_; }

private:
    Variant variant_ = Variant::kFpn;
    DenseEncoder encoder_;
    FpnDecoder fpn_;
    PureDecoder pure_;
    SomStack som_;
    bool has_som_ = false;
};

// ---------------------------------------------------------------------------
// Checkpoint echo of the architecture-relevant configuration
// ---------------------------------------------------------------------------

inline void add_config_echo(Checkpoint& ckpt, const TrainConfig& cfg) {
    const auto put = [&](const std::string& key, double v) {
        ckpt.add("config." + key, Tensor::scalar(v));
    };
    put("height", cfg.height);
    put("width", cfg.width);
    put("convs_per_stage", cfg.convs_per_stage);
    put("memory_slots", cfg.memory_slots);
    put("head_width", cfg.head_width);
    put("batch_size", cfg.batch_size);
    put("variant", static_cast<double>(cfg.variant));
    put("seed", static_cast<double>(cfg.seed));
    for (int i = 0; i < 4; ++i) {
        put("stage_channels" + std::to_string(i), cfg.stage_channels[i]);
    }
}

inline TrainConfig config_from_checkpoint(const Checkpoint& ckpt, TrainConfig base = TrainConfig()) {
    const auto get = [&](const std::string& key) { return ckpt.scalar("config." + key); };
    base.height = static_cast<int>(get("height"));
    base.width = static_cast<int>(get("width"));
    base.convs_per_stage = static_cast<int>(get("convs_per_stage"));
    base.memory_slots = static_cast<int>(get("memory_slots"));
    base.head_width = static_cast<int>(get("head_width"));
    base.batch_size = static_cast<int>(get("batch_size"));
    base.variant = static_cast<Variant>(static_cast<int>(get("variant")));
    base.seed = static_cast<std::uint64_t>(get("seed"));
    for (int i = 0; i < 4; ++i) {
        base.stage_channels[i] = static_cast<int>(get("stage_channels" + std::to_string(i)));
    }
    return base;
}

// Overwrites params from same-named checkpoint tensors; every parameter must
// be present with a matching shape.
inline void load_params_from_checkpoint(const Checkpoint& ckpt, NamedParams& params) {
    for (auto& [name, t] : params) {
        const Tensor* src = ckpt.find(name);
        if (src == nullptr) {
            throw std::invalid_argument("checkpoint is missing parameter '" + name + "'");
        }
        if (src->shape() != t.shape()) {
            throw std::invalid_argument("checkpoint parameter '" + name + "' has shape " +
                                        src->shape().str() + ", model expects " +
                                        t.shape().str());
        }
        t.values() = src->values();
    }
}

}  // namespace somdepth
