#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "somdepth/rng.hpp"
#include "somdepth/tensor.hpp"

namespace somdepth {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// kernel init: uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero
inline Tensor xavier_uniform(const Shape& kshape, Rng& rng) {
    const double fan_in = static_cast<double>(kshape.channels()) * kshape.height() * kshape.width();
    const double fan_out = static_cast<double>(kshape.batch()) * kshape.height() * kshape.width();
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> v(static_cast<std::size_t>(kshape.elements()));
    for (double& x : v) x = rng.uniform(-a, a);
    return Tensor::from_values(kshape, std::move(v), true);
}

struct Conv2dLayer {
    Tensor kernel;
    Tensor bias;  // undefined when the layer has no bias term
    int stride = 1;
    int padding = 1;

    Conv2dLayer() = default;
    Conv2dLayer(int in_c, int out_c, int ksize, int stride_, int padding_, Rng& rng,
                bool with_bias = true)
        : kernel(xavier_uniform(Shape(out_c, in_c, ksize, ksize), rng)),
          stride(stride_),
          padding(padding_) {
        if (with_bias) bias = Tensor::zeros(Shape(1, out_c, 1, 1), true);
    }

    Tensor operator()(const Tensor& x) const { return conv2d(x, kernel, bias, stride, padding); }

    void collect(NamedParams& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".kernel", kernel);
        if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
    }
};

struct EncoderConfig {
    std::array<int, 4> stage_channels{16, 32, 64, 128};
    int convs_per_stage = 2;

    void validate() const {
        for (int c : stage_channels) {
            if (c < 1) throw std::invalid_argument("EncoderConfig: channels must be >= 1");
        }
        for (int i = 1; i < 4; ++i) {
            if (stage_channels[i] < stage_channels[i - 1]) {
                throw std::invalid_argument("EncoderConfig: stage channels must be non-decreasing");
            }
        }
        if (convs_per_stage < 1) {
            throw std::invalid_argument("EncoderConfig: convs_per_stage must be >= 1");
        }
    }
};

// Features at 1/4, 1/8, 1/16 and 1/32 of the input resolution.
struct PyramidFeatures {
    Tensor f1, f2, f3, f4;

    const Tensor& level(int i) const {
        switch (i) {
            case 0: return f1;
            case 1: return f2;
            case 2: return f3;
            case 3: return f4;
            default: throw std::out_of_range("PyramidFeatures: level " + std::to_string(i));
        }
    }
    std::vector<Tensor> as_vector() const { return {f1, f2, f3, f4}; }
};

// Four-stage densely connected encoder. The first stage reaches 1/4
// resolution with two stride-2 convolutions; each later stage downsamples
// once. Within a stage every convolution sees the concatenation of the
// stage input and all earlier outputs of the stage.
class DenseEncoder {
public:
    DenseEncoder() = default;

    DenseEncoder(int in_channels, const EncoderConfig& cfg, Rng& rng)
        : cfg_(cfg), in_channels_(in_channels) {
        cfg.validate();
        const auto& ch = cfg.stage_channels;
        stem_a_ = Conv2dLayer(in_channels, ch[0], 3, 2, 1, rng);
        stem_b_ = Conv2dLayer(ch[0], ch[0], 3, 2, 1, rng);
        for (int s = 0; s < 3; ++s) down_[s] = Conv2dLayer(ch[s], ch[s + 1], 3, 2, 1, rng);
        for (int s = 0; s < 4; ++s) {
            dense_[s].clear();
            for (int j = 0; j < cfg.convs_per_stage; ++j) {
                dense_[s].push_back(Conv2dLayer((j + 1) * ch[s], ch[s], 3, 1, 1, rng));
            }
        }
    }

    PyramidFeatures encode(const Tensor& image) const {
        const Shape& s = image.shape();
        if (s.channels() != in_channels_) {
            throw std::invalid_argument("DenseEncoder: expected " + std::to_string(in_channels_) +
                                        " input channels, got " + std::to_string(s.channels()));
        }
        if (s.height() % 32 != 0 || s.width() % 32 != 0) {
            throw std::invalid_argument("DenseEncoder: input " + s.str() +
                                        " height/width must be divisible by 32");
        }
        Tensor x = somdepth::tanh(stem_a_(image));
        x = somdepth::tanh(stem_b_(x));
        PyramidFeatures out;
        out.f1 = run_stage(0, x);
        out.f2 = run_stage(1, somdepth::tanh(down_[0](out.f1)));
        out.f3 = run_stage(2, somdepth::tanh(down_[1](out.f2)));
        out.f4 = run_stage(3, somdepth::tanh(down_[2](out.f3)));
        return out;
    }

    const EncoderConfig& config() const { return cfg_; }
    int in_channels() const { return in_channels_; }

    void collect(NamedParams& out, const std::string& prefix) const {
        stem_a_.collect(out, prefix + ".stem_a");
        stem_b_.collect(out, prefix + ".stem_b");
        for (int s = 0; s < 3; ++s) down_[s].collect(out, prefix + ".down" + std::to_string(s + 2));
        for (int s = 0; s < 4; ++s) {
            for (std::size_t j = 0; j < dense_[s].size(); ++j) {
                dense_[s][j].collect(out, prefix + ".stage" + std::to_string(s + 1) + ".conv" +
                                              std::to_string(j + 1));
            }
        }
    }

private:
    Tensor run_stage(int s, const Tensor& first) const {
        std::vector<Tensor> outs{first};
        for (const Conv2dLayer& conv : dense_[s]) {
            Tensor in = outs.size() == 1 ? outs[0] : concat_channels(outs);
            outs.push_back(somdepth::tanh(conv(in)));
        }
        return outs.back();
    }

    EncoderConfig cfg_;
    int in_channels_ = 0;
    Conv2dLayer stem_a_, stem_b_;
    std::array<Conv2dLayer, 3> down_;
    std::array<std::vector<Conv2dLayer>, 4> dense_;
};

// Top-down pyramid decoder: upsample the deeper map, match channels with a
// 1x1 lateral convolution, add to the next level; then lift every fused map
// to 1/4 resolution, concatenate, and run the two-conv prediction head.
// Output is interpreted as log-depth.
class FpnDecoder {
public:
    FpnDecoder() = default;

    FpnDecoder(const std::array<int, 4>& chans, int head_width, Rng& rng) {
        lat3_ = Conv2dLayer(chans[3], chans[2], 1, 1, 0, rng);
        lat2_ = Conv2dLayer(chans[2], chans[1], 1, 1, 0, rng);
        lat1_ = Conv2dLayer(chans[1], chans[0], 1, 1, 0, rng);
        const int volume = chans[0] + chans[1] + chans[2] + chans[3];
        head1_ = Conv2dLayer(volume, head_width, 3, 1, 1, rng);
        head2_ = Conv2dLayer(head_width, 1, 3, 1, 1, rng);
    }

    Tensor decode(const PyramidFeatures& f) const {
        Tensor p4 = f.f4;
        Tensor p3 = add(lat3_(upsample2x(p4)), f.f3);
        Tensor p2 = add(lat2_(upsample2x(p3)), f.f2);
        Tensor p1 = add(lat1_(upsample2x(p2)), f.f1);
        Tensor u2 = upsample2x(p2);
        Tensor u3 = upsample2x(upsample2x(p3));
        Tensor u4 = upsample2x(upsample2x(upsample2x(p4)));
        Tensor volume = concat_channels({p1, u2, u3, u4});
        return head2_(somdepth::tanh(head1_(volume)));
    }

    void collect(NamedParams& out, const std::string& prefix) const {
        lat3_.collect(out, prefix + ".lat3");
        lat2_.collect(out, prefix + ".lat2");
        lat1_.collect(out, prefix + ".lat1");
        head1_.collect(out, prefix + ".head1");
        head2_.collect(out, prefix + ".head2");
    }

    // test hook for degenerate configurations
    Conv2dLayer& head2() { return head2_; }
    NamedParams params(const std::string& prefix) const {
        NamedParams p;
        collect(p, prefix);
        return p;
    }

private:
    Conv2dLayer lat3_, lat2_, lat1_;
    Conv2dLayer head1_, head2_;
};

// Plain symmetric decoder: consumes only the deepest feature and walks back
// up with upsample + conv stages, ignoring the shallower pyramid levels.
class PureDecoder {
public:
    PureDecoder() = default;

    PureDecoder(const std::array<int, 4>& chans, int head_width, Rng& rng) {
        up3_ = Conv2dLayer(chans[3], chans[2], 3, 1, 1, rng);
        up2_ = Conv2dLayer(chans[2], chans[1], 3, 1, 1, rng);
        up1_ = Conv2dLayer(chans[1], chans[0], 3, 1, 1, rng);
        head1_ = Conv2dLayer(chans[0], head_width, 3, 1, 1, rng);
        head2_ = Conv2dLayer(head_width, 1, 3, 1, 1, rng);
    }

    Tensor decode(const Tensor& deepest) const {
        Tensor x = somdepth::tanh(up3_(upsample2x(deepest)));
        x = somdepth::tanh(up2_(upsample2x(x)));
        x = somdepth::tanh(up1_(upsample2x(x)));
        return head2_(somdepth::tanh(head1_(x)));
    }

    void collect(NamedParams& out, const std::string& prefix) const {
        up3_.collect(out, prefix + ".up3");
        up2_.collect(out, prefix + ".up2");
        up1_.collect(out, prefix + ".up1");
        head1_.collect(out, prefix + ".head1");
        head2_.collect(out, prefix + ".head2");
    }

private:
    Conv2dLayer up3_, up2_, up1_;
    Conv2dLayer head1_, head2_;
};

// Log-depth to strictly positive depth.
inline Tensor predict_depth(const Tensor& log_depth) { return somdepth::exp(log_depth); }

}  // namespace somdepth
