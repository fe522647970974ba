#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "somdepth/backbone.hpp"
#include "somdepth/rng.hpp"
#include "somdepth/tensor.hpp"

namespace somdepth {

// One learnable filter pair of the memory bank.
struct MemorySlot {
    Tensor kernel;  // [C,C,3,3]
    Tensor bias;    // [1,C,1,1]
};

// Ordered bank of filter slots. Slot order is meaningful: the read
// controller scans it sequentially.
class MemoryBank {
public:
    MemoryBank() = default;

    MemoryBank(int n_slots, int channels, Rng& rng) : channels_(channels) {
        if (n_slots < 1) throw std::invalid_argument("MemoryBank: need at least one slot");
        slots_.reserve(n_slots);
        for (int t = 0; t < n_slots; ++t) {
            MemorySlot s;
            s.kernel = xavier_uniform(Shape(channels, channels, 3, 3), rng);
            s.bias = Tensor::zeros(Shape(1, channels, 1, 1), true);
            slots_.push_back(std::move(s));
        }
    }

    int size() const { return static_cast<int>(slots_.size()); }
    int channels() const { return channels_; }
    MemorySlot& slot(int t) { return slots_.at(t); }
    const MemorySlot& slot(int t) const { return slots_.at(t); }

    void collect(NamedParams& out, const std::string& prefix) const {
        for (std::size_t t = 0; t < slots_.size(); ++t) {
            out.emplace_back(prefix + ".slot" + std::to_string(t) + ".kernel", slots_[t].kernel);
            out.emplace_back(prefix + ".slot" + std::to_string(t) + ".bias", slots_[t].bias);
        }
    }

private:
    std::vector<MemorySlot> slots_;
    int channels_ = 0;
};

// x_t = W_t * Z_i + b_t for every slot: the unweighted candidate pool.
inline std::vector<Tensor> query_memory(const MemoryBank& bank, const Tensor& z_i) {
    if (z_i.shape().channels() != bank.channels()) {
        throw std::invalid_argument("query_memory: query has " +
                                    std::to_string(z_i.shape().channels()) +
                                    " channels, bank expects " + std::to_string(bank.channels()));
    }
    std::vector<Tensor> xs;
    xs.reserve(bank.size());
    for (int t = 0; t < bank.size(); ++t) {
        const MemorySlot& s = bank.slot(t);
        xs.push_back(conv2d(z_i, s.kernel, s.bias, 1, 1));
    }
    return xs;
}

// Convolutional LSTM cell with elementwise peephole weights. All gate
// convolutions are 3x3 pad 1 so spatial dims are preserved; the output
// gate's peephole reads the updated cell state.
struct ConvLstmCell {
    Conv2dLayer wxi, whi, wxf, whf, wxc, whc, wxo, who;
    Tensor w_ci, w_cf, w_co;  // [1,C,H,W]
    int channels = 0, height = 0, width = 0;

    ConvLstmCell() = default;

    ConvLstmCell(int channels_, int height_, int width_, Rng& rng)
        : channels(channels_), height(height_), width(width_) {
        // gate biases live on the x-convolutions; h-convolutions are bias-free
        wxi = Conv2dLayer(channels, channels, 3, 1, 1, rng, true);
        whi = Conv2dLayer(channels, channels, 3, 1, 1, rng, false);
        wxf = Conv2dLayer(channels, channels, 3, 1, 1, rng, true);
        whf = Conv2dLayer(channels, channels, 3, 1, 1, rng, false);
        wxc = Conv2dLayer(channels, channels, 3, 1, 1, rng, true);
        whc = Conv2dLayer(channels, channels, 3, 1, 1, rng, false);
        wxo = Conv2dLayer(channels, channels, 3, 1, 1, rng, true);
        who = Conv2dLayer(channels, channels, 3, 1, 1, rng, false);
        w_ci = Tensor::zeros(Shape(1, channels, height, width), true);
        w_cf = Tensor::zeros(Shape(1, channels, height, width), true);
        w_co = Tensor::zeros(Shape(1, channels, height, width), true);
    }

    std::pair<Tensor, Tensor> step(const Tensor& x_t, const Tensor& h_prev,
                                   const Tensor& c_prev) const {
        const Shape want(x_t.shape().batch(), channels, height, width);
        if (x_t.shape() != want || h_prev.shape() != want || c_prev.shape() != want) {
            throw std::invalid_argument("ConvLstmCell: inputs " + x_t.shape().str() + "/" +
                                        h_prev.shape().str() + "/" + c_prev.shape().str() +
                                        " do not match cell shape " + want.str());
        }
        const int B = x_t.shape().batch();
        Tensor i_t = sigmoid(add(add(wxi(x_t), whi(h_prev)), hadamard(tile_batch(w_ci, B), c_prev)));
        Tensor f_t = sigmoid(add(add(wxf(x_t), whf(h_prev)), hadamard(tile_batch(w_cf, B), c_prev)));
        Tensor c_t = add(hadamard(f_t, c_prev), hadamard(i_t, tanh(add(wxc(x_t), whc(h_prev)))));
        Tensor o_t = sigmoid(add(add(wxo(x_t), who(h_prev)), hadamard(tile_batch(w_co, B), c_t)));
        Tensor h_t = hadamard(o_t, tanh(c_t));
        return {h_t, c_t};
    }

    void collect(NamedParams& out, const std::string& prefix) const {
        wxi.collect(out, prefix + ".wxi");
        whi.collect(out, prefix + ".whi");
        wxf.collect(out, prefix + ".wxf");
        whf.collect(out, prefix + ".whf");
        wxc.collect(out, prefix + ".wxc");
        whc.collect(out, prefix + ".whc");
        wxo.collect(out, prefix + ".wxo");
        who.collect(out, prefix + ".who");
        out.emplace_back(prefix + ".w_ci", w_ci);
        out.emplace_back(prefix + ".w_cf", w_cf);
        out.emplace_back(prefix + ".w_co", w_co);
    }
};

// Bidirectional ConvLSTM scan over the candidate pool plus the 1x1
// projections that turn hidden states into per-slot scalar scores.
struct ReadController {
    ConvLstmCell forward_cell, backward_cell;
    Conv2dLayer proj_f;  // carries the score bias b_y
    Conv2dLayer proj_b;

    ReadController() = default;

    ReadController(int channels, int height, int width, Rng& rng)
        : forward_cell(channels, height, width, rng),
          backward_cell(channels, height, width, rng),
          proj_f(channels, 1, 1, 1, 0, rng, true),
          proj_b(channels, 1, 1, 1, 0, rng, false) {}

    // s_t = spatial mean of (W_hfy * h_f(t) + W_hby * h_b(t) + b_y)
    std::vector<Tensor> scores(const std::vector<Tensor>& xs) const {
        const int n = static_cast<int>(xs.size());
        const Shape& s = xs[0].shape();
        Tensor h = Tensor::zeros(s), c = Tensor::zeros(s);
        std::vector<Tensor> hf(n), hb(n);
        for (int t = 0; t < n; ++t) {
            auto [hn, cn] = forward_cell.step(xs[t], h, c);
            h = hn;
            c = cn;
            hf[t] = h;
        }
        h = Tensor::zeros(s);
        c = Tensor::zeros(s);
        for (int t = n - 1; t >= 0; --t) {
            auto [hn, cn] = backward_cell.step(xs[t], h, c);
            h = hn;
            c = cn;
            hb[t] = h;
        }
        std::vector<Tensor> out(n);
        for (int t = 0; t < n; ++t) out[t] = mean_all(add(proj_f(hf[t]), proj_b(hb[t])));
        return out;
    }

    void collect(NamedParams& out, const std::string& prefix) const {
        forward_cell.collect(out, prefix + ".fwd");
        backward_cell.collect(out, prefix + ".bwd");
        proj_f.collect(out, prefix + ".proj_f");
        proj_b.collect(out, prefix + ".proj_b");
    }
};

struct ReadResult {
    Tensor z_m;
    std::vector<Tensor> alpha;         // scalar tensors, on the graph unless forced
    std::vector<double> alpha_values;  // detached copies for the write rule
};

// Attention-weighted read: Z_m = sum_t alpha_t x_t. When forced_alpha is
// given the controller is bypassed and the alphas enter as constants
// (the gradient-detached attention path).
inline ReadResult read(const ReadController& controller, const std::vector<Tensor>& xs,
                       const std::vector<double>* forced_alpha = nullptr) {
    if (xs.empty()) throw std::invalid_argument("read: empty candidate pool");
    ReadResult r;
    if (forced_alpha != nullptr) {
        if (forced_alpha->size() != xs.size()) {
            throw std::invalid_argument("read: forced alpha has " +
                                        std::to_string(forced_alpha->size()) + " entries for " +
                                        std::to_string(xs.size()) + " slots");
        }
        for (double a : *forced_alpha) r.alpha.push_back(Tensor::scalar(a));
        r.alpha_values = *forced_alpha;
    } else {
        r.alpha = softmax_slots(controller.scores(xs));
        for (const Tensor& a : r.alpha) r.alpha_values.push_back(a.values()[0]);
    }
    r.z_m = scale_by(xs[0], r.alpha[0]);
    for (std::size_t t = 1; t < xs.size(); ++t) {
        r.z_m = add(r.z_m, scale_by(xs[t], r.alpha[t]));
    }
    return r;
}

// One SOM module: memory bank, read controller and the 1x1 fusion that maps
// the concatenated (query, memory output) back to the query width.
class SomModule {
public:
    SomModule() = default;

    SomModule(int n_slots, int channels, int height, int width, Rng& rng)
        : bank_(n_slots, channels, rng),
          controller_(channels, height, width, rng),
          channels_(channels) {
        // fusion starts as a pass-through of the query with a small random
        // mix of the memory output, so early training matches the bankless
        // wiring while gradients still reach the slots
        fusion_ = Conv2dLayer(2 * channels, channels, 1, 1, 0, rng);
        const double a = std::sqrt(6.0 / (2 * channels + channels));
        Tensor& k = fusion_.kernel;
        std::fill(k.values().begin(), k.values().end(), 0.0);
        for (int oc = 0; oc < channels; ++oc) {
            k.at(oc, oc, 0, 0) = 1.0;
            for (int ic = channels; ic < 2 * channels; ++ic) {
                k.at(oc, ic, 0, 0) = 0.1 * rng.uniform(-a, a);
            }
        }
    }

    std::vector<Tensor> query(const Tensor& z_i) const { return query_memory(bank_, z_i); }

    ReadResult read(const std::vector<Tensor>& xs,
                    const std::vector<double>* forced_alpha = nullptr) const {
        return somdepth::read(controller_, xs, forced_alpha);
    }

    // query -> read -> concat with the query -> fuse back to C channels
    std::pair<Tensor, std::vector<double>> transfer(
        const Tensor& z_i, const std::vector<double>* forced_alpha = nullptr) {
        ReadResult r = read(query(z_i), forced_alpha);
        Tensor z_id = fusion_(concat_channels({z_i, r.z_m}));
        last_alpha_ = r.alpha_values;
        return {z_id, r.alpha_values};
    }

    const std::vector<double>& last_alpha() const { return last_alpha_; }
    MemoryBank& bank() { return bank_; }
    const MemoryBank& bank() const { return bank_; }
    ReadController& controller() { return controller_; }
    Conv2dLayer& fusion() { return fusion_; }
    int channels() const { return channels_; }

    // Per-slot optimizer step scales from the most recent read. The slot
    // with higher attention is updated to a larger extent.
    void append_step_scales(std::vector<std::pair<const void*, double>>& out) const {
        if (static_cast<int>(last_alpha_.size()) != bank_.size()) {
            throw std::logic_error("attention-scaled update: have " +
                                   std::to_string(last_alpha_.size()) + " alphas for " +
                                   std::to_string(bank_.size()) + " slots (stale read?)");
        }
        for (int t = 0; t < bank_.size(); ++t) {
            out.emplace_back(bank_.slot(t).kernel.id(), last_alpha_[t]);
            out.emplace_back(bank_.slot(t).bias.id(), last_alpha_[t]);
        }
    }

    void collect(NamedParams& out, const std::string& prefix) const {
        bank_.collect(out, prefix + ".bank");
        controller_.collect(out, prefix + ".ctrl");
        fusion_.collect(out, prefix + ".fusion");
    }

private:
    MemoryBank bank_;
    ReadController controller_;
    Conv2dLayer fusion_;
    int channels_ = 0;
    std::vector<double> last_alpha_;
};

// Independent SOM modules for the four pyramid levels.
class SomStack {
public:
    SomStack() = default;

    SomStack(int n_slots, const std::array<int, 4>& channels, int input_height, int input_width,
             Rng& rng) {
        for (int l = 0; l < 4; ++l) {
            const int div = 4 << l;
            levels_.push_back(SomModule(n_slots, channels[l], input_height / div,
                                        input_width / div, rng));
        }
    }

    PyramidFeatures transfer(const PyramidFeatures& f) {
        PyramidFeatures out;
        out.f1 = levels_[0].transfer(f.f1).first;
        out.f2 = levels_[1].transfer(f.f2).first;
        out.f3 = levels_[2].transfer(f.f3).first;
        out.f4 = levels_[3].transfer(f.f4).first;
        return out;
    }

    int level_count() const { return static_cast<int>(levels_.size()); }
    SomModule& level(int i) { return levels_.at(i); }
    const SomModule& level(int i) const { return levels_.at(i); }

    void append_step_scales(std::vector<std::pair<const void*, double>>& out) const {
        for (const SomModule& m : levels_) m.append_step_scales(out);
    }

    void collect(NamedParams& out, const std::string& prefix) const {
        for (std::size_t l = 0; l < levels_.size(); ++l) {
            levels_[l].collect(out, prefix + ".l" + std::to_string(l));
        }
    }

private:
    std::vector<SomModule> levels_;
};

// One comma-separated trace line per read: step, level, then the n alphas.
inline std::string format_attention_line(long step, int level, const std::vector<double>& alpha) {
    std::ostringstream os;
    os << step << "," << level;
    os.precision(17);
    for (double a : alpha) os << "," << a;
    return os.str();
}

}  // namespace somdepth
