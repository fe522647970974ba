#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "somdepth/backbone.hpp"
#include "somdepth/tensor.hpp"

namespace somdepth {

// Adam with decoupled weight decay. Moments are updated from the raw
// gradients; an optional per-parameter factor scales the final applied step,
// which is how the attention-scaled memory write enters the optimizer: the
// whole delta (including the decay term) of a slot is multiplied by its
// detached attention weight.
class AdamOptimizer {
public:
    AdamOptimizer() = default;

    AdamOptimizer(NamedParams params, double lr, double beta1, double beta2, double eps,
                  double weight_decay)
        : params_(std::move(params)),
          lr_(lr),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps),
          weight_decay_(weight_decay) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const std::size_t n = params_[i].second.values().size();
            m_[i].assign(n, 0.0);
            v_[i].assign(n, 0.0);
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    void step(double lr_scale = 1.0,
              const std::vector<std::pair<const void*, double>>* step_scales = nullptr) {
        std::unordered_map<const void*, double> scale_of;
        if (step_scales != nullptr) {
            for (const auto& [id, s] : *step_scales) scale_of[id] = s;
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        const double lr_now = lr_ * lr_scale;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i].second;
            auto& theta = p.values();
            const auto& g = p.grad();
            double scale = 1.0;
            if (const auto it = scale_of.find(p.id()); it != scale_of.end()) scale = it->second;
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < theta.size(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
                const double mh = m[j] / bc1;
                const double vh = v[j] / bc2;
                const double delta = lr_now * (mh / (std::sqrt(vh) + eps_) + weight_decay_ * theta[j]);
                theta[j] -= scale * delta;
            }
        }
    }

    long step_count() const { return t_; }
    const NamedParams& params() const { return params_; }

    // moment buffers as named tensors for checkpointing
    NamedParams moment_tensors() const {
        NamedParams out;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const Shape& s = params_[i].second.shape();
            out.emplace_back("adam.m." + params_[i].first, Tensor::from_values(s, m_[i]));
            out.emplace_back("adam.v." + params_[i].first, Tensor::from_values(s, v_[i]));
        }
        return out;
    }

    void load_moments(const std::function<const Tensor*(const std::string&)>& lookup, long t) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const Tensor* m = lookup("adam.m." + params_[i].first);
            const Tensor* v = lookup("adam.v." + params_[i].first);
            if (m == nullptr || v == nullptr) {
                throw std::invalid_argument("AdamOptimizer: missing moments for '" +
                                            params_[i].first + "'");
            }
            m_[i] = m->values();
            v_[i] = v->values();
        }
        t_ = t;
    }

private:
    NamedParams params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8, weight_decay_ = 0.0;
    long t_ = 0;
};

// lr * factor^(floor(step / (decay_epochs * steps_per_epoch))), the epoch
// schedule converted to steps through the dataset size
inline double lr_decay_scale(long step, int decay_epochs, long steps_per_epoch,
                             double factor) {
    if (steps_per_epoch < 1 || decay_epochs < 1) return 1.0;
    const long interval = static_cast<long>(decay_epochs) * steps_per_epoch;
    return std::pow(factor, static_cast<double>(step / interval));
}

}  // namespace somdepth
