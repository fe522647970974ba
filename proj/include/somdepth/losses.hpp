#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "somdepth/tensor.hpp"

namespace somdepth {

// Depth values are clamped to this range before any logarithm.
inline constexpr double kDepthMin = 1e-3;
inline constexpr double kDepthMax = 10.0;

struct LossWeights {
    double depth = 1.0;
    double cmrc = 2.0;
    double gradient = 1.0;
    double normal = 1.0;
};

struct LossSchedule {
    long gradient_on_step = 4000;
    long normal_on_step = 8000;

    void validate() const {
        if (gradient_on_step > normal_on_step) {
            throw std::invalid_argument("LossSchedule: gradient_on_step must be <= normal_on_step");
        }
    }
};

namespace detail {
inline Tensor log_rmse(const Tensor& a, const Tensor& b) {
    check_same_shape("log_rmse", a, b);
    Tensor la = somdepth::log(clamp(a, kDepthMin, kDepthMax));
    Tensor lb = somdepth::log(clamp(b, kDepthMin, kDepthMax));
    Tensor e = sub(la, lb);
    return somdepth::sqrt(mean_all(hadamard(e, e)));
}
}  // namespace detail

// Root of the mean squared log-depth difference.
inline Tensor l_depth(const Tensor& d_pred, const Tensor& d_gt) {
    return detail::log_rmse(d_pred, d_gt);
}

// Same formula applied to the auto-encoder reconstruction.
inline Tensor l_ae(const Tensor& d_recon, const Tensor& d_gt) {
    return detail::log_rmse(d_recon, d_gt);
}

// Sum over pyramid levels of the mean absolute difference between the
// transferred features and the (detached) depth-encoder targets.
inline Tensor l_cmrc(const std::vector<Tensor>& z_id, const std::vector<Tensor>& z_d) {
    if (z_id.size() != z_d.size()) {
        throw std::invalid_argument("l_cmrc: " + std::to_string(z_id.size()) +
                                    " transferred levels vs " + std::to_string(z_d.size()) +
                                    " target levels");
    }
    if (z_id.empty()) throw std::invalid_argument("l_cmrc: no levels");
    Tensor total;
    for (std::size_t k = 0; k < z_id.size(); ++k) {
        detail::check_same_shape("l_cmrc", z_id[k], z_d[k]);
        if (z_d[k].requires_grad()) {
            throw std::invalid_argument("l_cmrc: target level " + std::to_string(k) +
                                        " must be gradient-detached");
        }
        Tensor term = mean_all(somdepth::abs(sub(z_id[k], z_d[k])));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

// Mean L1 difference of the Sobel responses, both components.
inline Tensor l_gradient(const Tensor& d_pred, const Tensor& d_gt) {
    detail::check_same_shape("l_gradient", d_pred, d_gt);
    auto [gxp, gyp] = sobel_gradients(d_pred);
    auto [gxg, gyg] = sobel_gradients(d_gt);
    return add(mean_all(somdepth::abs(sub(gxg, gxp))), mean_all(somdepth::abs(sub(gyg, gyp))));
}

// Mean cosine dissimilarity of surface normals. Normals are the augmented
// vectors (-gx, -gy, 1), which never degenerate on flat regions.
inline Tensor l_normal(const Tensor& d_pred, const Tensor& d_gt) {
    detail::check_same_shape("l_normal", d_pred, d_gt);
    auto [gxp, gyp] = sobel_gradients(d_pred);
    auto [gxg, gyg] = sobel_gradients(d_gt);
    Tensor ones = Tensor::full(gxp.shape(), 1.0);
    Tensor dot = add(add(hadamard(gxg, gxp), hadamard(gyg, gyp)), ones);
    Tensor norm_g = somdepth::sqrt(add(add(hadamard(gxg, gxg), hadamard(gyg, gyg)), ones));
    Tensor norm_p = somdepth::sqrt(add(add(hadamard(gxp, gxp), hadamard(gyp, gyp)), ones));
    Tensor cosine = somdepth::div(dot, hadamard(norm_g, norm_p));
    return mean_all(sub(ones, cosine));
}

// Component losses of the stage-2 objective. Undefined entries were not
// evaluated (variant wiring or scheduling).
struct LossParts {
    Tensor depth;
    Tensor cmrc;
    Tensor gradient;
    Tensor normal;
};

// Weighted stage-2 total. The gradient and normal terms join only once the
// step reaches their scheduled thresholds; before that they contribute
// exactly zero (the term is omitted from the sum entirely).
inline Tensor total_stage2(const LossParts& parts, const LossWeights& weights,
                           const LossSchedule& schedule, long step) {
    if (step < 0) throw std::invalid_argument("total_stage2: negative step");
    schedule.validate();
    if (!parts.depth.defined()) throw std::invalid_argument("total_stage2: depth loss required");
    Tensor total = scale(parts.depth, weights.depth);
    if (parts.cmrc.defined() && weights.cmrc != 0.0) {
        total = add(total, scale(parts.cmrc, weights.cmrc));
    }
    if (step >= schedule.gradient_on_step && weights.gradient != 0.0) {
        if (!parts.gradient.defined()) {
            throw std::invalid_argument("total_stage2: gradient loss scheduled but not evaluated");
        }
        total = add(total, scale(parts.gradient, weights.gradient));
    }
    if (step >= schedule.normal_on_step && weights.normal != 0.0) {
        if (!parts.normal.defined()) {
            throw std::invalid_argument("total_stage2: normal loss scheduled but not evaluated");
        }
        total = add(total, scale(parts.normal, weights.normal));
    }
    return total;
}

}  // namespace somdepth
