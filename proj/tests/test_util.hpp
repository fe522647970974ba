#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "somdepth/rng.hpp"
#include "somdepth/som.hpp"
#include "somdepth/tensor.hpp"

namespace testutil {

inline somdepth::Tensor random_tensor(const somdepth::Shape& s, somdepth::Rng& rng,
                                      double lo = -1.0, double hi = 1.0,
                                      bool requires_grad = false) {
    std::vector<double> v(static_cast<std::size_t>(s.elements()));
    for (double& x : v) x = rng.uniform(lo, hi);
    return somdepth::Tensor::from_values(s, std::move(v), requires_grad);
}

// Direct sextuple-loop convolution, independent of the library kernels.
inline somdepth::Tensor naive_conv2d(const somdepth::Tensor& input,
                                     const somdepth::Tensor& kernel,
                                     const somdepth::Tensor& bias, int stride, int padding) {
    using somdepth::Shape;
    using somdepth::Tensor;
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    const int B = is.batch(), C = is.channels(), H = is.height(), W = is.width();
    const int OC = ks.batch(), KH = ks.height(), KW = ks.width();
    const int OH = (H + 2 * padding - KH) / stride + 1;
    const int OW = (W + 2 * padding - KW) / stride + 1;
    Tensor out = Tensor::zeros(Shape(B, OC, OH, OW));
    for (int b = 0; b < B; ++b) {
        for (int oc = 0; oc < OC; ++oc) {
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = bias.defined() ? bias.values()[oc] : 0.0;
                    for (int ic = 0; ic < C; ++ic) {
                        for (int kh = 0; kh < KH; ++kh) {
                            for (int kw = 0; kw < KW; ++kw) {
                                const int ih = oh * stride - padding + kh;
                                const int iw = ow * stride - padding + kw;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += input.at(b, ic, ih, iw) * kernel.at(oc, ic, kh, kw);
                            }
                        }
                    }
                    out.at(b, oc, oh, ow) = acc;
                }
            }
        }
    }
    return out;
}

inline double max_abs_diff(const somdepth::Tensor& a, const somdepth::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        m = std::max(m, std::fabs(a.values()[i] - b.values()[i]));
    }
    return m;
}

inline double max_rel_error(const std::vector<double>& got, const std::vector<double>& want,
                            double floor = 1e-4) {
    double m = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        m = std::max(m, somdepth::relative_error(got[i], want[i], floor));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Straight-line scalar references for the ConvLSTM read path. These share
// nothing with the library ops except parameter storage.
// ---------------------------------------------------------------------------

inline double ref_sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline std::pair<somdepth::Tensor, somdepth::Tensor> ref_convlstm_step(
    const somdepth::ConvLstmCell& cell, const somdepth::Tensor& x, const somdepth::Tensor& h,
    const somdepth::Tensor& c) {
    using somdepth::Tensor;
    const int B = x.shape().batch();
    const std::size_t plane = x.values().size() / B;

    const Tensor xi = naive_conv2d(x, cell.wxi.kernel, cell.wxi.bias, 1, 1);
    const Tensor hi = naive_conv2d(h, cell.whi.kernel, cell.whi.bias, 1, 1);
    const Tensor xf = naive_conv2d(x, cell.wxf.kernel, cell.wxf.bias, 1, 1);
    const Tensor hf = naive_conv2d(h, cell.whf.kernel, cell.whf.bias, 1, 1);
    const Tensor xc = naive_conv2d(x, cell.wxc.kernel, cell.wxc.bias, 1, 1);
    const Tensor hc = naive_conv2d(h, cell.whc.kernel, cell.whc.bias, 1, 1);
    const Tensor xo = naive_conv2d(x, cell.wxo.kernel, cell.wxo.bias, 1, 1);
    const Tensor ho = naive_conv2d(h, cell.who.kernel, cell.who.bias, 1, 1);

    Tensor c_t = somdepth::Tensor::zeros(x.shape());
    Tensor h_t = somdepth::Tensor::zeros(x.shape());
    for (int b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < plane; ++j) {
            const std::size_t i = b * plane + j;
            const double i_g =
                ref_sigmoid(xi.values()[i] + hi.values()[i] + cell.w_ci.values()[j] * c.values()[i]);
            const double f_g =
                ref_sigmoid(xf.values()[i] + hf.values()[i] + cell.w_cf.values()[j] * c.values()[i]);
            const double g = std::tanh(xc.values()[i] + hc.values()[i]);
            const double cv = f_g * c.values()[i] + i_g * g;
            const double o_g =
                ref_sigmoid(xo.values()[i] + ho.values()[i] + cell.w_co.values()[j] * cv);
            c_t.values()[i] = cv;
            h_t.values()[i] = o_g * std::tanh(cv);
        }
    }
    return {h_t, c_t};
}

// Bidirectional scan + projection + softmax + weighted sum, all scalarized.
struct RefReadOut {
    somdepth::Tensor z_m;
    std::vector<double> alpha;
};

inline RefReadOut ref_read(const somdepth::ReadController& ctrl,
                           const std::vector<somdepth::Tensor>& xs) {
    using somdepth::Tensor;
    const int n = static_cast<int>(xs.size());
    Tensor h = Tensor::zeros(xs[0].shape());
    Tensor c = Tensor::zeros(xs[0].shape());
    std::vector<Tensor> hf(n), hb(n);
    for (int t = 0; t < n; ++t) {
        auto [hn, cn] = ref_convlstm_step(ctrl.forward_cell, xs[t], h, c);
        h = hn;
        c = cn;
        hf[t] = h;
    }
    h = Tensor::zeros(xs[0].shape());
    c = Tensor::zeros(xs[0].shape());
    for (int t = n - 1; t >= 0; --t) {
        auto [hn, cn] = ref_convlstm_step(ctrl.backward_cell, xs[t], h, c);
        h = hn;
        c = cn;
        hb[t] = h;
    }
    std::vector<double> scores(n);
    for (int t = 0; t < n; ++t) {
        const Tensor sf = naive_conv2d(hf[t], ctrl.proj_f.kernel, ctrl.proj_f.bias, 1, 0);
        const Tensor sb = naive_conv2d(hb[t], ctrl.proj_b.kernel, ctrl.proj_b.bias, 1, 0);
        double acc = 0.0;
        for (std::size_t i = 0; i < sf.values().size(); ++i) {
            acc += sf.values()[i] + sb.values()[i];
        }
        scores[t] = acc / static_cast<double>(sf.values().size());
    }
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    std::vector<double> alpha(n);
    double sum = 0.0;
    for (int t = 0; t < n; ++t) {
        alpha[t] = std::exp(scores[t] - mx);
        sum += alpha[t];
    }
    for (double& a : alpha) a /= sum;
    Tensor z_m = Tensor::zeros(xs[0].shape());
    for (int t = 0; t < n; ++t) {
        for (std::size_t i = 0; i < z_m.values().size(); ++i) {
            z_m.values()[i] += alpha[t] * xs[t].values()[i];
        }
    }
    return {z_m, alpha};
}

}  // namespace testutil
