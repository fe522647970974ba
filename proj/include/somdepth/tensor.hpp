#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace somdepth {

// Desk-scale guard: tensors above this element count are rejected.
inline std::atomic<std::int64_t>& max_tensor_elements_ref() {
    static std::atomic<std::int64_t> cap{std::int64_t{1} << 26};
    return cap;
}
inline std::int64_t max_tensor_elements() { return max_tensor_elements_ref().load(); }
inline void set_max_tensor_elements(std::int64_t cap) { max_tensor_elements_ref().store(cap); }

// Fixed rank-4 NCHW shape. All tensors in the library use this layout.
class Shape {
public:
    Shape() : d_{1, 1, 1, 1} {}
    Shape(int batch, int channels, int height, int width) : d_{batch, channels, height, width} {
        static const char* names[4] = {"batch", "channels", "height", "width"};
        std::int64_t n = 1;
        for (int i = 0; i < 4; ++i) {
            if (d_[i] < 1) {
                throw std::invalid_argument("Shape: " + std::string(names[i]) + " must be >= 1, got " +
                                            std::to_string(d_[i]));
            }
            n *= d_[i];
            if (n > max_tensor_elements()) {
                throw std::invalid_argument("Shape: element count exceeds cap of " +
                                            std::to_string(max_tensor_elements()));
            }
        }
    }

    int batch() const { return d_[0]; }
    int channels() const { return d_[1]; }
    int height() const { return d_[2]; }
    int width() const { return d_[3]; }
    int dim(int i) const { return d_[i]; }

    std::int64_t elements() const {
        return std::int64_t{d_[0]} * d_[1] * d_[2] * d_[3];
    }

    bool operator==(const Shape& o) const { return d_ == o.d_; }
    bool operator!=(const Shape& o) const { return d_ != o.d_; }

    std::string str() const {
        std::ostringstream os;
        os << d_[0] << "x" << d_[1] << "x" << d_[2] << "x" << d_[3];
        return os.str();
    }

private:
    std::array<int, 4> d_;
};

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first touched
};
}  // namespace detail

// Handle to shared tensor storage. Copies alias the same buffer; use
// clone()/detach() for an independent copy. Storage is confined to the
// thread that is running the current forward/backward.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& s, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<detail::TensorImpl>();
        t.impl_->shape = s;
        t.impl_->values.assign(static_cast<std::size_t>(s.elements()), 0.0);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(const Shape& s, double v, bool requires_grad = false) {
        Tensor t = zeros(s, requires_grad);
        std::fill(t.values().begin(), t.values().end(), v);
        return t;
    }

    static Tensor from_values(const Shape& s, std::vector<double> v, bool requires_grad = false) {
        if (static_cast<std::int64_t>(v.size()) != s.elements()) {
            throw std::invalid_argument("Tensor: got " + std::to_string(v.size()) +
                                        " values for shape " + s.str());
        }
        Tensor t;
        t.impl_ = std::make_shared<detail::TensorImpl>();
        t.impl_->shape = s;
        t.impl_->values = std::move(v);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_values(Shape(1, 1, 1, 1), {v}, requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const { return impl().shape; }
    std::int64_t elements() const { return impl().shape.elements(); }

    std::vector<double>& values() { return impl().values; }
    const std::vector<double>& values() const { return impl().values; }

    double& at(int b, int c, int h, int w) {
        const Shape& s = impl().shape;
        return impl().values[((static_cast<std::size_t>(b) * s.channels() + c) * s.height() + h) *
                                 s.width() +
                             w];
    }
    double at(int b, int c, int h, int w) const { return const_cast<Tensor*>(this)->at(b, c, h, w); }

    // scalar extraction
    double value() const {
        if (elements() != 1) {
            throw std::invalid_argument("Tensor::value: tensor of shape " + shape().str() +
                                        " is not a scalar");
        }
        return impl().values[0];
    }

    bool requires_grad() const { return impl().requires_grad; }
    void set_requires_grad(bool rg) { impl().requires_grad = rg; }

    // Gradient buffer, allocated as zeros on first access.
    std::vector<double>& grad() {
        auto& i = impl();
        if (i.grad.empty()) i.grad.assign(i.values.size(), 0.0);
        return i.grad;
    }
    const std::vector<double>& grad() const { return const_cast<Tensor*>(this)->grad(); }

    bool grad_allocated() const { return !impl().grad.empty(); }

    bool grad_nonzero() const {
        const auto& g = impl().grad;
        for (double v : g) {
            if (v != 0.0) return true;
        }
        return false;
    }

    void zero_grad() {
        auto& g = impl().grad;
        std::fill(g.begin(), g.end(), 0.0);
    }

    // Independent copy with no gradient tracking.
    Tensor detach() const {
        Tensor t = zeros(shape(), false);
        t.values() = values();
        return t;
    }

    Tensor clone() const {
        Tensor t = zeros(shape(), requires_grad());
        t.values() = values();
        return t;
    }

    bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }
    const void* id() const { return impl_.get(); }

    bool all_finite() const {
        for (double v : impl().values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

private:
    detail::TensorImpl& impl() {
        if (!impl_) throw std::logic_error("Tensor: use of undefined tensor");
        return *impl_;
    }
    const detail::TensorImpl& impl() const {
        if (!impl_) throw std::logic_error("Tensor: use of undefined tensor");
        return *impl_;
    }

    std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of executed operations with their gradient rules.
// Becomes the active graph for the constructing thread; ops executed while
// active (on inputs that require grad) are recorded. Reverse replay of the
// record is a valid reverse-topological order because every op's inputs
// were created before it.
class ComputeGraph {
public:
    ComputeGraph() : prev_(active_tls()) { active_tls() = this; }
    ~ComputeGraph() { active_tls() = prev_; }
    ComputeGraph(const ComputeGraph&) = delete;
    ComputeGraph& operator=(const ComputeGraph&) = delete;

    static ComputeGraph* active() { return active_tls(); }

    void record(const char* name, std::function<void()> grad_fn) {
        ops_.push_back(Node{name, std::move(grad_fn)});
    }

    std::size_t op_count() const { return ops_.size(); }

    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.elements() != 1) {
            throw std::invalid_argument(
                "backward: loss must be a scalar, got shape " +
                (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
        }
        Tensor seed = loss;
        seed.grad()[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            it->grad_fn();
        }
    }

private:
    struct Node {
        const char* name;
        std::function<void()> grad_fn;
    };

    static ComputeGraph*& active_tls() {
        thread_local ComputeGraph* active = nullptr;
        return active;
    }

    std::vector<Node> ops_;
    ComputeGraph* prev_ = nullptr;
};

inline void backward(ComputeGraph& graph, const Tensor& loss) { graph.backward(loss); }

namespace detail {

inline bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (ComputeGraph::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() +
                                    " vs " + b.shape().str());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

namespace detail {

// dfdx receives (input value, output value) and returns the local derivative.
template <typename Fwd, typename Dfdx>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Dfdx dfdx) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
    if (tracking({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        ComputeGraph::active()->record(name, [xc, oc, dfdx]() mutable {
            if (!oc.grad_nonzero()) return;
            if (!xc.requires_grad()) return;
            const auto& g = oc.grad();
            const auto& xv = xc.values();
            const auto& ov = oc.values();
            auto& gx = xc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], ov[i]);
        });
    }
    return out;
}

}  // namespace detail

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary_op(
        "sigmoid", x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary_op("tanh", x, [](double v) { return std::tanh(v); },
                            [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary_op("exp", x, [](double v) { return std::exp(v); },
                            [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
    const auto& xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        if (!(xv[i] > 0.0)) {
            throw std::invalid_argument("log: non-positive value " + std::to_string(xv[i]) +
                                        " at flat index " + std::to_string(i));
        }
    }
    return detail::unary_op("log", x, [](double v) { return std::log(v); },
                            [](double v, double) { return 1.0 / v; });
}

inline Tensor sqrt(const Tensor& x) {
    const auto& xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] < 0.0) {
            throw std::invalid_argument("sqrt: negative value " + std::to_string(xv[i]) +
                                        " at flat index " + std::to_string(i));
        }
    }
    return detail::unary_op("sqrt", x, [](double v) { return std::sqrt(v); },
                            [](double, double y) { return 0.5 / y; });
}

inline Tensor abs(const Tensor& x) {
    return detail::unary_op("abs", x, [](double v) { return std::fabs(v); },
                            [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor clamp(const Tensor& x, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
    return detail::unary_op(
        "clamp", x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

inline Tensor scale(const Tensor& x, double c) {
    return detail::unary_op("scale", x, [c](double v) { return c * v; },
                            [c](double, double) { return c; });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
    if (detail::tracking({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        ComputeGraph::active()->record("add", [ac, bc, oc]() mutable {
            if (!oc.grad_nonzero()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("sub", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
    if (detail::tracking({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        ComputeGraph::active()->record("sub", [ac, bc, oc]() mutable {
            if (!oc.grad_nonzero()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("hadamard", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
    if (detail::tracking({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        ComputeGraph::active()->record("hadamard", [ac, bc, oc]() mutable {
            if (!oc.grad_nonzero()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                const auto& bv = bc.values();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                const auto& av = ac.values();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
    }
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("div", a, b);
    const auto& bv0 = b.values();
    for (std::size_t i = 0; i < bv0.size(); ++i) {
        if (bv0[i] == 0.0) {
            throw std::invalid_argument("div: zero divisor at flat index " + std::to_string(i));
        }
    }
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] / bv0[i];
    if (detail::tracking({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        ComputeGraph::active()->record("div", [ac, bc, oc]() mutable {
            if (!oc.grad_nonzero()) return;
            const auto& g = oc.grad();
            const auto& bv = bc.values();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                const auto& ov = oc.values();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * ov[i] / bv[i];
            }
        });
    }
    return out;
}

// Multiply by a runtime scalar tensor; gradient flows to both operands.
inline Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.elements() != 1) {
        throw std::invalid_argument("scale_by: scale must be a scalar, got " + s.shape().str());
    }
    const double sv = s.values()[0];
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = sv * xv[i];
    if (detail::tracking({&x, &s})) {
        out.set_requires_grad(true);
        Tensor xc = x, sc = s, oc = out;
        ComputeGraph::active()->record("scale_by", [xc, sc, oc]() mutable {
            if (!oc.grad_nonzero()) return;
            const auto& g = oc.grad();
            if (xc.requires_grad()) {
                const double sv = sc.values()[0];
                auto& gx = xc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += sv * g[i];
            }
            if (sc.requires_grad()) {
                const auto& xv = xc.values();
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
                sc.grad()[0] += acc;
            }
        });
    }
    return out;
}

// Replicate a [1,C,H,W] tensor across the batch dimension.
inline Tensor tile_batch(const Tensor& x, int batch) {
    const Shape& s = x.shape();
    if (s.batch() != 1) {
        throw std::invalid_argument("tile_batch: expected batch 1, got " + s.str());
    }
    if (batch < 1) throw std::invalid_argument("tile_batch: batch must be >= 1");
    Tensor out = Tensor::zeros(Shape(batch, s.channels(), s.height(), s.width()));
    const std::size_t n = x.values().size();
    const auto& xv = x.values();
    auto& ov = out.values();
    for (int b = 0; b < batch; ++b) {
        std::copy(xv.begin(), xv.end(), ov.begin() + static_cast<std::size_t>(b) * n);
    }
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        const int bs = batch;
        ComputeGraph::active()->record("tile_batch", [xc, oc, bs]() mutable {
            if (!oc.grad_nonzero() || !xc.requires_grad()) return;
            const auto& g = oc.grad();
            auto& gx = xc.grad();
            const std::size_t n = gx.size();
            for (int b = 0; b < bs; ++b) {
                const double* gb = g.data() + static_cast<std::size_t>(b) * n;
                for (std::size_t i = 0; i < n; ++i) gx[i] += gb[i];
            }
        });
    }
    return out;
}

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const Shape& s0 = parts[0].shape();
    int total_c = 0;
    for (const Tensor& t : parts) {
        const Shape& s = t.shape();
        if (s.batch() != s0.batch() || s.height() != s0.height() || s.width() != s0.width()) {
            throw std::invalid_argument("concat_channels: incompatible shape " + s.str() +
                                        " vs " + s0.str());
        }
        total_c += s.channels();
    }
    const int B = s0.batch(), H = s0.height(), W = s0.width();
    Tensor out = Tensor::zeros(Shape(B, total_c, H, W));
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    auto& ov = out.values();
    std::size_t c_off = 0;
    for (const Tensor& t : parts) {
        const int C = t.shape().channels();
        const auto& tv = t.values();
        for (int b = 0; b < B; ++b) {
            const std::size_t src = static_cast<std::size_t>(b) * C * plane;
            const std::size_t dst = (static_cast<std::size_t>(b) * total_c + c_off) * plane;
            std::copy(tv.begin() + src, tv.begin() + src + C * plane, ov.begin() + dst);
        }
        c_off += C;
    }
    bool track = false;
    if (ComputeGraph::active()) {
        for (const Tensor& t : parts) track = track || t.requires_grad();
    }
    if (track) {
        out.set_requires_grad(true);
        std::vector<Tensor> pc = parts;
        Tensor oc = out;
        const int tc = total_c;
        ComputeGraph::active()->record("concat_channels", [pc, oc, tc, B, plane]() mutable {
            if (!oc.grad_nonzero()) return;
            const auto& g = oc.grad();
            std::size_t c_off = 0;
            for (Tensor& t : pc) {
                const int C = t.shape().channels();
                if (t.requires_grad()) {
                    auto& gt = t.grad();
                    for (int b = 0; b < B; ++b) {
                        const std::size_t dst = static_cast<std::size_t>(b) * C * plane;
                        const std::size_t src =
                            (static_cast<std::size_t>(b) * tc + c_off) * plane;
                        for (std::size_t i = 0; i < C * plane; ++i) gt[dst + i] += g[src + i];
                    }
                }
                c_off += C;
            }
        });
    }
    return out;
}

inline Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    Tensor out = Tensor::scalar(acc);
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        ComputeGraph::active()->record("sum_all", [xc, oc]() mutable {
            if (!xc.requires_grad()) return;
            const double g = oc.grad()[0];
            if (g == 0.0) return;
            auto& gx = xc.grad();
            for (double& v : gx) v += g;
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& x) {
    const double n = static_cast<double>(x.elements());
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    Tensor out = Tensor::scalar(acc / n);
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        ComputeGraph::active()->record("mean_all", [xc, oc, n]() mutable {
            if (!xc.requires_grad()) return;
            const double g = oc.grad()[0];
            if (g == 0.0) return;
            const double gn = g / n;
            auto& gx = xc.grad();
            for (double& v : gx) v += gn;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution and spatial operations
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
                     int padding) {
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    if (ks.channels() != is.channels()) {
        throw std::invalid_argument("conv2d: kernel expects " + std::to_string(ks.channels()) +
                                    " input channels, input has " + std::to_string(is.channels()));
    }
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    const int B = is.batch(), C = is.channels(), H = is.height(), W = is.width();
    const int OC = ks.batch(), KH = ks.height(), KW = ks.width();
    if (H + 2 * padding < KH || W + 2 * padding < KW) {
        throw std::invalid_argument("conv2d: kernel " + ks.str() + " larger than padded input " +
                                    is.str());
    }
    if (bias.defined()) {
        const Shape want(1, OC, 1, 1);
        if (bias.shape() != want) {
            throw std::invalid_argument("conv2d: bias shape " + bias.shape().str() +
                                        " does not match kernel output channels (" + want.str() +
                                        ")");
        }
    }
    const int OH = (H + 2 * padding - KH) / stride + 1;
    const int OW = (W + 2 * padding - KW) / stride + 1;

    // valid output index range for a given kernel offset; value captures so
    // the backward closure can keep copies
    const auto lo = [padding, stride](int k) {
        const int num = padding - k;
        return num <= 0 ? 0 : (num + stride - 1) / stride;
    };
    const auto hi = [padding, stride](int limit, int k, int omax) {
        const int num = limit - 1 + padding - k;
        return num < 0 ? -1 : std::min(num / stride, omax - 1);
    };

    Tensor out = Tensor::zeros(Shape(B, OC, OH, OW));
    {
        const double* in = input.values().data();
        const double* kp = kernel.values().data();
        double* ov = out.values().data();
        for (int b = 0; b < B; ++b) {
            for (int oc = 0; oc < OC; ++oc) {
                double* oplane = ov + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
                const double bval = bias.defined() ? bias.values()[oc] : 0.0;
                std::fill(oplane, oplane + static_cast<std::size_t>(OH) * OW, bval);
                for (int ic = 0; ic < C; ++ic) {
                    const double* iplane = in + (static_cast<std::size_t>(b) * C + ic) * H * W;
                    const double* kplane =
                        kp + (static_cast<std::size_t>(oc) * C + ic) * KH * KW;
                    for (int kh = 0; kh < KH; ++kh) {
                        const int oh0 = lo(kh), oh1 = hi(H, kh, OH);
                        for (int kw = 0; kw < KW; ++kw) {
                            const double wv = kplane[kh * KW + kw];
                            const int ow0 = lo(kw), ow1 = hi(W, kw, OW);
                            for (int oh = oh0; oh <= oh1; ++oh) {
                                const int ih = oh * stride - padding + kh;
                                const double* irow = iplane + static_cast<std::size_t>(ih) * W;
                                double* orow = oplane + static_cast<std::size_t>(oh) * OW;
                                if (stride == 1) {
                                    const double* ip = irow - padding + kw;
                                    for (int ow = ow0; ow <= ow1; ++ow) orow[ow] += wv * ip[ow];
                                } else {
                                    for (int ow = ow0; ow <= ow1; ++ow) {
                                        orow[ow] += wv * irow[ow * stride - padding + kw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if (detail::tracking({&input, &kernel, &bias})) {
        out.set_requires_grad(true);
        Tensor inc = input, kc = kernel, bc = bias, oc_t = out;
        ComputeGraph::active()->record("conv2d", [inc, kc, bc, oc_t, stride, padding, B, C, H, W,
                                                  OC, KH, KW, OH, OW, lo, hi]() mutable {
            if (!oc_t.grad_nonzero()) return;
            const double* go = oc_t.grad().data();
            if (bc.defined() && bc.requires_grad()) {
                auto& gb = bc.grad();
                for (int oc = 0; oc < OC; ++oc) {
                    double acc = 0.0;
                    for (int b = 0; b < B; ++b) {
                        const double* gplane =
                            go + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
                        for (std::size_t i = 0; i < static_cast<std::size_t>(OH) * OW; ++i) {
                            acc += gplane[i];
                        }
                    }
                    gb[oc] += acc;
                }
            }
            if (kc.requires_grad()) {
                const double* in = inc.values().data();
                auto& gk = kc.grad();
                for (int oc = 0; oc < OC; ++oc) {
                    for (int ic = 0; ic < C; ++ic) {
                        double* gkplane =
                            gk.data() + (static_cast<std::size_t>(oc) * C + ic) * KH * KW;
                        for (int kh = 0; kh < KH; ++kh) {
                            const int oh0 = lo(kh), oh1 = hi(H, kh, OH);
                            for (int kw = 0; kw < KW; ++kw) {
                                const int ow0 = lo(kw), ow1 = hi(W, kw, OW);
                                double acc = 0.0;
                                for (int b = 0; b < B; ++b) {
                                    const double* iplane =
                                        in + (static_cast<std::size_t>(b) * C + ic) * H * W;
                                    const double* gplane =
                                        go + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
                                    for (int oh = oh0; oh <= oh1; ++oh) {
                                        const int ih = oh * stride - padding + kh;
                                        const double* irow =
                                            iplane + static_cast<std::size_t>(ih) * W;
                                        const double* grow =
                                            gplane + static_cast<std::size_t>(oh) * OW;
                                        if (stride == 1) {
                                            const double* ip = irow - padding + kw;
                                            for (int ow = ow0; ow <= ow1; ++ow) {
                                                acc += grow[ow] * ip[ow];
                                            }
                                        } else {
                                            for (int ow = ow0; ow <= ow1; ++ow) {
                                                acc += grow[ow] *
                                                       irow[ow * stride - padding + kw];
                                            }
                                        }
                                    }
                                }
                                gkplane[kh * KW + kw] += acc;
                            }
                        }
                    }
                }
            }
            if (inc.requires_grad()) {
                const double* kp = kc.values().data();
                auto& gi = inc.grad();
                for (int b = 0; b < B; ++b) {
                    for (int oc = 0; oc < OC; ++oc) {
                        const double* gplane =
                            go + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
                        for (int ic = 0; ic < C; ++ic) {
                            double* giplane =
                                gi.data() + (static_cast<std::size_t>(b) * C + ic) * H * W;
                            const double* kplane =
                                kp + (static_cast<std::size_t>(oc) * C + ic) * KH * KW;
                            for (int kh = 0; kh < KH; ++kh) {
                                const int oh0 = lo(kh), oh1 = hi(H, kh, OH);
                                for (int kw = 0; kw < KW; ++kw) {
                                    const double wv = kplane[kh * KW + kw];
                                    if (wv == 0.0) continue;
                                    const int ow0 = lo(kw), ow1 = hi(W, kw, OW);
                                    for (int oh = oh0; oh <= oh1; ++oh) {
                                        const int ih = oh * stride - padding + kh;
                                        double* girow =
                                            giplane + static_cast<std::size_t>(ih) * W;
                                        const double* grow =
                                            gplane + static_cast<std::size_t>(oh) * OW;
                                        if (stride == 1) {
                                            double* gp = girow - padding + kw;
                                            for (int ow = ow0; ow <= ow1; ++ow) {
                                                gp[ow] += wv * grow[ow];
                                            }
                                        } else {
                                            for (int ow = ow0; ow <= ow1; ++ow) {
                                                girow[ow * stride - padding + kw] +=
                                                    wv * grow[ow];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    return conv2d(input, kernel, Tensor(), stride, padding);
}

// Nearest-neighbor 2x upsampling.
inline Tensor upsample2x(const Tensor& x) {
    const Shape& s = x.shape();
    const int B = s.batch(), C = s.channels(), H = s.height(), W = s.width();
    Tensor out = Tensor::zeros(Shape(B, C, 2 * H, 2 * W));
    const double* xv = x.values().data();
    double* ov = out.values().data();
    for (int bc = 0; bc < B * C; ++bc) {
        const double* ip = xv + static_cast<std::size_t>(bc) * H * W;
        double* op = ov + static_cast<std::size_t>(bc) * 4 * H * W;
        for (int h = 0; h < H; ++h) {
            for (int w = 0; w < W; ++w) {
                const double v = ip[h * W + w];
                double* o00 = op + (2 * h) * (2 * W) + 2 * w;
                o00[0] = v;
                o00[1] = v;
                o00[2 * W] = v;
                o00[2 * W + 1] = v;
            }
        }
    }
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        ComputeGraph::active()->record("upsample2x", [xc, oc, B, C, H, W]() mutable {
            if (!oc.grad_nonzero() || !xc.requires_grad()) return;
            const double* g = oc.grad().data();
            double* gx = xc.grad().data();
            for (int bc = 0; bc < B * C; ++bc) {
                const double* gp = g + static_cast<std::size_t>(bc) * 4 * H * W;
                double* gxp = gx + static_cast<std::size_t>(bc) * H * W;
                for (int h = 0; h < H; ++h) {
                    for (int w = 0; w < W; ++w) {
                        const double* g00 = gp + (2 * h) * (2 * W) + 2 * w;
                        gxp[h * W + w] += g00[0] + g00[1] + g00[2 * W] + g00[2 * W + 1];
                    }
                }
            }
        });
    }
    return out;
}

// Pad spatial dims by one pixel of edge replication.
inline Tensor replicate_pad1(const Tensor& x) {
    const Shape& s = x.shape();
    const int B = s.batch(), C = s.channels(), H = s.height(), W = s.width();
    Tensor out = Tensor::zeros(Shape(B, C, H + 2, W + 2));
    const double* xv = x.values().data();
    double* ov = out.values().data();
    const auto cl = [](int v, int n) { return std::min(std::max(v, 0), n - 1); };
    for (int bc = 0; bc < B * C; ++bc) {
        const double* ip = xv + static_cast<std::size_t>(bc) * H * W;
        double* op = ov + static_cast<std::size_t>(bc) * (H + 2) * (W + 2);
        for (int h = 0; h < H + 2; ++h) {
            const int ih = cl(h - 1, H);
            for (int w = 0; w < W + 2; ++w) {
                op[h * (W + 2) + w] = ip[ih * W + cl(w - 1, W)];
            }
        }
    }
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        ComputeGraph::active()->record("replicate_pad1", [xc, oc, B, C, H, W]() mutable {
            if (!oc.grad_nonzero() || !xc.requires_grad()) return;
            const double* g = oc.grad().data();
            double* gx = xc.grad().data();
            const auto cl = [](int v, int n) { return std::min(std::max(v, 0), n - 1); };
            for (int bc = 0; bc < B * C; ++bc) {
                const double* gp = g + static_cast<std::size_t>(bc) * (H + 2) * (W + 2);
                double* gxp = gx + static_cast<std::size_t>(bc) * H * W;
                for (int h = 0; h < H + 2; ++h) {
                    const int ih = cl(h - 1, H);
                    for (int w = 0; w < W + 2; ++w) {
                        gxp[ih * W + cl(w - 1, W)] += gp[h * (W + 2) + w];
                    }
                }
            }
        });
    }
    return out;
}

// Sobel responses of a single-channel map, replicate-padded so the output
// keeps the input resolution. Returns (gx, gy).
inline std::pair<Tensor, Tensor> sobel_gradients(const Tensor& map) {
    const Shape& s = map.shape();
    if (s.channels() != 1) {
        throw std::invalid_argument("sobel_gradients: expected 1 channel, got " + s.str());
    }
    if (s.height() < 3 || s.width() < 3) {
        throw std::invalid_argument("sobel_gradients: map " + s.str() + " smaller than 3x3");
    }
    static const std::vector<double> kx = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    static const std::vector<double> ky = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
    const Tensor kxt = Tensor::from_values(Shape(1, 1, 3, 3), kx);
    const Tensor kyt = Tensor::from_values(Shape(1, 1, 3, 3), ky);
    Tensor padded = replicate_pad1(map);
    return {conv2d(padded, kxt, 1, 0), conv2d(padded, kyt, 1, 0)};
}

// ---------------------------------------------------------------------------
// Slot softmax
// ---------------------------------------------------------------------------

// Plain softmax over per-slot scores, max-subtracted for stability.
inline std::vector<double> softmax_over_slots(const std::vector<double>& scores) {
    if (scores.empty()) throw std::invalid_argument("softmax_over_slots: empty score list");
    double mx = scores[0];
    for (double v : scores) {
        if (!std::isfinite(v)) throw std::invalid_argument("softmax_over_slots: non-finite score");
        mx = std::max(mx, v);
    }
    std::vector<double> out(scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

// Differentiable softmax over a list of scalar tensors.
inline std::vector<Tensor> softmax_slots(const std::vector<Tensor>& scores) {
    std::vector<double> vals;
    vals.reserve(scores.size());
    for (const Tensor& t : scores) vals.push_back(t.value());
    const std::vector<double> alpha = softmax_over_slots(vals);
    std::vector<Tensor> out;
    out.reserve(alpha.size());
    for (double a : alpha) out.push_back(Tensor::scalar(a));
    bool track = false;
    if (ComputeGraph::active()) {
        for (const Tensor& t : scores) track = track || t.requires_grad();
    }
    if (track) {
        for (Tensor& t : out) t.set_requires_grad(true);
        std::vector<Tensor> sc = scores, oc = out;
        ComputeGraph::active()->record("softmax_slots", [sc, oc]() mutable {
            const std::size_t n = oc.size();
            double dot = 0.0;
            bool any = false;
            for (std::size_t i = 0; i < n; ++i) {
                const double gi = oc[i].grad()[0];
                any = any || gi != 0.0;
                dot += gi * oc[i].values()[0];
            }
            if (!any) return;
            for (std::size_t i = 0; i < n; ++i) {
                if (!sc[i].requires_grad()) continue;
                const double ai = oc[i].values()[0];
                sc[i].grad()[0] += ai * (oc[i].grad()[0] - dot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Plain (non-differentiable) resampling helpers
// ---------------------------------------------------------------------------

inline Tensor downsample_nearest(const Tensor& x, int factor) {
    const Shape& s = x.shape();
    if (factor < 1 || s.height() % factor != 0 || s.width() % factor != 0) {
        throw std::invalid_argument("downsample_nearest: factor " + std::to_string(factor) +
                                    " does not divide " + s.str());
    }
    const int B = s.batch(), C = s.channels(), H = s.height() / factor, W = s.width() / factor;
    Tensor out = Tensor::zeros(Shape(B, C, H, W));
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            for (int h = 0; h < H; ++h) {
                for (int w = 0; w < W; ++w) {
                    out.at(b, c, h, w) = x.at(b, c, h * factor, w * factor);
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

// Central-difference gradient of a tensor-to-scalar function. The tensor is
// perturbed in place and restored, so f may close over the same storage
// (e.g. a live model parameter) and ignore its argument.
inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, Tensor x,
                                     double eps = 1e-6) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_difference_grad: eps must be positive");
    Tensor g = Tensor::zeros(x.shape());
    auto& v = x.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double keep = v[i];
        v[i] = keep + eps;
        const double fp = f(x);
        v[i] = keep - eps;
        const double fm = f(x);
        v[i] = keep;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::runtime_error("finite_difference_grad: non-finite evaluation at index " +
                                     std::to_string(i));
        }
        g.values()[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

// Relative error with a denominator floor, used by the gradient checks.
inline double relative_error(double a, double b, double floor = 1e-4) {
    return std::fabs(a - b) / std::max({floor, std::fabs(a), std::fabs(b)});
}

}  // namespace somdepth
