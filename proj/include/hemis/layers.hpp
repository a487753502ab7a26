#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hemis/tensor.hpp"

namespace hemis {

// ---------------------------------------------------------------------------
// 2D convolution, zero-padded, stride 1, odd kernel: spatial size preserved.
// Sums accumulate in double regardless of T so the f32 path stays within
// 1e-6 of a double oracle; per-element accumulation order is fixed
// (channel, then kernel row, then kernel column), which keeps results
// bitwise reproducible.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvLayer {
    Tensor<T> kernels;  // [out_maps, in_maps, k, k]
    Tensor<T> bias;     // [out_maps]

    std::size_t out_maps() const { return kernels.dim(0); }
    std::size_t in_maps() const { return kernels.dim(1); }
    std::size_t kernel_size() const { return kernels.dim(2); }
};

/// He-style initialization: kernels ~ Normal(0, sqrt(2 / fan_in)), zero bias.
template <typename T>
ConvLayer<T> make_conv_layer(std::size_t out_maps, std::size_t in_maps, std::size_t k, Rng& rng) {
    if (k % 2 == 0) {
        throw std::invalid_argument("conv: kernel size must be odd");
    }
    const double fan_in = static_cast<double>(in_maps * k * k);
    ConvLayer<T> layer;
    layer.kernels = randn<T>({out_maps, in_maps, k, k}, rng, std::sqrt(2.0 / fan_in));
    layer.bias = zeros<T>({out_maps});
    return layer;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvLayer<T>& layer) {
    if (x.rank() != 3) {
        throw std::invalid_argument("conv2d_forward: input must be [C,H,W]");
    }
    if (x.dim(0) != layer.in_maps()) {
        throw std::invalid_argument("conv2d_forward: channel mismatch");
    }
    const std::ptrdiff_t cin = static_cast<std::ptrdiff_t>(x.dim(0));
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(x.dim(1));
    const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(x.dim(2));
    const std::ptrdiff_t cout = static_cast<std::ptrdiff_t>(layer.out_maps());
    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(layer.kernel_size());
    const std::ptrdiff_t pad = (k - 1) / 2;

    Tensor<T> out({static_cast<std::size_t>(cout), static_cast<std::size_t>(h),
                   static_cast<std::size_t>(w)});
    std::vector<double> acc(static_cast<std::size_t>(h * w));
    const T* xp = x.data();
    const T* kp = layer.kernels.data();
    T* op = out.data();

    for (std::ptrdiff_t o = 0; o < cout; ++o) {
        std::fill(acc.begin(), acc.end(), static_cast<double>(layer.bias(static_cast<std::size_t>(o))));
        for (std::ptrdiff_t c = 0; c < cin; ++c) {
            const T* xc = xp + c * h * w;
            const T* kc = kp + ((o * cin + c) * k) * k;
            for (std::ptrdiff_t u = 0; u < k; ++u) {
                const std::ptrdiff_t di = u - pad;
                const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -di);
                const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(h, h - di);
                for (std::ptrdiff_t v = 0; v < k; ++v) {
                    const std::ptrdiff_t dj = v - pad;
                    const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dj);
                    const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(w, w - dj);
                    const double weight = static_cast<double>(kc[u * k + v]);
                    for (std::ptrdiff_t i = i0; i < i1; ++i) {
                        double* arow = acc.data() + i * w;
                        const T* xrow = xc + (i + di) * w + dj;
                        for (std::ptrdiff_t j = j0; j < j1; ++j) {
                            arow[j] += weight * static_cast<double>(xrow[j]);
                        }
                    }
                }
            }
        }
        T* orow = op + o * h * w;
        for (std::ptrdiff_t i = 0; i < h * w; ++i) {
            orow[i] = static_cast<T>(acc[static_cast<std::size_t>(i)]);
        }
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> input;    // [C_in,H,W]
    Tensor<T> kernels;  // [C_out,C_in,k,k]
    Tensor<T> bias;     // [C_out]
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                             const ConvLayer<T>& layer) {
    if (grad_out.rank() != 3 || x.rank() != 3) {
        throw std::invalid_argument("conv2d_backward: tensors must be [C,H,W]");
    }
    if (grad_out.dim(0) != layer.out_maps() || grad_out.dim(1) != x.dim(1) ||
        grad_out.dim(2) != x.dim(2) || x.dim(0) != layer.in_maps()) {
        throw std::invalid_argument("conv2d_backward: shape mismatch with forward");
    }
    const std::ptrdiff_t cin = static_cast<std::ptrdiff_t>(x.dim(0));
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(x.dim(1));
    const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(x.dim(2));
    const std::ptrdiff_t cout = static_cast<std::ptrdiff_t>(layer.out_maps());
    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(layer.kernel_size());
    const std::ptrdiff_t pad = (k - 1) / 2;

    ConvGrads<T> grads;
    grads.input = Tensor<T>(x.shape());
    grads.kernels = Tensor<T>(layer.kernels.shape());
    grads.bias = Tensor<T>(layer.bias.shape());

    const T* gp = grad_out.data();
    const T* xp = x.data();
    const T* kp = layer.kernels.data();

    // bias: plain sum over the output map
    for (std::ptrdiff_t o = 0; o < cout; ++o) {
        const T* grow = gp + o * h * w;
        double s = 0.0;
        for (std::ptrdiff_t i = 0; i < h * w; ++i) {
            s += static_cast<double>(grow[i]);
        }
        grads.bias(static_cast<std::size_t>(o)) = static_cast<T>(s);
    }

    // kernels: correlation of grad_out with the padded input
    for (std::ptrdiff_t o = 0; o < cout; ++o) {
        const T* grow = gp + o * h * w;
        for (std::ptrdiff_t c = 0; c < cin; ++c) {
            const T* xc = xp + c * h * w;
            for (std::ptrdiff_t u = 0; u < k; ++u) {
                const std::ptrdiff_t di = u - pad;
                const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -di);
                const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(h, h - di);
                for (std::ptrdiff_t v = 0; v < k; ++v) {
                    const std::ptrdiff_t dj = v - pad;
                    const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dj);
                    const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(w, w - dj);
                    double s = 0.0;
                    for (std::ptrdiff_t i = i0; i < i1; ++i) {
                        const T* ga = grow + i * w;
                        const T* xa = xc + (i + di) * w + dj;
                        for (std::ptrdiff_t j = j0; j < j1; ++j) {
                            s += static_cast<double>(ga[j]) * static_cast<double>(xa[j]);
                        }
                    }
                    grads.kernels(static_cast<std::size_t>(o), static_cast<std::size_t>(c),
                                  static_cast<std::size_t>(u), static_cast<std::size_t>(v)) =
                        static_cast<T>(s);
                }
            }
        }
    }

    // input: full correlation with flipped kernels, accumulated per channel
    std::vector<double> acc(static_cast<std::size_t>(h * w));
    T* gxp = grads.input.data();
    for (std::ptrdiff_t c = 0; c < cin; ++c) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::ptrdiff_t o = 0; o < cout; ++o) {
            const T* grow = gp + o * h * w;
            const T* kc = kp + ((o * cin + c) * k) * k;
            for (std::ptrdiff_t u = 0; u < k; ++u) {
                const std::ptrdiff_t di = u - pad;  // x index = out index + di
                const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, di);
                const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(h, h + di);
                for (std::ptrdiff_t v = 0; v < k; ++v) {
                    const std::ptrdiff_t dj = v - pad;
                    const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, dj);
                    const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(w, w + dj);
                    const double weight = static_cast<double>(kc[u * k + v]);
                    for (std::ptrdiff_t i = i0; i < i1; ++i) {
                        double* arow = acc.data() + i * w;
                        const T* ga = grow + (i - di) * w - dj;
                        for (std::ptrdiff_t j = j0; j < j1; ++j) {
                            arow[j] += weight * static_cast<double>(ga[j]);
                        }
                    }
                }
            }
        }
        T* gxc = gxp + c * h * w;
        for (std::ptrdiff_t i = 0; i < h * w; ++i) {
            gxc[i] = static_cast<T>(acc[static_cast<std::size_t>(i)]);
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xp = x.data();
    T* op = out.data();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        op[i] = xp[i] > T(0) ? xp[i] : T(0);
    }
    return out;
}

/// Passes gradient where x > 0; the subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x) {
    if (!same_shape(grad_out, x)) {
        throw std::invalid_argument("relu_backward: shape mismatch");
    }
    Tensor<T> out(x.shape());
    const T* gp = grad_out.data();
    const T* xp = x.data();
    T* op = out.data();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        op[i] = xp[i] > T(0) ? gp[i] : T(0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2x2 max-pooling with stride 1. The output keeps the input's spatial size:
// the window anchored at (i,j) reads the edge-replicated cells
// (min(i+di,H-1), min(j+dj,W-1)). Backward routes the gradient to the first
// window cell (scan order) that attains the maximum.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2d_s1_forward(const Tensor<T>& x) {
    if (x.rank() != 3) {
        throw std::invalid_argument("maxpool2d_s1_forward: input must be [C,H,W]");
    }
    const std::size_t cc = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> out(x.shape());
    for (std::size_t c = 0; c < cc; ++c) {
        const T* xc = x.data() + c * h * w;
        T* oc = out.data() + c * h * w;
        for (std::size_t i = 0; i < h; ++i) {
            const std::size_t i2 = std::min(i + 1, h - 1);
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t j2 = std::min(j + 1, w - 1);
                T m = xc[i * w + j];
                m = std::max(m, xc[i * w + j2]);
                m = std::max(m, xc[i2 * w + j]);
                m = std::max(m, xc[i2 * w + j2]);
                oc[i * w + j] = m;
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> maxpool2d_s1_backward(const Tensor<T>& grad_out, const Tensor<T>& x) {
    if (!same_shape(grad_out, x)) {
        throw std::invalid_argument("maxpool2d_s1_backward: shape mismatch");
    }
    const std::size_t cc = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> out(x.shape());
    for (std::size_t c = 0; c < cc; ++c) {
        const T* xc = x.data() + c * h * w;
        const T* gc = grad_out.data() + c * h * w;
        T* oc = out.data() + c * h * w;
        for (std::size_t i = 0; i < h; ++i) {
            const std::size_t i2 = std::min(i + 1, h - 1);
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t j2 = std::min(j + 1, w - 1);
                const std::size_t cells[4] = {i * w + j, i * w + j2, i2 * w + j, i2 * w + j2};
                std::size_t best = cells[0];
                for (int s = 1; s < 4; ++s) {
                    if (xc[cells[s]] > xc[best]) {
                        best = cells[s];
                    }
                }
                oc[best] += gc[i * w + j];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dense (affine) layer, used by the per-pixel imputation MLPs.
// ---------------------------------------------------------------------------

template <typename T>
struct DenseLayer {
    Tensor<T> weights;  // [out, in]
    Tensor<T> bias;     // [out]

    std::size_t out_features() const { return weights.dim(0); }
    std::size_t in_features() const { return weights.dim(1); }
};

template <typename T>
DenseLayer<T> make_dense_layer(std::size_t out_features, std::size_t in_features, Rng& rng) {
    DenseLayer<T> layer;
    layer.weights = randn<T>({out_features, in_features}, rng,
                             std::sqrt(2.0 / static_cast<double>(in_features)));
    layer.bias = zeros<T>({out_features});
    return layer;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseLayer<T>& layer) {
    if (x.rank() != 1 || x.dim(0) != layer.in_features()) {
        throw std::invalid_argument("dense_forward: dimension mismatch");
    }
    const std::size_t out_n = layer.out_features();
    const std::size_t in_n = layer.in_features();
    Tensor<T> out({out_n});
    const T* wp = layer.weights.data();
    const T* xp = x.data();
    for (std::size_t o = 0; o < out_n; ++o) {
        double s = static_cast<double>(layer.bias(o));
        const T* wrow = wp + o * in_n;
        for (std::size_t i = 0; i < in_n; ++i) {
            s += static_cast<double>(wrow[i]) * static_cast<double>(xp[i]);
        }
        out(o) = static_cast<T>(s);
    }
    return out;
}

template <typename T>
struct DenseGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                             const DenseLayer<T>& layer) {
    if (grad_out.rank() != 1 || grad_out.dim(0) != layer.out_features() || x.rank() != 1 ||
        x.dim(0) != layer.in_features()) {
        throw std::invalid_argument("dense_backward: dimension mismatch");
    }
    const std::size_t out_n = layer.out_features();
    const std::size_t in_n = layer.in_features();
    DenseGrads<T> grads;
    grads.input = Tensor<T>({in_n});
    grads.weights = Tensor<T>({out_n, in_n});
    grads.bias = Tensor<T>({out_n});
    const T* gp = grad_out.data();
    const T* xp = x.data();
    const T* wp = layer.weights.data();
    for (std::size_t o = 0; o < out_n; ++o) {
        grads.bias(o) = gp[o];
        T* gwrow = grads.weights.data() + o * in_n;
        for (std::size_t i = 0; i < in_n; ++i) {
            gwrow[i] = gp[o] * xp[i];
        }
    }
    for (std::size_t i = 0; i < in_n; ++i) {
        double s = 0.0;
        for (std::size_t o = 0; o < out_n; ++o) {
            s += static_cast<double>(gp[o]) * static_cast<double>(wp[o * in_n + i]);
        }
        grads.input(i) = static_cast<T>(s);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Pixelwise softmax and weighted cross-entropy.
// ---------------------------------------------------------------------------

/// Softmax across the class axis of [L,H,W] logits, max-subtracted per pixel.
template <typename T>
Tensor<T> pixel_softmax(const Tensor<T>& logits) {
    if (logits.rank() != 3) {
        throw std::invalid_argument("pixel_softmax: logits must be [L,H,W]");
    }
    const std::size_t L = logits.dim(0);
    if (L < 2) {
        throw std::invalid_argument("pixel_softmax: need at least two classes");
    }
    const std::size_t hw = logits.dim(1) * logits.dim(2);
    Tensor<T> out(logits.shape());
    const T* lp = logits.data();
    T* op = out.data();
    for (std::size_t p = 0; p < hw; ++p) {
        T m = lp[p];
        for (std::size_t c = 1; c < L; ++c) {
            m = std::max(m, lp[c * hw + p]);
        }
        double z = 0.0;
        for (std::size_t c = 0; c < L; ++c) {
            const double e = std::exp(static_cast<double>(lp[c * hw + p] - m));
            op[c * hw + p] = static_cast<T>(e);
            z += e;
        }
        for (std::size_t c = 0; c < L; ++c) {
            op[c * hw + p] = static_cast<T>(static_cast<double>(op[c * hw + p]) / z);
        }
    }
    return out;
}

template <typename T>
struct CrossEntropyResult {
    double loss = 0.0;
    Tensor<T> grad_logits;  // gradient w.r.t. the softmax inputs
};

/// Weighted mean of -log p(true class) over pixels; `probs` must come from
/// pixel_softmax. The returned gradient is taken w.r.t. the logits:
/// (probs - onehot) * weight / sum(weights). Probabilities are floored at
/// 1e-12 inside the log only.
template <typename T>
CrossEntropyResult<T> cross_entropy_loss(const Tensor<T>& probs, const Tensor<T>& labels,
                                         const Tensor<T>& pixel_weights) {
    if (probs.rank() != 3) {
        throw std::invalid_argument("cross_entropy_loss: probs must be [L,H,W]");
    }
    const std::size_t L = probs.dim(0);
    const std::size_t h = probs.dim(1), w = probs.dim(2);
    if (labels.rank() != 2 || labels.dim(0) != h || labels.dim(1) != w ||
        !same_shape(labels, pixel_weights)) {
        throw std::invalid_argument("cross_entropy_loss: labels/weights must be [H,W]");
    }
    const std::size_t hw = h * w;
    const T* pp = probs.data();
    const T* lp = labels.data();
    const T* wp = pixel_weights.data();

    double weight_sum = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
        weight_sum += static_cast<double>(wp[p]);
    }
    if (!(weight_sum > 0.0)) {
        throw std::invalid_argument("cross_entropy_loss: pixel weights must sum to > 0");
    }

    CrossEntropyResult<T> result;
    result.grad_logits = Tensor<T>(probs.shape());
    T* gp = result.grad_logits.data();
    double loss = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
        const double lv = static_cast<double>(lp[p]);
        const long cls = std::lround(lv);
        if (cls < 0 || static_cast<std::size_t>(cls) >= L || lv != static_cast<double>(cls)) {
            throw std::invalid_argument("cross_entropy_loss: label out of range at pixel " +
                                        std::to_string(p));
        }
        const double weight = static_cast<double>(wp[p]);
        const double p_true =
            std::max(static_cast<double>(pp[static_cast<std::size_t>(cls) * hw + p]), 1e-12);
        loss += -std::log(p_true) * weight;
        for (std::size_t c = 0; c < L; ++c) {
            const double onehot = (c == static_cast<std::size_t>(cls)) ? 1.0 : 0.0;
            gp[c * hw + p] = static_cast<T>(
                (static_cast<double>(pp[c * hw + p]) - onehot) * weight / weight_sum);
        }
    }
    result.loss = loss / weight_sum;
    return result;
}

// ---------------------------------------------------------------------------
// Nesterov-momentum SGD with L2 weight decay folded into the gradient and
// inverse-time learning-rate decay: lr_t = lr0 / (1 + decay * t), t counted
// from 0 over optimizer steps.
// ---------------------------------------------------------------------------

template <typename T>
struct SgdState {
    T learning_rate = T(0.001);
    T lr_decay = T(0.0001);
    T momentum = T(0.9);
    T weight_decay = T(0);
    std::uint64_t step = 0;
    std::vector<Tensor<T>> velocity;  // sized lazily to mirror the parameters

    double current_lr() const {
        return static_cast<double>(learning_rate) /
               (1.0 + static_cast<double>(lr_decay) * static_cast<double>(step));
    }
};

template <typename T>
void sgd_nesterov_step(const std::vector<Tensor<T>*>& params,
                       const std::vector<const Tensor<T>*>& grads, SgdState<T>& state) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("sgd_nesterov_step: parameter/gradient count mismatch");
    }
    if (state.velocity.empty()) {
        state.velocity.reserve(params.size());
        for (const Tensor<T>* p : params) {
            state.velocity.emplace_back(p->shape());
        }
    }
    if (state.velocity.size() != params.size()) {
        throw std::invalid_argument("sgd_nesterov_step: velocity count mismatch");
    }
    const T lr = static_cast<T>(state.current_lr());
    const T mom = state.momentum;
    const T wd = state.weight_decay;
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor<T>& p = *params[t];
        const Tensor<T>& g = *grads[t];
        Tensor<T>& v = state.velocity[t];
        if (!same_shape(p, g) || !same_shape(p, v)) {
            throw std::invalid_argument("sgd_nesterov_step: shape mismatch at tensor " +
                                        std::to_string(t));
        }
        T* pp = p.data();
        const T* gp = g.data();
        T* vp = v.data();
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const T geff = gp[i] + wd * pp[i];
            vp[i] = mom * vp[i] - lr * geff;
            pp[i] += mom * vp[i] - lr * geff;
        }
    }
    ++state.step;
}

// ---------------------------------------------------------------------------
// Central-finite-difference gradient checking (double precision only).
// ---------------------------------------------------------------------------

struct GradCheckRow {
    std::string name;  // "<tensor>[i]"
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckRow> rows;
    double max_rel_error = 0.0;

    double fraction_below(double tol) const {
        if (rows.empty()) {
            return 1.0;
        }
        std::size_t n = 0;
        for (const auto& r : rows) {
            if (r.rel_error < tol) {
                ++n;
            }
        }
        return static_cast<double>(n) / static_cast<double>(rows.size());
    }

    void write_tsv(const std::string& path) const;
};

using NamedParams = std::vector<std::pair<std::string, Tensor<double>*>>;

/// Relative error floor: differences between gradients below this magnitude
/// are compared absolutely, not relatively.
inline constexpr double kGradCheckFloor = 1e-6;

/// Compares analytic gradients against central differences of loss_fn, which
/// must be a deterministic function of the current parameter values.
/// analytic_grads[i] pairs with params[i].
GradCheckReport grad_check(const std::function<double()>& loss_fn, const NamedParams& params,
                           const std::vector<const Tensor<double>*>& analytic_grads, double eps);

}  // namespace hemis
