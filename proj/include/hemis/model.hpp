#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hemis/layers.hpp"
#include "hemis/tensor.hpp"

namespace hemis {

// ---------------------------------------------------------------------------
// Modality availability. A mask is a set: only which indices are present
// matters, never an order.
// ---------------------------------------------------------------------------

class ModalityMask {
public:
    ModalityMask() = default;
    explicit ModalityMask(std::size_t n_modalities, bool available = true)
        : available_(n_modalities, available ? 1 : 0) {}

    static ModalityMask full(std::size_t n) { return ModalityMask(n, true); }

    /// Bit k of `bits` marks modality k available.
    static ModalityMask from_bits(std::uint64_t bits, std::size_t n) {
        ModalityMask m(n, false);
        for (std::size_t k = 0; k < n; ++k) {
            m.available_[k] = (bits >> k) & 1u;
        }
        return m;
    }

    std::uint64_t bits() const {
        std::uint64_t b = 0;
        for (std::size_t k = 0; k < size(); ++k) {
            if (available_[k]) {
                b |= std::uint64_t{1} << k;
            }
        }
        return b;
    }

    std::size_t size() const { return available_.size(); }
    bool operator[](std::size_t k) const { return available_.at(k) != 0; }
    void set(std::size_t k, bool v) { available_.at(k) = v ? 1 : 0; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : available_) {
            n += b;
        }
        return n;
    }
    bool any() const { return count() > 0; }
    bool all() const { return count() == size(); }

    bool operator==(const ModalityMask& other) const { return available_ == other.available_; }

    /// Compact text form, e.g. "1011" (modality 0 leftmost).
    std::string to_string() const {
        std::string s;
        s.reserve(size());
        for (auto b : available_) {
            s.push_back(b ? '1' : '0');
        }
        return s;
    }

private:
    std::vector<std::uint8_t> available_;
};

// ---------------------------------------------------------------------------
// Architecture hyperparameters. Defaults follow the segmentation network:
// four imaging modalities, 48 feature maps in both back-end stages, 16 in
// the fusion stage, 5x5 kernels, four target classes.
// ---------------------------------------------------------------------------

struct HemisArch {
    std::size_t n_modalities = 4;
    std::size_t f1 = 48;
    std::size_t f2 = 48;
    std::size_t f3 = 16;
    std::size_t kernel = 5;
    std::size_t n_classes = 4;
    std::vector<std::string> modality_names;  // sized n_modalities; defaulted if empty

    void validate() const;
    bool operator==(const HemisArch&) const = default;
};

// ---------------------------------------------------------------------------
// Parameters. Each modality owns two conv stages; the front end is shared.
// The same structure doubles as gradient storage (zeros_like + accumulate).
// ---------------------------------------------------------------------------

template <typename T>
struct HemisParams {
    HemisArch arch;
    std::vector<ConvLayer<T>> c1;  // per modality: 1 -> F1
    std::vector<ConvLayer<T>> c2;  // per modality: F1 -> F2
    ConvLayer<T> c3;               // 2*F2 -> F3
    ConvLayer<T> c4;               // F3 -> L
};

/// Draw order is fixed (c1/c2 per modality ascending, then c3, then c4) so a
/// seed fully determines the weights.
template <typename T>
HemisParams<T> init_params(const HemisArch& arch, Rng& rng) {
    arch.validate();
    HemisParams<T> p;
    p.arch = arch;
    if (p.arch.modality_names.empty()) {
        for (std::size_t k = 0; k < arch.n_modalities; ++k) {
            p.arch.modality_names.push_back("mod" + std::to_string(k));
        }
    }
    for (std::size_t k = 0; k < arch.n_modalities; ++k) {
        p.c1.push_back(make_conv_layer<T>(arch.f1, 1, arch.kernel, rng));
        p.c2.push_back(make_conv_layer<T>(arch.f2, arch.f1, arch.kernel, rng));
    }
    p.c3 = make_conv_layer<T>(arch.f3, 2 * arch.f2, arch.kernel, rng);
    p.c4 = make_conv_layer<T>(arch.n_classes, arch.f3, arch.kernel, rng);
    return p;
}

template <typename T>
HemisParams<T> zeros_like(const HemisParams<T>& src) {
    HemisParams<T> p;
    p.arch = src.arch;
    for (std::size_t k = 0; k < src.c1.size(); ++k) {
        p.c1.push_back({Tensor<T>(src.c1[k].kernels.shape()), Tensor<T>(src.c1[k].bias.shape())});
        p.c2.push_back({Tensor<T>(src.c2[k].kernels.shape()), Tensor<T>(src.c2[k].bias.shape())});
    }
    p.c3 = {Tensor<T>(src.c3.kernels.shape()), Tensor<T>(src.c3.bias.shape())};
    p.c4 = {Tensor<T>(src.c4.kernels.shape()), Tensor<T>(src.c4.bias.shape())};
    return p;
}

/// Stable name -> tensor view, the canonical parameter order for the
/// optimizer, serialization, and gradient checking.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(HemisParams<T>& p) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t k = 0; k < p.c1.size(); ++k) {
        const std::string prefix = "mod" + std::to_string(k);
        out.emplace_back(prefix + ".c1.kernels", &p.c1[k].kernels);
        out.emplace_back(prefix + ".c1.bias", &p.c1[k].bias);
        out.emplace_back(prefix + ".c2.kernels", &p.c2[k].kernels);
        out.emplace_back(prefix + ".c2.bias", &p.c2[k].bias);
    }
    out.emplace_back("frontend.c3.kernels", &p.c3.kernels);
    out.emplace_back("frontend.c3.bias", &p.c3.bias);
    out.emplace_back("frontend.c4.kernels", &p.c4.kernels);
    out.emplace_back("frontend.c4.bias", &p.c4.bias);
    return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors(const HemisParams<T>& p) {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    auto& mut = const_cast<HemisParams<T>&>(p);
    for (auto& [name, tensor] : named_tensors(mut)) {
        out.emplace_back(name, tensor);
    }
    return out;
}

/// grads: accumulate `src` scaled by `s` into `dst` (same structure).
template <typename T>
void axpy_params(HemisParams<T>& dst, const HemisParams<T>& src, double s) {
    auto d = named_tensors(dst);
    auto g = named_tensors(const_cast<HemisParams<T>&>(src));
    if (d.size() != g.size()) {
        throw std::invalid_argument("axpy_params: structure mismatch");
    }
    for (std::size_t t = 0; t < d.size(); ++t) {
        Tensor<T>& a = *d[t].second;
        const Tensor<T>& b = *g[t].second;
        if (!same_shape(a, b)) {
            throw std::invalid_argument("axpy_params: shape mismatch at " + d[t].first);
        }
        T* ap = a.data();
        const T* bp = b.data();
        for (std::size_t i = 0; i < a.numel(); ++i) {
            ap[i] += static_cast<T>(s * static_cast<double>(bp[i]));
        }
    }
}

// ---------------------------------------------------------------------------
// Abstraction layer: first and second moments across available modalities.
// ---------------------------------------------------------------------------

template <typename T>
struct FusionMoments {
    Tensor<T> mean;  // [F2,H,W]
    Tensor<T> var;   // [F2,H,W]
};

/// Mean and unbiased variance across the listed stacks, elementwise. The sum
/// runs in list order; callers present stacks in ascending modality index so
/// the result depends only on the available set. With a single stack the
/// variance is exactly zero by definition.
template <typename T>
FusionMoments<T> fuse(const std::vector<const Tensor<T>*>& stacks) {
    if (stacks.empty()) {
        throw std::invalid_argument("fuse: need at least one stack");
    }
    for (const auto* s : stacks) {
        if (!same_shape(*s, *stacks[0])) {
            throw std::invalid_argument("fuse: shape mismatch between stacks");
        }
    }
    const std::size_t n = stacks.size();
    const std::size_t numel = stacks[0]->numel();
    FusionMoments<T> m;
    m.mean = Tensor<T>(stacks[0]->shape());
    m.var = Tensor<T>(stacks[0]->shape());
    T* meanp = m.mean.data();
    T* varp = m.var.data();
    for (std::size_t i = 0; i < numel; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            s += static_cast<double>(stacks[k]->data()[i]);
        }
        const double mu = s / static_cast<double>(n);
        meanp[i] = static_cast<T>(mu);
        if (n >= 2) {
            double sq = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const double d = static_cast<double>(stacks[k]->data()[i]) - mu;
                sq += d * d;
            }
            varp[i] = static_cast<T>(sq / static_cast<double>(n - 1));
        }
    }
    return m;
}

/// d mean / d stack_k = 1/|K|; d var / d stack_k = 2 (stack_k - mean)/(|K|-1)
/// (the cross term through the mean cancels because deviations sum to zero).
/// With |K| = 1 the variance is constant, so only the mean path carries.
template <typename T>
std::vector<Tensor<T>> fuse_backward(const Tensor<T>& grad_mean, const Tensor<T>& grad_var,
                                     const std::vector<const Tensor<T>*>& stacks,
                                     const FusionMoments<T>& moments) {
    if (stacks.empty()) {
        throw std::invalid_argument("fuse_backward: need at least one stack");
    }
    if (!same_shape(grad_mean, *stacks[0]) || !same_shape(grad_var, *stacks[0]) ||
        !same_shape(moments.mean, *stacks[0])) {
        throw std::invalid_argument("fuse_backward: shape mismatch with forward");
    }
    const std::size_t n = stacks.size();
    const std::size_t numel = stacks[0]->numel();
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<Tensor<T>> grads;
    grads.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        Tensor<T> g(stacks[0]->shape());
        T* gp = g.data();
        const T* gm = grad_mean.data();
        if (n == 1) {
            for (std::size_t i = 0; i < numel; ++i) {
                gp[i] = gm[i];
            }
        } else {
            const T* gv = grad_var.data();
            const T* sp = stacks[k]->data();
            const T* mp = moments.mean.data();
            const double inv_bessel = 2.0 / static_cast<double>(n - 1);
            for (std::size_t i = 0; i < numel; ++i) {
                const double dv = static_cast<double>(sp[i]) - static_cast<double>(mp[i]);
                gp[i] = static_cast<T>(static_cast<double>(gm[i]) * inv_n +
                                       static_cast<double>(gv[i]) * inv_bessel * dv);
            }
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Forward pass with an optional tape of intermediates for backward.
// ---------------------------------------------------------------------------

template <typename T>
struct HemisTape {
    struct Backend {
        Tensor<T> input;   // [1,H,W]
        Tensor<T> pre1;    // conv1 output
        Tensor<T> act1;    // relu
        Tensor<T> pre2;    // conv2 output
        Tensor<T> act2;    // relu
        Tensor<T> pooled;  // maxpool, the fused stack
    };
    std::vector<std::optional<Backend>> backend;  // index = modality; absent -> nullopt
    FusionMoments<T> moments;
    Tensor<T> concat;  // [2*F2,H,W], mean stack then var stack
    Tensor<T> pre3;
    Tensor<T> act3;
    Tensor<T> logits;
    Tensor<T> probs;
};

/// One modality through its private pipeline:
/// maxpool(relu(conv2(relu(conv1(x))))).
template <typename T>
typename HemisTape<T>::Backend backend_forward_one(const Tensor<T>& image,
                                                   const HemisParams<T>& params, std::size_t k) {
    if (image.rank() != 3 || image.dim(0) != 1) {
        throw std::invalid_argument("backend_forward: modality image must be [1,H,W]");
    }
    typename HemisTape<T>::Backend b;
    b.input = image;
    b.pre1 = conv2d_forward(b.input, params.c1.at(k));
    b.act1 = relu_forward(b.pre1);
    b.pre2 = conv2d_forward(b.act1, params.c2.at(k));
    b.act2 = relu_forward(b.pre2);
    b.pooled = maxpool2d_s1_forward(b.act2);
    return b;
}

/// Back-end stacks for every available modality, ascending index. Absent
/// modalities produce nothing.
template <typename T>
std::vector<std::pair<std::size_t, Tensor<T>>> backend_forward(
    const std::vector<Tensor<T>>& images, const ModalityMask& mask,
    const HemisParams<T>& params) {
    if (mask.size() != params.arch.n_modalities || images.size() != mask.size()) {
        throw std::invalid_argument("backend_forward: modality count mismatch");
    }
    if (!mask.any()) {
        throw std::invalid_argument("backend_forward: mask must keep at least one modality");
    }
    std::vector<std::pair<std::size_t, Tensor<T>>> stacks;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) {
            continue;
        }
        auto b = backend_forward_one(images[k], params, k);
        if (!stacks.empty() && !same_shape(b.pooled, stacks[0].second)) {
            throw std::invalid_argument("backend_forward: modality image sizes differ");
        }
        stacks.emplace_back(k, std::move(b.pooled));
    }
    return stacks;
}

template <typename T>
Tensor<T> concat_moments(const FusionMoments<T>& m) {
    const std::size_t f2 = m.mean.dim(0), h = m.mean.dim(1), w = m.mean.dim(2);
    Tensor<T> cat({2 * f2, h, w});
    std::copy(m.mean.data(), m.mean.data() + m.mean.numel(), cat.data());
    std::copy(m.var.data(), m.var.data() + m.var.numel(), cat.data() + m.mean.numel());
    return cat;
}

/// Front end: softmax(conv4(relu(conv3(concat(mean, var))))).
template <typename T>
Tensor<T> frontend_forward(const FusionMoments<T>& moments, const HemisParams<T>& params) {
    const Tensor<T> cat = concat_moments(moments);
    const Tensor<T> pre3 = conv2d_forward(cat, params.c3);
    const Tensor<T> act3 = relu_forward(pre3);
    const Tensor<T> logits = conv2d_forward(act3, params.c4);
    return pixel_softmax(logits);
}

/// Full network. `tape`, when given, captures every intermediate needed by
/// model_backward. Returns per-pixel class posteriors [L,H,W].
template <typename T>
Tensor<T> model_forward(const std::vector<Tensor<T>>& images, const ModalityMask& mask,
                        const HemisParams<T>& params, HemisTape<T>* tape = nullptr) {
    if (mask.size() != params.arch.n_modalities || images.size() != mask.size()) {
        throw std::invalid_argument("model_forward: modality count mismatch");
    }
    if (!mask.any()) {
        throw std::invalid_argument("model_forward: mask must keep at least one modality");
    }
    std::vector<typename HemisTape<T>::Backend> locals;
    std::vector<std::size_t> indices;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) {
            continue;
        }
        locals.push_back(backend_forward_one(images[k], params, k));
        indices.push_back(k);
        if (locals.size() > 1 && !same_shape(locals.back().pooled, locals[0].pooled)) {
            throw std::invalid_argument("model_forward: modality image sizes differ");
        }
    }
    std::vector<const Tensor<T>*> stack_views;
    stack_views.reserve(locals.size());
    for (const auto& b : locals) {
        stack_views.push_back(&b.pooled);
    }
    FusionMoments<T> moments = fuse(stack_views);
    Tensor<T> cat = concat_moments(moments);
    Tensor<T> pre3 = conv2d_forward(cat, params.c3);
    Tensor<T> act3 = relu_forward(pre3);
    Tensor<T> logits = conv2d_forward(act3, params.c4);
    Tensor<T> probs = pixel_softmax(logits);

    if (tape != nullptr) {
        tape->backend.assign(mask.size(), std::nullopt);
        for (std::size_t t = 0; t < locals.size(); ++t) {
            tape->backend[indices[t]] = std::move(locals[t]);
        }
        tape->moments = std::move(moments);
        tape->concat = std::move(cat);
        tape->pre3 = std::move(pre3);
        tape->act3 = std::move(act3);
        tape->logits = std::move(logits);
        tape->probs = probs;
    }
    return probs;
}

template <typename T>
void axpy_single(Tensor<T>& dst, const Tensor<T>& src) {
    if (!same_shape(dst, src)) {
        throw std::invalid_argument("axpy: shape mismatch");
    }
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < dst.numel(); ++i) {
        d[i] += s[i];
    }
}

/// Backpropagates d loss / d logits through the whole network, accumulating
/// into `grads` (same structure as the parameters). Modalities outside the
/// forward mask receive no contribution.
template <typename T>
void model_backward(const Tensor<T>& grad_logits, const HemisTape<T>& tape,
                    const HemisParams<T>& params, HemisParams<T>& grads) {
    ConvGrads<T> g4 = conv2d_backward(grad_logits, tape.act3, params.c4);
    axpy_single(grads.c4.kernels, g4.kernels);
    axpy_single(grads.c4.bias, g4.bias);

    Tensor<T> grad_pre3 = relu_backward(g4.input, tape.pre3);
    ConvGrads<T> g3 = conv2d_backward(grad_pre3, tape.concat, params.c3);
    axpy_single(grads.c3.kernels, g3.kernels);
    axpy_single(grads.c3.bias, g3.bias);

    const std::size_t f2 = tape.moments.mean.dim(0);
    const std::size_t h = tape.moments.mean.dim(1), w = tape.moments.mean.dim(2);
    Tensor<T> grad_mean({f2, h, w});
    Tensor<T> grad_var({f2, h, w});
    std::copy(g3.input.data(), g3.input.data() + grad_mean.numel(), grad_mean.data());
    std::copy(g3.input.data() + grad_mean.numel(), g3.input.data() + 2 * grad_mean.numel(),
              grad_var.data());

    std::vector<std::size_t> indices;
    std::vector<const Tensor<T>*> stack_views;
    for (std::size_t k = 0; k < tape.backend.size(); ++k) {
        if (tape.backend[k].has_value()) {
            indices.push_back(k);
            stack_views.push_back(&tape.backend[k]->pooled);
        }
    }
    std::vector<Tensor<T>> grad_stacks = fuse_backward(grad_mean, grad_var, stack_views,
                                                       tape.moments);
    for (std::size_t t = 0; t < indices.size(); ++t) {
        const std::size_t k = indices[t];
        const auto& b = *tape.backend[k];
        Tensor<T> grad_act2 = maxpool2d_s1_backward(grad_stacks[t], b.act2);
        Tensor<T> grad_pre2 = relu_backward(grad_act2, b.pre2);
        ConvGrads<T> g2 = conv2d_backward(grad_pre2, b.act1, params.c2[k]);
        axpy_single(grads.c2[k].kernels, g2.kernels);
        axpy_single(grads.c2[k].bias, g2.bias);
        Tensor<T> grad_pre1 = relu_backward(g2.input, b.pre1);
        ConvGrads<T> g1 = conv2d_backward(grad_pre1, b.input, params.c1[k]);
        axpy_single(grads.c1[k].kernels, g1.kernels);
        axpy_single(grads.c1[k].bias, g1.bias);
    }
}

/// Backward restricted to the final classification layer (phase-2 training):
/// only c4's gradients are produced.
template <typename T>
void model_backward_final_layer(const Tensor<T>& grad_logits, const HemisTape<T>& tape,
                                const HemisParams<T>& params, HemisParams<T>& grads) {
    ConvGrads<T> g4 = conv2d_backward(grad_logits, tape.act3, params.c4);
    axpy_single(grads.c4.kernels, g4.kernels);
    axpy_single(grads.c4.bias, g4.bias);
}

/// Pixelwise argmax; ties resolve to the lowest class index. Output holds
/// integral class ids stored in T.
template <typename T>
Tensor<T> predict_segmentation(const Tensor<T>& posteriors) {
    if (posteriors.rank() != 3) {
        throw std::invalid_argument("predict_segmentation: posteriors must be [L,H,W]");
    }
    const std::size_t L = posteriors.dim(0);
    const std::size_t h = posteriors.dim(1), w = posteriors.dim(2);
    const std::size_t hw = h * w;
    Tensor<T> labels({h, w});
    const T* pp = posteriors.data();
    T* lp = labels.data();
    for (std::size_t p = 0; p < hw; ++p) {
        std::size_t best = 0;
        T best_v = pp[p];
        for (std::size_t c = 1; c < L; ++c) {
            if (pp[c * hw + p] > best_v) {
                best_v = pp[c * hw + p];
                best = c;
            }
        }
        lp[p] = static_cast<T>(best);
    }
    return labels;
}

// ---------------------------------------------------------------------------
// Model container I/O (magic HMZ1): JSON header with the architecture
// followed by named HTF tensor records.
// ---------------------------------------------------------------------------

template <typename T>
void save_model(const HemisParams<T>& params, const std::string& path);

template <typename T>
HemisParams<T> load_model(const std::string& path);

}  // namespace hemis
