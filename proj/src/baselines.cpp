#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "hemis/baselines.hpp"
#include "hemis/htf.hpp"
#include "hemis/parallel.hpp"

namespace hemis {

Case mean_fill(const Case& c, const ModalityMask& mask) {
    if (mask.size() != c.images.size()) {
        throw std::invalid_argument("mean_fill: mask size mismatch");
    }
    if (!mask.any()) {
        throw std::invalid_argument("mean_fill: mask must keep at least one modality");
    }
    Case out = c;
    for (std::size_t m = 0; m < mask.size(); ++m) {
        if (!mask[m]) {
            out.images[m] = Tensor<float>(c.images[m].shape());
        }
    }
    out.available = ModalityMask::full(mask.size());
    return out;
}

void ImputeTrainConfig::validate() const {
    if (hidden == 0 || samples_per_model == 0 || epochs == 0 || batch_size == 0) {
        throw std::invalid_argument("impute config: sizes must be positive");
    }
    if (!(learning_rate > 0.0) || lr_decay < 0.0 || momentum < 0.0) {
        throw std::invalid_argument("impute config: bad optimizer settings");
    }
}

float ImputationMlp::predict(const float* x) const {
    const std::size_t in_n = l1.in_features();
    const std::size_t h = l1.out_features();
    std::vector<float> h1(h), h2(h);
    for (std::size_t o = 0; o < h; ++o) {
        double s = l1.bias(o);
        for (std::size_t i = 0; i < in_n; ++i) {
            s += static_cast<double>(l1.weights(o, i)) * static_cast<double>(x[i]);
        }
        h1[o] = s > 0.0 ? static_cast<float>(s) : 0.0f;
    }
    for (std::size_t o = 0; o < h; ++o) {
        double s = l2.bias(o);
        for (std::size_t i = 0; i < h; ++i) {
            s += static_cast<double>(l2.weights(o, i)) * static_cast<double>(h1[i]);
        }
        h2[o] = s > 0.0 ? static_cast<float>(s) : 0.0f;
    }
    double s = l3.bias(0);
    for (std::size_t i = 0; i < h; ++i) {
        s += static_cast<double>(l3.weights(0, i)) * static_cast<double>(h2[i]);
    }
    return static_cast<float>(s);
}

const ImputationMlp& MlpBundle::find(std::size_t target, std::uint64_t available_bits) const {
    for (const auto& m : models) {
        if (m.target == target && m.available_bits == available_bits) {
            return m;
        }
    }
    std::string bits;
    for (std::size_t k = 0; k < kNumModalities; ++k) {
        bits.push_back((available_bits >> k) & 1 ? '1' : '0');
    }
    throw std::runtime_error("imputation: no model for target " + std::to_string(target) +
                             " with available set " + bits);
}

namespace {

constexpr char kBundleMagic[4] = {'I', 'M', 'P', '1'};

void write_u32_le(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32_le(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) {
        throw std::runtime_error(std::string("bundle: truncated file while reading ") + what);
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    }
    return v;
}

std::uint64_t read_u64_le(std::istream& in, const char* what) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (in.gcount() != 8) {
        throw std::runtime_error(std::string("bundle: truncated file while reading ") + what);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    return v;
}

void write_blob(std::ostream& out, const Tensor<float>& t) {
    std::ostringstream blob;
    save_htf(t, blob);
    const std::string bytes = blob.str();
    write_u64_le(out, bytes.size());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor<float> read_blob(std::istream& in) {
    const std::uint64_t len = read_u64_le(in, "tensor length");
    std::string bytes(len, '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(len));
    if (in.gcount() != static_cast<std::streamsize>(len)) {
        throw std::runtime_error("bundle: truncated file while reading tensor");
    }
    std::istringstream blob(bytes);
    return load_htf<float>(blob);
}

}  // namespace

void MlpBundle::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("bundle: cannot open " + path + " for writing");
    }
    nlohmann::json header;
    header["version"] = 1;
    header["count"] = models.size();
    const std::string header_text = header.dump();
    out.write(kBundleMagic, 4);
    write_u32_le(out, static_cast<std::uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& m : models) {
        write_u32_le(out, static_cast<std::uint32_t>(m.target));
        write_u64_le(out, m.available_bits);
        write_blob(out, m.l1.weights);
        write_blob(out, m.l1.bias);
        write_blob(out, m.l2.weights);
        write_blob(out, m.l2.bias);
        write_blob(out, m.l3.weights);
        write_blob(out, m.l3.bias);
    }
    if (!out) {
        throw std::runtime_error("bundle: write failed for " + path);
    }
}

MlpBundle MlpBundle::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("bundle: cannot open " + path);
    }
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || !std::equal(magic, magic + 4, kBundleMagic)) {
        throw std::runtime_error("bundle: bad magic (not an IMP1 file)");
    }
    const std::uint32_t header_len = read_u32_le(in, "header length");
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), header_len);
    if (in.gcount() != static_cast<std::streamsize>(header_len)) {
        throw std::runtime_error("bundle: truncated file while reading header");
    }
    nlohmann::json header = nlohmann::json::parse(header_text, nullptr, false);
    if (header.is_discarded() || header.value("version", 0) != 1) {
        throw std::runtime_error("bundle: bad or unsupported header");
    }
    const auto count = header.at("count").get<std::size_t>();
    MlpBundle bundle;
    for (std::size_t i = 0; i < count; ++i) {
        ImputationMlp m;
        m.target = read_u32_le(in, "target");
        m.available_bits = read_u64_le(in, "available bits");
        m.l1.weights = read_blob(in);
        m.l1.bias = read_blob(in);
        m.l2.weights = read_blob(in);
        m.l2.bias = read_blob(in);
        m.l3.weights = read_blob(in);
        m.l3.bias = read_blob(in);
        bundle.models.push_back(std::move(m));
    }
    return bundle;
}

namespace {

struct SampleSet {
    std::vector<float> xs;  // row-major, stride = input dim
    std::vector<float> ys;
};

SampleSet draw_samples(const std::vector<Case>& cases, std::size_t target,
                       std::uint64_t available_bits, std::size_t count, Rng& rng) {
    std::vector<std::size_t> avail;
    for (std::size_t k = 0; k < kNumModalities; ++k) {
        if ((available_bits >> k) & 1) {
            avail.push_back(k);
        }
    }
    SampleSet set;
    set.xs.reserve(count * avail.size());
    set.ys.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        const auto ci = static_cast<std::size_t>(rng.uniform_below(cases.size()));
        const Case& c = cases[ci];
        const auto r = static_cast<std::size_t>(rng.uniform_below(c.labels.dim(0)));
        const auto col = static_cast<std::size_t>(rng.uniform_below(c.labels.dim(1)));
        for (std::size_t k : avail) {
            set.xs.push_back(c.images[k](0, r, col));
        }
        set.ys.push_back(c.images[target](0, r, col));
    }
    return set;
}

void train_one_mlp(ImputationMlp& mlp, const SampleSet& samples,
                   const ImputeTrainConfig& config) {
    const std::size_t in_n = mlp.input_dim();
    const std::size_t n = samples.ys.size();

    SgdState<float> opt;
    opt.learning_rate = static_cast<float>(config.learning_rate);
    opt.lr_decay = static_cast<float>(config.lr_decay);
    opt.momentum = static_cast<float>(config.momentum);

    Tensor<float> x({in_n});
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t end = std::min(n, start + config.batch_size);
            DenseGrads<float> acc1{Tensor<float>({in_n}), Tensor<float>(mlp.l1.weights.shape()),
                                   Tensor<float>(mlp.l1.bias.shape())};
            DenseGrads<float> acc2{Tensor<float>({mlp.l1.out_features()}),
                                   Tensor<float>(mlp.l2.weights.shape()),
                                   Tensor<float>(mlp.l2.bias.shape())};
            DenseGrads<float> acc3{Tensor<float>({mlp.l2.out_features()}),
                                   Tensor<float>(mlp.l3.weights.shape()),
                                   Tensor<float>(mlp.l3.bias.shape())};
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            for (std::size_t s = start; s < end; ++s) {
                std::copy(samples.xs.begin() + static_cast<std::ptrdiff_t>(s * in_n),
                          samples.xs.begin() + static_cast<std::ptrdiff_t>((s + 1) * in_n),
                          x.data());
                const Tensor<float> pre1 = dense_forward(x, mlp.l1);
                const Tensor<float> h1 = relu_forward(pre1);
                const Tensor<float> pre2 = dense_forward(h1, mlp.l2);
                const Tensor<float> h2 = relu_forward(pre2);
                const Tensor<float> out = dense_forward(h2, mlp.l3);
                Tensor<float> gout({1});
                gout(0) = static_cast<float>(2.0 * (static_cast<double>(out(0)) -
                                                    static_cast<double>(samples.ys[s])) *
                                             inv_batch);
                DenseGrads<float> g3 = dense_backward(gout, h2, mlp.l3);
                Tensor<float> gh2 = relu_backward(g3.input, pre2);
                DenseGrads<float> g2 = dense_backward(gh2, h1, mlp.l2);
                Tensor<float> gh1 = relu_backward(g2.input, pre1);
                DenseGrads<float> g1 = dense_backward(gh1, x, mlp.l1);
                axpy_single(acc1.weights, g1.weights);
                axpy_single(acc1.bias, g1.bias);
                axpy_single(acc2.weights, g2.weights);
                axpy_single(acc2.bias, g2.bias);
                axpy_single(acc3.weights, g3.weights);
                axpy_single(acc3.bias, g3.bias);
            }
            std::vector<Tensor<float>*> ps = {&mlp.l1.weights, &mlp.l1.bias, &mlp.l2.weights,
                                              &mlp.l2.bias,    &mlp.l3.weights, &mlp.l3.bias};
            std::vector<const Tensor<float>*> gs = {&acc1.weights, &acc1.bias, &acc2.weights,
                                                    &acc2.bias,    &acc3.weights, &acc3.bias};
            sgd_nesterov_step(ps, gs, opt);
        }
    }
}

}  // namespace

MlpBundle train_imputation_mlps(const std::vector<Case>& train_cases,
                                const ImputeTrainConfig& config) {
    config.validate();
    if (train_cases.empty()) {
        throw std::invalid_argument("train_imputation_mlps: empty dataset");
    }
    // Every (target, non-empty subset of the other three) pair: 28 for N=4.
    struct Spec {
        std::size_t target;
        std::uint64_t bits;
    };
    std::vector<Spec> specs;
    for (std::size_t target = 0; target < kNumModalities; ++target) {
        for (std::uint64_t bits = 1; bits < (1u << kNumModalities); ++bits) {
            if ((bits >> target) & 1) {
                continue;
            }
            specs.push_back({target, bits});
        }
    }

    Rng master(config.seed);
    std::vector<Rng> rngs;
    rngs.reserve(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        rngs.push_back(master.fork(i));
    }

    MlpBundle bundle;
    bundle.models.resize(specs.size());
    parallel_for(specs.size(), [&](std::size_t i) {
        Rng& rng = rngs[i];
        ImputationMlp& m = bundle.models[i];
        m.target = specs[i].target;
        m.available_bits = specs[i].bits;
        const auto in_n = static_cast<std::size_t>(std::popcount(specs[i].bits));
        m.l1 = make_dense_layer<float>(config.hidden, in_n, rng);
        m.l2 = make_dense_layer<float>(config.hidden, config.hidden, rng);
        m.l3 = make_dense_layer<float>(1, config.hidden, rng);
        const SampleSet samples =
            draw_samples(train_cases, m.target, m.available_bits, config.samples_per_model, rng);
        train_one_mlp(m, samples, config);
    });
    return bundle;
}

double mlp_mse(const ImputationMlp& mlp, const std::vector<float>& xs,
               const std::vector<float>& ys) {
    const std::size_t in_n = mlp.input_dim();
    if (ys.empty() || xs.size() != ys.size() * in_n) {
        throw std::invalid_argument("mlp_mse: sample size mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        const double d =
            static_cast<double>(mlp.predict(xs.data() + i * in_n)) - static_cast<double>(ys[i]);
        s += d * d;
    }
    return s / static_cast<double>(ys.size());
}

Case mlp_impute(const Case& c, const ModalityMask& mask, const MlpBundle& models) {
    if (mask.size() != c.images.size()) {
        throw std::invalid_argument("mlp_impute: mask size mismatch");
    }
    if (!mask.any()) {
        throw std::invalid_argument("mlp_impute: mask must keep at least one modality");
    }
    Case out = c;
    if (mask.all()) {
        return out;
    }
    const std::uint64_t avail_bits = mask.bits();
    std::vector<std::size_t> avail;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (mask[k]) {
            avail.push_back(k);
        }
    }
    const std::size_t h = c.labels.dim(0), w = c.labels.dim(1);
    for (std::size_t t = 0; t < mask.size(); ++t) {
        if (mask[t]) {
            continue;
        }
        const ImputationMlp& mlp = models.find(t, avail_bits);
        Tensor<float> pred({1, h, w});
        parallel_for(h, [&](std::size_t r) {
            std::vector<float> x(avail.size());
            for (std::size_t col = 0; col < w; ++col) {
                for (std::size_t a = 0; a < avail.size(); ++a) {
                    x[a] = c.images[avail[a]](0, r, col);
                }
                pred(0, r, col) = mlp.predict(x.data());
            }
        });
        out.images[t] = std::move(pred);
    }
    out.available = ModalityMask::full(mask.size());
    return out;
}

TrainResult train_baseline_network(HemisParams<float> params,
                                   const std::vector<Case>& train_cases,
                                   const std::vector<Case>& valid_cases, TrainConfig config) {
    config.curriculum = false;
    config.phase2_curriculum = false;
    return train(std::move(params), train_cases, valid_cases, config);
}

}  // namespace hemis
