#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "hemis/parallel.hpp"
#include "hemis/train.hpp"

namespace hemis {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !(lr_decay >= 0.0) || !(momentum >= 0.0) ||
        !(weight_decay >= 0.0)) {
        throw std::invalid_argument("train config: negative hyperparameter");
    }
    if (p_keep_all < 0.0 || p_drop_one < 0.0 || p_keep_all + p_drop_one > 1.0) {
        throw std::invalid_argument("train config: p_keep_all + p_drop_one must stay within 1");
    }
    if (warmup_epochs >= max_epochs) {
        throw std::invalid_argument("train config: warmup_epochs must be below max_epochs");
    }
    if (patch_size % 2 == 0 || patch_size < 3) {
        throw std::invalid_argument("train config: patch_size must be odd and at least 3");
    }
    if (batch_size == 0 || batches_per_epoch == 0 || valid_patches == 0) {
        throw std::invalid_argument("train config: batch/epoch sizes must be positive");
    }
    if (two_phase && phase2_epochs == 0) {
        throw std::invalid_argument("train config: phase2_epochs must be positive");
    }
}

const char* phase_name(TrainPhase phase) {
    switch (phase) {
        case TrainPhase::Warmup:
            return "warmup";
        case TrainPhase::Dropping:
            return "dropping";
        case TrainPhase::Finetune:
            return "finetune";
    }
    return "?";
}

ModalityMask sample_modality_subset(CurriculumState& state, std::size_t n_modalities) {
    if (n_modalities == 0) {
        throw std::invalid_argument("sample_modality_subset: need at least one modality");
    }
    if (n_modalities == 1 || state.phase == TrainPhase::Warmup) {
        return ModalityMask::full(n_modalities);
    }
    const double u = state.rng.uniform();
    if (u < state.p_keep_all) {
        return ModalityMask::full(n_modalities);
    }
    if (u < state.p_keep_all + state.p_drop_one) {
        ModalityMask m = ModalityMask::full(n_modalities);
        m.set(state.rng.uniform_below(n_modalities), false);
        return m;
    }
    // Uniform over the 2^N - 2 non-empty proper subsets.
    const std::uint64_t n_subsets = (std::uint64_t{1} << n_modalities) - 2;
    const std::uint64_t bits = 1 + state.rng.uniform_below(n_subsets);
    return ModalityMask::from_bits(bits, n_modalities);
}

std::vector<Tensor<float>> extract_patch(const Case& c, std::size_t row, std::size_t col,
                                         std::size_t patch_size) {
    if (patch_size % 2 == 0) {
        throw std::invalid_argument("extract_patch: patch size must be odd");
    }
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(patch_size) / 2;
    const auto h = static_cast<std::ptrdiff_t>(c.labels.dim(0));
    const auto w = static_cast<std::ptrdiff_t>(c.labels.dim(1));
    std::vector<Tensor<float>> out;
    out.reserve(c.images.size());
    for (const auto& img : c.images) {
        Tensor<float> p({1, patch_size, patch_size});
        for (std::ptrdiff_t di = -half; di <= half; ++di) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(row) + di;
            if (r < 0 || r >= h) {
                continue;  // zero padding
            }
            for (std::ptrdiff_t dj = -half; dj <= half; ++dj) {
                const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(col) + dj;
                if (cc < 0 || cc >= w) {
                    continue;
                }
                p(0, static_cast<std::size_t>(di + half), static_cast<std::size_t>(dj + half)) =
                    img(0, static_cast<std::size_t>(r), static_cast<std::size_t>(cc));
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

PatchSampler::PatchSampler(const std::vector<Case>* cases, std::size_t patch_size,
                           std::size_t n_classes)
    : cases_(cases), patch_size_(patch_size), n_classes_(n_classes) {
    if (cases_ == nullptr || cases_->empty()) {
        throw std::invalid_argument("patch sampler: empty dataset");
    }
    class_index_.resize(n_classes_);
    for (std::size_t ci = 0; ci < cases_->size(); ++ci) {
        const Tensor<float>& labels = (*cases_)[ci].labels;
        for (std::size_t r = 0; r < labels.dim(0); ++r) {
            for (std::size_t col = 0; col < labels.dim(1); ++col) {
                const auto cls = static_cast<std::size_t>(labels(r, col));
                if (cls >= n_classes_) {
                    throw std::invalid_argument("patch sampler: label out of range");
                }
                class_index_[cls].push_back({static_cast<std::uint32_t>(ci),
                                             static_cast<std::uint32_t>(r),
                                             static_cast<std::uint32_t>(col)});
            }
        }
    }
}

Patch PatchSampler::sample(Rng& rng, bool balanced) const {
    Center center{};
    if (balanced) {
        const std::size_t cls = static_cast<std::size_t>(rng.uniform_below(n_classes_));
        const auto& pool = class_index_[cls];
        if (pool.empty()) {
            throw std::runtime_error("patch sampler: class " + std::to_string(cls) +
                                     " absent from dataset");
        }
        center = pool[rng.uniform_below(pool.size())];
    } else {
        const std::size_t ci = static_cast<std::size_t>(rng.uniform_below(cases_->size()));
        const Tensor<float>& labels = (*cases_)[ci].labels;
        center.case_idx = static_cast<std::uint32_t>(ci);
        center.row = static_cast<std::uint32_t>(rng.uniform_below(labels.dim(0)));
        center.col = static_cast<std::uint32_t>(rng.uniform_below(labels.dim(1)));
    }
    const Case& c = (*cases_)[center.case_idx];
    Patch p;
    p.images = extract_patch(c, center.row, center.col, patch_size_);
    p.center_label = c.labels(center.row, center.col);
    return p;
}

std::vector<Patch> PatchSampler::sample_batch(std::size_t batch_size, Rng& rng,
                                              bool balanced) const {
    if (balanced) {
        for (std::size_t cls = 0; cls < n_classes_; ++cls) {
            if (class_index_[cls].empty()) {
                throw std::runtime_error("patch sampler: class " + std::to_string(cls) +
                                         " absent from dataset");
            }
        }
    }
    std::vector<Patch> batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        batch.push_back(sample(rng, balanced));
    }
    return batch;
}

std::vector<Patch> sample_patch_batch(const std::vector<Case>& cases, std::size_t patch_size,
                                      std::size_t batch_size, Rng& rng, bool balanced,
                                      std::size_t n_classes) {
    PatchSampler sampler(&cases, patch_size, n_classes);
    return sampler.sample_batch(batch_size, rng, balanced);
}

namespace {

/// Loss of one patch under one mask; fills `grads` when backward is wanted.
double patch_loss(const HemisParams<float>& params, const Patch& patch,
                  const ModalityMask& mask, double grad_scale, bool final_layer_only,
                  HemisParams<float>* grads) {
    const std::size_t p = patch.images[0].dim(1);
    Tensor<float> labels({p, p});
    Tensor<float> weights({p, p});
    labels(p / 2, p / 2) = patch.center_label;
    weights(p / 2, p / 2) = 1.0f;

    HemisTape<float> tape;
    const Tensor<float> probs =
        model_forward(patch.images, mask, params, grads != nullptr ? &tape : nullptr);
    CrossEntropyResult<float> ce = cross_entropy_loss(probs, labels, weights);
    if (!std::isfinite(ce.loss)) {
        return ce.loss;  // caller reports the offending epoch and batch
    }
    if (grads != nullptr) {
        const Tensor<float> scaled = scale(ce.grad_logits, grad_scale);
        if (final_layer_only) {
            model_backward_final_layer(scaled, tape, params, *grads);
        } else {
            model_backward(scaled, tape, params, *grads);
        }
    }
    return ce.loss;
}

std::string histogram_to_string(const std::map<std::string, std::size_t>& hist) {
    std::string out;
    for (const auto& [mask, count] : hist) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += mask + ":" + std::to_string(count);
    }
    return out;
}

}  // namespace

double patch_set_loss(const HemisParams<float>& params, const std::vector<Patch>& patches,
                      const std::vector<ModalityMask>& masks) {
    if (patches.empty() || masks.empty()) {
        throw std::invalid_argument("patch_set_loss: empty patch set or mask suite");
    }
    std::vector<double> per_patch(patches.size(), 0.0);
    parallel_for(patches.size(), [&](std::size_t i) {
        double s = 0.0;
        for (const auto& mask : masks) {
            s += patch_loss(params, patches[i], mask, 1.0, false, nullptr);
        }
        per_patch[i] = s;
    });
    double total = 0.0;
    for (double v : per_patch) {
        total += v;
    }
    return total / (static_cast<double>(patches.size()) * static_cast<double>(masks.size()));
}

TrainResult train(HemisParams<float> params, const std::vector<Case>& train_cases,
                  const std::vector<Case>& valid_cases, const TrainConfig& config) {
    config.validate();
    params.arch.validate();
    const std::size_t n_mod = params.arch.n_modalities;

    PatchSampler train_sampler(&train_cases, config.patch_size, params.arch.n_classes);
    PatchSampler valid_sampler(&valid_cases, config.patch_size, params.arch.n_classes);

    Rng root(config.seed);
    CurriculumState curriculum;
    curriculum.rng = root.fork(1);
    curriculum.p_keep_all = config.p_keep_all;
    curriculum.p_drop_one = config.p_drop_one;
    Rng batch_rng = root.fork(2);
    Rng valid_rng = root.fork(3);

    // Fixed validation patches with the natural class distribution, scored
    // under the full mask plus every single-modality mask. The average
    // reflects both the fully-observed and the worst-case hetero-modal use.
    const std::vector<Patch> valid_set =
        valid_sampler.sample_batch(config.valid_patches, valid_rng, false);
    std::vector<ModalityMask> valid_masks;
    valid_masks.push_back(ModalityMask::full(n_mod));
    for (std::size_t k = 0; k < n_mod; ++k) {
        ModalityMask single(n_mod, false);
        single.set(k, true);
        valid_masks.push_back(single);
    }

    TrainResult result;
    result.best_valid_loss = std::numeric_limits<double>::infinity();
    HemisParams<float> best_params = params;
    std::size_t global_epoch = 0;

    auto run_phase = [&](TrainPhase base_phase, std::size_t n_epochs, bool balanced,
                         bool final_layer_only, bool use_curriculum) {
        SgdState<float> opt;
        opt.learning_rate = static_cast<float>(config.learning_rate);
        opt.lr_decay = static_cast<float>(config.lr_decay);
        opt.momentum = static_cast<float>(config.momentum);
        opt.weight_decay = static_cast<float>(config.weight_decay);

        std::size_t epochs_since_best = 0;
        for (std::size_t epoch = 0; epoch < n_epochs; ++epoch, ++global_epoch) {
            curriculum.epoch = epoch;
            curriculum.phase = base_phase;
            if (base_phase != TrainPhase::Finetune) {
                curriculum.phase =
                    epoch < config.warmup_epochs ? TrainPhase::Warmup : TrainPhase::Dropping;
            }

            std::map<std::string, std::size_t> mask_hist;
            double loss_sum = 0.0;
            const double epoch_lr = opt.current_lr();

            for (std::size_t b = 0; b < config.batches_per_epoch; ++b) {
                std::vector<Patch> batch =
                    train_sampler.sample_batch(config.batch_size, batch_rng, balanced);
                std::vector<ModalityMask> item_masks(config.batch_size);
                if (config.mask_per_case) {
                    for (auto& m : item_masks) {
                        m = use_curriculum ? sample_modality_subset(curriculum, n_mod)
                                           : ModalityMask::full(n_mod);
                        ++mask_hist[m.to_string()];
                    }
                } else {
                    const ModalityMask m = use_curriculum
                                               ? sample_modality_subset(curriculum, n_mod)
                                               : ModalityMask::full(n_mod);
                    ++mask_hist[m.to_string()];
                    for (auto& im : item_masks) {
                        im = m;
                    }
                }

                std::vector<HemisParams<float>> item_grads;
                item_grads.reserve(config.batch_size);
                for (std::size_t i = 0; i < config.batch_size; ++i) {
                    item_grads.push_back(zeros_like(params));
                }
                std::vector<double> item_loss(config.batch_size, 0.0);
                const double grad_scale = 1.0 / static_cast<double>(config.batch_size);
                parallel_for(config.batch_size, [&](std::size_t i) {
                    item_loss[i] = patch_loss(params, batch[i], item_masks[i], grad_scale,
                                              final_layer_only, &item_grads[i]);
                });

                HemisParams<float> grads = zeros_like(params);
                double batch_loss = 0.0;
                for (std::size_t i = 0; i < config.batch_size; ++i) {
                    axpy_params(grads, item_grads[i], 1.0);
                    batch_loss += item_loss[i];
                }
                batch_loss /= static_cast<double>(config.batch_size);
                if (!std::isfinite(batch_loss)) {
                    throw std::runtime_error("train: non-finite loss at epoch " +
                                             std::to_string(global_epoch) + " batch " +
                                             std::to_string(b));
                }
                loss_sum += batch_loss;

                auto named_p = named_tensors(params);
                auto named_g = named_tensors(grads);
                std::vector<Tensor<float>*> step_params;
                std::vector<const Tensor<float>*> step_grads;
                for (std::size_t t = 0; t < named_p.size(); ++t) {
                    if (final_layer_only && named_p[t].first.rfind("frontend.c4.", 0) != 0) {
                        continue;
                    }
                    step_params.push_back(named_p[t].second);
                    step_grads.push_back(named_g[t].second);
                }
                sgd_nesterov_step(step_params, step_grads, opt);
            }

            const double vloss = patch_set_loss(params, valid_set, valid_masks);
            HistoryRow row;
            row.epoch = global_epoch;
            row.phase = phase_name(curriculum.phase);
            row.train_loss = loss_sum / static_cast<double>(config.batches_per_epoch);
            row.valid_loss = vloss;
            row.lr = epoch_lr;
            row.mask_histogram = histogram_to_string(mask_hist);
            result.history.push_back(row);

            if (vloss < result.best_valid_loss) {
                result.best_valid_loss = vloss;
                result.best_epoch = global_epoch;
                best_params = params;
                epochs_since_best = 0;
            } else {
                ++epochs_since_best;
            }
            if (epochs_since_best > config.patience) {
                break;
            }
        }
        params = best_params;
    };

    run_phase(TrainPhase::Warmup, config.max_epochs, /*balanced=*/true,
              /*final_layer_only=*/false, /*use_curriculum=*/config.curriculum);
    if (config.two_phase) {
        run_phase(TrainPhase::Finetune, config.phase2_epochs, /*balanced=*/false,
                  /*final_layer_only=*/true,
                  /*use_curriculum=*/config.curriculum && config.phase2_curriculum);
    }

    result.params = std::move(params);
    return result;
}

void write_history_tsv(const std::vector<HistoryRow>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("history: cannot open " + path + " for writing");
    }
    out << "epoch\tphase\ttrain_loss\tvalid_loss\tlr\tmask_histogram\n";
    for (const auto& row : history) {
        out << row.epoch << '\t' << row.phase << '\t' << row.train_loss << '\t'
            << row.valid_loss << '\t' << row.lr << '\t' << row.mask_histogram << '\n';
    }
    if (!out) {
        throw std::runtime_error("history: write failed for " + path);
    }
}

}  // namespace hemis
