#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hemis/model.hpp"
#include "hemis/rng.hpp"
#include "hemis/synth_data.hpp"

namespace hemis {

struct TrainConfig {
    double learning_rate = 0.001;
    double lr_decay = 0.0001;
    double momentum = 0.9;   // Nesterov
    double weight_decay = 0.0;
    std::size_t warmup_epochs = 5;
    std::size_t max_epochs = 40;
    std::size_t patience = 10;
    std::size_t patch_size = 33;
    std::size_t batch_size = 16;
    std::size_t batches_per_epoch = 50;
    double p_keep_all = 0.5;   // curriculum: keep every modality
    double p_drop_one = 0.25;  // curriculum: drop exactly one
    std::uint64_t seed = 0;
    bool curriculum = true;       // false trains with the full mask always
    bool mask_per_case = false;   // default: one mask per batch
    bool two_phase = true;
    std::size_t phase2_epochs = 15;
    bool phase2_curriculum = true;
    std::size_t valid_patches = 256;

    void validate() const;
};

enum class TrainPhase { Warmup, Dropping, Finetune };
const char* phase_name(TrainPhase phase);

struct CurriculumState {
    std::size_t epoch = 0;
    TrainPhase phase = TrainPhase::Warmup;
    Rng rng{0};
    double p_keep_all = 0.5;
    double p_drop_one = 0.25;
};

/// Warmup: the full mask, always. Afterwards: keep all with p_keep_all, drop
/// exactly one uniformly with p_drop_one, otherwise a uniform non-empty
/// proper subset. Never empty; a single-modality model always gets the full
/// mask.
ModalityMask sample_modality_subset(CurriculumState& state, std::size_t n_modalities);

// ---------------------------------------------------------------------------
// Patch sampling. Training operates on square patches; the loss is evaluated
// at the patch center, so a patch is (modality windows, center label).
// ---------------------------------------------------------------------------

struct Patch {
    std::vector<Tensor<float>> images;  // per modality, each [1,P,P]
    float center_label = 0.0f;
};

/// Zero-padded square window of every modality around (row, col).
std::vector<Tensor<float>> extract_patch(const Case& c, std::size_t row, std::size_t col,
                                         std::size_t patch_size);

class PatchSampler {
public:
    PatchSampler(const std::vector<Case>* cases, std::size_t patch_size, std::size_t n_classes);

    /// balanced: class drawn uniformly, then a uniform pixel of that class
    /// (errors if a class is absent from the whole dataset). Unbalanced:
    /// uniform case, then uniform pixel, matching the label distribution.
    Patch sample(Rng& rng, bool balanced) const;
    std::vector<Patch> sample_batch(std::size_t batch_size, Rng& rng, bool balanced) const;

private:
    struct Center {
        std::uint32_t case_idx, row, col;
    };
    const std::vector<Case>* cases_;
    std::size_t patch_size_;
    std::size_t n_classes_;
    std::vector<std::vector<Center>> class_index_;
};

std::vector<Patch> sample_patch_batch(const std::vector<Case>& cases, std::size_t patch_size,
                                      std::size_t batch_size, Rng& rng, bool balanced,
                                      std::size_t n_classes);

// ---------------------------------------------------------------------------
// Two-phase trainer.
// ---------------------------------------------------------------------------

struct HistoryRow {
    std::size_t epoch = 0;  // global across phases
    std::string phase;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    double lr = 0.0;
    std::string mask_histogram;  // "1111:50 0111:3 ..." sorted by mask
};

struct TrainResult {
    HemisParams<float> params;
    std::vector<HistoryRow> history;
    double best_valid_loss = 0.0;
    std::size_t best_epoch = 0;
};

/// Mean cross-entropy of the patch set, averaged over the given masks.
double patch_set_loss(const HemisParams<float>& params, const std::vector<Patch>& patches,
                      const std::vector<ModalityMask>& masks);

/// Phase 1 trains every parameter on class-balanced patches under the
/// curriculum; phase 2 retrains only the final classification layer on
/// naturally distributed patches. Validation loss is measured on a fixed
/// patch set under the full mask plus each single-modality mask; the
/// returned parameters are the ones with the lowest validation loss seen
/// anywhere in the run.
TrainResult train(HemisParams<float> params, const std::vector<Case>& train_cases,
                  const std::vector<Case>& valid_cases, const TrainConfig& config);

void write_history_tsv(const std::vector<HistoryRow>& history, const std::string& path);

}  // namespace hemis
