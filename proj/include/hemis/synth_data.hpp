#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hemis/model.hpp"
#include "hemis/rng.hpp"
#include "hemis/tensor.hpp"

namespace hemis {

// Phantom datasets with the structure of multi-modal tumor MRI: four
// modalities per case, nested lesion regions, modality-specific visibility.
// Classes: 0 background, 1 edema analog, 2 core analog, 3 enhancing analog.

inline constexpr std::size_t kNumModalities = 4;
inline constexpr std::size_t kNumClasses = 4;

/// Canonical modality order: F (FLAIR-like), T1, T1c, T2.
const std::vector<std::string>& modality_names();

struct Case {
    std::string id;
    std::vector<Tensor<float>> images;  // kNumModalities entries, each [1,H,W]
    Tensor<float> labels;               // [H,W], values in {0..3}
    ModalityMask available;             // all true at generation
};

/// Per-modality normalization statistics: clip bounds from the 0.001/0.999
/// quantiles, then the mean and standard deviation of the clipped values.
struct NormStats {
    double clip_lo = 0.0;
    double clip_hi = 0.0;
    double mean = 0.0;
    double stddev = 1.0;
};

struct DatasetManifest {
    std::string root;
    std::uint64_t seed = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    double difficulty = 0.0;
    std::vector<std::string> train_ids;
    std::vector<std::string> valid_ids;
    std::vector<std::string> test_ids;
    std::string norm_mode = "per_case";   // or "per_dataset"
    std::vector<NormStats> norm_stats;    // per modality, per_dataset mode only

    const std::vector<std::string>& ids_for(const std::string& split) const;
};

/// One random phantom. `difficulty` in [0,1] scales the additive Gaussian
/// noise (stddev 0.55 * difficulty). About one case in ten carries no lesion.
/// Lesion geometry is retried until the nested regions are non-empty and
/// pixelwise contained; exhausting retries raises an error.
Case generate_case(Rng& rng, std::size_t height, std::size_t width, double difficulty);

/// Quantile statistics pooled over the given images (two-sided nearest-rank
/// clip at 0.001/0.999, then mean/stddev of the clipped values).
NormStats compute_norm_stats(const std::vector<const Tensor<float>*>& images);

/// Clip to [clip_lo, clip_hi], subtract mean, divide by stddev.
/// Errors if stddev is (near) zero.
void apply_norm_stats(Tensor<float>& image, const NormStats& stats);

/// Per-modality self-normalization of one case: each image is clipped and
/// standardized against its own statistics. Re-normalizing a normalized
/// case is an identity up to floating-point noise.
void normalize_case(Case& c);

/// Generates n_cases (ids case_0000, case_0001, ...), normalizes them,
/// splits 70/10/20 by generation order, and writes the directory layout:
/// <root>/manifest.json and <root>/<split>/<case_id>/{mod_*.htf, label.htf}.
/// per_dataset_stats switches to one set of clip/standardize statistics per
/// modality computed over the training split.
DatasetManifest build_dataset(const std::string& out_dir, std::size_t n_cases,
                              std::uint64_t seed, std::size_t height, std::size_t width,
                              double difficulty, bool per_dataset_stats = false);

DatasetManifest load_manifest(const std::string& dir);
Case load_case(const DatasetManifest& manifest, const std::string& split,
               const std::string& case_id);
std::vector<Case> load_split(const DatasetManifest& manifest, const std::string& split);

struct BinaryMaps {
    Tensor<float> complete;   // labels in {1,2,3}
    Tensor<float> core;       // labels in {2,3}
    Tensor<float> enhancing;  // labels == 3
};

BinaryMaps derive_binary_maps(const Tensor<float>& labels);

}  // namespace hemis
