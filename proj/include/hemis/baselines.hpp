#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hemis/layers.hpp"
#include "hemis/synth_data.hpp"
#include "hemis/train.hpp"

namespace hemis {

// Comparison strategies for missing modalities: replace absent images with
// zeros (the per-modality mean after normalization) or predict them
// pixelwise with a per-configuration regression MLP, then run a network
// trained without modality dropping.

/// Absent modalities become all-zero images; present ones are untouched.
/// Requires normalized inputs (zero mean) for the mean interpretation.
Case mean_fill(const Case& c, const ModalityMask& mask);

/// One regressor per (missing modality, available set): co-located pixel
/// intensities of the available modalities in, the missing intensity out.
/// [in -> hidden -> hidden -> 1], ReLU on hidden layers, linear output.
struct ImputationMlp {
    std::size_t target = 0;
    std::uint64_t available_bits = 0;
    DenseLayer<float> l1, l2, l3;

    std::size_t input_dim() const { return l1.in_features(); }
    /// x holds the available intensities in ascending modality order.
    float predict(const float* x) const;
};

struct ImputeTrainConfig {
    std::size_t hidden = 100;
    std::size_t samples_per_model = 8000;
    std::size_t epochs = 2;
    std::size_t batch_size = 16;
    double learning_rate = 0.01;
    double lr_decay = 0.0001;
    double momentum = 0.9;
    std::uint64_t seed = 0;

    void validate() const;
};

class MlpBundle {
public:
    std::vector<ImputationMlp> models;

    const ImputationMlp& find(std::size_t target, std::uint64_t available_bits) const;
    void save(const std::string& path) const;
    static MlpBundle load(const std::string& path);
};

/// Trains all 28 (target, available-set) regressors for 4 modalities on
/// pixels sampled from the given cases. Deterministic under the seed; the
/// models are independent and train in parallel.
MlpBundle train_imputation_mlps(const std::vector<Case>& train_cases,
                                const ImputeTrainConfig& config);

/// Mean squared error of the regressor on given samples (xs is row-major
/// with stride input_dim).
double mlp_mse(const ImputationMlp& mlp, const std::vector<float>& xs,
               const std::vector<float>& ys);

/// Absent modalities predicted pixelwise from the available ones. Labels and
/// present images pass through bitwise.
Case mlp_impute(const Case& c, const ModalityMask& mask, const MlpBundle& models);

/// Same architecture, trained with every modality present (no curriculum);
/// missing modalities must be imputed before its forward pass.
TrainResult train_baseline_network(HemisParams<float> params,
                                   const std::vector<Case>& train_cases,
                                   const std::vector<Case>& valid_cases, TrainConfig config);

}  // namespace hemis
