#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hemis/baselines.hpp"
#include "hemis/model.hpp"
#include "hemis/synth_data.hpp"

namespace hemis {

/// Dice similarity coefficient in percent: 100 * 2|P∩T| / (|P| + |T|).
/// Non-zero pixels are members. Two empty maps agree perfectly: 100.
double dice_percent(const Tensor<float>& pred, const Tensor<float>& truth);

struct LesionMetrics {
    double vd = 0.0;   // volume difference, percent of truth volume
    double tpr = 0.0;  // detected truth components, percent
    double fpr = 0.0;  // pred components without truth overlap, percent
};

/// Lesion-wise rates use 4-connected components: a truth component counts as
/// detected if any of its pixels is predicted; a predicted component is a
/// false positive if it overlaps no truth pixel. Empty truth is an error
/// (volume difference is undefined).
LesionMetrics vd_tpr_fpr(const Tensor<float>& pred, const Tensor<float>& truth);

/// Category names per class count: 4 -> Complete/Core/Enhancing,
/// 2 -> Lesion, otherwise one category per foreground class.
std::vector<std::string> category_names(std::size_t n_classes);

/// Binary map per category, aligned with category_names.
std::vector<Tensor<float>> category_maps(const Tensor<float>& labels, std::size_t n_classes);

/// All non-empty modality subsets. For four modalities the order follows the
/// reference layout: singletons T2, T1c, T1, F; then pairs T1c+T2, T1+T1c,
/// F+T1, T1+T2, F+T2, F+T1c; then triples F+T1+T1c, F+T1+T2, F+T1c+T2,
/// T1+T1c+T2; then all four.
std::vector<ModalityMask> report_subsets(std::size_t n_modalities);

struct SubsetReport {
    std::vector<std::string> categories;
    std::vector<std::string> methods;  // HeMIS, Mean, MLP
    std::size_t n_cases = 0;
    struct Row {
        ModalityMask mask;
        std::vector<std::vector<double>> dsc;  // [category][method], mean over cases
    };
    std::vector<Row> rows;

    /// Wins per [category][method]: each row awards one win to the method
    /// with the highest DSC after rounding to the two decimals the reports
    /// print; exact ties go to the earliest method.
    std::vector<std::vector<std::size_t>> wins() const;
};

/// The all-subsets evaluation: per subset, HeMIS runs hetero-modally while
/// the baseline network consumes mean-filled and MLP-imputed inputs.
SubsetReport sweep_subsets(const HemisParams<float>& hemis,
                           const HemisParams<float>& baseline, const MlpBundle& mlps,
                           const std::vector<Case>& test_cases);

void emit_report_tsv(const SubsetReport& report, const std::string& path);
void emit_report_markdown(const SubsetReport& report, const std::string& path);

/// PPM (P6) overlay: the image min/max-scaled to gray, predicted classes
/// blended in at half weight (1 green, 2 orange, 3 red), truth region
/// boundaries drawn white.
void render_overlay(const Tensor<float>& image, const Tensor<float>& pred_labels,
                    const Tensor<float>& truth_labels, const std::string& path);

}  // namespace hemis
