#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "hemis/metrics.hpp"
#include "hemis/parallel.hpp"

namespace hemis {

double dice_percent(const Tensor<float>& pred, const Tensor<float>& truth) {
    if (!same_shape(pred, truth)) {
        throw std::invalid_argument("dice: shape mismatch");
    }
    std::size_t np = 0, nt = 0, inter = 0;
    const float* pp = pred.data();
    const float* tp = truth.data();
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const bool p = pp[i] != 0.0f;
        const bool t = tp[i] != 0.0f;
        np += p;
        nt += t;
        inter += p && t;
    }
    if (np + nt == 0) {
        return 100.0;
    }
    return 200.0 * static_cast<double>(inter) / static_cast<double>(np + nt);
}

namespace {

/// 4-connected component labels over non-zero pixels; returns the component
/// count, fills `comp` with ids (-1 for background).
int label_components(const Tensor<float>& map, std::vector<int>& comp) {
    const std::size_t h = map.dim(0), w = map.dim(1);
    comp.assign(h * w, -1);
    int next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (map.data()[start] == 0.0f || comp[start] != -1) {
            continue;
        }
        stack.push_back(start);
        comp[start] = next;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const std::size_t r = p / w, c = p % w;
            const std::size_t neighbors[4] = {
                r > 0 ? p - w : p, r + 1 < h ? p + w : p,
                c > 0 ? p - 1 : p, c + 1 < w ? p + 1 : p};
            for (std::size_t q : neighbors) {
                if (q != p && map.data()[q] != 0.0f && comp[q] == -1) {
                    comp[q] = next;
                    stack.push_back(q);
                }
            }
        }
        ++next;
    }
    return next;
}

}  // namespace

LesionMetrics vd_tpr_fpr(const Tensor<float>& pred, const Tensor<float>& truth) {
    if (!same_shape(pred, truth) || pred.rank() != 2) {
        throw std::invalid_argument("vd_tpr_fpr: binary maps must be [H,W] with equal shapes");
    }
    std::size_t np = 0, nt = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        np += pred.data()[i] != 0.0f;
        nt += truth.data()[i] != 0.0f;
    }
    if (nt == 0) {
        throw std::invalid_argument("vd_tpr_fpr: empty truth map");
    }

    LesionMetrics m;
    m.vd = 100.0 *
           std::abs(static_cast<double>(np) - static_cast<double>(nt)) /
           static_cast<double>(nt);

    std::vector<int> truth_comp, pred_comp;
    const int n_truth = label_components(truth, truth_comp);
    const int n_pred = label_components(pred, pred_comp);

    std::vector<char> truth_hit(static_cast<std::size_t>(n_truth), 0);
    std::vector<char> pred_hit(static_cast<std::size_t>(n_pred), 0);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        if (truth_comp[i] >= 0 && pred.data()[i] != 0.0f) {
            truth_hit[static_cast<std::size_t>(truth_comp[i])] = 1;
        }
        if (pred_comp[i] >= 0 && truth.data()[i] != 0.0f) {
            pred_hit[static_cast<std::size_t>(pred_comp[i])] = 1;
        }
    }
    std::size_t detected = 0;
    for (char h : truth_hit) {
        detected += h;
    }
    m.tpr = 100.0 * static_cast<double>(detected) / static_cast<double>(n_truth);
    if (n_pred == 0) {
        m.fpr = 0.0;
    } else {
        std::size_t spurious = 0;
        for (char h : pred_hit) {
            spurious += h == 0;
        }
        m.fpr = 100.0 * static_cast<double>(spurious) / static_cast<double>(n_pred);
    }
    return m;
}

std::vector<std::string> category_names(std::size_t n_classes) {
    if (n_classes == 4) {
        return {"Complete", "Core", "Enhancing"};
    }
    if (n_classes == 2) {
        return {"Lesion"};
    }
    std::vector<std::string> names;
    for (std::size_t c = 1; c < n_classes; ++c) {
        names.push_back("class_" + std::to_string(c));
    }
    return names;
}

std::vector<Tensor<float>> category_maps(const Tensor<float>& labels, std::size_t n_classes) {
    std::vector<Tensor<float>> maps;
    if (n_classes == 4) {
        BinaryMaps b = derive_binary_maps(labels);
        maps.push_back(std::move(b.complete));
        maps.push_back(std::move(b.core));
        maps.push_back(std::move(b.enhancing));
        return maps;
    }
    if (n_classes == 2) {
        Tensor<float> lesion(labels.shape());
        for (std::size_t i = 0; i < labels.numel(); ++i) {
            lesion.data()[i] = labels.data()[i] != 0.0f ? 1.0f : 0.0f;
        }
        maps.push_back(std::move(lesion));
        return maps;
    }
    for (std::size_t c = 1; c < n_classes; ++c) {
        Tensor<float> map(labels.shape());
        for (std::size_t i = 0; i < labels.numel(); ++i) {
            map.data()[i] = labels.data()[i] == static_cast<float>(c) ? 1.0f : 0.0f;
        }
        maps.push_back(std::move(map));
    }
    return maps;
}

std::vector<ModalityMask> report_subsets(std::size_t n_modalities) {
    std::vector<ModalityMask> subsets;
    if (n_modalities == 4) {
        // bit k = modality k (F, T1, T1c, T2) present
        constexpr std::uint64_t order[15] = {8, 4, 2, 1, 12, 6, 3, 10, 9, 5, 7, 11, 13, 14, 15};
        for (std::uint64_t bits : order) {
            subsets.push_back(ModalityMask::from_bits(bits, 4));
        }
        return subsets;
    }
    // Generic fallback: ascending subset size, then ascending bit pattern.
    std::vector<std::uint64_t> all;
    for (std::uint64_t bits = 1; bits < (std::uint64_t{1} << n_modalities); ++bits) {
        all.push_back(bits);
    }
    std::stable_sort(all.begin(), all.end(), [](std::uint64_t a, std::uint64_t b) {
        return std::popcount(a) < std::popcount(b);
    });
    for (std::uint64_t bits : all) {
        subsets.push_back(ModalityMask::from_bits(bits, n_modalities));
    }
    return subsets;
}

std::vector<std::vector<std::size_t>> SubsetReport::wins() const {
    std::vector<std::vector<std::size_t>> tally(
        categories.size(), std::vector<std::size_t>(methods.size(), 0));
    for (const auto& row : rows) {
        for (std::size_t cat = 0; cat < categories.size(); ++cat) {
            std::size_t best = 0;
            long long best_cents = std::llround(row.dsc[cat][0] * 100.0);
            for (std::size_t m = 1; m < methods.size(); ++m) {
                const long long cents = std::llround(row.dsc[cat][m] * 100.0);
                if (cents > best_cents) {
                    best_cents = cents;
                    best = m;
                }
            }
            ++tally[cat][best];
        }
    }
    return tally;
}

SubsetReport sweep_subsets(const HemisParams<float>& hemis,
                           const HemisParams<float>& baseline, const MlpBundle& mlps,
                           const std::vector<Case>& test_cases) {
    if (test_cases.empty()) {
        throw std::invalid_argument("sweep_subsets: empty test split");
    }
    if (hemis.arch.n_modalities != baseline.arch.n_modalities ||
        hemis.arch.n_classes != baseline.arch.n_classes) {
        throw std::invalid_argument("sweep_subsets: model architectures disagree");
    }
    const std::size_t n_mod = hemis.arch.n_modalities;
    const std::size_t n_classes = hemis.arch.n_classes;
    const std::vector<ModalityMask> subsets = report_subsets(n_mod);
    const std::vector<std::string> cats = category_names(n_classes);
    const ModalityMask full = ModalityMask::full(n_mod);

    // dice[case][subset][category][method]
    const std::size_t n_methods = 3;
    std::vector<std::vector<double>> per_case(
        test_cases.size(),
        std::vector<double>(subsets.size() * cats.size() * n_methods, 0.0));

    parallel_for(test_cases.size(), [&](std::size_t ci) {
        const Case& c = test_cases[ci];
        const std::vector<Tensor<float>> truth_maps = category_maps(c.labels, n_classes);
        for (std::size_t si = 0; si < subsets.size(); ++si) {
            const ModalityMask& mask = subsets[si];
            for (std::size_t mi = 0; mi < n_methods; ++mi) {
                Tensor<float> probs;
                if (mi == 0) {
                    probs = model_forward(c.images, mask, hemis);
                } else if (mi == 1) {
                    probs = model_forward(mean_fill(c, mask).images, full, baseline);
                } else {
                    probs = model_forward(mlp_impute(c, mask, mlps).images, full, baseline);
                }
                const Tensor<float> pred = predict_segmentation(probs);
                const std::vector<Tensor<float>> pred_maps = category_maps(pred, n_classes);
                for (std::size_t cat = 0; cat < cats.size(); ++cat) {
                    per_case[ci][(si * cats.size() + cat) * n_methods + mi] =
                        dice_percent(pred_maps[cat], truth_maps[cat]);
                }
            }
        }
    });

    SubsetReport report;
    report.categories = cats;
    report.methods = {"HeMIS", "Mean", "MLP"};
    report.n_cases = test_cases.size();
    for (std::size_t si = 0; si < subsets.size(); ++si) {
        SubsetReport::Row row;
        row.mask = subsets[si];
        row.dsc.assign(cats.size(), std::vector<double>(n_methods, 0.0));
        for (std::size_t cat = 0; cat < cats.size(); ++cat) {
            for (std::size_t mi = 0; mi < n_methods; ++mi) {
                double s = 0.0;
                for (std::size_t ci = 0; ci < test_cases.size(); ++ci) {
                    s += per_case[ci][(si * cats.size() + cat) * n_methods + mi];
                }
                row.dsc[cat][mi] = s / static_cast<double>(test_cases.size());
            }
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

namespace {

std::string two_decimals(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

void emit_report_tsv(const SubsetReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("report: cannot open " + path + " for writing");
    }
    out << "F\tT1\tT1c\tT2\tcategory\tmethod\tdsc\tn_cases\n";
    for (const auto& row : report.rows) {
        for (std::size_t cat = 0; cat < report.categories.size(); ++cat) {
            for (std::size_t mi = 0; mi < report.methods.size(); ++mi) {
                for (std::size_t k = 0; k < row.mask.size(); ++k) {
                    out << (row.mask[k] ? 1 : 0) << '\t';
                }
                out << report.categories[cat] << '\t' << report.methods[mi] << '\t'
                    << two_decimals(row.dsc[cat][mi]) << '\t' << report.n_cases << '\n';
            }
        }
    }
    const auto tally = report.wins();
    for (std::size_t cat = 0; cat < report.categories.size(); ++cat) {
        for (std::size_t mi = 0; mi < report.methods.size(); ++mi) {
            out << "#wins\t" << report.categories[cat] << '\t' << report.methods[mi] << '\t'
                << tally[cat][mi] << '\n';
        }
    }
    if (!out) {
        throw std::runtime_error("report: write failed for " + path);
    }
}

void emit_report_markdown(const SubsetReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("report: cannot open " + path + " for writing");
    }
    const std::vector<std::string> mod_names = {"F", "T1", "T1c", "T2"};
    out << "|";
    for (std::size_t k = 0; k < report.rows[0].mask.size(); ++k) {
        out << ' ' << (k < mod_names.size() ? mod_names[k] : "m" + std::to_string(k)) << " |";
    }
    for (const auto& cat : report.categories) {
        for (const auto& method : report.methods) {
            out << ' ' << cat << ' ' << method << " |";
        }
    }
    out << '\n' << "|";
    const std::size_t n_cols =
        report.rows[0].mask.size() + report.categories.size() * report.methods.size();
    for (std::size_t i = 0; i < n_cols; ++i) {
        out << "---|";
    }
    out << '\n';

    for (const auto& row : report.rows) {
        out << "|";
        for (std::size_t k = 0; k < row.mask.size(); ++k) {
            out << ' ' << (row.mask[k] ? "\xe2\x97\x8f" : "\xe2\x97\xa6") << " |";
        }
        for (std::size_t cat = 0; cat < report.categories.size(); ++cat) {
            // Bold the per-row winner, recomputed exactly as wins() does.
            std::size_t best = 0;
            long long best_cents = std::llround(row.dsc[cat][0] * 100.0);
            for (std::size_t mi = 1; mi < report.methods.size(); ++mi) {
                const long long cents = std::llround(row.dsc[cat][mi] * 100.0);
                if (cents > best_cents) {
                    best_cents = cents;
                    best = mi;
                }
            }
            for (std::size_t mi = 0; mi < report.methods.size(); ++mi) {
                const std::string text = two_decimals(row.dsc[cat][mi]);
                out << ' ' << (mi == best ? "**" + text + "**" : text) << " |";
            }
        }
        out << '\n';
    }

    const auto tally = report.wins();
    out << "| # Wins / " << report.rows.size() << " |";
    for (std::size_t k = 1; k < report.rows[0].mask.size(); ++k) {
        out << "  |";
    }
    for (std::size_t cat = 0; cat < report.categories.size(); ++cat) {
        std::size_t best = 0;
        for (std::size_t mi = 1; mi < report.methods.size(); ++mi) {
            if (tally[cat][mi] > tally[cat][best]) {
                best = mi;
            }
        }
        for (std::size_t mi = 0; mi < report.methods.size(); ++mi) {
            const std::string text = std::to_string(tally[cat][mi]);
            out << ' ' << (mi == best ? "**" + text + "**" : text) << " |";
        }
    }
    out << '\n';
    if (!out) {
        throw std::runtime_error("report: write failed for " + path);
    }
}

void render_overlay(const Tensor<float>& image, const Tensor<float>& pred_labels,
                    const Tensor<float>& truth_labels, const std::string& path) {
    const Tensor<float>* img = &image;
    Tensor<float> flat;
    if (image.rank() == 3 && image.dim(0) == 1) {
        flat = Tensor<float>({image.dim(1), image.dim(2)},
                             std::vector<float>(image.data(), image.data() + image.numel()));
        img = &flat;
    }
    if (img->rank() != 2 || !same_shape(*img, pred_labels) ||
        !same_shape(*img, truth_labels)) {
        throw std::invalid_argument("render_overlay: size mismatch");
    }
    const std::size_t h = img->dim(0), w = img->dim(1);

    float lo = img->data()[0], hi = img->data()[0];
    for (std::size_t i = 0; i < img->numel(); ++i) {
        lo = std::min(lo, img->data()[i]);
        hi = std::max(hi, img->data()[i]);
    }

    // class -> RGB: edema green, core orange, enhancing red
    constexpr unsigned char palette[4][3] = {
        {0, 0, 0}, {0, 200, 0}, {255, 165, 0}, {220, 0, 0}};

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("render_overlay: cannot open " + path + " for writing");
    }
    out << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> row_bytes(w * 3);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const float v = (*img)(i, j);
            const int gray =
                hi > lo ? static_cast<int>(std::lround(255.0 * (v - lo) / (hi - lo))) : 128;
            unsigned char r = static_cast<unsigned char>(gray);
            unsigned char g = r, b = r;

            const auto cls = static_cast<long>(pred_labels(i, j));
            if (cls < 0 || cls > 3) {
                throw std::invalid_argument("render_overlay: label out of palette range");
            }
            if (cls > 0) {
                r = static_cast<unsigned char>((gray + palette[cls][0]) / 2);
                g = static_cast<unsigned char>((gray + palette[cls][1]) / 2);
                b = static_cast<unsigned char>((gray + palette[cls][2]) / 2);
            }

            const float t = truth_labels(i, j);
            if (t != 0.0f) {
                const bool boundary =
                    (i == 0 || truth_labels(i - 1, j) != t) ||
                    (i + 1 >= h || truth_labels(i + 1, j) != t) ||
                    (j == 0 || truth_labels(i, j - 1) != t) ||
                    (j + 1 >= w || truth_labels(i, j + 1) != t);
                if (boundary) {
                    r = g = b = 255;
                }
            }
            row_bytes[j * 3] = r;
            row_bytes[j * 3 + 1] = g;
            row_bytes[j * 3 + 2] = b;
        }
        out.write(reinterpret_cast<const char*>(row_bytes.data()),
                  static_cast<std::streamsize>(row_bytes.size()));
    }
    if (!out) {
        throw std::runtime_error("render_overlay: write failed for " + path);
    }
}

}  // namespace hemis
