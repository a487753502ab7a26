#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "hemis/htf.hpp"
#include "hemis/parallel.hpp"
#include "hemis/synth_data.hpp"

namespace fs = std::filesystem;

namespace hemis {

namespace {

// Additive lesion contrast per modality and class (background, edema, core,
// enhancing). F lights up the whole lesion, T1c the enhancing rim, T2 the
// lesion moderately, T1 barely at all.
constexpr double kContrast[kNumModalities][kNumClasses] = {
    {0.0, 2.2, 2.2, 2.2},    // F
    {0.0, 0.1, -0.3, -0.3},  // T1
    {0.0, 0.05, 0.9, 3.0},   // T1c
    {0.0, 1.5, 1.7, 1.7},    // T2
};

constexpr double kNoisePerDifficulty = 0.55;
constexpr double kLesionFreeProbability = 0.1;
constexpr int kGeometryRetries = 50;

struct Ellipse {
    double cx, cy;      // center (column, row)
    double a, b;        // semi-axes along the rotated frame
    double cos_t, sin_t;

    bool contains(double x, double y) const {
        const double dx = x - cx;
        const double dy = y - cy;
        const double u = dx * cos_t + dy * sin_t;
        const double v = -dx * sin_t + dy * cos_t;
        return (u / a) * (u / a) + (v / b) * (v / b) <= 1.0;
    }
};

struct Wave {
    double amp, fx, fy, phase;
};

}  // namespace

const std::vector<std::string>& modality_names() {
    static const std::vector<std::string> names = {"F", "T1", "T1c", "T2"};
    return names;
}

Case generate_case(Rng& rng, std::size_t height, std::size_t width, double difficulty) {
    if (height < 32 || width < 32) {
        throw std::invalid_argument("generate_case: height and width must be at least 32");
    }
    if (difficulty < 0.0 || difficulty > 1.0) {
        throw std::invalid_argument("generate_case: difficulty must be in [0,1]");
    }
    const double h = static_cast<double>(height);
    const double w = static_cast<double>(width);

    const bool has_lesion = rng.uniform() >= kLesionFreeProbability;

    // Shared smooth anatomy: a handful of cosine waves.
    Wave waves[3];
    for (auto& wave : waves) {
        wave.amp = 0.3 + 0.4 * rng.uniform();
        wave.fx = 0.5 + 2.5 * rng.uniform();
        wave.fy = 0.5 + 2.5 * rng.uniform();
        wave.phase = 2.0 * std::numbers::pi * rng.uniform();
    }
    double gain[kNumModalities];
    double offset[kNumModalities];
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        gain[m] = 0.8 + 0.4 * rng.uniform();
        offset[m] = -0.2 + 0.4 * rng.uniform();
    }

    Case c;
    c.labels = Tensor<float>({height, width});

    if (has_lesion) {
        const double min_dim = std::min(h, w);
        bool placed = false;
        for (int attempt = 0; attempt < kGeometryRetries && !placed; ++attempt) {
            const double r = (0.18 + 0.10 * rng.uniform()) * min_dim;
            const double aspect = 0.75 + 0.5 * rng.uniform();
            const double theta = std::numbers::pi * rng.uniform();
            Ellipse complete;
            complete.a = r * aspect;
            complete.b = r / aspect;
            complete.cos_t = std::cos(theta);
            complete.sin_t = std::sin(theta);
            const double margin = std::max(complete.a, complete.b) + 2.0;
            complete.cx = margin + (w - 1.0 - 2.0 * margin) * rng.uniform();
            complete.cy = margin + (h - 1.0 - 2.0 * margin) * rng.uniform();

            auto nested = [&rng](const Ellipse& outer, double rho) {
                Ellipse inner = outer;
                inner.a = outer.a * rho;
                inner.b = outer.b * rho;
                const double max_shift = (1.0 - rho) * std::min(outer.a, outer.b) * 0.8;
                const double dir = 2.0 * std::numbers::pi * rng.uniform();
                const double mag = max_shift * rng.uniform();
                inner.cx = outer.cx + mag * std::cos(dir);
                inner.cy = outer.cy + mag * std::sin(dir);
                return inner;
            };
            const Ellipse core = nested(complete, 0.5 + 0.2 * rng.uniform());
            const Ellipse enhancing = nested(core, 0.5 + 0.2 * rng.uniform());

            // Rasterize and verify: regions non-empty, strictly nested.
            Tensor<float> labels({height, width});
            std::size_t n_complete = 0, n_core = 0, n_enh = 0;
            bool nested_ok = true;
            for (std::size_t i = 0; i < height && nested_ok; ++i) {
                for (std::size_t j = 0; j < width; ++j) {
                    const double x = static_cast<double>(j);
                    const double y = static_cast<double>(i);
                    const bool in_c = complete.contains(x, y);
                    const bool in_k = core.contains(x, y);
                    const bool in_e = enhancing.contains(x, y);
                    if ((in_e && !in_k) || (in_k && !in_c)) {
                        nested_ok = false;
                        break;
                    }
                    if (in_e) {
                        labels(i, j) = 3.0f;
                        ++n_enh;
                        ++n_core;
                        ++n_complete;
                    } else if (in_k) {
                        labels(i, j) = 2.0f;
                        ++n_core;
                        ++n_complete;
                    } else if (in_c) {
                        labels(i, j) = 1.0f;
                        ++n_complete;
                    }
                }
            }
            if (nested_ok && n_enh > 0 && n_core > n_enh && n_complete > n_core) {
                c.labels = std::move(labels);
                placed = true;
            }
        }
        if (!placed) {
            throw std::runtime_error("generate_case: degenerate geometry retries exhausted");
        }
    }

    const double noise_sd = kNoisePerDifficulty * difficulty;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        Tensor<float> img({1, height, width});
        for (std::size_t i = 0; i < height; ++i) {
            for (std::size_t j = 0; j < width; ++j) {
                double anatomy = 0.0;
                for (const auto& wave : waves) {
                    anatomy += wave.amp *
                               std::cos(2.0 * std::numbers::pi *
                                            (wave.fx * static_cast<double>(j) / w +
                                             wave.fy * static_cast<double>(i) / h) +
                                        wave.phase);
                }
                const auto cls = static_cast<std::size_t>(c.labels(i, j));
                double v = gain[m] * anatomy + offset[m] + kContrast[m][cls];
                if (noise_sd > 0.0) {
                    v += noise_sd * rng.normal();
                }
                img(0, i, j) = static_cast<float>(v);
            }
        }
        check_finite(img, "generate_case");
        c.images.push_back(std::move(img));
    }
    c.available = ModalityMask::full(kNumModalities);
    return c;
}

NormStats compute_norm_stats(const std::vector<const Tensor<float>*>& images) {
    std::vector<float> pool;
    std::size_t total = 0;
    for (const auto* img : images) {
        total += img->numel();
    }
    if (total == 0) {
        throw std::invalid_argument("normalize: no pixels");
    }
    pool.reserve(total);
    for (const auto* img : images) {
        pool.insert(pool.end(), img->data(), img->data() + img->numel());
    }
    std::sort(pool.begin(), pool.end());

    // Nearest-rank quantile indices. Re-running the clip on already-clipped
    // data lands on the same bounds, which makes normalization idempotent.
    const std::size_t n = pool.size();
    const auto lo_idx = static_cast<std::size_t>(std::floor(0.001 * static_cast<double>(n - 1)));
    const auto hi_idx = static_cast<std::size_t>(std::ceil(0.999 * static_cast<double>(n - 1)));

    NormStats s;
    s.clip_lo = pool[lo_idx];
    s.clip_hi = pool[hi_idx];

    double sum = 0.0;
    for (float v : pool) {
        sum += std::clamp(static_cast<double>(v), s.clip_lo, s.clip_hi);
    }
    s.mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (float v : pool) {
        const double d = std::clamp(static_cast<double>(v), s.clip_lo, s.clip_hi) - s.mean;
        sq += d * d;
    }
    s.stddev = std::sqrt(sq / static_cast<double>(n));
    return s;
}

void apply_norm_stats(Tensor<float>& image, const NormStats& stats) {
    if (!(stats.stddev > 1e-12)) {
        throw std::runtime_error("normalize: zero-variance image");
    }
    float* p = image.data();
    for (std::size_t i = 0; i < image.numel(); ++i) {
        const double v = std::clamp(static_cast<double>(p[i]), stats.clip_lo, stats.clip_hi);
        p[i] = static_cast<float>((v - stats.mean) / stats.stddev);
    }
    check_finite(image, "normalize");
}

void normalize_case(Case& c) {
    for (auto& img : c.images) {
        apply_norm_stats(img, compute_norm_stats({&img}));
    }
}

const std::vector<std::string>& DatasetManifest::ids_for(const std::string& split) const {
    if (split == "train") {
        return train_ids;
    }
    if (split == "valid") {
        return valid_ids;
    }
    if (split == "test") {
        return test_ids;
    }
    throw std::invalid_argument("dataset: unknown split '" + split + "'");
}

namespace {

std::string case_dir(const DatasetManifest& m, const std::string& split,
                     const std::string& case_id) {
    for (const auto& id : m.ids_for(split)) {
        if (id == case_id) {
            return (fs::path(m.root) / split / case_id).string();
        }
    }
    throw std::invalid_argument("dataset: case '" + case_id + "' not in split '" + split + "'");
}

void save_case(const Case& c, const fs::path& dir) {
    fs::create_directories(dir);
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        save_htf(c.images[m], (dir / ("mod_" + modality_names()[m] + ".htf")).string());
    }
    save_htf(c.labels, (dir / "label.htf").string());
}

}  // namespace

DatasetManifest build_dataset(const std::string& out_dir, std::size_t n_cases,
                              std::uint64_t seed, std::size_t height, std::size_t width,
                              double difficulty, bool per_dataset_stats) {
    if (n_cases < 10) {
        throw std::invalid_argument("build_dataset: need at least 10 cases");
    }
    Rng master(seed);

    // Per-case forked generators keep generation order-free, so cases can be
    // produced in parallel without changing their content.
    std::vector<Case> cases(n_cases);
    std::vector<Rng> case_rngs;
    case_rngs.reserve(n_cases);
    for (std::size_t i = 0; i < n_cases; ++i) {
        case_rngs.push_back(master.fork(i));
    }
    parallel_for(n_cases, [&](std::size_t i) {
        cases[i] = generate_case(case_rngs[i], height, width, difficulty);
        char buf[16];
        std::snprintf(buf, sizeof(buf), "case_%04zu", i);
        cases[i].id = buf;
    });

    DatasetManifest manifest;
    manifest.root = out_dir;
    manifest.seed = seed;
    manifest.height = height;
    manifest.width = width;
    manifest.difficulty = difficulty;

    const std::size_t n_train = (n_cases * 7) / 10;
    const std::size_t n_valid = n_cases / 10;
    for (std::size_t i = 0; i < n_cases; ++i) {
        if (i < n_train) {
            manifest.train_ids.push_back(cases[i].id);
        } else if (i < n_train + n_valid) {
            manifest.valid_ids.push_back(cases[i].id);
        } else {
            manifest.test_ids.push_back(cases[i].id);
        }
    }

    if (per_dataset_stats) {
        manifest.norm_mode = "per_dataset";
        // Statistics come from the training split only; the same transform is
        // then applied to every split.
        for (std::size_t m = 0; m < kNumModalities; ++m) {
            std::vector<const Tensor<float>*> views;
            for (std::size_t i = 0; i < n_train; ++i) {
                views.push_back(&cases[i].images[m]);
            }
            manifest.norm_stats.push_back(compute_norm_stats(views));
        }
        parallel_for(n_cases, [&](std::size_t i) {
            for (std::size_t m = 0; m < kNumModalities; ++m) {
                apply_norm_stats(cases[i].images[m], manifest.norm_stats[m]);
            }
        });
    } else {
        manifest.norm_mode = "per_case";
        parallel_for(n_cases, [&](std::size_t i) { normalize_case(cases[i]); });
    }

    for (std::size_t i = 0; i < n_cases; ++i) {
        const char* split = i < n_train ? "train" : (i < n_train + n_valid ? "valid" : "test");
        save_case(cases[i], fs::path(out_dir) / split / cases[i].id);
    }

    nlohmann::json j;
    j["version"] = 1;
    j["seed"] = seed;
    j["height"] = height;
    j["width"] = width;
    j["difficulty"] = difficulty;
    j["modalities"] = modality_names();
    j["normalization"] = {{"mode", manifest.norm_mode}, {"q_lo", 0.001}, {"q_hi", 0.999}};
    if (per_dataset_stats) {
        nlohmann::json stats = nlohmann::json::array();
        for (const auto& s : manifest.norm_stats) {
            stats.push_back({{"clip_lo", s.clip_lo},
                             {"clip_hi", s.clip_hi},
                             {"mean", s.mean},
                             {"stddev", s.stddev}});
        }
        j["normalization"]["stats"] = stats;
    }
    j["splits"] = {{"train", manifest.train_ids},
                   {"valid", manifest.valid_ids},
                   {"test", manifest.test_ids}};

    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    if (!out) {
        throw std::runtime_error("build_dataset: cannot write manifest in " + out_dir);
    }
    out << j.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error("build_dataset: manifest write failed");
    }
    return manifest;
}

DatasetManifest load_manifest(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) {
        throw std::runtime_error("dataset: cannot open manifest in " + dir);
    }
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw std::runtime_error("dataset: malformed manifest in " + dir);
    }
    try {
        DatasetManifest m;
        m.root = dir;
        m.seed = j.at("seed").get<std::uint64_t>();
        m.height = j.at("height").get<std::size_t>();
        m.width = j.at("width").get<std::size_t>();
        m.difficulty = j.at("difficulty").get<double>();
        m.norm_mode = j.at("normalization").at("mode").get<std::string>();
        if (j.at("normalization").contains("stats")) {
            for (const auto& s : j.at("normalization").at("stats")) {
                NormStats ns;
                ns.clip_lo = s.at("clip_lo").get<double>();
                ns.clip_hi = s.at("clip_hi").get<double>();
                ns.mean = s.at("mean").get<double>();
                ns.stddev = s.at("stddev").get<double>();
                m.norm_stats.push_back(ns);
            }
        }
        m.train_ids = j.at("splits").at("train").get<std::vector<std::string>>();
        m.valid_ids = j.at("splits").at("valid").get<std::vector<std::string>>();
        m.test_ids = j.at("splits").at("test").get<std::vector<std::string>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("dataset: malformed manifest in " + dir + ": " + e.what());
    }
}

Case load_case(const DatasetManifest& manifest, const std::string& split,
               const std::string& case_id) {
    const fs::path dir = case_dir(manifest, split, case_id);
    Case c;
    c.id = case_id;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
        c.images.push_back(
            load_htf<float>((dir / ("mod_" + modality_names()[m] + ".htf")).string()));
    }
    c.labels = load_htf<float>((dir / "label.htf").string());
    c.available = ModalityMask::full(kNumModalities);
    return c;
}

std::vector<Case> load_split(const DatasetManifest& manifest, const std::string& split) {
    const auto& ids = manifest.ids_for(split);
    std::vector<Case> cases(ids.size());
    parallel_for(ids.size(), [&](std::size_t i) {
        cases[i] = load_case(manifest, split, ids[i]);
    });
    return cases;
}

BinaryMaps derive_binary_maps(const Tensor<float>& labels) {
    if (labels.rank() != 2) {
        throw std::invalid_argument("derive_binary_maps: labels must be [H,W]");
    }
    BinaryMaps maps;
    maps.complete = Tensor<float>(labels.shape());
    maps.core = Tensor<float>(labels.shape());
    maps.enhancing = Tensor<float>(labels.shape());
    for (std::size_t i = 0; i < labels.numel(); ++i) {
        const float v = labels.data()[i];
        if (v != 0.0f && v != 1.0f && v != 2.0f && v != 3.0f) {
            throw std::invalid_argument("derive_binary_maps: label out of range at index " +
                                        std::to_string(i));
        }
        maps.complete.data()[i] = v >= 1.0f ? 1.0f : 0.0f;
        maps.core.data()[i] = v >= 2.0f ? 1.0f : 0.0f;
        maps.enhancing.data()[i] = v == 3.0f ? 1.0f : 0.0f;
    }
    return maps;
}

}  // namespace hemis
