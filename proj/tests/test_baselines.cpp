#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hemis/baselines.hpp"
#include "hemis/model.hpp"
#include "hemis/rng.hpp"
#include "hemis/synth_data.hpp"
#include "hemis/train.hpp"
#include "support/oracles.hpp"

namespace {

using hemis::Case;
using hemis::ImputationMlp;
using hemis::ImputeTrainConfig;
using hemis::MlpBundle;
using hemis::ModalityMask;
using hemis::Rng;
using hemis::Tensor;

// Modality images drawn from configurable pixelwise generators; labels are a
// horizontal split so both classes exist.
Case make_noise_case(const std::string& id, std::size_t h, std::size_t w, Rng& rng,
                     bool t2_tracks_f) {
    Case c;
    c.id = id;
    c.labels = Tensor<float>({h, w});
    for (std::size_t r = h / 2; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
            c.labels(r, col) = 1.0f;
        }
    }
    for (std::size_t m = 0; m < 4; ++m) {
        c.images.push_back(Tensor<float>({1, h, w}));
    }
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
            const auto f = static_cast<float>(rng.normal());
            c.images[0](0, r, col) = f;
            c.images[1](0, r, col) = static_cast<float>(rng.normal());
            c.images[2](0, r, col) = static_cast<float>(rng.normal());
            c.images[3](0, r, col) =
                t2_tracks_f ? 0.5f * f : static_cast<float>(rng.normal());
        }
    }
    c.available = ModalityMask::full(4);
    return c;
}

std::vector<Case> make_noise_dataset(std::size_t n, std::uint64_t seed, bool t2_tracks_f) {
    Rng rng(seed);
    std::vector<Case> cases;
    for (std::size_t i = 0; i < n; ++i) {
        cases.push_back(make_noise_case("c" + std::to_string(i), 32, 32, rng, t2_tracks_f));
    }
    return cases;
}

bool mlp_bitwise_equal(const ImputationMlp& a, const ImputationMlp& b) {
    return a.target == b.target && a.available_bits == b.available_bits &&
           testsupport::bitwise_equal(a.l1.weights, b.l1.weights) &&
           testsupport::bitwise_equal(a.l1.bias, b.l1.bias) &&
           testsupport::bitwise_equal(a.l2.weights, b.l2.weights) &&
           testsupport::bitwise_equal(a.l2.bias, b.l2.bias) &&
           testsupport::bitwise_equal(a.l3.weights, b.l3.weights) &&
           testsupport::bitwise_equal(a.l3.bias, b.l3.bias);
}

ImputeTrainConfig tiny_mlp_config() {
    ImputeTrainConfig config;
    config.hidden = 8;
    config.samples_per_model = 500;
    config.epochs = 1;
    config.seed = 12;
    return config;
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("mean_fill zeroes absent modalities and nothing else") {
    Rng rng(3);
    const Case c = make_noise_case("case", 32, 32, rng, false);

    SUBCASE("full mask is a bitwise identity") {
        const Case out = hemis::mean_fill(c, ModalityMask::full(4));
        for (std::size_t m = 0; m < 4; ++m) {
            CHECK(testsupport::bitwise_equal(out.images[m], c.images[m]));
        }
        CHECK(testsupport::bitwise_equal(out.labels, c.labels));
        CHECK(out.id == c.id);
    }

    SUBCASE("absent modality becomes all zeros, present ones survive bitwise") {
        const auto mask = ModalityMask::from_bits(0b1101, 4);  // modality 1 absent
        const Case out = hemis::mean_fill(c, mask);
        for (std::size_t i = 0; i < out.images[1].numel(); ++i) {
            REQUIRE(out.images[1].data()[i] == 0.0f);
        }
        CHECK(testsupport::bitwise_equal(out.images[0], c.images[0]));
        CHECK(testsupport::bitwise_equal(out.images[2], c.images[2]));
        CHECK(testsupport::bitwise_equal(out.images[3], c.images[3]));
        CHECK(testsupport::bitwise_equal(out.labels, c.labels));
        CHECK(out.available.all());

        const Case again = hemis::mean_fill(out, mask);
        for (std::size_t m = 0; m < 4; ++m) {
            CHECK(testsupport::bitwise_equal(again.images[m], out.images[m]));
        }
    }

    SUBCASE("empty and mismatched masks are rejected") {
        CHECK_THROWS_WITH_AS(hemis::mean_fill(c, ModalityMask::from_bits(0, 4)),
                             "mean_fill: mask must keep at least one modality",
                             std::invalid_argument);
        CHECK_THROWS_WITH_AS(hemis::mean_fill(c, ModalityMask::full(3)),
                             "mean_fill: mask size mismatch", std::invalid_argument);
    }
}

TEST_CASE("impute config validation") {
    ImputeTrainConfig config;
    CHECK_NOTHROW(config.validate());
    config.hidden = 0;
    CHECK_THROWS_WITH_AS(config.validate(), "impute config: sizes must be positive",
                         std::invalid_argument);
    config = ImputeTrainConfig{};
    config.learning_rate = 0.0;
    CHECK_THROWS_WITH_AS(config.validate(), "impute config: bad optimizer settings",
                         std::invalid_argument);
}

TEST_CASE("all 28 regressor configurations are trained exactly once") {
    const auto cases = make_noise_dataset(2, 40, false);
    const MlpBundle bundle = hemis::train_imputation_mlps(cases, tiny_mlp_config());

    REQUIRE(bundle.models.size() == 28);
    std::set<std::pair<std::size_t, std::uint64_t>> keys;
    for (const auto& m : bundle.models) {
        CHECK(m.target < 4);
        CHECK(m.available_bits >= 1);
        CHECK(m.available_bits < 16);
        CHECK(((m.available_bits >> m.target) & 1) == 0);
        CHECK(m.input_dim() == static_cast<std::size_t>(std::popcount(m.available_bits)));
        keys.insert({m.target, m.available_bits});
    }
    CHECK(keys.size() == 28);

    // Every Table-3 configuration with at least one absent modality is
    // covered: each absent target under each available set has its model.
    for (std::uint64_t bits = 1; bits < 15; ++bits) {
        for (std::size_t target = 0; target < 4; ++target) {
            if ((bits >> target) & 1) {
                continue;
            }
            CHECK_NOTHROW(bundle.find(target, bits));
        }
    }
}

TEST_CASE("exact linear relation is learned to near-zero error") {
    const auto cases = make_noise_dataset(4, 41, true);  // T2 = 0.5 * F everywhere

    ImputeTrainConfig config;
    config.hidden = 32;
    config.samples_per_model = 8000;
    config.epochs = 2;
    config.seed = 7;
    const MlpBundle bundle = hemis::train_imputation_mlps(cases, config);

    const ImputationMlp& mlp = bundle.find(3, 0b0001);  // T2 from {F}
    REQUIRE(mlp.input_dim() == 1);

    Rng probe(909);
    std::vector<float> xs(2000);
    std::vector<float> ys(2000);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        xs[i] = static_cast<float>(probe.normal());
        ys[i] = 0.5f * xs[i];
    }
    CHECK(hemis::mlp_mse(mlp, xs, ys) < 1e-3);

    SUBCASE("imputed image matches the true modality within 0.05 RMS") {
        Rng rng(55);
        const Case c = make_noise_case("probe", 32, 32, rng, true);
        const auto mask = ModalityMask::from_bits(0b0001, 4);  // only F available
        const Case out = hemis::mlp_impute(c, mask, bundle);

        CHECK(testsupport::bitwise_equal(out.images[0], c.images[0]));
        CHECK(testsupport::bitwise_equal(out.labels, c.labels));
        CHECK(out.available.all());

        double sq = 0.0;
        for (std::size_t i = 0; i < out.images[3].numel(); ++i) {
            const double d = static_cast<double>(out.images[3].data()[i]) -
                             static_cast<double>(c.images[3].data()[i]);
            sq += d * d;
        }
        const double rms = std::sqrt(sq / static_cast<double>(out.images[3].numel()));
        CHECK(rms < 0.05);
    }

    SUBCASE("full mask passes through unchanged") {
        Rng rng(56);
        const Case c = make_noise_case("probe2", 32, 32, rng, true);
        const Case out = hemis::mlp_impute(c, ModalityMask::full(4), bundle);
        for (std::size_t m = 0; m < 4; ++m) {
            CHECK(testsupport::bitwise_equal(out.images[m], c.images[m]));
        }
    }
}

TEST_CASE("independent noise cannot be predicted below its variance") {
    const auto cases = make_noise_dataset(4, 61, false);

    ImputeTrainConfig config;
    config.hidden = 16;
    config.samples_per_model = 3000;
    config.epochs = 2;
    config.seed = 9;
    const MlpBundle bundle = hemis::train_imputation_mlps(cases, config);

    const ImputationMlp& mlp = bundle.find(3, 0b0111);  // T2 from {F, T1, T1c}
    Rng probe(707);
    std::vector<float> xs(3 * 5000);
    std::vector<float> ys(5000);
    for (std::size_t i = 0; i < ys.size(); ++i) {
        for (std::size_t k = 0; k < 3; ++k) {
            xs[i * 3 + k] = static_cast<float>(probe.normal());
        }
        ys[i] = static_cast<float>(probe.normal());
    }
    const double mse = hemis::mlp_mse(mlp, xs, ys);
    CHECK(mse > 0.8);
    CHECK(mse < 1.2);
}

TEST_CASE("mlp training is deterministic under the seed") {
    const auto cases = make_noise_dataset(2, 71, false);
    const auto config = tiny_mlp_config();

    const MlpBundle a = hemis::train_imputation_mlps(cases, config);
    const MlpBundle b = hemis::train_imputation_mlps(cases, config);
    REQUIRE(a.models.size() == b.models.size());
    for (std::size_t i = 0; i < a.models.size(); ++i) {
        CHECK(mlp_bitwise_equal(a.models[i], b.models[i]));
    }

    ImputeTrainConfig other = config;
    other.seed = config.seed + 1;
    const MlpBundle c = hemis::train_imputation_mlps(cases, other);
    CHECK(!testsupport::bitwise_equal(a.models[0].l1.weights, c.models[0].l1.weights));
}

TEST_CASE("imputation without a matching model is an explicit error") {
    Rng rng(81);
    const Case c = make_noise_case("case", 32, 32, rng, false);
    const MlpBundle empty;

    const auto mask = ModalityMask::from_bits(0b0111, 4);
    CHECK_THROWS_AS(hemis::mlp_impute(c, mask, empty), std::runtime_error);
    try {
        hemis::mlp_impute(c, mask, empty);
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("imputation: no model for target 3") !=
              std::string::npos);
    }

    CHECK_THROWS_WITH_AS(hemis::mlp_impute(c, ModalityMask::from_bits(0, 4), empty),
                         "mlp_impute: mask must keep at least one modality",
                         std::invalid_argument);
}

TEST_CASE("mlp_mse validates sample shapes") {
    const auto cases = make_noise_dataset(1, 91, false);
    auto config = tiny_mlp_config();
    config.samples_per_model = 100;
    const MlpBundle bundle = hemis::train_imputation_mlps(cases, config);
    const ImputationMlp& mlp = bundle.find(0, 0b1110);
    std::vector<float> xs(3 * 4);
    std::vector<float> ys(5);  // stride mismatch
    CHECK_THROWS_WITH_AS(hemis::mlp_mse(mlp, xs, ys), "mlp_mse: sample size mismatch",
                         std::invalid_argument);
}

TEST_CASE("bundle file round-trips bitwise and rejects corruption") {
    const auto cases = make_noise_dataset(2, 101, false);
    const MlpBundle bundle = hemis::train_imputation_mlps(cases, tiny_mlp_config());

    const auto dir = testsupport::make_temp_dir("hemis_bundle");
    const std::string path = (dir / "mlps.imp").string();
    bundle.save(path);

    SUBCASE("round trip") {
        const MlpBundle loaded = MlpBundle::load(path);
        REQUIRE(loaded.models.size() == bundle.models.size());
        for (std::size_t i = 0; i < bundle.models.size(); ++i) {
            CHECK(mlp_bitwise_equal(loaded.models[i], bundle.models[i]));
        }
    }

    SUBCASE("corrupt magic") {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        in.close();
        bytes[0] = 'X';
        const std::string bad = (dir / "bad_magic.imp").string();
        std::ofstream out(bad, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_WITH_AS(MlpBundle::load(bad), "bundle: bad magic (not an IMP1 file)",
                             std::runtime_error);
    }

    SUBCASE("truncated file") {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        in.close();
        bytes.resize(bytes.size() - 7);
        const std::string bad = (dir / "short.imp").string();
        std::ofstream out(bad, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        try {
            MlpBundle::load(bad);
            FAIL("expected an error");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("truncat") != std::string::npos);
        }
    }

    SUBCASE("missing file") {
        CHECK_THROWS_AS(MlpBundle::load((dir / "absent.imp").string()), std::runtime_error);
    }

    std::filesystem::remove_all(dir);
}

TEST_CASE("baseline network trains full-mask only and is deterministic") {
    Rng data_rng(111);
    std::vector<hemis::Case> train_cases;
    std::vector<hemis::Case> valid_cases;
    for (int i = 0; i < 3; ++i) {
        train_cases.push_back(make_noise_case("t" + std::to_string(i), 32, 32, data_rng, false));
    }
    valid_cases.push_back(make_noise_case("v0", 32, 32, data_rng, false));

    hemis::HemisArch arch;
    arch.n_modalities = 4;
    arch.f1 = 4;
    arch.f2 = 4;
    arch.f3 = 8;
    arch.kernel = 3;
    arch.n_classes = 2;

    hemis::TrainConfig config;
    config.warmup_epochs = 1;
    config.max_epochs = 2;
    config.patch_size = 9;
    config.batch_size = 4;
    config.batches_per_epoch = 3;
    config.valid_patches = 8;
    config.two_phase = false;
    config.seed = 5;

    Rng init_a(2);
    auto params_a = hemis::init_params<float>(arch, init_a);
    Rng init_b(2);
    auto params_b = hemis::init_params<float>(arch, init_b);

    auto ra = hemis::train_baseline_network(params_a, train_cases, valid_cases, config);
    auto rb = hemis::train_baseline_network(params_b, train_cases, valid_cases, config);

    REQUIRE(ra.history.size() == 2);
    for (const auto& row : ra.history) {
        CHECK(row.mask_histogram == "1111:" + std::to_string(config.batches_per_epoch));
    }

    auto na = hemis::named_tensors(ra.params);
    auto nb = hemis::named_tensors(rb.params);
    for (std::size_t i = 0; i < na.size(); ++i) {
        CHECK(testsupport::bitwise_equal(*na[i].second, *nb[i].second));
    }
}

}  // TEST_SUITE
