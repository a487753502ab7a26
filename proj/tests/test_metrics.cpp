#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hemis/baselines.hpp"
#include "hemis/metrics.hpp"
#include "hemis/model.hpp"
#include "hemis/parallel.hpp"
#include "hemis/rng.hpp"
#include "support/oracles.hpp"

namespace {

using hemis::Case;
using hemis::HemisArch;
using hemis::HemisParams;
using hemis::ImputationMlp;
using hemis::MlpBundle;
using hemis::ModalityMask;
using hemis::Rng;
using hemis::SubsetReport;
using hemis::Tensor;

Tensor<float> binary_map(std::size_t h, std::size_t w,
                         const std::vector<std::pair<std::size_t, std::size_t>>& on) {
    Tensor<float> map({h, w});
    for (const auto& [r, c] : on) {
        map(r, c) = 1.0f;
    }
    return map;
}

// Nested squares: lesion 1 with core 2 and enhancing 3 inside, on random
// multi-modal images.
Case make_eval_case(const std::string& id, std::size_t h, std::size_t w, Rng& rng) {
    Case c;
    c.id = id;
    c.labels = Tensor<float>({h, w});
    for (std::size_t r = 2; r < h - 2; ++r) {
        for (std::size_t col = 2; col < w - 2; ++col) {
            c.labels(r, col) = 1.0f;
        }
    }
    for (std::size_t r = 4; r < h - 4; ++r) {
        for (std::size_t col = 4; col < w - 4; ++col) {
            c.labels(r, col) = 2.0f;
        }
    }
    for (std::size_t r = 5; r < h - 5; ++r) {
        for (std::size_t col = 5; col < w - 5; ++col) {
            c.labels(r, col) = 3.0f;
        }
    }
    for (std::size_t m = 0; m < 4; ++m) {
        Tensor<float> img({1, h, w});
        for (std::size_t i = 0; i < img.numel(); ++i) {
            img.data()[i] = static_cast<float>(rng.normal());
        }
        c.images.push_back(std::move(img));
    }
    c.available = ModalityMask::full(4);
    return c;
}

HemisParams<float> random_params(std::uint64_t seed, std::size_t n_classes) {
    HemisArch arch;
    arch.n_modalities = 4;
    arch.f1 = 2;
    arch.f2 = 2;
    arch.f3 = 4;
    arch.kernel = 3;
    arch.n_classes = n_classes;
    Rng rng(seed);
    return hemis::init_params<float>(arch, rng);
}

HemisParams<float> zero_params(std::size_t n_classes) {
    auto params = random_params(1, n_classes);
    for (auto& [name, tensor] : hemis::named_tensors(params)) {
        tensor->fill(0.0f);
    }
    return params;
}

// 28 regressors that always predict zero, matching mean_fill's output.
MlpBundle zero_bundle() {
    MlpBundle bundle;
    for (std::size_t target = 0; target < 4; ++target) {
        for (std::uint64_t bits = 1; bits < 16; ++bits) {
            if ((bits >> target) & 1) {
                continue;
            }
            ImputationMlp m;
            m.target = target;
            m.available_bits = bits;
            const auto in_n = static_cast<std::size_t>(std::popcount(bits));
            m.l1.weights = hemis::zeros<float>({1, in_n});
            m.l1.bias = hemis::zeros<float>({1});
            m.l2.weights = hemis::zeros<float>({1, 1});
            m.l2.bias = hemis::zeros<float>({1});
            m.l3.weights = hemis::zeros<float>({1, 1});
            m.l3.bias = hemis::zeros<float>({1});
            bundle.models.push_back(std::move(m));
        }
    }
    return bundle;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, '\t')) {
        fields.push_back(field);
    }
    return fields;
}

}  // namespace

TEST_SUITE("eval-report") {

TEST_CASE("dice handles identity, disjoint, partial overlap, and empties") {
    const auto a = binary_map(4, 4, {{0, 0}, {0, 1}, {1, 0}});
    CHECK(hemis::dice_percent(a, a) == 100.0);

    const auto b = binary_map(4, 4, {{3, 3}});
    CHECK(hemis::dice_percent(a, b) == 0.0);

    // |P| = |T| = 80, overlap 40: rows 0..3 vs rows 2..5 of a 20-wide map,
    // so 2 * 40 / 160 gives exactly one half.
    Tensor<float> p({10, 20});
    Tensor<float> t({10, 20});
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 20; ++c) {
            p(r, c) = 1.0f;
            t(r + 2, c) = 1.0f;
        }
    }
    CHECK(hemis::dice_percent(p, t) == 50.0);
    CHECK(hemis::dice_percent(t, p) == 50.0);

    const Tensor<float> empty({4, 4});
    CHECK(hemis::dice_percent(empty, empty) == 100.0);
    CHECK(hemis::dice_percent(a, empty) == 0.0);

    const Tensor<float> other({3, 3});
    CHECK_THROWS_WITH_AS(hemis::dice_percent(a, other), "dice: shape mismatch",
                         std::invalid_argument);
}

TEST_CASE("dice is symmetric and 100 on self for random maps") {
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<float> x({8, 8});
        Tensor<float> y({8, 8});
        for (std::size_t i = 0; i < x.numel(); ++i) {
            x.data()[i] = rng.uniform() < 0.3 ? 1.0f : 0.0f;
            y.data()[i] = rng.uniform() < 0.3 ? 1.0f : 0.0f;
        }
        CHECK(hemis::dice_percent(x, y) == hemis::dice_percent(y, x));
        bool any = false;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            any = any || x.data()[i] != 0.0f;
        }
        if (any) {
            CHECK(hemis::dice_percent(x, x) == 100.0);
        }
    }
}

TEST_CASE("lesion metrics on constructed component layouts") {
    SUBCASE("perfect prediction") {
        const auto t = binary_map(6, 6, {{1, 1}, {1, 2}, {4, 4}});
        const auto m = hemis::vd_tpr_fpr(t, t);
        CHECK(m.vd == 0.0);
        CHECK(m.tpr == 100.0);
        CHECK(m.fpr == 0.0);
    }

    SUBCASE("empty prediction against non-empty truth") {
        const auto t = binary_map(6, 6, {{2, 2}, {2, 3}});
        const Tensor<float> p({6, 6});
        const auto m = hemis::vd_tpr_fpr(p, t);
        CHECK(m.vd == 100.0);
        CHECK(m.tpr == 0.0);
        CHECK(m.fpr == 0.0);
    }

    SUBCASE("two truth blobs, one detected, one spurious prediction") {
        // Truth: blob A {(1,1),(1,2)}, blob B {(5,5)}. Pred: (1,1) detects A;
        // (3,6) touches nothing.
        const auto t = binary_map(8, 8, {{1, 1}, {1, 2}, {5, 5}});
        const auto p = binary_map(8, 8, {{1, 1}, {3, 6}});
        const auto m = hemis::vd_tpr_fpr(p, t);
        CHECK(m.tpr == 50.0);
        CHECK(m.fpr == 50.0);
        CHECK(m.vd == doctest::Approx(100.0 / 3.0).epsilon(1e-12));
    }

    SUBCASE("diagonal pixels are separate components under 4-connectivity") {
        const auto t = binary_map(4, 4, {{1, 1}, {2, 2}});
        const auto p = binary_map(4, 4, {{1, 1}});
        const auto m = hemis::vd_tpr_fpr(p, t);
        CHECK(m.tpr == 50.0);
        CHECK(m.fpr == 0.0);
    }

    SUBCASE("empty truth is undefined") {
        const Tensor<float> t({4, 4});
        const auto p = binary_map(4, 4, {{0, 0}});
        CHECK_THROWS_WITH_AS(hemis::vd_tpr_fpr(p, t), "vd_tpr_fpr: empty truth map",
                             std::invalid_argument);
    }
}

TEST_CASE("category names and maps per class count") {
    CHECK(hemis::category_names(4) ==
          std::vector<std::string>{"Complete", "Core", "Enhancing"});
    CHECK(hemis::category_names(2) == std::vector<std::string>{"Lesion"});
    CHECK(hemis::category_names(3) == std::vector<std::string>{"class_1", "class_2"});

    Tensor<float> labels({2, 3});
    labels(0, 0) = 1.0f;
    labels(0, 1) = 2.0f;
    labels(0, 2) = 3.0f;
    const auto maps4 = hemis::category_maps(labels, 4);
    REQUIRE(maps4.size() == 3);
    CHECK(maps4[0](0, 0) == 1.0f);  // complete: any lesion class
    CHECK(maps4[0](0, 1) == 1.0f);
    CHECK(maps4[0](0, 2) == 1.0f);
    CHECK(maps4[0](1, 0) == 0.0f);
    CHECK(maps4[1](0, 0) == 0.0f);  // core: classes 2 and 3
    CHECK(maps4[1](0, 1) == 1.0f);
    CHECK(maps4[1](0, 2) == 1.0f);
    CHECK(maps4[2](0, 2) == 1.0f);  // enhancing: class 3 only
    CHECK(maps4[2](0, 1) == 0.0f);

    const auto maps2 = hemis::category_maps(labels, 2);
    REQUIRE(maps2.size() == 1);
    CHECK(maps2[0](0, 0) == 1.0f);
    CHECK(maps2[0](1, 1) == 0.0f);
}

TEST_CASE("subset enumeration follows the reference row order") {
    const auto subsets = hemis::report_subsets(4);
    REQUIRE(subsets.size() == 15);
    const std::uint64_t expected[15] = {8, 4, 2, 1, 12, 6, 3, 10, 9, 5, 7, 11, 13, 14, 15};
    for (std::size_t i = 0; i < 15; ++i) {
        CHECK(subsets[i].bits() == expected[i]);
        CHECK(subsets[i].size() == 4);
    }

    const auto generic = hemis::report_subsets(3);
    REQUIRE(generic.size() == 7);
    for (std::size_t i = 1; i < generic.size(); ++i) {
        CHECK(generic[i - 1].count() <= generic[i].count());
    }
}

TEST_CASE("wins tally rounds to report precision and prefers earlier methods on ties") {
    SubsetReport report;
    report.categories = {"Lesion"};
    report.methods = {"HeMIS", "Mean", "MLP"};
    report.n_cases = 1;

    SubsetReport::Row r1;
    r1.mask = ModalityMask::full(4);
    r1.dsc = {{50.001, 50.004, 10.0}};  // both print 50.00: tie goes to HeMIS
    report.rows.push_back(r1);

    SubsetReport::Row r2;
    r2.mask = ModalityMask::from_bits(1, 4);
    r2.dsc = {{10.0, 20.0, 20.006}};  // 20.01 beats 20.00
    report.rows.push_back(r2);

    const auto tally = report.wins();
    REQUIRE(tally.size() == 1);
    CHECK(tally[0][0] == 1);
    CHECK(tally[0][1] == 0);
    CHECK(tally[0][2] == 1);
}

TEST_CASE("sweep produces ordered rows; identical inputs make Mean equal MLP") {
    Rng rng(77);
    std::vector<Case> cases;
    cases.push_back(make_eval_case("e0", 12, 12, rng));
    cases.push_back(make_eval_case("e1", 12, 12, rng));

    const auto hemis_params = random_params(5, 4);
    const auto baseline_params = random_params(6, 4);
    const auto bundle = zero_bundle();

    const SubsetReport report =
        hemis::sweep_subsets(hemis_params, baseline_params, bundle, cases);

    REQUIRE(report.rows.size() == 15);
    CHECK(report.n_cases == 2);
    CHECK(report.categories == std::vector<std::string>{"Complete", "Core", "Enhancing"});
    CHECK(report.methods == std::vector<std::string>{"HeMIS", "Mean", "MLP"});

    const std::uint64_t expected[15] = {8, 4, 2, 1, 12, 6, 3, 10, 9, 5, 7, 11, 13, 14, 15};
    for (std::size_t i = 0; i < 15; ++i) {
        CHECK(report.rows[i].mask.bits() == expected[i]);
        for (std::size_t cat = 0; cat < 3; ++cat) {
            for (std::size_t mi = 0; mi < 3; ++mi) {
                CHECK(report.rows[i].dsc[cat][mi] >= 0.0);
                CHECK(report.rows[i].dsc[cat][mi] <= 100.0);
            }
        }
    }

    // The zero bundle predicts exactly the zeros mean-filling inserts, so the
    // two baseline pipelines see identical inputs on every row.
    for (std::size_t i = 0; i < 15; ++i) {
        for (std::size_t cat = 0; cat < 3; ++cat) {
            CHECK(report.rows[i].dsc[cat][1] == report.rows[i].dsc[cat][2]);
        }
    }

    SUBCASE("thread count does not change the numbers") {
        hemis::set_thread_count(1);
        const SubsetReport serial =
            hemis::sweep_subsets(hemis_params, baseline_params, bundle, cases);
        hemis::set_thread_count(4);
        const SubsetReport parallel =
            hemis::sweep_subsets(hemis_params, baseline_params, bundle, cases);
        hemis::set_thread_count(0);
        REQUIRE(serial.rows.size() == parallel.rows.size());
        for (std::size_t i = 0; i < serial.rows.size(); ++i) {
            for (std::size_t cat = 0; cat < 3; ++cat) {
                for (std::size_t mi = 0; mi < 3; ++mi) {
                    CHECK(serial.rows[i].dsc[cat][mi] == parallel.rows[i].dsc[cat][mi]);
                    CHECK(serial.rows[i].dsc[cat][mi] == report.rows[i].dsc[cat][mi]);
                }
            }
        }
    }
}

TEST_CASE("full-mask row feeds every method the same pipeline") {
    Rng rng(78);
    std::vector<Case> cases;
    cases.push_back(make_eval_case("f0", 12, 12, rng));

    // Same weights for HeMIS and baseline: with nothing missing all three
    // methods reduce to one forward pass.
    const auto params = random_params(9, 4);
    const SubsetReport report = hemis::sweep_subsets(params, params, zero_bundle(), cases);

    const auto& full_row = report.rows[14];
    REQUIRE(full_row.mask.bits() == 15);
    for (std::size_t cat = 0; cat < 3; ++cat) {
        CHECK(full_row.dsc[cat][0] == full_row.dsc[cat][1]);
        CHECK(full_row.dsc[cat][1] == full_row.dsc[cat][2]);
    }
}

TEST_CASE("zero-weight model on lesion-free cases scores 100 everywhere") {
    // Uniform posteriors argmax to class 0; truth is all background, so every
    // category pair is empty-vs-empty.
    std::vector<Case> cases(1);
    Case& c = cases[0];
    c.id = "flat";
    c.labels = Tensor<float>({12, 12});
    Rng rng(79);
    for (std::size_t m = 0; m < 4; ++m) {
        Tensor<float> img({1, 12, 12});
        for (std::size_t i = 0; i < img.numel(); ++i) {
            img.data()[i] = static_cast<float>(rng.normal());
        }
        c.images.push_back(std::move(img));
    }
    c.available = ModalityMask::full(4);

    const auto params = zero_params(4);
    const SubsetReport report = hemis::sweep_subsets(params, params, zero_bundle(), cases);
    for (const auto& row : report.rows) {
        for (std::size_t cat = 0; cat < 3; ++cat) {
            for (std::size_t mi = 0; mi < 3; ++mi) {
                CHECK(row.dsc[cat][mi] == 100.0);
            }
        }
    }

    const auto tally = report.wins();
    for (std::size_t cat = 0; cat < 3; ++cat) {
        std::size_t total = 0;
        for (std::size_t mi = 0; mi < 3; ++mi) {
            total += tally[cat][mi];
        }
        CHECK(total == 15);  // ties award exactly one win per row
        CHECK(tally[cat][0] == 15);
    }
}

TEST_CASE("sweep rejects empty splits and mismatched architectures") {
    const auto params = random_params(5, 4);
    std::vector<Case> empty;
    CHECK_THROWS_WITH_AS(hemis::sweep_subsets(params, params, zero_bundle(), empty),
                         "sweep_subsets: empty test split", std::invalid_argument);

    Rng rng(80);
    std::vector<Case> cases;
    cases.push_back(make_eval_case("x", 12, 12, rng));
    const auto other = random_params(5, 2);
    CHECK_THROWS_WITH_AS(hemis::sweep_subsets(params, other, zero_bundle(), cases),
                         "sweep_subsets: model architectures disagree", std::invalid_argument);
}

TEST_CASE("TSV report: schema, two-decimal values, wins lines, determinism") {
    Rng rng(81);
    std::vector<Case> cases;
    cases.push_back(make_eval_case("t0", 12, 12, rng));
    const auto report =
        hemis::sweep_subsets(random_params(5, 4), random_params(6, 4), zero_bundle(), cases);

    const auto dir = testsupport::make_temp_dir("hemis_report");
    const std::string path_a = (dir / "report_a.tsv").string();
    const std::string path_b = (dir / "report_b.tsv").string();
    hemis::emit_report_tsv(report, path_a);
    hemis::emit_report_tsv(report, path_b);
    CHECK(read_bytes(path_a) == read_bytes(path_b));

    std::ifstream in(path_a);
    std::string header;
    std::getline(in, header);
    CHECK(header == "F\tT1\tT1c\tT2\tcategory\tmethod\tdsc\tn_cases");

    // 15 rows x 3 categories x 3 methods data lines, then 9 wins lines.
    std::vector<std::vector<std::string>> data_lines;
    std::vector<std::vector<std::string>> wins_lines;
    std::string line;
    while (std::getline(in, line)) {
        auto fields = split_tabs(line);
        if (!fields.empty() && fields[0] == "#wins") {
            wins_lines.push_back(fields);
        } else {
            data_lines.push_back(fields);
        }
    }
    CHECK(data_lines.size() == 15 * 3 * 3);
    CHECK(wins_lines.size() == 9);

    for (const auto& fields : data_lines) {
        REQUIRE(fields.size() == 8);
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK((fields[k] == "0" || fields[k] == "1"));
        }
        const auto dot = fields[6].find('.');
        REQUIRE(dot != std::string::npos);
        CHECK(fields[6].size() - dot - 1 == 2);  // two decimals
        CHECK(fields[7] == "1");
    }

    // Recomputing the tally from the printed numbers reproduces the wins
    // lines: printing at two decimals is exactly the rounding wins() uses.
    std::vector<std::vector<std::size_t>> recomputed(3, std::vector<std::size_t>(3, 0));
    const std::vector<std::string> cats = {"Complete", "Core", "Enhancing"};
    const std::vector<std::string> methods = {"HeMIS", "Mean", "MLP"};
    for (std::size_t row = 0; row < 15; ++row) {
        for (std::size_t cat = 0; cat < 3; ++cat) {
            long long best_cents = -1;
            std::size_t best = 0;
            for (std::size_t mi = 0; mi < 3; ++mi) {
                const auto& fields = data_lines[(row * 3 + cat) * 3 + mi];
                REQUIRE(fields[4] == cats[cat]);
                REQUIRE(fields[5] == methods[mi]);
                const long long cents = std::llround(std::stod(fields[6]) * 100.0);
                if (cents > best_cents) {
                    best_cents = cents;
                    best = mi;
                }
            }
            ++recomputed[cat][best];
        }
    }
    for (const auto& fields : wins_lines) {
        REQUIRE(fields.size() == 4);
        std::size_t cat = 0;
        while (cats[cat] != fields[1]) {
            ++cat;
        }
        std::size_t mi = 0;
        while (methods[mi] != fields[2]) {
            ++mi;
        }
        CHECK(recomputed[cat][mi] == std::stoul(fields[3]));
    }

    std::filesystem::remove_all(dir);
}

TEST_CASE("markdown report mirrors the presence glyph layout") {
    SubsetReport report;
    report.categories = {"Lesion"};
    report.methods = {"HeMIS", "Mean", "MLP"};
    report.n_cases = 3;
    SubsetReport::Row r1;
    r1.mask = ModalityMask::from_bits(0b0101, 4);
    r1.dsc = {{70.0, 60.0, 50.0}};
    report.rows.push_back(r1);
    SubsetReport::Row r2;
    r2.mask = ModalityMask::full(4);
    r2.dsc = {{80.0, 90.0, 90.0}};
    report.rows.push_back(r2);

    const auto dir = testsupport::make_temp_dir("hemis_md");
    const std::string path = (dir / "report.md").string();
    hemis::emit_report_markdown(report, path);
    const std::string text = read_bytes(path);

    CHECK(text.find("| F | T1 | T1c | T2 |") == 0);
    CHECK(text.find("Lesion HeMIS") != std::string::npos);

    // Row 1: F and T1c present. One bullet per present modality.
    CHECK(text.find("| \xe2\x97\x8f | \xe2\x97\xa6 | \xe2\x97\x8f | \xe2\x97\xa6 |") !=
          std::string::npos);
    // Row 2: all present.
    CHECK(text.find("| \xe2\x97\x8f | \xe2\x97\x8f | \xe2\x97\x8f | \xe2\x97\x8f |") !=
          std::string::npos);

    // Winners bolded: HeMIS in row 1; Mean wins the row-2 tie against MLP.
    CHECK(text.find("**70.00**") != std::string::npos);
    CHECK(text.find("**90.00** | 90.00") != std::string::npos);
    CHECK(text.find("**60.00**") == std::string::npos);

    // Wins row: one win each for HeMIS and Mean.
    CHECK(text.find("| # Wins / 2 |") != std::string::npos);

    hemis::emit_report_markdown(report, path);
    CHECK(read_bytes(path) == text);
    std::filesystem::remove_all(dir);
}

TEST_CASE("overlay renders hand-computed pixels") {
    Tensor<float> image({2, 2});
    image(0, 0) = 0.0f;
    image(0, 1) = 1.0f;
    image(1, 0) = 0.5f;
    image(1, 1) = 0.25f;

    Tensor<float> pred({2, 2});
    pred(0, 1) = 1.0f;
    pred(1, 0) = 2.0f;
    pred(1, 1) = 3.0f;

    const Tensor<float> no_truth({2, 2});

    const auto dir = testsupport::make_temp_dir("hemis_ppm");
    const std::string path = (dir / "overlay.ppm").string();
    hemis::render_overlay(image, pred, no_truth, path);

    const std::string bytes = read_bytes(path);
    const std::string header = "P6\n2 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 12);
    CHECK(bytes.compare(0, header.size(), header) == 0);

    const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
    // (0,0): gray 0, class 0.
    CHECK(px[0] == 0);
    CHECK(px[1] == 0);
    CHECK(px[2] == 0);
    // (0,1): gray 255, class 1 -> blend with (0,200,0).
    CHECK(px[3] == 127);
    CHECK(px[4] == 227);
    CHECK(px[5] == 127);
    // (1,0): gray 128, class 2 -> blend with (255,165,0).
    CHECK(px[6] == 191);
    CHECK(px[7] == 146);
    CHECK(px[8] == 64);
    // (1,1): gray 64, class 3 -> blend with (220,0,0).
    CHECK(px[9] == 142);
    CHECK(px[10] == 32);
    CHECK(px[11] == 32);

    SUBCASE("rendering twice yields identical bytes") {
        const std::string path2 = (dir / "overlay2.ppm").string();
        hemis::render_overlay(image, pred, no_truth, path2);
        CHECK(read_bytes(path2) == bytes);
    }

    SUBCASE("channel-major single-channel images are accepted") {
        Tensor<float> chan({1, 2, 2});
        for (std::size_t i = 0; i < 4; ++i) {
            chan.data()[i] = image.data()[i];
        }
        const std::string path3 = (dir / "overlay3.ppm").string();
        hemis::render_overlay(chan, pred, no_truth, path3);
        CHECK(read_bytes(path3) == bytes);
    }

    std::filesystem::remove_all(dir);
}

TEST_CASE("overlay edge behavior: empty maps, truth boundaries, bad labels") {
    Tensor<float> image({2, 2});
    image(0, 0) = 0.0f;
    image(0, 1) = 1.0f;
    image(1, 0) = 0.5f;
    image(1, 1) = 0.25f;
    const Tensor<float> none({2, 2});

    const auto dir = testsupport::make_temp_dir("hemis_ppm_edge");

    SUBCASE("no prediction and no truth leaves pure grayscale") {
        const std::string path = (dir / "gray.ppm").string();
        hemis::render_overlay(image, none, none, path);
        const std::string bytes = read_bytes(path);
        const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + 11);
        const unsigned char grays[4] = {0, 255, 128, 64};
        for (int i = 0; i < 4; ++i) {
            CHECK(px[i * 3] == grays[i]);
            CHECK(px[i * 3 + 1] == grays[i]);
            CHECK(px[i * 3 + 2] == grays[i]);
        }
    }

    SUBCASE("truth boundary pixels are white") {
        Tensor<float> truth({2, 2});
        truth.fill(1.0f);  // every pixel borders the image edge
        const std::string path = (dir / "white.ppm").string();
        hemis::render_overlay(image, none, truth, path);
        const std::string bytes = read_bytes(path);
        const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + 11);
        for (int i = 0; i < 12; ++i) {
            CHECK(px[i] == 255);
        }
    }

    SUBCASE("constant image maps to mid gray") {
        Tensor<float> flat({2, 2});
        flat.fill(3.0f);
        const std::string path = (dir / "flat.ppm").string();
        hemis::render_overlay(flat, none, none, path);
        const std::string bytes = read_bytes(path);
        const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + 11);
        for (int i = 0; i < 12; ++i) {
            CHECK(px[i] == 128);
        }
    }

    SUBCASE("labels outside the palette are rejected") {
        Tensor<float> bad({2, 2});
        bad(0, 0) = 4.0f;
        const std::string path = (dir / "bad.ppm").string();
        CHECK_THROWS_WITH_AS(hemis::render_overlay(image, bad, none, path),
                             "render_overlay: label out of palette range",
                             std::invalid_argument);
    }

    SUBCASE("shape mismatch is rejected") {
        const Tensor<float> small({1, 2});
        const std::string path = (dir / "mismatch.ppm").string();
        CHECK_THROWS_WITH_AS(hemis::render_overlay(image, small, none, path),
                             "render_overlay: size mismatch", std::invalid_argument);
    }

    std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
