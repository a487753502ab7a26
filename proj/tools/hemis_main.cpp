// Command-line driver: dataset generation, training, the all-subsets
// evaluation, and single-case segmentation. Exit codes: 0 success,
// 1 runtime failure, 2 usage error.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hemis/baselines.hpp"
#include "hemis/htf.hpp"
#include "hemis/metrics.hpp"
#include "hemis/model.hpp"
#include "hemis/parallel.hpp"
#include "hemis/synth_data.hpp"
#include "hemis/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
    hemis::TrainConfig train;
    std::size_t f1 = 48;
    std::size_t f2 = 48;
    std::size_t f3 = 16;
    std::size_t kernel = 5;
    std::size_t n_classes = 4;
    hemis::ImputeTrainConfig mlp;
};

// Field table shared by the JSON reader, the writer, and the echo. Every
// config key must appear here; anything else in a file is rejected.
template <typename FieldFn>
void for_each_config_field(RunConfig& c, FieldFn&& field) {
    field("learning_rate", c.train.learning_rate);
    field("lr_decay", c.train.lr_decay);
    field("momentum", c.train.momentum);
    field("weight_decay", c.train.weight_decay);
    field("warmup_epochs", c.train.warmup_epochs);
    field("max_epochs", c.train.max_epochs);
    field("patience", c.train.patience);
    field("patch_size", c.train.patch_size);
    field("batch_size", c.train.batch_size);
    field("batches_per_epoch", c.train.batches_per_epoch);
    field("p_keep_all", c.train.p_keep_all);
    field("p_drop_one", c.train.p_drop_one);
    field("seed", c.train.seed);
    field("curriculum", c.train.curriculum);
    field("mask_per_case", c.train.mask_per_case);
    field("two_phase", c.train.two_phase);
    field("phase2_epochs", c.train.phase2_epochs);
    field("phase2_curriculum", c.train.phase2_curriculum);
    field("valid_patches", c.train.valid_patches);
    field("f1", c.f1);
    field("f2", c.f2);
    field("f3", c.f3);
    field("kernel", c.kernel);
    field("n_classes", c.n_classes);
    field("mlp_hidden", c.mlp.hidden);
    field("mlp_samples", c.mlp.samples_per_model);
    field("mlp_epochs", c.mlp.epochs);
    field("mlp_batch_size", c.mlp.batch_size);
    field("mlp_learning_rate", c.mlp.learning_rate);
}

void apply_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("config: cannot open " + path);
    }
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw std::runtime_error("config: " + path + " is not a JSON object");
    }
    std::vector<std::string> known;
    for_each_config_field(config, [&](const char* name, auto&) { known.emplace_back(name); });
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw std::runtime_error("config: unknown key '" + key + "' in " + path);
        }
    }
    for_each_config_field(config, [&](const char* name, auto& slot) {
        if (j.contains(name)) {
            slot = j.at(name).get<std::remove_reference_t<decltype(slot)>>();
            std::cout << "config: " << name << " = " << json(slot).dump() << " (file)\n";
        }
    });
}

json config_to_json(const RunConfig& config) {
    json j;
    for_each_config_field(const_cast<RunConfig&>(config),
                          [&](const char* name, auto& slot) { j[name] = slot; });
    return j;
}

void write_resolved_config(const RunConfig& config, const fs::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("config: cannot write " + path.string());
    }
    out << config_to_json(config).dump(2) << '\n';
}

void write_args_echo(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("config: cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

int resolve_threads(const CLI::Option* opt, int flag_value) {
    if (opt->count() > 0) {
        return flag_value;
    }
    if (const char* env = std::getenv("HEMIS_THREADS")) {
        return std::atoi(env);
    }
    return 0;  // hardware concurrency
}

hemis::HemisArch make_arch(const RunConfig& config) {
    hemis::HemisArch arch;
    arch.n_modalities = hemis::kNumModalities;
    arch.f1 = config.f1;
    arch.f2 = config.f2;
    arch.f3 = config.f3;
    arch.kernel = config.kernel;
    arch.n_classes = config.n_classes;
    arch.modality_names = hemis::modality_names();
    return arch;
}

hemis::ModalityMask parse_modalities(const std::string& list) {
    const auto& names = hemis::modality_names();
    hemis::ModalityMask mask(names.size(), false);
    std::size_t start = 0;
    bool any = false;
    while (start <= list.size()) {
        const std::size_t comma = list.find(',', start);
        const std::string token =
            list.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!token.empty()) {
            const auto it = std::find(names.begin(), names.end(), token);
            if (it == names.end()) {
                throw CLI::ValidationError("--modalities",
                                           "unknown modality '" + token + "'");
            }
            mask.set(static_cast<std::size_t>(it - names.begin()), true);
            any = true;
        }
        if (comma == std::string::npos) {
            break;
        }
        start = comma + 1;
    }
    if (!any) {
        throw CLI::ValidationError("--modalities", "at least one modality required");
    }
    return mask;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hetero-modal image segmentation on synthetic multi-modal phantoms"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags remain valid after the subcommand name

    int threads = 0;
    CLI::Option* threads_opt =
        app.add_option("--threads", threads, "Worker threads (0 = all cores)");

    // generate
    auto* gen = app.add_subcommand("generate", "Build a synthetic dataset");
    std::string gen_out;
    std::size_t gen_cases = 100;
    std::string gen_size = "64x64";
    std::uint64_t gen_seed = 0;
    double gen_difficulty = 0.5;
    bool gen_dataset_stats = false;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--cases", gen_cases, "Number of cases (>=10)");
    gen->add_option("--size", gen_size, "Image size as HxW");
    gen->add_option("--seed", gen_seed, "Generation seed");
    gen->add_option("--difficulty", gen_difficulty, "Noise level in [0,1]");
    gen->add_flag("--dataset-stats", gen_dataset_stats,
                  "Normalize with dataset-level statistics instead of per case");

    // train
    auto* tr = app.add_subcommand("train", "Train the segmentation network");
    std::string tr_data, tr_config, tr_out, tr_mlps;
    bool tr_baseline = false;
    RunConfig config;
    tr->add_option("--data", tr_data, "Dataset directory")->required();
    tr->add_option("--config", tr_config, "JSON config file");
    tr->add_option("--out", tr_out, "Output model file (.hmz)")->required();
    tr->add_flag("--baseline", tr_baseline, "Train without modality dropping");
    tr->add_option("--impute-mlps", tr_mlps, "Also train imputation regressors to this file");
    CLI::Option* o_lr = tr->add_option("--learning-rate", config.train.learning_rate);
    CLI::Option* o_epochs = tr->add_option("--max-epochs", config.train.max_epochs);
    CLI::Option* o_warmup = tr->add_option("--warmup-epochs", config.train.warmup_epochs);
    CLI::Option* o_patch = tr->add_option("--patch-size", config.train.patch_size);
    CLI::Option* o_batch = tr->add_option("--batch-size", config.train.batch_size);
    CLI::Option* o_seed = tr->add_option("--seed", config.train.seed);
    CLI::Option* o_f1 = tr->add_option("--f1", config.f1);
    CLI::Option* o_f2 = tr->add_option("--f2", config.f2);
    CLI::Option* o_f3 = tr->add_option("--f3", config.f3);
    CLI::Option* o_kernel = tr->add_option("--kernel", config.kernel);

    // eval
    auto* ev = app.add_subcommand("eval", "All-subsets evaluation on the test split");
    std::string ev_hemis, ev_baseline, ev_mlps, ev_data, ev_report, ev_markdown;
    ev->add_option("--hemis", ev_hemis, "HeMIS model file")->required();
    ev->add_option("--baseline", ev_baseline, "Baseline model file")->required();
    ev->add_option("--mlps", ev_mlps, "Imputation bundle file")->required();
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--report", ev_report, "Output TSV report")->required();
    ev->add_option("--markdown", ev_markdown, "Optional markdown report");

    // segment
    auto* seg = app.add_subcommand("segment", "Segment one stored case");
    std::string seg_model, seg_case, seg_modalities, seg_out, seg_labels;
    seg->add_option("--model", seg_model, "Model file")->required();
    seg->add_option("--case", seg_case, "Case directory (mod_*.htf, label.htf)")->required();
    seg->add_option("--modalities", seg_modalities, "Comma-separated available modalities")
        ->required();
    seg->add_option("--out", seg_out, "Overlay PPM path")->required();
    seg->add_option("--labels", seg_labels, "Optional label tensor output (.htf)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        hemis::set_thread_count(resolve_threads(threads_opt, threads));

        if (gen->parsed()) {
            std::size_t h = 0, w = 0;
            if (std::sscanf(gen_size.c_str(), "%zux%zu", &h, &w) != 2 || h == 0 || w == 0) {
                std::cerr << "error: --size must look like 64x64\n";
                return 2;
            }
            const hemis::DatasetManifest manifest = hemis::build_dataset(
                gen_out, gen_cases, gen_seed, h, w, gen_difficulty, gen_dataset_stats);
            write_args_echo(json{{"cases", gen_cases},
                                 {"size", gen_size},
                                 {"seed", gen_seed},
                                 {"difficulty", gen_difficulty},
                                 {"dataset_stats", gen_dataset_stats}},
                            fs::path(gen_out) / "generate.config.json");
            std::cout << "dataset: " << gen_out << " (" << manifest.train_ids.size()
                      << " train / " << manifest.valid_ids.size() << " valid / "
                      << manifest.test_ids.size() << " test, " << h << "x" << w << ")\n";
            return 0;
        }

        if (tr->parsed()) {
            // Parsing already wrote any passed flags into `config`; stash them
            // so the file cannot clobber explicit command-line choices.
            const RunConfig cli_values = config;
            if (!tr_config.empty()) {
                apply_config_file(config, tr_config);
            }
            const struct {
                const CLI::Option* opt;
                std::function<void()> restore;
            } overrides[] = {
                {o_lr, [&] { config.train.learning_rate = cli_values.train.learning_rate; }},
                {o_epochs, [&] { config.train.max_epochs = cli_values.train.max_epochs; }},
                {o_warmup, [&] { config.train.warmup_epochs = cli_values.train.warmup_epochs; }},
                {o_patch, [&] { config.train.patch_size = cli_values.train.patch_size; }},
                {o_batch, [&] { config.train.batch_size = cli_values.train.batch_size; }},
                {o_seed, [&] { config.train.seed = cli_values.train.seed; }},
                {o_f1, [&] { config.f1 = cli_values.f1; }},
                {o_f2, [&] { config.f2 = cli_values.f2; }},
                {o_f3, [&] { config.f3 = cli_values.f3; }},
                {o_kernel, [&] { config.kernel = cli_values.kernel; }},
            };
            int cli_overrides = 0;
            for (const auto& o : overrides) {
                if (o.opt->count() > 0) {
                    o.restore();
                    ++cli_overrides;
                }
            }
            std::cout << "config: defaults"
                      << (tr_config.empty() ? "" : " + file " + tr_config) << " + "
                      << cli_overrides << " command-line override(s)\n";

            const hemis::DatasetManifest manifest = hemis::load_manifest(tr_data);
            const std::vector<hemis::Case> train_cases = hemis::load_split(manifest, "train");
            const std::vector<hemis::Case> valid_cases = hemis::load_split(manifest, "valid");

            hemis::Rng init_rng = hemis::Rng(config.train.seed).fork(10);
            hemis::HemisParams<float> params =
                hemis::init_params<float>(make_arch(config), init_rng);

            const hemis::TrainResult result =
                tr_baseline
                    ? hemis::train_baseline_network(std::move(params), train_cases,
                                                    valid_cases, config.train)
                    : hemis::train(std::move(params), train_cases, valid_cases, config.train);

            hemis::save_model(result.params, tr_out);
            fs::path history_path = fs::path(tr_out);
            history_path.replace_extension(".history.tsv");
            hemis::write_history_tsv(result.history, history_path.string());
            fs::path config_path = fs::path(tr_out);
            config_path.replace_extension(".config.json");
            write_resolved_config(config, config_path);
            std::cout << "model: " << tr_out << " (best valid loss "
                      << result.best_valid_loss << " at epoch " << result.best_epoch
                      << ")\nhistory: " << history_path.string() << "\n";

            if (!tr_mlps.empty()) {
                hemis::ImputeTrainConfig mlp_config = config.mlp;
                mlp_config.seed = config.train.seed;
                const hemis::MlpBundle bundle =
                    hemis::train_imputation_mlps(train_cases, mlp_config);
                bundle.save(tr_mlps);
                std::cout << "imputation bundle: " << tr_mlps << " (" << bundle.models.size()
                          << " models)\n";
            }
            return 0;
        }

        if (ev->parsed()) {
            const auto hemis_params = hemis::load_model<float>(ev_hemis);
            const auto baseline_params = hemis::load_model<float>(ev_baseline);
            const hemis::MlpBundle bundle = hemis::MlpBundle::load(ev_mlps);
            const hemis::DatasetManifest manifest = hemis::load_manifest(ev_data);
            const std::vector<hemis::Case> test_cases = hemis::load_split(manifest, "test");

            const hemis::SubsetReport report =
                hemis::sweep_subsets(hemis_params, baseline_params, bundle, test_cases);
            hemis::emit_report_tsv(report, ev_report);
            if (!ev_markdown.empty()) {
                hemis::emit_report_markdown(report, ev_markdown);
            }
            write_args_echo(json{{"hemis", ev_hemis},
                                 {"baseline", ev_baseline},
                                 {"mlps", ev_mlps},
                                 {"data", ev_data}},
                            fs::path(ev_report.empty() ? "report" : ev_report)
                                .replace_extension(".config.json"));

            const auto tally = report.wins();
            std::cout << "report: " << ev_report << " (" << report.n_cases << " cases)\n";
            for (std::size_t cat = 0; cat < report.categories.size(); ++cat) {
                std::cout << "wins " << report.categories[cat] << ":";
                for (std::size_t mi = 0; mi < report.methods.size(); ++mi) {
                    std::cout << ' ' << report.methods[mi] << '=' << tally[cat][mi];
                }
                std::cout << '\n';
            }
            return 0;
        }

        if (seg->parsed()) {
            const auto params = hemis::load_model<float>(seg_model);
            const hemis::ModalityMask mask = parse_modalities(seg_modalities);

            hemis::Case c;
            c.id = fs::path(seg_case).filename().string();
            for (std::size_t m = 0; m < hemis::kNumModalities; ++m) {
                c.images.push_back(hemis::load_htf<float>(
                    (fs::path(seg_case) / ("mod_" + hemis::modality_names()[m] + ".htf"))
                        .string()));
            }
            c.labels = hemis::load_htf<float>((fs::path(seg_case) / "label.htf").string());

            const hemis::Tensor<float> probs = hemis::model_forward(c.images, mask, params);
            const hemis::Tensor<float> pred = hemis::predict_segmentation(probs);

            std::size_t background = 0;
            while (background < mask.size() && !mask[background]) {
                ++background;
            }
            hemis::render_overlay(c.images[background], pred, c.labels, seg_out);
            if (!seg_labels.empty()) {
                hemis::save_htf(pred, seg_labels);
            }
            write_args_echo(json{{"model", seg_model},
                                 {"case", seg_case},
                                 {"modalities", seg_modalities}},
                            fs::path(seg_out).replace_extension(".config.json"));
            std::cout << "overlay: " << seg_out << " (modalities " << mask.to_string()
                      << ")\n";
            return 0;
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
