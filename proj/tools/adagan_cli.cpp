#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adagan/checkpoint.hpp"
#include "adagan/gradcheck.hpp"
#include "adagan/pipeline.hpp"

namespace fs = std::filesystem;
using namespace adagan;

namespace {

constexpr double kGradTolerance = 1e-4;

// Holds <dir>/.lock exclusively for the lifetime of the command.
struct DirLock {
    std::string path;
    int fd = -1;

    explicit DirLock(const std::string& dir) {
        fs::create_directories(dir);
        path = (fs::path(dir) / ".lock").string();
        fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            throw IoError("output directory '" + dir +
                          "' is locked by another run (remove " + path +
                          " if that run is gone)");
        }
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] ssize_t n = ::write(fd, pid.data(), pid.size());
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;
    ~DirLock() {
        if (fd >= 0) {
            ::close(fd);
            ::unlink(path.c_str());
        }
    }
};

struct Overrides {
    std::string config_path;
    std::string out;
    uint64_t seed = 0;
    bool seed_set = false;
    int epochs = -1;
    std::string model;
    int seeds_per_case = 20;
};

std::string class_key(int class_id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03d", class_id);
    return buf;
}

uint64_t parse_env_seed(const char* text) {
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(text, &end, 10);
    if (errno != 0 || end == text || *end != '\0') {
        throw ConfigError(std::string("ADA_GAN_SEED must be a non-negative integer, got '") +
                          text + "'");
    }
    return static_cast<uint64_t>(v);
}

// flag > ADA_GAN_SEED > config > default; the split seed follows the master
// seed unless the config pinned it explicitly
void apply_overrides(ExperimentConfig& cfg, const Overrides& ov) {
    if (const char* env = std::getenv("ADA_GAN_SEED")) cfg.seed = parse_env_seed(env);
    if (ov.seed_set) cfg.seed = ov.seed;
    if (!ov.out.empty()) cfg.output_dir = ov.out;
    if (!cfg.split_seed_set) cfg.split_seed = cfg.seed;
}

ExperimentConfig load_config(const Overrides& ov) {
    if (ov.config_path.empty()) {
        throw ConfigError("this command needs --config <file>");
    }
    ExperimentConfig cfg = parse_config(ov.config_path);
    apply_overrides(cfg, ov);
    return cfg;
}

ExperimentConfig load_config_or_synth_defaults(const Overrides& ov) {
    if (!ov.config_path.empty()) return load_config(ov);
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetKind::synth;
    apply_overrides(cfg, ov);
    return cfg;
}

void write_resolved_config(const ExperimentConfig& cfg) {
    write_text_file((fs::path(cfg.output_dir) / "resolved_config.json").string(),
                    report_text(config_to_json(cfg)));
}

void write_outputs(const ExperimentConfig& cfg, const nlohmann::json& report,
                   const std::vector<EpochMetric>& metrics) {
    const fs::path dir(cfg.output_dir);
    write_text_file((dir / "report.json").string(), report_text(report));
    write_text_file((dir / "metrics.csv").string(), metrics_csv(metrics));
    write_resolved_config(cfg);
}

Tensor<float> stack_images(const std::vector<AugmentedSample>& samples, int64_t limit) {
    const int64_t n = std::min<int64_t>(limit, static_cast<int64_t>(samples.size()));
    Tensor<float> images(Shape{n, 1, 28, 28});
    for (int64_t i = 0; i < n; ++i) {
        std::copy_n(samples[static_cast<size_t>(i)].image.values().data(), 784,
                    images.mutable_values().data() + i * 784);
    }
    return images;
}

// ---- commands ---------------------------------------------------------------

int cmd_run_pipeline(const Overrides& ov) {
    ExperimentConfig cfg = load_config(ov);
    DirLock lock(cfg.output_dir);
    PipelineReport report = run_ada_gan(cfg);
    std::printf("selected %s (baseline test accuracy %.4f)\n", report.selected_name.c_str(),
                report.baseline_test_accuracy);
    std::printf("accepted %zu of %zu generated (rate %.3f)\n",
                report.augmentation.accepted.size(), report.augmentation.attempts.size(),
                report.acceptance_rate);
    for (const std::string& w : report.augmentation.warnings) {
        std::fprintf(stderr, "warning: %s\n", w.c_str());
    }
    if (!report.external.test_accuracy.empty()) {
        std::printf("external test accuracy %.4f\n", report.external.test_accuracy.back());
    }
    std::printf("artifacts in %s\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_train_baseline(const Overrides& ov) {
    ExperimentConfig cfg = load_config(ov);
    if (ov.epochs >= 0) cfg.candidate_epochs = ov.epochs;
    DirLock lock(cfg.output_dir);

    auto [train, test] = load_split_dataset(cfg);
    auto candidates = train_candidates(train, test, cfg.candidates, cfg.candidate_epochs,
                                       cfg.batch_size, cfg.seed);
    const size_t best = select_best(candidates);

    std::vector<EpochMetric> metrics;
    nlohmann::json cand_list = nlohmann::json::array();
    for (const CandidateResult& c : candidates) {
        const std::string stage = "candidate_" + c.name;
        for (size_t e = 0; e < c.epoch_loss.size(); ++e) {
            metrics.push_back({stage, static_cast<int>(e + 1), "train", "loss", c.epoch_loss[e]});
        }
        metrics.push_back({stage, cfg.candidate_epochs, "train", "accuracy", c.train_accuracy});
        metrics.push_back({stage, cfg.candidate_epochs, "test", "accuracy", c.test_accuracy});
        cand_list.push_back({{"name", c.name},
                             {"train_accuracy", c.train_accuracy},
                             {"test_accuracy", c.test_accuracy}});
        std::printf("candidate %-12s train %.4f  test %.4f\n", c.name.c_str(), c.train_accuracy,
                    c.test_accuracy);
    }
    metrics.push_back({"selection", 0, "test", "baseline_accuracy", candidates[best].test_accuracy});

    save_network((fs::path(cfg.output_dir) / "voted_classifier.ckpt").string(),
                 candidates[best].network);
    write_outputs(cfg,
                  {{"candidates", cand_list},
                   {"selected", candidates[best].name},
                   {"baseline_test_accuracy", candidates[best].test_accuracy}},
                  metrics);
    std::printf("selected %s\n", candidates[best].name.c_str());
    return 0;
}

int cmd_train_gan(const Overrides& ov) {
    ExperimentConfig cfg = load_config(ov);
    if (ov.epochs >= 0) cfg.gan_epochs = ov.epochs;
    DirLock lock(cfg.output_dir);

    auto [train, test] = load_split_dataset(cfg);
    const GanConfig gan_config = gan_config_from(cfg);
    std::vector<EpochMetric> metrics;
    nlohmann::json per_class;
    for (int c = 0; c < train.class_count; ++c) {
        auto [pair, report] = train_gan_per_class(train, c, cfg.gan_epochs, gan_config, cfg.seed);
        const std::string stage = "gan_class_" + class_key(c);
        for (size_t e = 0; e < report.epochs.size(); ++e) {
            const GanEpochRecord& rec = report.epochs[e];
            const int epoch = static_cast<int>(e + 1);
            metrics.push_back({stage, epoch, "train", "d_loss", rec.d_loss});
            metrics.push_back({stage, epoch, "train", "g_loss", rec.g_loss});
            metrics.push_back({stage, epoch, "train", "probe", rec.probe_score});
        }
        save_gan_pair((fs::path(cfg.output_dir) / (stage + ".ckpt")).string(), pair);
        const GanEpochRecord last =
            report.epochs.empty() ? GanEpochRecord{} : report.epochs.back();
        per_class[class_key(c)] = {{"d_loss", last.d_loss},
                                   {"g_loss", last.g_loss},
                                   {"probe", last.probe_score}};
        std::printf("class %d: %d epochs, final d_loss %.4f g_loss %.4f probe %.4f\n", c,
                    cfg.gan_epochs, last.d_loss, last.g_loss, last.probe_score);
    }
    write_outputs(cfg,
                  {{"classes", train.class_count},
                   {"epochs", cfg.gan_epochs},
                   {"per_class", per_class}},
                  metrics);
    return 0;
}

int cmd_augment(const Overrides& ov) {
    ExperimentConfig cfg = load_config(ov);
    DirLock lock(cfg.output_dir);

    auto [train, test] = load_split_dataset(cfg);
    const fs::path dir(cfg.output_dir);
    Network<float> voted = load_network((dir / "voted_classifier.ckpt").string());
    std::map<int, GanPair> gans;
    for (int c = 0; c < train.class_count; ++c) {
        GanPair pair = load_gan_pair((dir / ("gan_class_" + class_key(c) + ".ckpt")).string());
        if (pair.class_id != c) {
            throw ContractError("checkpoint gan_class_" + class_key(c) + ".ckpt holds class " +
                                std::to_string(pair.class_id));
        }
        gans.emplace(c, std::move(pair));
    }

    const int target = resolve_augment_target(cfg.augment_per_class, train);
    AugmentationResult aug;
    aug.threshold = cfg.threshold;
    if (target > 0) {
        Rng rng = augmentation_rng(cfg.seed);
        aug = generate_augmented_set(gans, voted, target, cfg.perturb, cfg.threshold,
                                     target * cfg.max_attempts_factor, cfg.noise_order, rng);
    }
    for (const std::string& w : aug.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

    Tensor<float> accepted =
        stack_images(aug.accepted, static_cast<int64_t>(aug.accepted.size()));
    std::vector<int> labels;
    for (const AugmentedSample& s : aug.accepted) labels.push_back(s.label);
    save_idx_images((dir / "augmented_images.idx").string(), accepted);
    save_idx_labels((dir / "augmented_labels.idx").string(), labels);
    if (!aug.accepted.empty()) {
        dump_image_grid(stack_images(aug.accepted, 16), 4,
                        (dir / "accepted_samples.pgm").string());
    }

    std::vector<EpochMetric> metrics;
    nlohmann::json generated, accepted_counts;
    for (const auto& [class_id, count] : aug.generated_per_class) {
        metrics.push_back({"augment", 0, "train", "generated_class_" + class_key(class_id),
                           static_cast<double>(count)});
        generated[class_key(class_id)] = count;
    }
    for (const auto& [class_id, count] : aug.accepted_per_class) {
        metrics.push_back({"augment", 0, "train", "accepted_class_" + class_key(class_id),
                           static_cast<double>(count)});
        accepted_counts[class_key(class_id)] = count;
    }
    const double rate = aug.attempts.empty() ? 0.0
                                             : static_cast<double>(aug.accepted.size()) /
                                                   static_cast<double>(aug.attempts.size());
    metrics.push_back({"augment", 0, "train", "acceptance_rate", rate});
    write_outputs(cfg,
                  {{"per_class_target", target},
                   {"generated_per_class", generated},
                   {"accepted_per_class", accepted_counts},
                   {"generated_total", aug.attempts.size()},
                   {"accepted_total", aug.accepted.size()},
                   {"acceptance_rate", rate},
                   {"threshold", cfg.threshold},
                   {"noise_order", noise_order_name(cfg.noise_order)},
                   {"warnings", aug.warnings}},
                  metrics);
    std::printf("accepted %zu of %zu generated (rate %.3f), target %d per class\n",
                aug.accepted.size(), aug.attempts.size(), rate, target);
    return 0;
}

int cmd_eval(const Overrides& ov) {
    ExperimentConfig cfg = load_config(ov);
    DirLock lock(cfg.output_dir);
    const std::string model_path =
        ov.model.empty() ? (fs::path(cfg.output_dir) / "classifier.ckpt").string() : ov.model;
    Network<float> net = load_network(model_path);
    auto [train, test] = load_split_dataset(cfg);
    const double accuracy = evaluate_accuracy(net, test);
    write_outputs(cfg,
                  {{"accuracy", accuracy},
                   {"model", model_path},
                   {"samples", test.size()}},
                  {{"eval", 0, "test", "accuracy", accuracy}});
    std::printf("accuracy %.6f over %lld test samples\n", accuracy,
                static_cast<long long>(test.size()));
    return 0;
}

int cmd_gradcheck(const Overrides& ov) {
    if (!ov.config_path.empty()) parse_config(ov.config_path);  // validate only
    auto results = run_gradient_checks(ov.seeds_per_case);
    double worst = 0.0;
    for (const auto& r : results) {
        std::printf("%-26s max_rel_err %.3e  (%d seeds)\n", r.name.c_str(), r.max_rel_err,
                    r.seeds);
        worst = std::max(worst, r.max_rel_err);
    }
    if (worst >= kGradTolerance) {
        std::printf("gradcheck FAILED: worst %.3e >= %.0e\n", worst, kGradTolerance);
        throw TrainError("gradient check failed: worst relative error " +
                         std::to_string(worst));
    }
    std::printf("gradcheck OK: %zu cases, worst %.3e < %.0e\n", results.size(), worst,
                kGradTolerance);
    return 0;
}

int cmd_synth_data(const Overrides& ov) {
    ExperimentConfig cfg = load_config_or_synth_defaults(ov);
    if (cfg.dataset.kind != DatasetKind::synth) {
        throw ConfigError("synth-data needs a dataset of kind 'synth'");
    }
    DirLock lock(cfg.output_dir);
    const DatasetConfig& d = cfg.dataset;
    LabeledDataset data = synth_glyph_dataset(d.classes, d.per_class, d.complexity, cfg.seed);
    const fs::path dir(cfg.output_dir);
    save_idx_images((dir / "synth_images.idx").string(), data.images);
    save_idx_labels((dir / "synth_labels.idx").string(), data.labels);
    const int64_t preview = std::min<int64_t>(16, data.size());
    std::vector<int64_t> head(static_cast<size_t>(preview));
    std::iota(head.begin(), head.end(), 0);
    dump_image_grid(data.batch_images(head), 4, (dir / "synth_preview.pgm").string());
    write_text_file((dir / "report.json").string(),
                    report_text({{"samples", data.size()},
                                 {"classes", d.classes},
                                 {"per_class", d.per_class},
                                 {"complexity", d.complexity},
                                 {"seed", cfg.seed}}));
    write_resolved_config(cfg);
    std::printf("wrote %lld images across %d classes to %s\n",
                static_cast<long long>(data.size()), d.classes, cfg.output_dir.c_str());
    return 0;
}

int dispatch(const std::string& name, const Overrides& ov) {
    if (name == "run-pipeline") return cmd_run_pipeline(ov);
    if (name == "train-baseline") return cmd_train_baseline(ov);
    if (name == "train-gan") return cmd_train_gan(ov);
    if (name == "augment") return cmd_augment(ov);
    if (name == "eval") return cmd_eval(ov);
    if (name == "gradcheck") return cmd_gradcheck(ov);
    return cmd_synth_data(ov);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial data augmentation trainer"};
    app.require_subcommand(1);

    std::map<std::string, Overrides> opts;
    auto add_common = [&](CLI::App* sub, bool config_required) {
        Overrides& ov = opts[sub->get_name()];
        auto* config_opt =
            sub->add_option("--config", ov.config_path, "experiment config (JSON)");
        if (config_required) config_opt->required();
        sub->add_option("--seed", ov.seed, "master seed (beats ADA_GAN_SEED and the config)");
        sub->add_option("--out", ov.out, "output directory (beats the config)");
        return sub;
    };

    add_common(app.add_subcommand("run-pipeline",
                                  "candidates, GANs, gated augmentation, external training"),
               true);
    add_common(app.add_subcommand("train-baseline", "train candidate classifiers and pick one"),
               true)
        ->add_option("--epochs", opts["train-baseline"].epochs, "override candidate epochs")
        ->check(CLI::NonNegativeNumber);
    add_common(app.add_subcommand("train-gan", "train one GAN per class"), true)
        ->add_option("--epochs", opts["train-gan"].epochs, "override GAN epochs")
        ->check(CLI::NonNegativeNumber);
    add_common(app.add_subcommand("augment",
                                  "generate, perturb, and gate samples with saved models"),
               true);
    add_common(app.add_subcommand("eval", "evaluate a checkpoint on the test split"), true)
        ->add_option("--model", opts["eval"].model,
                     "classifier checkpoint (default <out>/classifier.ckpt)");
    add_common(app.add_subcommand("gradcheck", "check every gradient against finite differences"),
               false)
        ->add_option("--seeds", opts["gradcheck"].seeds_per_case, "random instances per case")
        ->check(CLI::PositiveNumber);
    add_common(app.add_subcommand("synth-data", "write a synthetic glyph dataset as IDX files"),
               false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "E_CONFIG: %s\n", e.what());
        return 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    Overrides& ov = opts[sub->get_name()];
    ov.seed_set = sub->count("--seed") > 0;

    try {
        return dispatch(sub->get_name(), ov);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "E_CONFIG: %s\n", e.what());
    } catch (const InputError& e) {
        std::fprintf(stderr, "E_CONFIG: %s\n", e.what());
    } catch (const BuildError& e) {
        std::fprintf(stderr, "E_CONFIG: %s\n", e.what());
    } catch (const FormatError& e) {
        std::fprintf(stderr, "E_FORMAT: %s\n", e.what());
        return 1;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "E_FORMAT: %s\n", e.what());
        return 1;
    } catch (const IoError& e) {
        std::fprintf(stderr, "E_FORMAT: %s\n", e.what());
        return 1;
    } catch (const TrainError& e) {
        std::fprintf(stderr, "E_TRAIN: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "E_TRAIN: %s\n", e.what());
        return 2;
    }
    return 1;
}
