#include "adagan/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "adagan/checkpoint.hpp"
#include "adagan/errors.hpp"

namespace fs = std::filesystem;

namespace adagan {

namespace {

// Stream tags for seed derivation; distinct from those in data.cpp and gan.cpp.
constexpr uint64_t kCandidateInitStream = 0x63616E64;
constexpr uint64_t kCandidateShuffleStream = 0x63736866;
constexpr uint64_t kAugmentStream = 0x6175676D;
constexpr uint64_t kExternalInitStream = 0x65787469;
constexpr uint64_t kExternalShuffleStream = 0x65787368;
constexpr uint64_t kPerturbMergedStream = 0x706D6764;

constexpr double kClassifierLearningRate = 1e-3;
constexpr double kGanLearningRate = 2e-4;

std::string class_key(int class_id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03d", class_id);
    return buf;
}

std::vector<int64_t> iota_indices(int64_t n) {
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

Tensor<float> slice_image(const Tensor<float>& batch, int64_t row) {
    Tensor<float> img(Shape{1, 28, 28});
    std::copy_n(batch.values().data() + row * 784, 784, img.mutable_values().data());
    return img;
}

std::vector<double> gate_confidences(const Tensor<float>& images, int source_class,
                                     const Network<float>& classifier) {
    Graph<float> g(false);
    Tensor<float> probs = classifier.forward(g, images);
    const int64_t n = probs.dim(0), k = probs.dim(1);
    std::vector<double> out(static_cast<size_t>(n));
    const float* pv = probs.values().data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pv[i * k + source_class];
    return out;
}

void check_gate_classifier(const Network<float>& classifier) {
    if (classifier.spec.output_kind != OutputKind::probabilities || classifier.class_count < 2) {
        throw ContractError("confidence gating needs a probability classifier");
    }
}

void check_threshold(double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ContractError("confidence threshold must lie in (0,1), got " +
                            std::to_string(threshold));
    }
}

}  // namespace

std::vector<CandidateResult> train_candidates(const LabeledDataset& train,
                                              const LabeledDataset& test,
                                              const std::vector<std::string>& names, int epochs,
                                              int batch_size, uint64_t seed) {
    if (names.empty()) throw ContractError("train_candidates needs at least one candidate");
    if (epochs < 0 || batch_size < 1) {
        throw ContractError("train_candidates needs epochs >= 0 and batch_size >= 1");
    }

    std::vector<CandidateResult> out;
    for (size_t i = 0; i < names.size(); ++i) {
        const std::string& name = names[i];
        try {
            Rng init = Rng::derive(seed, kCandidateInitStream, i);
            Network<float> net =
                build_network<float>(classifier_preset(name, train.class_count), init);
            Optimizer<float> opt(OptimizerKind::adam, kClassifierLearningRate);

            CandidateResult res;
            res.name = name;
            std::vector<int64_t> order = iota_indices(train.size());
            for (int epoch = 1; epoch <= epochs; ++epoch) {
                Rng sh = Rng::derive(seed, kCandidateShuffleStream,
                                     (static_cast<uint64_t>(i) << 32) |
                                         static_cast<uint64_t>(epoch));
                sh.shuffle(order);
                double loss_sum = 0.0;
                int steps = 0;
                for (size_t start = 0; start < order.size();
                     start += static_cast<size_t>(batch_size)) {
                    size_t stop = std::min(order.size(), start + static_cast<size_t>(batch_size));
                    std::vector<int64_t> idx(order.begin() + static_cast<int64_t>(start),
                                             order.begin() + static_cast<int64_t>(stop));
                    Graph<float> g;
                    Tensor<float> probs = net.forward(g, train.batch_images(idx));
                    Tensor<float> loss = cross_entropy(g, probs, train.batch_labels(idx));
                    loss_sum += loss.item();
                    g.backward(loss);
                    opt.step(net.parameters());
                    ++steps;
                }
                res.epoch_loss.push_back(loss_sum / steps);
            }
            res.train_accuracy = evaluate_accuracy(net, train);
            res.test_accuracy = evaluate_accuracy(net, test);
            res.network = std::move(net);
            out.push_back(std::move(res));
        } catch (const BuildError& e) {
            throw BuildError("candidate " + name + ": " + e.what());
        } catch (const Error& e) {
            throw TrainError("candidate " + name + ": " + e.what());
        }
    }
    return out;
}

size_t select_best(const std::vector<CandidateResult>& candidates) {
    if (candidates.empty()) throw ContractError("select_best on an empty candidate list");
    size_t best = 0;
    for (size_t i = 1; i < candidates.size(); ++i) {
        if (candidates[i].test_accuracy > candidates[best].test_accuracy) best = i;
    }
    return best;
}

AugmentedSample confidence_gate(const Tensor<float>& image, int source_class,
                                const Network<float>& classifier, double threshold) {
    check_threshold(threshold);
    check_gate_classifier(classifier);
    if (source_class < 0 || source_class >= classifier.class_count) {
        throw ContractError("source class " + std::to_string(source_class) +
                            " out of range for " + std::to_string(classifier.class_count) +
                            " classes");
    }

    Tensor<float> batch(Shape{1, 1, 28, 28});
    if (image.rank() == 3 && image.dim(0) == 1 && image.dim(1) == 28 && image.dim(2) == 28) {
        std::copy_n(image.values().data(), 784, batch.mutable_values().data());
    } else if (image.rank() == 4 && image.dim(0) == 1 && image.dim(1) == 1 &&
               image.dim(2) == 28 && image.dim(3) == 28) {
        std::copy_n(image.values().data(), 784, batch.mutable_values().data());
    } else {
        throw DimensionError("confidence_gate expects one 1x28x28 image, got " +
                             shape_str(image.shape()));
    }

    AugmentedSample sample;
    sample.image = slice_image(batch, 0);
    sample.label = source_class;
    sample.confidence = gate_confidences(batch, source_class, classifier)[0];
    sample.accepted = sample.confidence >= threshold;
    return sample;
}

AugmentationResult generate_augmented_set(std::map<int, GanPair>& gans,
                                          Network<float>& classifier, int per_class_target,
                                          const PerturbSpec& perturb_spec, double threshold,
                                          int max_attempts, NoiseOrder noise_order, Rng& rng) {
    check_threshold(threshold);
    check_gate_classifier(classifier);
    if (per_class_target < 1) {
        throw ContractError("per_class_target must be >= 1, got " +
                            std::to_string(per_class_target));
    }
    if (max_attempts < per_class_target) {
        throw ContractError("max_attempts " + std::to_string(max_attempts) +
                            " below per_class_target " + std::to_string(per_class_target));
    }

    AugmentationResult result;
    result.threshold = threshold;
    for (auto& [class_id, pair] : gans) {
        if (pair.class_id != class_id) {
            throw ContractError("GAN map key " + std::to_string(class_id) +
                                " does not match pair class " + std::to_string(pair.class_id));
        }
        int accepted = 0;
        int attempts = 0;
        while (accepted < per_class_target && attempts < max_attempts) {
            const int chunk = std::min(32, max_attempts - attempts);
            Tensor<float> raw = generate(pair, chunk, rng);
            std::vector<int> labels(static_cast<size_t>(chunk), class_id);

            // gate_input is what the gate scores; merged is what training sees
            Tensor<float> gate_input = raw;
            Tensor<float> merged = raw;
            switch (noise_order) {
                case NoiseOrder::perturb_then_gate:
                    gate_input = perturb(raw, labels, classifier, perturb_spec, rng);
                    merged = gate_input;
                    break;
                case NoiseOrder::gate_then_perturb:
                    merged = perturb(raw, labels, classifier, perturb_spec, rng);
                    break;
                case NoiseOrder::perturb_merged:
                    break;  // noise is applied to the merged dataset later
            }

            std::vector<double> conf = gate_confidences(gate_input, class_id, classifier);
            for (int row = 0; row < chunk && accepted < per_class_target; ++row) {
                ++attempts;
                AugmentedSample sample;
                sample.image = slice_image(gate_input, row);
                sample.label = class_id;
                sample.confidence = conf[static_cast<size_t>(row)];
                sample.epsilon_used =
                    noise_order == NoiseOrder::perturb_merged ? 0.0 : perturb_spec.epsilon;
                sample.perturb_mode = perturb_spec.mode;
                sample.accepted = sample.confidence >= threshold;
                result.attempts.push_back(sample);
                if (sample.accepted) {
                    AugmentedSample kept = sample;
                    kept.image = slice_image(merged, row);
                    result.accepted.push_back(std::move(kept));
                    ++accepted;
                }
            }
        }
        result.generated_per_class[class_id] = attempts;
        result.accepted_per_class[class_id] = accepted;
        if (accepted == 0) {
            result.warnings.push_back("class " + std::to_string(class_id) + " accepted 0 of " +
                                      std::to_string(attempts) + " attempts at threshold " +
                                      std::to_string(threshold));
        }
    }
    return result;
}

MergedDataset merge_datasets(const LabeledDataset& real,
                             const std::vector<AugmentedSample>& augmented) {
    if (!real.images.defined() || real.images.rank() != 4 || real.images.dim(1) != 1 ||
        real.images.dim(2) != 28 || real.images.dim(3) != 28) {
        throw DimensionError("merge_datasets expects [N x 1 x 28 x 28] real images");
    }
    const Shape expected{1, 28, 28};
    for (const AugmentedSample& s : augmented) {
        if (s.label < 0 || s.label >= real.class_count) {
            throw ContractError("augmented sample labeled " + std::to_string(s.label) +
                                " does not fit a " + std::to_string(real.class_count) +
                                "-class dataset");
        }
        if (s.image.shape() != expected) {
            throw DimensionError("augmented sample image must be 1x28x28, got " +
                                 shape_str(s.image.shape()));
        }
    }

    const int64_t n_real = real.size();
    const int64_t n_aug = static_cast<int64_t>(augmented.size());
    MergedDataset merged;
    merged.data.class_count = real.class_count;
    merged.data.class_names = real.class_names;
    merged.data.group_tag = real.group_tag;

    Tensor<float> images(Shape{n_real + n_aug, 1, 28, 28});
    float* dst = images.mutable_values().data();
    std::copy_n(real.images.values().data(), static_cast<size_t>(n_real) * 784, dst);
    for (int64_t i = 0; i < n_aug; ++i) {
        std::copy_n(augmented[static_cast<size_t>(i)].image.values().data(), 784,
                    dst + (n_real + i) * 784);
    }
    merged.data.images = std::move(images);

    merged.data.labels = real.labels;
    merged.data.labels.reserve(static_cast<size_t>(n_real + n_aug));
    merged.is_augmented.assign(static_cast<size_t>(n_real), 0);
    for (const AugmentedSample& s : augmented) {
        merged.data.labels.push_back(s.label);
        merged.is_augmented.push_back(1);
    }
    return merged;
}

ExternalTrainResult train_external(const NetworkSpec& spec, const MergedDataset& merged,
                                   const LabeledDataset& test, int epochs, int batch_size,
                                   uint64_t seed) {
    if (merged.is_augmented.size() != static_cast<size_t>(merged.data.size())) {
        throw ContractError("provenance index size does not match the merged dataset");
    }
    if (std::count(merged.is_augmented.begin(), merged.is_augmented.end(), 0) == 0) {
        throw ContractError("external training needs at least one real sample");
    }
    if (epochs < 0 || batch_size < 1) {
        throw ContractError("train_external needs epochs >= 0 and batch_size >= 1");
    }

    Rng init = Rng::derive(seed, kExternalInitStream, 0);
    Network<float> net = build_network<float>(spec, init);
    Optimizer<float> opt(OptimizerKind::adam, kClassifierLearningRate);

    ExternalTrainResult res;
    std::vector<int64_t> order = iota_indices(merged.data.size());
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        Rng sh = Rng::derive(seed, kExternalShuffleStream, static_cast<uint64_t>(epoch));
        sh.shuffle(order);
        double loss_sum = 0.0;
        int steps = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
            size_t stop = std::min(order.size(), start + static_cast<size_t>(batch_size));
            std::vector<int64_t> real_idx, aug_idx;
            for (size_t at = start; at < stop; ++at) {
                const int64_t row = order[at];
                if (merged.is_augmented[static_cast<size_t>(row)]) {
                    aug_idx.push_back(row);
                } else {
                    real_idx.push_back(row);
                }
            }

            Graph<float> g;
            Tensor<float> loss;
            if (aug_idx.empty()) {
                Tensor<float> probs = net.forward(g, merged.data.batch_images(real_idx));
                loss = external_classifier_loss(g, probs, merged.data.batch_labels(real_idx),
                                                Tensor<float>(), {});
            } else if (real_idx.empty()) {
                Tensor<float> probs = net.forward(g, merged.data.batch_images(aug_idx));
                loss = cross_entropy(g, probs, merged.data.batch_labels(aug_idx));
            } else {
                Tensor<float> p_real = net.forward(g, merged.data.batch_images(real_idx));
                Tensor<float> p_aug = net.forward(g, merged.data.batch_images(aug_idx));
                loss = external_classifier_loss(g, p_real, merged.data.batch_labels(real_idx),
                                                p_aug, merged.data.batch_labels(aug_idx));
            }
            loss_sum += loss.item();
            g.backward(loss);
            opt.step(net.parameters());
            ++steps;
        }
        res.epoch_loss.push_back(loss_sum / steps);
        res.train_accuracy.push_back(evaluate_accuracy(net, merged.data));
        res.test_accuracy.push_back(evaluate_accuracy(net, test));
    }
    res.network = std::move(net);
    return res;
}

std::pair<LabeledDataset, LabeledDataset> load_split_dataset(const ExperimentConfig& config) {
    const DatasetConfig& d = config.dataset;
    const uint64_t split_seed = config.split_seed_set ? config.split_seed : config.seed;
    LabeledDataset train, test;
    switch (d.kind) {
        case DatasetKind::idx: {
            train.images = load_idx_images(d.train_images);
            train.labels = load_idx_labels(d.train_labels);
            int max_label = 0;
            for (int l : train.labels) max_label = std::max(max_label, l);
            if (!d.test_images.empty()) {
                test.images = load_idx_images(d.test_images);
                test.labels = load_idx_labels(d.test_labels);
                for (int l : test.labels) max_label = std::max(max_label, l);
                train.class_count = test.class_count = max_label + 1;
            } else {
                train.class_count = max_label + 1;
            }
            if (d.limit_train > 0 && d.limit_train < train.size()) {
                train = train.subset(iota_indices(d.limit_train));
            }
            if (!d.test_images.empty()) {
                if (d.limit_test > 0 && d.limit_test < test.size()) {
                    test = test.subset(iota_indices(d.limit_test));
                }
            } else {
                auto split = train_test_split(train, config.test_fraction, split_seed);
                train = std::move(split.first);
                test = std::move(split.second);
            }
            break;
        }
        case DatasetKind::directory: {
            LabeledDataset all = load_directory_dataset(d.root);
            auto split = train_test_split(all, config.test_fraction, split_seed);
            train = std::move(split.first);
            test = std::move(split.second);
            break;
        }
        case DatasetKind::synth: {
            LabeledDataset all =
                synth_glyph_dataset(d.classes, d.per_class, d.complexity, config.seed);
            auto split = train_test_split(all, config.test_fraction, split_seed);
            train = std::move(split.first);
            test = std::move(split.second);
            break;
        }
    }
    train.validate();
    test.validate();
    if (train.class_count != test.class_count) {
        throw ContractError("train and test splits disagree on class count");
    }
    return {std::move(train), std::move(test)};
}

int resolve_augment_target(int configured, const LabeledDataset& train) {
    if (configured >= 0) return configured;
    return std::max<int>(
        1, static_cast<int>(std::llround(0.25 * static_cast<double>(train.size()) /
                                         train.class_count)));
}

GanConfig gan_config_from(const ExperimentConfig& config) {
    GanConfig gan_config;
    gan_config.latent_dim = config.latent_dim;
    gan_config.learning_rate = kGanLearningRate;
    gan_config.batch_size = config.batch_size;
    gan_config.gen_loss = config.generator_loss;
    return gan_config;
}

Rng augmentation_rng(uint64_t master_seed) {
    return Rng::derive(master_seed, kAugmentStream, 0);
}

nlohmann::json PipelineReport::to_json(const ExperimentConfig& config) const {
    nlohmann::json j;
    j["config"] = config_to_json(config);

    nlohmann::json cand_list = nlohmann::json::array();
    for (const CandidateResult& c : candidates) {
        cand_list.push_back({{"name", c.name},
                             {"train_accuracy", c.train_accuracy},
                             {"test_accuracy", c.test_accuracy}});
    }
    j["candidates"] = cand_list;
    j["selected"] = selected_name;
    j["baseline_test_accuracy"] = baseline_test_accuracy;

    nlohmann::json generated, accepted;
    for (const auto& [class_id, count] : augmentation.generated_per_class) {
        generated[class_key(class_id)] = count;
    }
    for (const auto& [class_id, count] : augmentation.accepted_per_class) {
        accepted[class_key(class_id)] = count;
    }
    j["augmentation"] = {{"generated_per_class", generated},
                         {"accepted_per_class", accepted},
                         {"generated_total", augmentation.attempts.size()},
                         {"accepted_total", augmentation.accepted.size()},
                         {"acceptance_rate", acceptance_rate},
                         {"threshold", augmentation.threshold},
                         {"warnings", augmentation.warnings}};

    j["external"] = {{"train_accuracy", external.train_accuracy},
                     {"test_accuracy", external.test_accuracy},
                     {"final_test_accuracy",
                      external.test_accuracy.empty() ? 0.0 : external.test_accuracy.back()}};
    j["failed_stage"] = failed_stage;
    return j;
}

namespace {

void persist_report(const PipelineReport& report, const ExperimentConfig& config) {
    const fs::path dir(config.output_dir);
    write_text_file((dir / "report.json").string(), report_text(report.to_json(config)));
    write_text_file((dir / "metrics.csv").string(), metrics_csv(report.metrics));
    write_text_file((dir / "resolved_config.json").string(),
                    report_text(config_to_json(config)));
}

}  // namespace

PipelineReport run_ada_gan(const ExperimentConfig& config) {
    fs::create_directories(config.output_dir);
    PipelineReport report;
    std::string stage = "load_data";
    try {
        auto [train, test] = load_split_dataset(config);

        stage = "train_candidates";
        report.candidates = train_candidates(train, test, config.candidates,
                                             config.candidate_epochs, config.batch_size,
                                             config.seed);
        for (const CandidateResult& c : report.candidates) {
            const std::string stage_name = "candidate_" + c.name;
            for (size_t e = 0; e < c.epoch_loss.size(); ++e) {
                report.metrics.push_back(
                    {stage_name, static_cast<int>(e + 1), "train", "loss", c.epoch_loss[e]});
            }
            report.metrics.push_back(
                {stage_name, config.candidate_epochs, "train", "accuracy", c.train_accuracy});
            report.metrics.push_back(
                {stage_name, config.candidate_epochs, "test", "accuracy", c.test_accuracy});
        }

        stage = "select_best";
        report.selected = select_best(report.candidates);
        report.selected_name = report.candidates[report.selected].name;
        report.baseline_test_accuracy = report.candidates[report.selected].test_accuracy;
        report.metrics.push_back(
            {"selection", 0, "test", "baseline_accuracy", report.baseline_test_accuracy});
        Network<float>& voted = report.candidates[report.selected].network;
        save_network((fs::path(config.output_dir) / "voted_classifier.ckpt").string(), voted);

        const int target = resolve_augment_target(config.augment_per_class, train);

        MergedDataset merged;
        if (target > 0) {
            stage = "train_gans";
            const GanConfig gan_config = gan_config_from(config);
            std::map<int, GanPair> gans;
            for (int c = 0; c < train.class_count; ++c) {
                auto [pair, gan_report] =
                    train_gan_per_class(train, c, config.gan_epochs, gan_config, config.seed);
                const std::string stage_name = "gan_class_" + class_key(c);
                for (size_t e = 0; e < gan_report.epochs.size(); ++e) {
                    const GanEpochRecord& rec = gan_report.epochs[e];
                    const int epoch = static_cast<int>(e + 1);
                    report.metrics.push_back({stage_name, epoch, "train", "d_loss", rec.d_loss});
                    report.metrics.push_back({stage_name, epoch, "train", "g_loss", rec.g_loss});
                    report.metrics.push_back({stage_name, epoch, "train", "probe", rec.probe_score});
                }
                save_gan_pair(
                    (fs::path(config.output_dir) / ("gan_class_" + class_key(c) + ".ckpt"))
                        .string(),
                    pair);
                gans.emplace(c, std::move(pair));
            }

            stage = "generate_augmented";
            Rng augment_rng = augmentation_rng(config.seed);
            report.augmentation = generate_augmented_set(
                gans, voted, target, config.perturb, config.threshold,
                target * config.max_attempts_factor, config.noise_order, augment_rng);
            for (const auto& [class_id, count] : report.augmentation.generated_per_class) {
                report.metrics.push_back(
                    {"augment", 0, "train", "generated_class_" + class_key(class_id),
                     static_cast<double>(count)});
            }
            for (const auto& [class_id, count] : report.augmentation.accepted_per_class) {
                report.metrics.push_back(
                    {"augment", 0, "train", "accepted_class_" + class_key(class_id),
                     static_cast<double>(count)});
            }
            report.acceptance_rate =
                report.augmentation.attempts.empty()
                    ? 0.0
                    : static_cast<double>(report.augmentation.accepted.size()) /
                          static_cast<double>(report.augmentation.attempts.size());
            report.metrics.push_back(
                {"augment", 0, "train", "acceptance_rate", report.acceptance_rate});
            if (!report.augmentation.accepted.empty()) {
                const int64_t n =
                    std::min<int64_t>(16, static_cast<int64_t>(report.augmentation.accepted.size()));
                Tensor<float> grid_images(Shape{n, 1, 28, 28});
                for (int64_t i = 0; i < n; ++i) {
                    std::copy_n(
                        report.augmentation.accepted[static_cast<size_t>(i)].image.values().data(),
                        784, grid_images.mutable_values().data() + i * 784);
                }
                dump_image_grid(grid_images, 4,
                                (fs::path(config.output_dir) / "accepted_samples.pgm").string());
            }

            stage = "merge";
            merged = merge_datasets(train, report.augmentation.accepted);
            if (config.noise_order == NoiseOrder::perturb_merged) {
                Rng merged_rng = Rng::derive(config.seed, kPerturbMergedStream, 0);
                const int64_t n = merged.data.size();
                for (int64_t start = 0; start < n; start += 256) {
                    const int64_t stop = std::min(n, start + 256);
                    std::vector<int64_t> idx;
                    for (int64_t i = start; i < stop; ++i) idx.push_back(i);
                    Tensor<float> chunk = merged.data.batch_images(idx);
                    Tensor<float> noisy = perturb(chunk, merged.data.batch_labels(idx), voted,
                                                  config.perturb, merged_rng);
                    std::copy_n(noisy.values().data(), noisy.values().size(),
                                merged.data.images.mutable_values().data() + start * 784);
                }
            }
        } else {
            merged.data = train;
            merged.is_augmented.assign(static_cast<size_t>(train.size()), 0);
            report.augmentation.threshold = config.threshold;
        }

        stage = "train_external";
        const NetworkSpec& winner_spec = report.candidates[report.selected].network.spec;
        report.external = train_external(winner_spec, merged, test, config.external_epochs,
                                         config.batch_size, config.seed);
        for (size_t e = 0; e < report.external.epoch_loss.size(); ++e) {
            const int epoch = static_cast<int>(e + 1);
            report.metrics.push_back(
                {"external", epoch, "train", "loss", report.external.epoch_loss[e]});
            report.metrics.push_back(
                {"external", epoch, "train", "accuracy", report.external.train_accuracy[e]});
            report.metrics.push_back(
                {"external", epoch, "test", "accuracy", report.external.test_accuracy[e]});
        }
        save_network((fs::path(config.output_dir) / "classifier.ckpt").string(),
                     report.external.network);
    } catch (const Error&) {
        report.failed_stage = stage;
        try {
            persist_report(report, config);
        } catch (...) {
            // the original error matters more than a failed partial write
        }
        throw;
    }

    persist_report(report, config);
    return report;
}

}  // namespace adagan
