#pragma once

#include <map>
#include <string>
#include <vector>

#include "adagan/adversarial.hpp"
#include "adagan/config.hpp"
#include "adagan/data.hpp"
#include "adagan/gan.hpp"
#include "adagan/nn.hpp"
#include "adagan/report.hpp"

namespace adagan {

/// One gated sample. In the attempt log `image` is exactly what the gate saw;
/// in the accepted list it is the image that enters training.
struct AugmentedSample {
    Tensor<float> image;  // [1,28,28]
    int label = 0;        // the generating GAN's class
    double confidence = 0.0;
    double epsilon_used = 0.0;
    PerturbMode perturb_mode = PerturbMode::fgsm;
    bool accepted = false;
};

struct CandidateResult {
    std::string name;
    Network<float> network;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::vector<double> epoch_loss;  // one mean loss per epoch
};

struct AugmentationResult {
    std::vector<AugmentedSample> accepted;  // images destined for the merge
    std::vector<AugmentedSample> attempts;  // complete audit log, gate inputs
    std::map<int, int> generated_per_class;
    std::map<int, int> accepted_per_class;
    std::vector<std::string> warnings;  // classes that accepted nothing
    double threshold = 0.0;
};

struct MergedDataset {
    LabeledDataset data;
    std::vector<char> is_augmented;  // sidecar provenance, one flag per sample
};

struct ExternalTrainResult {
    Network<float> network;
    std::vector<double> train_accuracy;  // one entry per epoch
    std::vector<double> test_accuracy;
    std::vector<double> epoch_loss;
};

struct PipelineReport {
    std::vector<CandidateResult> candidates;
    size_t selected = 0;
    std::string selected_name;
    AugmentationResult augmentation;
    double acceptance_rate = 0.0;
    ExternalTrainResult external;
    double baseline_test_accuracy = 0.0;  // the selected candidate before augmentation
    std::vector<EpochMetric> metrics;
    std::string failed_stage;  // empty on success
    nlohmann::json to_json(const ExperimentConfig& config) const;
};

/// Each candidate is a preset name trained on its own seed-derived stream;
/// errors are rethrown with the candidate name attached.
std::vector<CandidateResult> train_candidates(const LabeledDataset& train,
                                              const LabeledDataset& test,
                                              const std::vector<std::string>& names, int epochs,
                                              int batch_size, uint64_t seed);

/// Index of the highest test accuracy; ties break toward the earlier
/// position in the declared candidate order.
size_t select_best(const std::vector<CandidateResult>& candidates);

/// Softmax probability at source_class; accepted iff confidence >= threshold.
AugmentedSample confidence_gate(const Tensor<float>& image, int source_class,
                                const Network<float>& classifier, double threshold);

/// Per class: generate -> (perturb) -> gate until per_class_target accepted or
/// max_attempts examined. A class that accepts nothing yields a warning, not
/// an error. Classes are processed in ascending id order.
AugmentationResult generate_augmented_set(std::map<int, GanPair>& gans,
                                          Network<float>& classifier, int per_class_target,
                                          const PerturbSpec& perturb_spec, double threshold,
                                          int max_attempts, NoiseOrder noise_order, Rng& rng);

/// All real samples first, then all accepted samples, with provenance flags.
MergedDataset merge_datasets(const LabeledDataset& real,
                             const std::vector<AugmentedSample>& augmented);

/// Fresh network from `spec`; every batch keeps real and augmented samples in
/// separate sub-batches so the loss is the two-term sum. With no augmented
/// samples this is exactly plain cross-entropy training.
ExternalTrainResult train_external(const NetworkSpec& spec, const MergedDataset& merged,
                                   const LabeledDataset& test, int epochs, int batch_size,
                                   uint64_t seed);

/// Explicit per-class target when configured >= 0, otherwise a quarter of the
/// mean per-class real count (at least 1).
int resolve_augment_target(int configured, const LabeledDataset& train);

/// GAN hyperparameters induced by an experiment config.
GanConfig gan_config_from(const ExperimentConfig& config);

/// The rng stream feeding generate/perturb/gate; stable so a standalone
/// augmentation run reproduces the in-pipeline one bit for bit.
Rng augmentation_rng(uint64_t master_seed);

/// The whole procedure: candidates -> selection -> per-class GANs ->
/// generate/perturb/gate -> merge -> external training. Writes report.json,
/// metrics.csv, and the resolved config under config.output_dir; on a stage
/// failure the partial report (with failed_stage set) is persisted before the
/// error propagates.
PipelineReport run_ada_gan(const ExperimentConfig& config);

/// Dataset loading + deterministic split shared by the CLI commands.
std::pair<LabeledDataset, LabeledDataset> load_split_dataset(const ExperimentConfig& config);

}  // namespace adagan
