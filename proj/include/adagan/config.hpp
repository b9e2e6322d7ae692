#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "adagan/adversarial.hpp"
#include "adagan/nn.hpp"

namespace adagan {

enum class NoiseOrder { perturb_then_gate, gate_then_perturb, perturb_merged };

NoiseOrder parse_noise_order(const std::string& name);
std::string noise_order_name(NoiseOrder order);

enum class DatasetKind { idx, directory, synth };

struct DatasetConfig {
    DatasetKind kind = DatasetKind::idx;
    // idx
    std::string train_images;
    std::string train_labels;
    std::string test_images;  // optional; empty means split from train
    std::string test_labels;
    int limit_train = 0;  // 0 keeps everything
    int limit_test = 0;
    // directory
    std::string root;
    // synth
    int classes = 10;
    int per_class = 200;
    int complexity = 1;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    double test_fraction = 0.2;
    uint64_t split_seed = 0;  // resolved: defaults to the master seed
    bool split_seed_set = false;

    std::vector<std::string> candidates = {"mlp", "cnn_small", "cnn_medium", "cnn_wide"};
    int candidate_epochs = 10;

    int gan_epochs = 300;
    int latent_dim = 64;
    GenLossMode generator_loss = GenLossMode::non_saturating;

    PerturbSpec perturb;  // fgsm, epsilon 0.05
    double threshold = 0.8;
    NoiseOrder noise_order = NoiseOrder::perturb_then_gate;

    int augment_per_class = -1;  // -1 means 25% of the real per-class count
    int max_attempts_factor = 20;

    int external_epochs = 10;
    int batch_size = 32;
    uint64_t seed = 42;
    std::string output_dir = "out";
};

/// Parse and validate; unknown keys and out-of-bound values are hard errors
/// naming the offending field.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Fully resolved echo, defaults included; reparsing it yields the same config.
nlohmann::json config_to_json(const ExperimentConfig& config);

}  // namespace adagan
