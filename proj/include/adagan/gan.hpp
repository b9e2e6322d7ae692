#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "adagan/data.hpp"
#include "adagan/nn.hpp"
#include "adagan/rng.hpp"

namespace adagan {

/// One unconditional GAN trained on a single class's images.
struct GanPair {
    int class_id = 0;
    int latent_dim = 64;
    int epochs_trained = 0;
    Network<float> generator;      // latent -> 1x28x28, sigmoid head
    Network<float> discriminator;  // 1x28x28 -> realness in (0,1)
};

struct GanEpochRecord {
    double d_loss = 0.0;       // epoch mean
    double g_loss = 0.0;       // epoch mean
    double probe_score = 0.0;  // mean D(G(z)) on the fixed probe batch at epoch end
};

struct GanTrainReport {
    std::vector<GanEpochRecord> epochs;
};

struct GanConfig {
    int latent_dim = 64;
    double learning_rate = 2e-4;
    int batch_size = 32;
    GenLossMode gen_loss = GenLossMode::non_saturating;
};

/// i.i.d. standard normal latents from the given stream.
Tensor<float> sample_latent(int batch, int latent_dim, Rng& rng);

GanPair make_gan_pair(int class_id, const GanConfig& config, Rng& rng);

/// Pair plus its optimizers, so Adam moments persist across steps.
struct GanTrainState {
    GanPair pair;
    Optimizer<float> d_opt;
    Optimizer<float> g_opt;
    GenLossMode gen_loss;

    GanTrainState(GanPair p, const GanConfig& config)
        : pair(std::move(p)),
          d_opt(OptimizerKind::adam, config.learning_rate),
          g_opt(OptimizerKind::adam, config.learning_rate),
          gen_loss(config.gen_loss) {}
};

/// One discriminator update on a combined real/fake batch. The fake batch is
/// generated detached, so generator parameters receive no gradient.
double gan_discriminator_step(GanTrainState& state, const Tensor<float>& real_batch, Rng& rng);

/// One generator update through a frozen discriminator: the discriminator
/// participates in backward but its gradients are discarded, not applied.
double gan_generator_step(GanTrainState& state, int batch, Rng& rng);

/// Discriminator update then generator update, returning (d_loss, g_loss).
std::pair<double, double> gan_train_step(GanTrainState& state, const Tensor<float>& real_batch,
                                         Rng& rng);

/// Epochs of shuffled batches over one class's images. Needs at least 32
/// samples of the class. Fully deterministic given the seed.
std::pair<GanPair, GanTrainReport> train_gan_per_class(const LabeledDataset& data, int class_id,
                                                       int epochs, const GanConfig& config,
                                                       uint64_t seed);

/// Sample images from the generator; pixels always in [0,1].
Tensor<float> generate(const GanPair& pair, int count, Rng& rng);

/// Mean D(G(z)) over a fixed latent batch, without recording gradients.
double probe_score(const GanPair& pair, const Tensor<float>& probe_latents);

}  // namespace adagan
