#include "adagan/gan.hpp"

#include <cstdio>
#include <numeric>
#include <string>

#include "adagan/errors.hpp"

namespace adagan {

namespace {

// Stream tags for seed derivation; must stay distinct from the tags in data.cpp.
constexpr uint64_t kGanInitStream = 0x67616E69;     // network init
constexpr uint64_t kGanLatentStream = 0x67616E7A;   // training latents
constexpr uint64_t kGanShuffleStream = 0x67616E73;  // per-epoch batch order
constexpr uint64_t kGanProbeStream = 0x67616E70;    // fixed probe latents

constexpr int kProbeBatch = 64;

}  // namespace

Tensor<float> sample_latent(int batch, int latent_dim, Rng& rng) {
    if (batch < 1 || latent_dim < 1) {
        throw ContractError("sample_latent needs batch >= 1 and latent_dim >= 1, got batch=" +
                            std::to_string(batch) + " latent_dim=" + std::to_string(latent_dim));
    }
    Tensor<float> z({batch, latent_dim});
    auto v = z.mutable_values();
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return z;
}

GanPair make_gan_pair(int class_id, const GanConfig& config, Rng& rng) {
    GanPair pair;
    pair.class_id = class_id;
    pair.latent_dim = config.latent_dim;
    pair.epochs_trained = 0;
    pair.generator = build_network<float>(generator_spec(config.latent_dim), rng);
    pair.discriminator = build_network<float>(discriminator_spec(), rng);
    return pair;
}

double gan_discriminator_step(GanTrainState& state, const Tensor<float>& real_batch, Rng& rng) {
    const int n = static_cast<int>(real_batch.dim(0));
    Tensor<float> z = sample_latent(n, state.pair.latent_dim, rng);

    // Fake batch comes from a non-recording graph, so the generator sees no
    // gradient from the discriminator update.
    Graph<float> detached(false);
    Tensor<float> fake = state.pair.generator.forward(detached, z);

    Graph<float> g;
    Tensor<float> d_real = state.pair.discriminator.forward(g, real_batch);
    Tensor<float> d_fake = state.pair.discriminator.forward(g, fake);
    Tensor<float> loss = discriminator_loss(g, d_real, d_fake);
    double value = loss.item();
    g.backward(loss);
    state.d_opt.step(state.pair.discriminator.parameters());
    return value;
}

double gan_generator_step(GanTrainState& state, int batch, Rng& rng) {
    Tensor<float> z = sample_latent(batch, state.pair.latent_dim, rng);

    Graph<float> g;
    Tensor<float> fake = state.pair.generator.forward(g, z);
    Tensor<float> d_fake = state.pair.discriminator.forward(g, fake);
    Tensor<float> loss = generator_loss(g, d_fake, state.gen_loss);
    double value = loss.item();
    g.backward(loss);
    state.g_opt.step(state.pair.generator.parameters());
    // The discriminator accumulated gradients on the way through; discard them
    // so the next discriminator update starts clean.
    state.pair.discriminator.zero_grads();
    return value;
}

std::pair<double, double> gan_train_step(GanTrainState& state, const Tensor<float>& real_batch,
                                         Rng& rng) {
    double d_loss = gan_discriminator_step(state, real_batch, rng);
    double g_loss = gan_generator_step(state, static_cast<int>(real_batch.dim(0)), rng);
    return {d_loss, g_loss};
}

double probe_score(const GanPair& pair, const Tensor<float>& probe_latents) {
    Graph<float> g(false);
    Tensor<float> images = pair.generator.forward(g, probe_latents);
    Tensor<float> scores = pair.discriminator.forward(g, images);
    auto v = scores.values();
    double sum = 0.0;
    for (float s : v) sum += s;
    return sum / static_cast<double>(v.size());
}

std::pair<GanPair, GanTrainReport> train_gan_per_class(const LabeledDataset& data, int class_id,
                                                       int epochs, const GanConfig& config,
                                                       uint64_t seed) {
    if (class_id < 0 || class_id >= data.class_count) {
        throw ContractError("train_gan_per_class: class " + std::to_string(class_id) +
                            " out of range for " + std::to_string(data.class_count) + " classes");
    }
    if (epochs < 0) throw ContractError("train_gan_per_class: negative epoch count");

    std::vector<int64_t> indices = data.class_indices(class_id);
    if (indices.size() < 32) {
        throw InputError("class " + std::to_string(class_id) + " has " +
                         std::to_string(indices.size()) +
                         " samples; need at least 32 to train a GAN");
    }

    Rng init_rng = Rng::derive(seed, kGanInitStream, static_cast<uint64_t>(class_id));
    GanTrainState state(make_gan_pair(class_id, config, init_rng), config);

    Rng latent_rng = Rng::derive(seed, kGanLatentStream, static_cast<uint64_t>(class_id));
    Rng probe_rng = Rng::derive(seed, kGanProbeStream, static_cast<uint64_t>(class_id));
    Tensor<float> probe_latents = sample_latent(kProbeBatch, config.latent_dim, probe_rng);

    GanTrainReport report;
    report.epochs.reserve(static_cast<size_t>(epochs));

    const int batch = config.batch_size;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        Rng shuffle_rng = Rng::derive(
            seed, kGanShuffleStream,
            (static_cast<uint64_t>(class_id) << 32) | static_cast<uint64_t>(epoch));
        shuffle_rng.shuffle(indices);

        double d_sum = 0.0;
        double g_sum = 0.0;
        int steps = 0;
        for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(batch)) {
            size_t stop = std::min(indices.size(), start + static_cast<size_t>(batch));
            std::vector<int64_t> batch_idx(indices.begin() + static_cast<int64_t>(start),
                                           indices.begin() + static_cast<int64_t>(stop));
            Tensor<float> real = data.batch_images(batch_idx);
            auto [d_loss, g_loss] = gan_train_step(state, real, latent_rng);
            d_sum += d_loss;
            g_sum += g_loss;
            ++steps;
        }

        GanEpochRecord rec;
        rec.d_loss = d_sum / steps;
        rec.g_loss = g_sum / steps;
        rec.probe_score = probe_score(state.pair, probe_latents);
        report.epochs.push_back(rec);
        state.pair.epochs_trained = epoch;
    }

    return {std::move(state.pair), std::move(report)};
}

Tensor<float> generate(const GanPair& pair, int count, Rng& rng) {
    if (count < 1) throw ContractError("generate: count must be >= 1, got " + std::to_string(count));
    Tensor<float> z = sample_latent(count, pair.latent_dim, rng);
    Graph<float> g(false);
    return pair.generator.forward(g, z);
}

}  // namespace adagan
