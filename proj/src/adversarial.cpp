#include "adagan/adversarial.hpp"

#include <algorithm>
#include <string>

#include "adagan/errors.hpp"

namespace adagan {

namespace {

void check_epsilon(double epsilon) {
    if (!(epsilon >= 0.0)) {
        throw ContractError("perturbation epsilon must be >= 0, got " + std::to_string(epsilon));
    }
    if (epsilon > 0.5) {
        throw ContractError("perturbation epsilon must be <= 0.5, got " + std::to_string(epsilon));
    }
}

inline float clip01(float x) { return std::min(1.0f, std::max(0.0f, x)); }

}  // namespace

PerturbMode parse_perturb_mode(const std::string& name) {
    if (name == "fgsm") return PerturbMode::fgsm;
    if (name == "uniform_random") return PerturbMode::uniform_random;
    throw ConfigError("unknown perturbation mode '" + name +
                      "'; expected fgsm or uniform_random");
}

std::string perturb_mode_name(PerturbMode mode) {
    return mode == PerturbMode::fgsm ? "fgsm" : "uniform_random";
}

Tensor<float> fgsm_perturb(const Tensor<float>& images, const std::vector<int>& labels,
                           Network<float>& classifier, double epsilon) {
    check_epsilon(epsilon);
    if (images.rank() != 4) {
        throw DimensionError("fgsm_perturb expects [N,C,H,W] images, got " +
                             shape_str(images.shape()));
    }
    if (static_cast<int64_t>(labels.size()) != images.dim(0)) {
        throw DimensionError("fgsm_perturb: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(images.dim(0)) + " images");
    }

    Tensor<float> x = images.detached_copy(true);
    Graph<float> g;
    Tensor<float> probs = classifier.forward(g, x);
    Tensor<float> loss = cross_entropy(g, probs, labels);
    g.backward(loss);

    Tensor<float> out(images.shape());
    auto ov = out.mutable_values();
    auto xv = x.values();
    auto gv = x.grad();
    const float eps = static_cast<float>(epsilon);
    for (size_t i = 0; i < ov.size(); ++i) {
        float s = gv[i] > 0.0f ? 1.0f : (gv[i] < 0.0f ? -1.0f : 0.0f);
        ov[i] = clip01(xv[i] + eps * s);
    }

    // Backward also pushed gradients into the classifier's parameters; drop
    // them so a later optimizer step is not polluted.
    classifier.zero_grads();
    return out;
}

Tensor<float> random_perturb(const Tensor<float>& images, double epsilon, Rng& rng) {
    check_epsilon(epsilon);
    Tensor<float> out(images.shape());
    auto ov = out.mutable_values();
    auto xv = images.values();
    for (size_t i = 0; i < ov.size(); ++i) {
        float noise = static_cast<float>(rng.uniform(-epsilon, epsilon));
        ov[i] = clip01(xv[i] + noise);
    }
    return out;
}

Tensor<float> perturb(const Tensor<float>& images, const std::vector<int>& labels,
                      Network<float>& classifier, const PerturbSpec& spec, Rng& rng) {
    if (spec.mode == PerturbMode::fgsm) return fgsm_perturb(images, labels, classifier, spec.epsilon);
    return random_perturb(images, spec.epsilon, rng);
}

}  // namespace adagan
