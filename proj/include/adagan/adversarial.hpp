#pragma once

#include <string>
#include <vector>

#include "adagan/nn.hpp"
#include "adagan/rng.hpp"

namespace adagan {

enum class PerturbMode { fgsm, uniform_random };

struct PerturbSpec {
    PerturbMode mode = PerturbMode::fgsm;
    double epsilon = 0.05;
};

PerturbMode parse_perturb_mode(const std::string& name);
std::string perturb_mode_name(PerturbMode mode);

/// Fast gradient sign step against the classifier's cross-entropy at the given
/// labels: x' = clip_[0,1](x + epsilon * sign(dL/dx)), with sign(0) = 0.
/// The input tensor is never modified; the classifier's gradients are left
/// zeroed. Epsilon must lie in [0, 0.5].
Tensor<float> fgsm_perturb(const Tensor<float>& images, const std::vector<int>& labels,
                           Network<float>& classifier, double epsilon);

/// Per-pixel uniform noise in [-epsilon, epsilon], clipped back to [0,1].
Tensor<float> random_perturb(const Tensor<float>& images, double epsilon, Rng& rng);

/// Dispatch on spec.mode; the rng is only consumed in uniform_random mode.
Tensor<float> perturb(const Tensor<float>& images, const std::vector<int>& labels,
                      Network<float>& classifier, const PerturbSpec& spec, Rng& rng);

}  // namespace adagan
