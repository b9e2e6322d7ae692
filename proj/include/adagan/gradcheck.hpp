#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "adagan/nn.hpp"
#include "adagan/rng.hpp"
#include "adagan/tensor.hpp"

namespace adagan {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    int seeds = 0;
};

namespace detail {

inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-6});
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo, double hi,
                                    bool requires_grad = true) {
    Tensor<double> t(std::move(shape));
    auto v = t.mutable_values();
    for (auto& x : v) x = rng.uniform(lo, hi);
    return t.detached_copy(requires_grad);
}

/// Analytic gradient of `build` wrt every tensor in `inputs`, compared
/// against central differences; returns the worst relative error.
inline double check_case(
    const std::vector<Tensor<double>>& inputs,
    const std::function<Tensor<double>(Graph<double>&, const std::vector<Tensor<double>>&)>& build,
    double h = 1e-5) {
    Graph<double> g;
    Tensor<double> loss = build(g, inputs);
    g.backward(loss);

    double worst = 0.0;
    for (size_t which = 0; which < inputs.size(); ++which) {
        const Tensor<double>& input = inputs[which];
        if (!input.requires_grad()) continue;

        std::function<double(const Tensor<double>&)> f = [&](const Tensor<double>& probe) {
            std::vector<Tensor<double>> swapped = inputs;
            swapped[which] = probe;
            Graph<double> gf(false);
            return build(gf, swapped).item();
        };
        Tensor<double> numeric = finite_diff_grad(f, input.detached_copy(false), h);
        auto nv = numeric.values();
        auto av = input.grad();
        for (size_t i = 0; i < nv.size(); ++i) {
            const double analytic = i < av.size() ? av[i] : 0.0;
            worst = std::max(worst, rel_err(analytic, nv[i]));
        }
    }
    return worst;
}

}  // namespace detail

/// Every differentiable op and every loss, `seeds_per_case` random instances
/// each, double precision, h = 1e-5. Small odd shapes exercise stride,
/// padding, and partial windows.
std::vector<GradCheckResult> run_gradient_checks(int seeds_per_case);

}  // namespace adagan
