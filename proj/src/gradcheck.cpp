#include "adagan/gradcheck.hpp"

#include <algorithm>
#include <utility>

namespace adagan {

namespace {

using detail::check_case;
using detail::random_tensor;

using Inputs = std::vector<Tensor<double>>;
using Builder = std::function<Tensor<double>(Graph<double>&, const Inputs&)>;

constexpr uint64_t kGradStream = 0x67726164;

// Values bounded away from zero so relu/leaky kinks are never straddled by
// the finite-difference step.
Tensor<double> signed_tensor(Shape shape, Rng& rng) {
    Tensor<double> t(std::move(shape));
    auto v = t.mutable_values();
    for (auto& x : v) {
        const double mag = rng.uniform(0.2, 1.5);
        x = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t.detached_copy(true);
}

// Distinct per-cell offsets keep pooling argmaxes unique.
Tensor<double> tiebreak_tensor(Shape shape, Rng& rng) {
    Tensor<double> t(std::move(shape));
    auto v = t.mutable_values();
    for (size_t i = 0; i < v.size(); ++i) {
        v[i] = rng.uniform(-1.0, 1.0) + static_cast<double>(i) * 1e-3;
    }
    return t.detached_copy(true);
}

std::vector<int> random_labels(int64_t n, int64_t k, Rng& rng) {
    std::vector<int> labels(static_cast<size_t>(n));
    for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<uint64_t>(k)));
    return labels;
}

struct Case {
    std::string name;
    std::function<double(Rng&)> run;  // max rel err over one random instance
};

std::vector<Case> make_cases() {
    std::vector<Case> cases;
    auto add = [&](std::string name, std::function<double(Rng&)> run) {
        cases.push_back({std::move(name), std::move(run)});
    };

    add("matmul", [](Rng& rng) {
        Inputs in{random_tensor({3, 4}, rng, -1, 1), random_tensor({4, 5}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.matmul(t[0], t[1]));
        });
    });
    add("dense_row_bias", [](Rng& rng) {
        Inputs in{random_tensor({4, 6}, rng, -1, 1), random_tensor({6, 3}, rng, -1, 1),
                  random_tensor({3}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.add_row_bias(g.matmul(t[0], t[1]), t[2]));
        });
    });
    add("conv2d", [](Rng& rng) {
        Inputs in{random_tensor({2, 2, 5, 5}, rng, -1, 1),
                  random_tensor({3, 2, 3, 3}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.conv2d(t[0], t[1], 1, 0));
        });
    });
    add("conv2d_stride_pad", [](Rng& rng) {
        Inputs in{random_tensor({1, 2, 7, 7}, rng, -1, 1),
                  random_tensor({2, 2, 3, 3}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.conv2d(t[0], t[1], 2, 1));
        });
    });
    add("conv2d_rect", [](Rng& rng) {
        Inputs in{random_tensor({2, 1, 6, 4}, rng, -1, 1),
                  random_tensor({2, 1, 3, 3}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.conv2d(t[0], t[1], 1, 1));
        });
    });
    add("channel_bias", [](Rng& rng) {
        Inputs in{random_tensor({2, 3, 4, 4}, rng, -1, 1), random_tensor({3}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.add_channel_bias(t[0], t[1]));
        });
    });
    add("maxpool2d_w2", [](Rng& rng) {
        Inputs in{tiebreak_tensor({2, 2, 6, 6}, rng)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.maxpool2d(t[0], 2));
        });
    });
    add("maxpool2d_w3", [](Rng& rng) {
        Inputs in{tiebreak_tensor({1, 2, 6, 6}, rng)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.maxpool2d(t[0], 3));
        });
    });
    add("relu", [](Rng& rng) {
        Inputs in{signed_tensor({3, 7}, rng)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.relu(t[0]));
        });
    });
    add("leaky_relu", [](Rng& rng) {
        Inputs in{signed_tensor({3, 7}, rng)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.leaky_relu(t[0], 0.2));
        });
    });
    add("sigmoid", [](Rng& rng) {
        Inputs in{random_tensor({3, 7}, rng, -3, 3)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.sigmoid(t[0]));
        });
    });
    add("tanh", [](Rng& rng) {
        Inputs in{random_tensor({3, 7}, rng, -3, 3)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.tanh(t[0]));
        });
    });
    add("softmax", [](Rng& rng) {
        Inputs in{random_tensor({4, 6}, rng, -2, 2), random_tensor({4, 6}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.mul(g.softmax(t[0]), t[1]));
        });
    });
    add("reshape_flatten", [](Rng& rng) {
        Inputs in{random_tensor({2, 3, 4}, rng, -1, 1), random_tensor({12, 3}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.matmul(g.reshape(t[0], Shape{2, 12}), t[1]));
        });
    });
    add("concat_channels", [](Rng& rng) {
        Inputs in{random_tensor({2, 2, 4, 4}, rng, -1, 1), random_tensor({2, 3, 4, 4}, rng, -1, 1),
                  random_tensor({2, 5, 4, 4}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.mul(g.concat_channels({t[0], t[1]}), t[2]));
        });
    });
    add("multi_width_block", [](Rng& rng) {
        Inputs in{random_tensor({1, 2, 5, 5}, rng, -1, 1), random_tensor({2, 2, 1, 1}, rng, -1, 1),
                  random_tensor({2, 2, 3, 3}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            Tensor<double> b1 = g.conv2d(t[0], t[1], 1, 0);
            Tensor<double> b3 = g.conv2d(t[0], t[2], 1, 1);
            return g.mean(g.concat_channels({b1, b3}));
        });
    });
    add("add", [](Rng& rng) {
        Inputs in{random_tensor({3, 5}, rng, -1, 1), random_tensor({3, 5}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.add(t[0], t[1]));
        });
    });
    add("mul", [](Rng& rng) {
        Inputs in{random_tensor({3, 5}, rng, -1, 1), random_tensor({3, 5}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.mul(t[0], t[1]));
        });
    });
    add("scale", [](Rng& rng) {
        Inputs in{random_tensor({4, 4}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return g.mean(g.scale(t[0], 0.7));
        });
    });
    add("sum", [](Rng& rng) {
        Inputs in{random_tensor({3, 4}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) { return g.sum(t[0]); });
    });
    add("mean", [](Rng& rng) {
        Inputs in{random_tensor({3, 4}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) { return g.mean(t[0]); });
    });
    add("mlp_chain", [](Rng& rng) {
        Inputs in{random_tensor({2, 6}, rng, -1, 1), random_tensor({6, 4}, rng, -1, 1),
                  random_tensor({4}, rng, -1, 1), random_tensor({4, 1}, rng, -1, 1)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            Tensor<double> h = g.sigmoid(g.add_row_bias(g.matmul(t[0], t[1]), t[2]));
            return g.mean(g.matmul(h, t[3]));
        });
    });
    add("cross_entropy", [](Rng& rng) {
        Inputs in{random_tensor({4, 5}, rng, 0.1, 0.9)};
        std::vector<int> labels = random_labels(4, 5, rng);
        return check_case(in, [labels](Graph<double>& g, const Inputs& t) {
            return cross_entropy(g, t[0], labels);
        });
    });
    add("discriminator_loss", [](Rng& rng) {
        Inputs in{random_tensor({5, 1}, rng, 0.1, 0.9), random_tensor({4, 1}, rng, 0.1, 0.9)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return discriminator_loss(g, t[0], t[1]);
        });
    });
    add("generator_loss_paper", [](Rng& rng) {
        Inputs in{random_tensor({5, 1}, rng, 0.1, 0.9)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return generator_loss(g, t[0], GenLossMode::paper_exact);
        });
    });
    add("generator_loss_nonsat", [](Rng& rng) {
        Inputs in{random_tensor({5, 1}, rng, 0.1, 0.9)};
        return check_case(in, [](Graph<double>& g, const Inputs& t) {
            return generator_loss(g, t[0], GenLossMode::non_saturating);
        });
    });
    add("external_classifier_loss", [](Rng& rng) {
        Inputs in{random_tensor({3, 4}, rng, 0.1, 0.9), random_tensor({2, 4}, rng, 0.1, 0.9)};
        std::vector<int> y_real = random_labels(3, 4, rng);
        std::vector<int> y_gen = random_labels(2, 4, rng);
        return check_case(in, [y_real, y_gen](Graph<double>& g, const Inputs& t) {
            return external_classifier_loss(g, t[0], y_real, t[1], y_gen);
        });
    });
    return cases;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(int seeds_per_case) {
    if (seeds_per_case < 1) throw ContractError("gradient check needs at least one seed");
    std::vector<GradCheckResult> results;
    const std::vector<Case> cases = make_cases();
    for (size_t idx = 0; idx < cases.size(); ++idx) {
        GradCheckResult r;
        r.name = cases[idx].name;
        r.seeds = seeds_per_case;
        for (int s = 1; s <= seeds_per_case; ++s) {
            Rng rng = Rng::derive(kGradStream, idx, static_cast<uint64_t>(s));
            r.max_rel_err = std::max(r.max_rel_err, cases[idx].run(rng));
        }
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace adagan
