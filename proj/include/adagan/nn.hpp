#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "adagan/data.hpp"
#include "adagan/errors.hpp"
#include "adagan/rng.hpp"
#include "adagan/tensor.hpp"

namespace adagan {

// Probability clamp applied inside every loss before taking logs.
constexpr double kProbClamp = 1e-7;

enum class LayerKind {
    dense,
    conv,
    maxpool,
    relu,
    leaky_relu,
    sigmoid,
    tanh_act,
    softmax,
    flatten,
    multi_width,  // parallel convs of different kernel sizes, channel-concatenated
};

enum class OutputKind { probabilities, image, scalar_prob };

struct LayerSpec {
    LayerKind kind;
    int units = 0;                // dense
    int filters = 0;              // conv and multi_width (per branch)
    int kernel = 0;               // conv
    int stride = 1;               // conv
    int padding = 0;              // conv
    int window = 2;               // maxpool
    double alpha = 0.2;           // leaky_relu
    std::vector<int> widths;      // multi_width kernel sizes, each same-padded

    static LayerSpec dense(int units) { return {LayerKind::dense, units, 0, 0, 1, 0, 2, 0.2, {}}; }
    static LayerSpec conv(int filters, int kernel, int stride = 1, int padding = 0) {
        return {LayerKind::conv, 0, filters, kernel, stride, padding, 2, 0.2, {}};
    }
    static LayerSpec maxpool(int window = 2) {
        return {LayerKind::maxpool, 0, 0, 0, 1, 0, window, 0.2, {}};
    }
    static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 1, 0, 2, 0.2, {}}; }
    static LayerSpec leaky_relu(double alpha) {
        return {LayerKind::leaky_relu, 0, 0, 0, 1, 0, 2, alpha, {}};
    }
    static LayerSpec sigmoid() { return {LayerKind::sigmoid, 0, 0, 0, 1, 0, 2, 0.2, {}}; }
    static LayerSpec tanh() { return {LayerKind::tanh_act, 0, 0, 0, 1, 0, 2, 0.2, {}}; }
    static LayerSpec softmax() { return {LayerKind::softmax, 0, 0, 0, 1, 0, 2, 0.2, {}}; }
    static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 0, 1, 0, 2, 0.2, {}}; }
    static LayerSpec multi_width(int filters_per_branch, std::vector<int> widths) {
        return {LayerKind::multi_width, 0, filters_per_branch, 0, 1, 0, 2, 0.2, std::move(widths)};
    }
};

struct NetworkSpec {
    std::string name;
    Shape input_shape;  // without the batch extent: {1,28,28} or {latent_dim}
    std::vector<LayerSpec> layers;
    OutputKind output_kind = OutputKind::probabilities;
};

const char* layer_kind_name(LayerKind kind);

/// "mlp", "cnn_small", "cnn_medium", "cnn_wide" over 1x28x28 inputs ending in
/// softmax over class_count classes.
NetworkSpec classifier_preset(const std::string& name, int class_count);
std::vector<std::string> classifier_preset_names();

/// latent_dim -> dense 256/512/784 with leaky 0.2 and a sigmoid image head.
NetworkSpec generator_spec(int latent_dim);
/// 1x28x28 -> mirrored dense stack -> sigmoid scalar realness.
NetworkSpec discriminator_spec();

template <class S>
struct Layer {
    LayerSpec spec;
    Tensor<S> weight;                  // dense [in x out], conv [F x C x k x k]
    Tensor<S> bias;                    // [out] or [F]
    std::vector<Tensor<S>> mw_weights;  // multi_width branches
    std::vector<Tensor<S>> mw_biases;
};

template <class S>
class Network {
public:
    NetworkSpec spec;
    std::vector<Layer<S>> layers;
    int class_count = 0;  // K for probability outputs, else 0

    Tensor<S> forward(Graph<S>& g, const Tensor<S>& input) const {
        Tensor<S> x = input;
        for (const Layer<S>& layer : layers) {
            switch (layer.spec.kind) {
                case LayerKind::dense:
                    x = g.add_row_bias(g.matmul(x, layer.weight), layer.bias);
                    break;
                case LayerKind::conv:
                    x = g.add_channel_bias(
                        g.conv2d(x, layer.weight, layer.spec.stride, layer.spec.padding),
                        layer.bias);
                    break;
                case LayerKind::maxpool:
                    x = g.maxpool2d(x, layer.spec.window);
                    break;
                case LayerKind::relu:
                    x = g.relu(x);
                    break;
                case LayerKind::leaky_relu:
                    x = g.leaky_relu(x, static_cast<S>(layer.spec.alpha));
                    break;
                case LayerKind::sigmoid:
                    x = g.sigmoid(x);
                    break;
                case LayerKind::tanh_act:
                    x = g.tanh(x);
                    break;
                case LayerKind::softmax:
                    x = g.softmax(x);
                    break;
                case LayerKind::flatten:
                    x = g.reshape(x, Shape{x.dim(0), x.size() / x.dim(0)});
                    break;
                case LayerKind::multi_width: {
                    std::vector<Tensor<S>> branches;
                    for (size_t b = 0; b < layer.mw_weights.size(); ++b) {
                        const int pad = (layer.spec.widths[b] - 1) / 2;
                        branches.push_back(g.add_channel_bias(
                            g.conv2d(x, layer.mw_weights[b], 1, pad), layer.mw_biases[b]));
                    }
                    x = g.concat_channels(branches);
                    break;
                }
            }
        }
        if (spec.output_kind == OutputKind::image) {
            const int64_t n = x.dim(0);
            x = g.reshape(x, Shape{n, 1, 28, 28});
        }
        return x;
    }

    std::vector<Tensor<S>> parameters() {
        std::vector<Tensor<S>> params;
        for (Layer<S>& layer : layers) {
            if (layer.weight.defined()) params.push_back(layer.weight);
            if (layer.bias.defined()) params.push_back(layer.bias);
            for (auto& w : layer.mw_weights) params.push_back(w);
            for (auto& b : layer.mw_biases) params.push_back(b);
        }
        return params;
    }

    void zero_grads() {
        for (auto& p : parameters()) p.zero_grad();
    }

    int64_t parameter_count() {
        int64_t n = 0;
        for (auto& p : parameters()) n += p.size();
        return n;
    }
};

namespace detail {

template <class S>
Tensor<S> init_param(Shape shape, int64_t fan_in, Rng& rng) {
    // centered uniform scaled by 1/sqrt(fan_in), the recorded default
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<S> vals(static_cast<size_t>(numel(shape)));
    for (auto& v : vals) v = static_cast<S>(rng.uniform(-bound, bound));
    return Tensor<S>(std::move(shape), std::move(vals), true);
}

}  // namespace detail

/// Dry-run shape pass plus parameter initialization. Shape conflicts name the
/// offending layer index.
template <class S>
Network<S> build_network(const NetworkSpec& spec, Rng& rng) {
    if (spec.input_shape.empty()) throw BuildError(spec.name + ": network needs an input shape");
    Network<S> net;
    net.spec = spec;

    auto fail = [&](size_t layer_idx, const std::string& why) -> void {
        throw BuildError(spec.name + " layer " + std::to_string(layer_idx) + " (" +
                         layer_kind_name(spec.layers[layer_idx].kind) + "): " + why);
    };

    Shape shape = spec.input_shape;  // without batch extent
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& ls = spec.layers[i];
        Layer<S> layer;
        layer.spec = ls;
        switch (ls.kind) {
            case LayerKind::dense: {
                if (shape.size() != 1) {
                    fail(i, "dense needs flat input features, got shape " + shape_str(shape) +
                                "; add a flatten layer");
                }
                if (ls.units < 1) fail(i, "dense needs units >= 1");
                const int64_t in = shape[0];
                layer.weight = detail::init_param<S>(Shape{in, ls.units}, in, rng);
                layer.bias = Tensor<S>(Shape{ls.units}, true);
                shape = {ls.units};
                break;
            }
            case LayerKind::conv: {
                if (shape.size() != 3) fail(i, "conv needs CxHxW input, got " + shape_str(shape));
                if (ls.filters < 1 || ls.kernel < 1) fail(i, "conv needs filters and kernel >= 1");
                const int64_t c = shape[0], h = shape[1], w = shape[2];
                const int64_t oh = (h + 2 * ls.padding - ls.kernel) / ls.stride + 1;
                const int64_t ow = (w + 2 * ls.padding - ls.kernel) / ls.stride + 1;
                if (ls.kernel > h + 2 * ls.padding || ls.kernel > w + 2 * ls.padding) {
                    fail(i, "kernel " + std::to_string(ls.kernel) + " exceeds padded input " +
                                shape_str(shape));
                }
                layer.weight = detail::init_param<S>(Shape{ls.filters, c, ls.kernel, ls.kernel},
                                                     c * ls.kernel * ls.kernel, rng);
                layer.bias = Tensor<S>(Shape{ls.filters}, true);
                shape = {ls.filters, oh, ow};
                break;
            }
            case LayerKind::maxpool: {
                if (shape.size() != 3) fail(i, "maxpool needs CxHxW input, got " + shape_str(shape));
                if (ls.window > shape[1] || ls.window > shape[2]) {
                    fail(i, "window " + std::to_string(ls.window) + " exceeds input " +
                                shape_str(shape));
                }
                shape = {shape[0], (shape[1] - ls.window) / ls.window + 1,
                         (shape[2] - ls.window) / ls.window + 1};
                break;
            }
            case LayerKind::flatten: {
                shape = {numel(shape)};
                break;
            }
            case LayerKind::softmax: {
                if (shape.size() != 1 || shape[0] < 2) {
                    fail(i, "softmax needs >= 2 flat features, got " + shape_str(shape));
                }
                break;
            }
            case LayerKind::multi_width: {
                if (shape.size() != 3) {
                    fail(i, "multi_width needs CxHxW input, got " + shape_str(shape));
                }
                if (ls.widths.empty() || ls.filters < 1) {
                    fail(i, "multi_width needs branch widths and filters >= 1");
                }
                for (int wk : ls.widths) {
                    if (wk < 1 || wk % 2 == 0) fail(i, "branch kernels must be odd and >= 1");
                    layer.mw_weights.push_back(detail::init_param<S>(
                        Shape{ls.filters, shape[0], wk, wk}, shape[0] * wk * wk, rng));
                    layer.mw_biases.push_back(Tensor<S>(Shape{ls.filters}, true));
                }
                shape = {static_cast<int64_t>(ls.widths.size()) * ls.filters, shape[1], shape[2]};
                break;
            }
            case LayerKind::relu:
            case LayerKind::leaky_relu:
            case LayerKind::sigmoid:
            case LayerKind::tanh_act:
                break;  // shape-preserving
        }
        net.layers.push_back(std::move(layer));
    }

    if (spec.output_kind == OutputKind::probabilities) {
        if (spec.layers.empty() || spec.layers.back().kind != LayerKind::softmax) {
            throw BuildError(spec.name + ": probability networks must end in softmax");
        }
        net.class_count = static_cast<int>(shape[0]);
    } else if (spec.output_kind == OutputKind::image) {
        if (shape != Shape{784}) {
            throw BuildError(spec.name + ": image networks must end with 784 features, got " +
                             shape_str(shape));
        }
    } else if (spec.output_kind == OutputKind::scalar_prob) {
        if (shape != Shape{1}) {
            throw BuildError(spec.name + ": scalar networks must end with 1 feature, got " +
                             shape_str(shape));
        }
    }
    return net;
}

// ---- losses -----------------------------------------------------------------
// Each loss is a fused graph node: probabilities are clamped to
// [kProbClamp, 1 - kProbClamp] before the log, and the clamp blocks the
// gradient outside that range.

namespace detail {

template <class S>
S clamp_prob(S p) {
    return std::clamp(p, static_cast<S>(kProbClamp), static_cast<S>(1.0 - kProbClamp));
}

template <class S>
bool prob_unclamped(S p) {
    return p > static_cast<S>(kProbClamp) && p < static_cast<S>(1.0 - kProbClamp);
}

}  // namespace detail

/// Mean over the batch of -ln(probs[i, labels[i]]).
template <class S>
Tensor<S> cross_entropy(Graph<S>& g, const Tensor<S>& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2) {
        throw DimensionError("cross_entropy expects [N x K] probabilities, got " +
                             shape_str(probs.shape()));
    }
    const int64_t n = probs.dim(0), k = probs.dim(1);
    if (static_cast<int64_t>(labels.size()) != n) {
        throw ContractError("cross_entropy got " + std::to_string(labels.size()) +
                            " labels for " + std::to_string(n) + " rows");
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= k) {
            throw ContractError("cross_entropy label " + std::to_string(lab) + " outside [0," +
                                std::to_string(k) + ")");
        }
    }
    S acc = 0;
    const S* pv = probs.values().data();
    for (int64_t i = 0; i < n; ++i) {
        acc -= std::log(detail::clamp_prob(pv[i * k + labels[static_cast<size_t>(i)]]));
    }
    Tensor<S> out = g.make_output(Shape{1}, probs);
    out.mutable_values()[0] = acc / static_cast<S>(n);
    if (out.requires_grad()) {
        g.record([probs = probs, out, labels, n, k]() mutable {
            if (!out.has_grad()) return;
            const S go = out.grad()[0];
            const S* pv = probs.values().data();
            S* gp = probs.ensure_grad().data();
            for (int64_t i = 0; i < n; ++i) {
                const int64_t at = i * k + labels[static_cast<size_t>(i)];
                if (detail::prob_unclamped(pv[at])) {
                    gp[at] -= go / (static_cast<S>(n) * pv[at]);
                }
            }
        });
    }
    return out;
}

/// -mean(ln d_real) - mean(ln(1 - d_fake)): the minimization form of the
/// two-term discriminator objective.
template <class S>
Tensor<S> discriminator_loss(Graph<S>& g, const Tensor<S>& d_real, const Tensor<S>& d_fake) {
    const int64_t n = d_real.size(), m = d_fake.size();
    S acc = 0;
    for (S p : d_real.values()) acc -= std::log(detail::clamp_prob(p));
    S acc_fake = 0;
    for (S p : d_fake.values()) acc_fake -= std::log(static_cast<S>(1) - detail::clamp_prob(p));
    Tensor<S> out = g.make_output(Shape{1}, d_real, d_fake);
    out.mutable_values()[0] = acc / static_cast<S>(n) + acc_fake / static_cast<S>(m);
    if (out.requires_grad()) {
        g.record([d_real = d_real, d_fake = d_fake, out, n, m]() mutable {
            if (!out.has_grad()) return;
            const S go = out.grad()[0];
            if (d_real.requires_grad()) {
                const S* pv = d_real.values().data();
                S* gp = d_real.ensure_grad().data();
                for (int64_t i = 0; i < n; ++i) {
                    if (detail::prob_unclamped(pv[i])) gp[i] -= go / (static_cast<S>(n) * pv[i]);
                }
            }
            if (d_fake.requires_grad()) {
                const S* pv = d_fake.values().data();
                S* gp = d_fake.ensure_grad().data();
                for (int64_t i = 0; i < m; ++i) {
                    if (detail::prob_unclamped(pv[i])) {
                        gp[i] += go / (static_cast<S>(m) * (static_cast<S>(1) - pv[i]));
                    }
                }
            }
        });
    }
    return out;
}

enum class GenLossMode { paper_exact, non_saturating };

/// paper_exact: mean(ln(1 - d_fake)); non_saturating: -mean(ln d_fake).
/// Both push d_fake upward when minimized.
template <class S>
Tensor<S> generator_loss(Graph<S>& g, const Tensor<S>& d_fake, GenLossMode mode) {
    const int64_t m = d_fake.size();
    S acc = 0;
    for (S p : d_fake.values()) {
        const S c = detail::clamp_prob(p);
        acc += mode == GenLossMode::paper_exact ? std::log(static_cast<S>(1) - c) : -std::log(c);
    }
    Tensor<S> out = g.make_output(Shape{1}, d_fake);
    out.mutable_values()[0] = acc / static_cast<S>(m);
    if (out.requires_grad()) {
        g.record([d_fake = d_fake, out, mode, m]() mutable {
            if (!out.has_grad()) return;
            const S go = out.grad()[0];
            const S* pv = d_fake.values().data();
            S* gp = d_fake.ensure_grad().data();
            for (int64_t i = 0; i < m; ++i) {
                if (!detail::prob_unclamped(pv[i])) continue;
                if (mode == GenLossMode::paper_exact) {
                    gp[i] -= go / (static_cast<S>(m) * (static_cast<S>(1) - pv[i]));
                } else {
                    gp[i] -= go / (static_cast<S>(m) * pv[i]);
                }
            }
        });
    }
    return out;
}

/// cross_entropy(real) + cross_entropy(generated); pass an undefined c_gen
/// for an empty generated batch (the second term is then exactly zero).
template <class S>
Tensor<S> external_classifier_loss(Graph<S>& g, const Tensor<S>& c_real,
                                   const std::vector<int>& y_real, const Tensor<S>& c_gen,
                                   const std::vector<int>& y_gen) {
    Tensor<S> real_term = cross_entropy(g, c_real, y_real);
    if (!c_gen.defined()) {
        if (!y_gen.empty()) {
            throw ContractError("external_classifier_loss got labels but no generated batch");
        }
        return real_term;
    }
    return g.add(real_term, cross_entropy(g, c_gen, y_gen));
}

// ---- optimizers ----------------------------------------------------------------

enum class OptimizerKind { sgd, adam };

/// Moment buffers are keyed by parameter position, so step() must always see
/// the same parameter list. Gradients are zeroed after each step.
template <class S>
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate)
        : kind_(kind), lr_(learning_rate) {}

    OptimizerKind kind() const { return kind_; }
    double learning_rate() const { return lr_; }

    void step(std::vector<Tensor<S>> params) {
        if (moments_.empty()) {
            moments_.resize(params.size());
        } else if (moments_.size() != params.size()) {
            throw ContractError("optimizer saw " + std::to_string(params.size()) +
                                " parameters, expected " + std::to_string(moments_.size()));
        }
        ++step_count_;
        for (size_t p = 0; p < params.size(); ++p) {
            Tensor<S>& param = params[p];
            if (!param.has_grad()) {
                throw ContractError("parameter " + std::to_string(p) +
                                    " has no gradient; run backward first");
            }
            S* w = param.mutable_values().data();
            const S* grad = param.grad().data();
            const int64_t n = param.size();
            if (kind_ == OptimizerKind::sgd) {
                const S lr = static_cast<S>(lr_);
                for (int64_t i = 0; i < n; ++i) w[i] -= lr * grad[i];
            } else {
                constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
                Moments& mom = moments_[p];
                if (mom.m.empty()) {
                    mom.m.assign(static_cast<size_t>(n), 0.0);
                    mom.v.assign(static_cast<size_t>(n), 0.0);
                } else if (static_cast<int64_t>(mom.m.size()) != n) {
                    throw ContractError("parameter " + std::to_string(p) + " changed size");
                }
                const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
                const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
                for (int64_t i = 0; i < n; ++i) {
                    const double gi = static_cast<double>(grad[i]);
                    mom.m[static_cast<size_t>(i)] = beta1 * mom.m[static_cast<size_t>(i)] + (1.0 - beta1) * gi;
                    mom.v[static_cast<size_t>(i)] = beta2 * mom.v[static_cast<size_t>(i)] + (1.0 - beta2) * gi * gi;
                    const double mhat = mom.m[static_cast<size_t>(i)] / bc1;
                    const double vhat = mom.v[static_cast<size_t>(i)] / bc2;
                    w[i] -= static_cast<S>(lr_ * mhat / (std::sqrt(vhat) + eps));
                }
            }
            param.zero_grad();
        }
    }

private:
    struct Moments {
        std::vector<double> m, v;  // kept in double so float training stays stable
    };
    OptimizerKind kind_;
    double lr_;
    int64_t step_count_ = 0;
    std::vector<Moments> moments_;
};

template <class S>
void optimizer_step(Optimizer<S>& opt, Network<S>& network) {
    opt.step(network.parameters());
}

// ---- evaluation -----------------------------------------------------------------

inline std::vector<int> argmax_rows(std::span<const float> values, int64_t rows, int64_t cols) {
    std::vector<int> out(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) {
        const float* row = values.data() + i * cols;
        int best = 0;
        for (int64_t j = 1; j < cols; ++j) {
            if (row[j] > row[best]) best = static_cast<int>(j);
        }
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

/// Fraction of samples whose argmax matches the label; runs without
/// recording gradients.
template <class S>
double evaluate_accuracy(const Network<S>& network, const LabeledDataset& data) {
    if (network.spec.output_kind != OutputKind::probabilities ||
        network.class_count != data.class_count) {
        throw ContractError("evaluate_accuracy: network over " +
                            std::to_string(network.class_count) +
                            " classes cannot score a dataset with " +
                            std::to_string(data.class_count));
    }
    const int64_t n = data.size();
    int64_t correct = 0;
    constexpr int64_t kEvalBatch = 256;
    for (int64_t start = 0; start < n; start += kEvalBatch) {
        const int64_t stop = std::min(n, start + kEvalBatch);
        std::vector<int64_t> idx(static_cast<size_t>(stop - start));
        for (int64_t i = start; i < stop; ++i) idx[static_cast<size_t>(i - start)] = i;
        Graph<S> g(false);
        const Tensor<S> probs =
            network.forward(g, cast_tensor<S>(data.batch_images(idx)));
        const S* pv = probs.values().data();
        for (int64_t i = 0; i < probs.dim(0); ++i) {
            int best = 0;
            for (int64_t j = 1; j < probs.dim(1); ++j) {
                if (pv[i * probs.dim(1) + j] > pv[i * probs.dim(1) + best]) {
                    best = static_cast<int>(j);
                }
            }
            if (best == data.labels[static_cast<size_t>(start + i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace adagan
