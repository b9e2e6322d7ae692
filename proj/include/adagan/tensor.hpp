#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adagan/errors.hpp"

namespace adagan {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major tensor. Copies are cheap handles onto shared storage;
/// values are written only at construction, by the optimizer, and by
/// gradient accumulation during backward.
///
/// The scalar type selects the precision mode: float for training,
/// double for the finite-difference gradient checks.
template <class S>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : shape_(std::move(shape)), payload_(std::make_shared<Payload>()) {
        validate_shape();
        payload_->values.assign(static_cast<size_t>(numel(shape_)), S(0));
        payload_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<S> values, bool requires_grad = false)
        : shape_(std::move(shape)), payload_(std::make_shared<Payload>()) {
        validate_shape();
        if (static_cast<int64_t>(values.size()) != numel(shape_)) {
            throw DimensionError("tensor value count " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape_));
        }
        payload_->values = std::move(values);
        payload_->requires_grad = requires_grad;
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<S>{v}, requires_grad);
    }

    static Tensor full(Shape shape, S v, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        std::fill(t.payload_->values.begin(), t.payload_->values.end(), v);
        return t;
    }

    bool defined() const { return payload_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return payload_ ? static_cast<int64_t>(payload_->values.size()) : 0; }
    bool requires_grad() const { return payload_ && payload_->requires_grad; }
    bool has_grad() const { return payload_ && !payload_->grad.empty(); }

    std::span<const S> values() const { return payload_->values; }
    std::span<S> mutable_values() { return payload_->values; }

    std::span<const S> grad() const { return payload_->grad; }

    /// Grad buffer for accumulation, allocated (zeroed) on first use.
    std::span<S> ensure_grad() {
        if (payload_->grad.empty()) payload_->grad.assign(payload_->values.size(), S(0));
        return payload_->grad;
    }

    void zero_grad() {
        if (payload_) payload_->grad.clear();
    }

    S item() const {
        if (size() != 1) {
            throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape_));
        }
        return payload_->values[0];
    }

    /// Copy of the values into a fresh tensor detached from any graph.
    Tensor detached_copy(bool requires_grad = false) const {
        return Tensor(shape_, std::vector<S>(payload_->values.begin(), payload_->values.end()),
                      requires_grad);
    }

    /// True when both handles share the same storage.
    bool same_storage(const Tensor& other) const { return payload_ == other.payload_; }

private:
    struct Payload {
        std::vector<S> values;
        std::vector<S> grad;  // empty until backward reaches this tensor
        bool requires_grad = false;
    };

    void validate_shape() const {
        if (shape_.empty()) throw DimensionError("tensor shape must have at least one extent");
        for (int64_t d : shape_) {
            if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::shared_ptr<Payload> payload_;
};

template <class S>
bool all_finite(const Tensor<S>& t) {
    for (S v : t.values()) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

template <class D, class S>
Tensor<D> cast_tensor(const Tensor<S>& t, bool requires_grad = false) {
    std::vector<D> vals(t.values().begin(), t.values().end());
    return Tensor<D>(t.shape(), std::move(vals), requires_grad);
}

/// Define-by-run tape. Ops append nodes in execution order, which is also a
/// valid topological order; backward() walks it in reverse exactly once.
/// A graph is built for one forward pass and discarded afterwards.
template <class S>
class Graph {
public:
    /// Pass recording = false for pure evaluation: no nodes are recorded and
    /// outputs do not track gradients.
    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    size_t node_count() const { return nodes_.size(); }

    // ---- graph-recorded operations -------------------------------------

    Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
        if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
            throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                                 shape_str(b.shape()));
        }
        const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        Tensor<S> out = make_output(Shape{m, n}, a, b);
        matmul_into(a.values().data(), b.values().data(), out.mutable_values().data(), m, k, n);
        if (out.requires_grad()) {
            push_node([a = a, b = b, out, m, k, n]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                if (a.requires_grad()) {
                    // dA[i,t] = sum_j dO[i,j] * B[t,j]
                    S* ga = a.ensure_grad().data();
                    const S* bv = b.values().data();
                    for (int64_t i = 0; i < m; ++i) {
                        const S* gorow = go + i * n;
                        for (int64_t t = 0; t < k; ++t) {
                            const S* brow = bv + t * n;
                            S acc = 0;
                            for (int64_t j = 0; j < n; ++j) acc += gorow[j] * brow[j];
                            ga[i * k + t] += acc;
                        }
                    }
                }
                if (b.requires_grad()) {
                    // dB[t,j] = sum_i A[i,t] * dO[i,j]
                    S* gb = b.ensure_grad().data();
                    const S* av = a.values().data();
                    for (int64_t i = 0; i < m; ++i) {
                        const S* gorow = go + i * n;
                        const S* arow = av + i * k;
                        for (int64_t t = 0; t < k; ++t) {
                            const S at = arow[t];
                            S* gbrow = gb + t * n;
                            for (int64_t j = 0; j < n; ++j) gbrow[j] += at * gorow[j];
                        }
                    }
                }
            });
        }
        return out;
    }

    /// Cross-correlation (no kernel flip). H' = (H + 2p - kh) / stride + 1.
    Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernels, int stride, int padding) {
        if (input.rank() != 4 || kernels.rank() != 4) {
            throw DimensionError("conv2d expects NCHW input and FCkhkw kernels, got " +
                                 shape_str(input.shape()) + " and " + shape_str(kernels.shape()));
        }
        if (stride < 1) throw ContractError("conv2d stride must be >= 1");
        if (padding < 0) throw ContractError("conv2d padding must be >= 0");
        const int64_t batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
        const int64_t filters = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
        if (kernels.dim(1) != ch) {
            throw DimensionError("conv2d channel mismatch: input " + shape_str(input.shape()) +
                                 " vs kernels " + shape_str(kernels.shape()));
        }
        if (kh > h + 2 * padding || kw > w + 2 * padding) {
            throw DimensionError("conv2d kernel " + shape_str(kernels.shape()) +
                                 " larger than padded input " + shape_str(input.shape()));
        }
        const int64_t oh = (h + 2 * padding - kh) / stride + 1;
        const int64_t ow = (w + 2 * padding - kw) / stride + 1;
        Tensor<S> out = make_output(Shape{batch, filters, oh, ow}, input, kernels);

        const S* in = input.values().data();
        const S* ker = kernels.values().data();
        S* o = out.mutable_values().data();
        const int64_t s = stride, p = padding;
        for (int64_t n = 0; n < batch; ++n) {
            for (int64_t f = 0; f < filters; ++f) {
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t y0 = oy * s - p;
                    const int64_t u0 = std::max<int64_t>(0, -y0);
                    const int64_t u1 = std::min<int64_t>(kh, h - y0);
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t x0 = ox * s - p;
                        const int64_t v0 = std::max<int64_t>(0, -x0);
                        const int64_t v1 = std::min<int64_t>(kw, w - x0);
                        S acc = 0;
                        for (int64_t c = 0; c < ch; ++c) {
                            const S* inc = in + ((n * ch + c) * h) * w;
                            const S* kfc = ker + ((f * ch + c) * kh) * kw;
                            for (int64_t u = u0; u < u1; ++u) {
                                const S* inrow = inc + (y0 + u) * w + x0;
                                const S* krow = kfc + u * kw;
                                for (int64_t v = v0; v < v1; ++v) acc += inrow[v] * krow[v];
                            }
                        }
                        o[((n * filters + f) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }

        if (out.requires_grad()) {
            push_node([input = input, kernels = kernels, out, stride, padding]() mutable {
                if (!out.has_grad()) return;
                const int64_t batch = input.dim(0), ch = input.dim(1), h = input.dim(2),
                              w = input.dim(3);
                const int64_t filters = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
                const int64_t oh = out.dim(2), ow = out.dim(3);
                const int64_t s = stride, p = padding;
                const S* go = out.grad().data();
                const S* in = input.values().data();
                const S* ker = kernels.values().data();
                S* gin = input.requires_grad() ? input.ensure_grad().data() : nullptr;
                S* gker = kernels.requires_grad() ? kernels.ensure_grad().data() : nullptr;
                for (int64_t n = 0; n < batch; ++n) {
                    for (int64_t f = 0; f < filters; ++f) {
                        for (int64_t oy = 0; oy < oh; ++oy) {
                            const int64_t y0 = oy * s - p;
                            const int64_t u0 = std::max<int64_t>(0, -y0);
                            const int64_t u1 = std::min<int64_t>(kh, h - y0);
                            for (int64_t ox = 0; ox < ow; ++ox) {
                                const int64_t x0 = ox * s - p;
                                const int64_t v0 = std::max<int64_t>(0, -x0);
                                const int64_t v1 = std::min<int64_t>(kw, w - x0);
                                const S g = go[((n * filters + f) * oh + oy) * ow + ox];
                                if (g == S(0)) continue;
                                for (int64_t c = 0; c < ch; ++c) {
                                    const int64_t in_base = ((n * ch + c) * h) * w;
                                    const int64_t k_base = ((f * ch + c) * kh) * kw;
                                    for (int64_t u = u0; u < u1; ++u) {
                                        const int64_t irow = in_base + (y0 + u) * w + x0;
                                        const int64_t krow = k_base + u * kw;
                                        if (gin) {
                                            for (int64_t v = v0; v < v1; ++v)
                                                gin[irow + v] += g * ker[krow + v];
                                        }
                                        if (gker) {
                                            for (int64_t v = v0; v < v1; ++v)
                                                gker[krow + v] += g * in[irow + v];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }
        return out;
    }

    /// Max pooling, no padding. Ties go to the first element in scan order.
    Tensor<S> maxpool2d(const Tensor<S>& input, int window, int stride = 0) {
        if (input.rank() != 4) {
            throw DimensionError("maxpool2d expects NCHW input, got " + shape_str(input.shape()));
        }
        if (stride == 0) stride = window;
        if (window < 1 || stride < 1) throw ContractError("maxpool2d window/stride must be >= 1");
        const int64_t batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
        if (window > h || window > w) {
            throw DimensionError("maxpool2d window " + std::to_string(window) +
                                 " larger than input " + shape_str(input.shape()));
        }
        const int64_t oh = (h - window) / stride + 1;
        const int64_t ow = (w - window) / stride + 1;
        Tensor<S> out = make_output(Shape{batch, ch, oh, ow}, input);

        const S* in = input.values().data();
        S* o = out.mutable_values().data();
        auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.size()));
        int64_t oi = 0;
        for (int64_t n = 0; n < batch; ++n) {
            for (int64_t c = 0; c < ch; ++c) {
                const S* plane = in + ((n * ch + c) * h) * w;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    for (int64_t ox = 0; ox < ow; ++ox, ++oi) {
                        int64_t best = oy * stride * w + ox * stride;
                        S bv = plane[best];
                        for (int64_t u = 0; u < window; ++u) {
                            for (int64_t v = 0; v < window; ++v) {
                                const int64_t idx = (oy * stride + u) * w + ox * stride + v;
                                if (plane[idx] > bv) {
                                    bv = plane[idx];
                                    best = idx;
                                }
                            }
                        }
                        o[oi] = bv;
                        (*argmax)[static_cast<size_t>(oi)] = ((n * ch + c) * h) * w + best;
                    }
                }
            }
        }

        if (out.requires_grad()) {
            push_node([input = input, out, argmax]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                S* gin = input.ensure_grad().data();
                for (int64_t i = 0; i < out.size(); ++i) {
                    gin[(*argmax)[static_cast<size_t>(i)]] += go[i];
                }
            });
        }
        return out;
    }

    Tensor<S> relu(const Tensor<S>& x) {
        Tensor<S> out = make_output(x.shape(), x);
        const S* xv = x.values().data();
        S* ov = out.mutable_values().data();
        for (int64_t i = 0; i < x.size(); ++i) ov[i] = xv[i] > S(0) ? xv[i] : S(0);
        if (out.requires_grad()) {
            push_node([x = x, out]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                const S* xv = x.values().data();
                S* gx = x.ensure_grad().data();
                for (int64_t i = 0; i < x.size(); ++i) {
                    if (xv[i] > S(0)) gx[i] += go[i];
                }
            });
        }
        return out;
    }

    Tensor<S> leaky_relu(const Tensor<S>& x, S alpha) {
        Tensor<S> out = make_output(x.shape(), x);
        const S* xv = x.values().data();
        S* ov = out.mutable_values().data();
        for (int64_t i = 0; i < x.size(); ++i) ov[i] = xv[i] < S(0) ? alpha * xv[i] : xv[i];
        if (out.requires_grad()) {
            push_node([x = x, out, alpha]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                const S* xv = x.values().data();
                S* gx = x.ensure_grad().data();
                for (int64_t i = 0; i < x.size(); ++i) {
                    gx[i] += (xv[i] < S(0) ? alpha : S(1)) * go[i];
                }
            });
        }
        return out;
    }

    Tensor<S> sigmoid(const Tensor<S>& x) {
        Tensor<S> out = make_output(x.shape(), x);
        const S* xv = x.values().data();
        S* ov = out.mutable_values().data();
        for (int64_t i = 0; i < x.size(); ++i) ov[i] = stable_sigmoid(xv[i]);
        if (out.requires_grad()) {
            push_node([x = x, out]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                const S* yv = out.values().data();
                S* gx = x.ensure_grad().data();
                for (int64_t i = 0; i < x.size(); ++i) gx[i] += yv[i] * (S(1) - yv[i]) * go[i];
            });
        }
        return out;
    }

    Tensor<S> tanh(const Tensor<S>& x) {
        Tensor<S> out = make_output(x.shape(), x);
        const S* xv = x.values().data();
        S* ov = out.mutable_values().data();
        for (int64_t i = 0; i < x.size(); ++i) ov[i] = std::tanh(xv[i]);
        if (out.requires_grad()) {
            push_node([x = x, out]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                const S* yv = out.values().data();
                S* gx = x.ensure_grad().data();
                for (int64_t i = 0; i < x.size(); ++i) gx[i] += (S(1) - yv[i] * yv[i]) * go[i];
            });
        }
        return out;
    }

    /// Elementwise sum; shapes must match exactly (no broadcasting).
    Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
        require_same_shape("add", a, b);
        Tensor<S> out = make_output(a.shape(), a, b);
        const S* av = a.values().data();
        const S* bv = b.values().data();
        S* ov = out.mutable_values().data();
        for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] + bv[i];
        if (out.requires_grad()) {
            push_node([a = a, b = b, out]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                if (a.requires_grad()) {
                    S* ga = a.ensure_grad().data();
                    for (int64_t i = 0; i < a.size(); ++i) ga[i] += go[i];
                }
                if (b.requires_grad()) {
                    S* gb = b.ensure_grad().data();
                    for (int64_t i = 0; i < b.size(); ++i) gb[i] += go[i];
                }
            });
        }
        return out;
    }

    /// Hadamard product; shapes must match exactly.
    Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
        require_same_shape("mul", a, b);
        Tensor<S> out = make_output(a.shape(), a, b);
        const S* av = a.values().data();
        const S* bv = b.values().data();
        S* ov = out.mutable_values().data();
        for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] * bv[i];
        if (out.requires_grad()) {
            push_node([a = a, b = b, out]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                const S* av = a.values().data();
                const S* bv = b.values().data();
                if (a.requires_grad()) {
                    S* ga = a.ensure_grad().data();
                    for (int64_t i = 0; i < a.size(); ++i) ga[i] += bv[i] * go[i];
                }
                if (b.requires_grad()) {
                    S* gb = b.ensure_grad().data();
                    for (int64_t i = 0; i < b.size(); ++i) gb[i] += av[i] * go[i];
                }
            });
        }
        return out;
    }

    Tensor<S> scale(const Tensor<S>& x, S c) {
        Tensor<S> out = make_output(x.shape(), x);
        const S* xv = x.values().data();
        S* ov = out.mutable_values().data();
        for (int64_t i = 0; i < x.size(); ++i) ov[i] = c * xv[i];
        if (out.requires_grad()) {
            push_node([x = x, out, c]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                S* gx = x.ensure_grad().data();
                for (int64_t i = 0; i < x.size(); ++i) gx[i] += c * go[i];
            });
        }
        return out;
    }

    /// [N x K] plus a length-K bias row added to every row.
    Tensor<S> add_row_bias(const Tensor<S>& m, const Tensor<S>& bias) {
        if (m.rank() != 2 || bias.rank() != 1 || bias.dim(0) != m.dim(1)) {
            throw DimensionError("add_row_bias shape mismatch: " + shape_str(m.shape()) + " + " +
                                 shape_str(bias.shape()));
        }
        const int64_t rows = m.dim(0), cols = m.dim(1);
        Tensor<S> out = make_output(m.shape(), m, bias);
        const S* mv = m.values().data();
        const S* bv = bias.values().data();
        S* ov = out.mutable_values().data();
        for (int64_t i = 0; i < rows; ++i) {
            for (int64_t j = 0; j < cols; ++j) ov[i * cols + j] = mv[i * cols + j] + bv[j];
        }
        if (out.requires_grad()) {
            push_node([m = m, bias = bias, out, rows, cols]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                if (m.requires_grad()) {
                    S* gm = m.ensure_grad().data();
                    for (int64_t i = 0; i < rows * cols; ++i) gm[i] += go[i];
                }
                if (bias.requires_grad()) {
                    S* gb = bias.ensure_grad().data();
                    for (int64_t i = 0; i < rows; ++i) {
                        for (int64_t j = 0; j < cols; ++j) gb[j] += go[i * cols + j];
                    }
                }
            });
        }
        return out;
    }

    /// [N x C x H x W] plus a length-C bias added to every plane.
    Tensor<S> add_channel_bias(const Tensor<S>& im, const Tensor<S>& bias) {
        if (im.rank() != 4 || bias.rank() != 1 || bias.dim(0) != im.dim(1)) {
            throw DimensionError("add_channel_bias shape mismatch: " + shape_str(im.shape()) +
                                 " + " + shape_str(bias.shape()));
        }
        const int64_t batch = im.dim(0), ch = im.dim(1), plane = im.dim(2) * im.dim(3);
        Tensor<S> out = make_output(im.shape(), im, bias);
        const S* iv = im.values().data();
        const S* bv = bias.values().data();
        S* ov = out.mutable_values().data();
        for (int64_t n = 0; n < batch; ++n) {
            for (int64_t c = 0; c < ch; ++c) {
                const int64_t base = (n * ch + c) * plane;
                const S b = bv[c];
                for (int64_t i = 0; i < plane; ++i) ov[base + i] = iv[base + i] + b;
            }
        }
        if (out.requires_grad()) {
            push_node([im = im, bias = bias, out, batch, ch, plane]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                if (im.requires_grad()) {
                    S* gi = im.ensure_grad().data();
                    for (int64_t i = 0; i < im.size(); ++i) gi[i] += go[i];
                }
                if (bias.requires_grad()) {
                    S* gb = bias.ensure_grad().data();
                    for (int64_t n = 0; n < batch; ++n) {
                        for (int64_t c = 0; c < ch; ++c) {
                            const int64_t base = (n * ch + c) * plane;
                            S acc = 0;
                            for (int64_t i = 0; i < plane; ++i) acc += go[base + i];
                            gb[c] += acc;
                        }
                    }
                }
            });
        }
        return out;
    }

    /// Row-wise softmax with max-subtraction.
    Tensor<S> softmax(const Tensor<S>& logits) {
        if (logits.rank() != 2) {
            throw DimensionError("softmax expects [N x K] logits, got " + shape_str(logits.shape()));
        }
        const int64_t rows = logits.dim(0), k = logits.dim(1);
        if (k < 2) throw ContractError("softmax requires at least 2 classes, got " + std::to_string(k));
        Tensor<S> out = make_output(logits.shape(), logits);
        const S* xv = logits.values().data();
        S* ov = out.mutable_values().data();
        for (int64_t i = 0; i < rows; ++i) {
            const S* row = xv + i * k;
            S* orow = ov + i * k;
            S mx = row[0];
            for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
            S denom = 0;
            for (int64_t j = 0; j < k; ++j) {
                orow[j] = std::exp(row[j] - mx);
                denom += orow[j];
            }
            for (int64_t j = 0; j < k; ++j) orow[j] /= denom;
        }
        if (out.requires_grad()) {
            push_node([logits = logits, out, rows, k]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                const S* yv = out.values().data();
                S* gx = logits.ensure_grad().data();
                for (int64_t i = 0; i < rows; ++i) {
                    const S* g = go + i * k;
                    const S* y = yv + i * k;
                    S dot = 0;
                    for (int64_t j = 0; j < k; ++j) dot += g[j] * y[j];
                    for (int64_t j = 0; j < k; ++j) gx[i * k + j] += y[j] * (g[j] - dot);
                }
            });
        }
        return out;
    }

    Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
        if (numel(shape) != x.size()) {
            throw DimensionError("reshape from " + shape_str(x.shape()) + " to " + shape_str(shape) +
                                 " changes element count");
        }
        Tensor<S> out = make_output(shape, x);
        std::copy(x.values().begin(), x.values().end(), out.mutable_values().begin());
        if (out.requires_grad()) {
            push_node([x = x, out]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                S* gx = x.ensure_grad().data();
                for (int64_t i = 0; i < x.size(); ++i) gx[i] += go[i];
            });
        }
        return out;
    }

    /// Concatenate NCHW tensors along the channel axis.
    Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts) {
        if (parts.empty()) throw ContractError("concat_channels needs at least one input");
        const int64_t batch = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
        int64_t total_ch = 0;
        for (const auto& p : parts) {
            if (p.rank() != 4 || p.dim(0) != batch || p.dim(2) != h || p.dim(3) != w) {
                throw DimensionError("concat_channels input " + shape_str(p.shape()) +
                                     " incompatible with " + shape_str(parts[0].shape()));
            }
            total_ch += p.dim(1);
        }
        ensure_open();
        bool any_grad = false;
        for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
        Tensor<S> out(Shape{batch, total_ch, h, w}, recording_ && any_grad);
        const int64_t plane = h * w;
        S* ov = out.mutable_values().data();
        for (int64_t n = 0; n < batch; ++n) {
            int64_t cbase = 0;
            for (const auto& p : parts) {
                const int64_t pch = p.dim(1);
                const S* pv = p.values().data() + n * pch * plane;
                std::copy(pv, pv + pch * plane, ov + (n * total_ch + cbase) * plane);
                cbase += pch;
            }
        }
        if (out.requires_grad()) {
            push_node([parts = parts, out, batch, total_ch, plane]() mutable {
                if (!out.has_grad()) return;
                const S* go = out.grad().data();
                for (int64_t n = 0; n < batch; ++n) {
                    int64_t cbase = 0;
                    for (auto& p : parts) {
                        const int64_t pch = p.dim(1);
                        if (p.requires_grad()) {
                            S* gp = p.ensure_grad().data() + n * pch * plane;
                            const S* src = go + (n * total_ch + cbase) * plane;
                            for (int64_t i = 0; i < pch * plane; ++i) gp[i] += src[i];
                        }
                        cbase += pch;
                    }
                }
            });
        }
        return out;
    }

    Tensor<S> sum(const Tensor<S>& x) {
        Tensor<S> out = make_output(Shape{1}, x);
        S acc = 0;
        for (S v : x.values()) acc += v;
        out.mutable_values()[0] = acc;
        if (out.requires_grad()) {
            push_node([x = x, out]() mutable {
                if (!out.has_grad()) return;
                const S g = out.grad()[0];
                S* gx = x.ensure_grad().data();
                for (int64_t i = 0; i < x.size(); ++i) gx[i] += g;
            });
        }
        return out;
    }

    Tensor<S> mean(const Tensor<S>& x) {
        Tensor<S> out = make_output(Shape{1}, x);
        S acc = 0;
        for (S v : x.values()) acc += v;
        out.mutable_values()[0] = acc / static_cast<S>(x.size());
        if (out.requires_grad()) {
            push_node([x = x, out]() mutable {
                if (!out.has_grad()) return;
                const S g = out.grad()[0] / static_cast<S>(x.size());
                S* gx = x.ensure_grad().data();
                for (int64_t i = 0; i < x.size(); ++i) gx[i] += g;
            });
        }
        return out;
    }

    // ---- custom-op hook --------------------------------------------------

    /// Append a node with a caller-supplied backward. The output must have
    /// been created via make_output (or carry requires_grad consistently).
    void record(std::function<void()> back) { push_node(std::move(back)); }

    /// Output factory for custom ops: requires_grad is propagated from the
    /// inputs only while the graph is recording.
    Tensor<S> make_output(Shape shape, const Tensor<S>& a) {
        ensure_open();
        return Tensor<S>(std::move(shape), recording_ && a.requires_grad());
    }
    Tensor<S> make_output(Shape shape, const Tensor<S>& a, const Tensor<S>& b) {
        ensure_open();
        return Tensor<S>(std::move(shape), recording_ && (a.requires_grad() || b.requires_grad()));
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar root; may be called once per graph.
    /// Gradients accumulate additively across fan-out.
    void backward(const Tensor<S>& root) {
        if (root.size() != 1) {
            throw ContractError("backward root must be scalar, got shape " + shape_str(root.shape()));
        }
        if (consumed_) throw ContractError("backward already ran on this graph");
        if (!root.requires_grad()) {
            throw ContractError("backward root does not depend on any gradient-tracked tensor");
        }
        consumed_ = true;
        Tensor<S> r = root;
        r.ensure_grad()[0] += S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    void ensure_open() const {
        if (consumed_) throw ContractError("graph already consumed by backward");
    }

    void push_node(std::function<void()> back) {
        ensure_open();
        nodes_.push_back(std::move(back));
    }

    static void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
        if (a.shape() != b.shape()) {
            throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
        }
    }

    static S stable_sigmoid(S x) {
        if (x >= S(0)) {
            return S(1) / (S(1) + std::exp(-x));
        }
        const S e = std::exp(x);
        return e / (S(1) + e);
    }

    static void matmul_into(const S* a, const S* b, S* out, int64_t m, int64_t k, int64_t n) {
        for (int64_t i = 0; i < m; ++i) {
            S* orow = out + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] = S(0);
            const S* arow = a + i * k;
            for (int64_t t = 0; t < k; ++t) {
                const S at = arow[t];
                const S* brow = b + t * n;
                for (int64_t j = 0; j < n; ++j) orow[j] += at * brow[j];
            }
        }
    }

    bool recording_ = true;
    bool consumed_ = false;
    std::vector<std::function<void()>> nodes_;
};

/// Central finite differences, (f(x + h e_i) - f(x - h e_i)) / 2h per element.
/// The independent oracle the backward implementation is checked against.
template <class S>
Tensor<S> finite_diff_grad(const std::function<S(const Tensor<S>&)>& f, const Tensor<S>& x, S h) {
    if (!(h > S(0))) throw ContractError("finite_diff_grad step h must be positive");
    std::vector<S> vals(x.values().begin(), x.values().end());
    std::vector<S> grad(vals.size());
    for (size_t i = 0; i < vals.size(); ++i) {
        const S orig = vals[i];
        vals[i] = orig + h;
        const S up = f(Tensor<S>(x.shape(), vals));
        vals[i] = orig - h;
        const S down = f(Tensor<S>(x.shape(), vals));
        vals[i] = orig;
        grad[i] = (up - down) / (S(2) * h);
    }
    return Tensor<S>(x.shape(), std::move(grad));
}

}  // namespace adagan
