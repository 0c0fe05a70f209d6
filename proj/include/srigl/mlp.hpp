// SPDX-License-Identifier: Apache-2.0
//
// Masked multilayer perceptron: linear layers, ReLU on hidden layers, softmax
// cross-entropy on the output. Batches are laid out features x batch.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "srigl/condensed.hpp"
#include "srigl/error.hpp"
#include "srigl/matrix.hpp"
#include "srigl/rng.hpp"
#include "srigl/topology.hpp"

namespace srigl {

enum class TrainMode { Dense, RigL, SRigL };

inline std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::Dense: return "dense";
        case TrainMode::RigL: return "rigl";
        case TrainMode::SRigL: return "srigl";
    }
    return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
    if (s == "dense") return TrainMode::Dense;
    if (s == "rigl") return TrainMode::RigL;
    if (s == "srigl") return TrainMode::SRigL;
    fail(Errc::ConfigError, "unknown mode '" + s + "' (expected dense|rigl|srigl)");
}

struct MlpLayer {
    LayerTopology<double> topo;
    std::vector<double> bias;  // always dense
    bool sparse = false;       // takes part in topology updates

    std::size_t in_dim() const { return topo.cols(); }
    std::size_t out_dim() const { return topo.rows(); }
};

struct MlpModel {
    std::vector<MlpLayer> layers;

    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
};

/// Fan-in per neuron for a layer of width `d` at sparsity `s`, at least 1.
inline std::size_t fan_in_for(std::size_t d, double s) {
    const auto k = static_cast<std::size_t>(std::llround((1.0 - s) * static_cast<double>(d)));
    return std::clamp<std::size_t>(k, 1, d);
}

/// Samples a mask: constant fan-in rows for SRigL, uniformly placed nnz for
/// RigL, full for dense layers or s = 0.
inline DenseMaskedMatrix<double> sample_layer_mask(std::size_t n, std::size_t d, double s, TrainMode mode, Rng& rng) {
    DenseMaskedMatrix<double> m(n, d);
    if (mode == TrainMode::Dense || s <= 0.0) {
        std::fill(m.mask.begin(), m.mask.end(), 1);
        return m;
    }
    if (mode == TrainMode::SRigL) {
        const std::size_t k = fan_in_for(d, s);
        std::vector<std::uint32_t> perm(d);
        for (std::size_t r = 0; r < n; ++r) {
            std::iota(perm.begin(), perm.end(), 0u);
            for (std::size_t t = 0; t < k; ++t) {
                std::swap(perm[t], perm[t + uniform_below(rng, d - t)]);
                m.mask[r * d + perm[t]] = 1;
            }
        }
        return m;
    }
    const std::size_t cells = n * d;
    const auto nnz = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround((1.0 - s) * static_cast<double>(cells))), 1, cells);
    std::vector<std::uint32_t> perm(cells);
    std::iota(perm.begin(), perm.end(), 0u);
    for (std::size_t t = 0; t < nnz; ++t) {
        std::swap(perm[t], perm[t + uniform_below(rng, cells - t)]);
        m.mask[perm[t]] = 1;
    }
    return m;
}

/// Active weights ~ N(0, 2 / k) with k the mean active fan-in of the layer;
/// inactive weights and biases zero.
inline void sparse_init(MlpModel& model, Rng& rng) {
    for (auto& layer : model.layers) {
        auto& m = layer.topo.matrix;
        const std::size_t nnz = m.nnz();
        const std::size_t rows_with_inputs = ablation_stats(layer.topo).n_active;
        const double k = rows_with_inputs ? static_cast<double>(nnz) / static_cast<double>(rows_with_inputs) : 1.0;
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / k));
        for (std::size_t i = 0; i < m.weights.size(); ++i) m.weights[i] = m.mask[i] ? normal(rng) : 0.0;
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    }
}

/// dims = {input, hidden..., classes}; one sparsity per layer.
inline MlpModel build_mlp(const std::vector<std::size_t>& dims, const std::vector<double>& sparsities, TrainMode mode,
                          Rng& rng) {
    if (dims.size() < 2) fail(Errc::DimensionMismatch, "an MLP needs at least input and output dims");
    if (sparsities.size() != dims.size() - 1) fail(Errc::DimensionMismatch, "one sparsity per layer expected");
    MlpModel model;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const double s = sparsities[l];
        if (!(s >= 0.0 && s < 1.0)) fail(Errc::DomainError, "layer sparsity must lie in [0, 1)");
        MlpLayer layer;
        auto mask = sample_layer_mask(dims[l + 1], dims[l], s, mode, rng);
        layer.sparse = mode != TrainMode::Dense && s > 0.0;
        layer.topo = (layer.sparse && mode == TrainMode::SRigL) ? LayerTopology<double>::constant_fan_in(std::move(mask))
                                                                : LayerTopology<double>::unstructured(std::move(mask));
        layer.bias.assign(dims[l + 1], 0.0);
        model.layers.push_back(std::move(layer));
    }
    sparse_init(model, rng);
    return model;
}

enum class ForwardPath { Condensed, DenseMasked };

struct ForwardCache {
    std::vector<Matrix<double>> inputs;  // input to each layer (post-ReLU of the previous)
    std::vector<Matrix<double>> pre;     // pre-activation of each layer

    const Matrix<double>& logits() const { return pre.back(); }
};

/// Constant fan-in layers run the condensed kernel on the Condensed path;
/// everything else (and the DenseMasked path) multiplies the masked weights.
inline ForwardCache forward(const MlpModel& model, const Matrix<double>& x, ForwardPath path = ForwardPath::Condensed) {
    require_dims(!model.layers.empty(), "forward: empty model");
    require_dims(x.rows == model.input_dim(), "forward: input has " + std::to_string(x.rows) +
                                                  " features, model expects " + std::to_string(model.input_dim()));
    ForwardCache cache;
    Matrix<double> a = x;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        Matrix<double> z = (path == ForwardPath::Condensed && layer.topo.mode == TopologyMode::ConstantFanIn)
                               ? condensed_matmul(layer.topo.condensed(), a)
                               : dense_masked_matmul(layer.topo.matrix, a);
        for (std::size_t r = 0; r < z.rows; ++r)
            for (std::size_t b = 0; b < z.cols; ++b) z(r, b) += layer.bias[r];
        cache.inputs.push_back(std::move(a));
        if (l + 1 < model.layers.size()) {
            a = z;
            for (auto& v : a.data) v = std::max(v, 0.0);
        }
        cache.pre.push_back(std::move(z));
    }
    return cache;
}

struct Gradients {
    std::vector<Matrix<double>> weights;        // zero outside the mask
    std::vector<std::vector<double>> bias;
    std::vector<Matrix<double>> dense_weights;  // filled only on request
    double loss = 0.0;                          // mean over the batch
    std::size_t correct = 0;
};

/// Softmax cross-entropy gradients. Masked weight gradients are computed only
/// at active positions; the full dense gradient is produced when
/// `want_dense` is set (mask-update steps).
inline Gradients backward(const MlpModel& model, const ForwardCache& cache, std::span<const int> labels,
                          bool want_dense = false, double label_smoothing = 0.0) {
    const Matrix<double>& logits = cache.logits();
    const std::size_t classes = logits.rows;
    const std::size_t batch = logits.cols;
    require_dims(labels.size() == batch, "backward: one label per batch column expected");

    Gradients g;
    const std::size_t L = model.layers.size();
    g.weights.resize(L);
    g.bias.resize(L);
    if (want_dense) g.dense_weights.resize(L);

    Matrix<double> delta(classes, batch);
    const double off = label_smoothing / static_cast<double>(classes);
    const double on = 1.0 - label_smoothing + off;
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto y = static_cast<std::size_t>(labels[b]);
        if (y >= classes) fail(Errc::IndexOutOfRange, "label " + std::to_string(labels[b]) + " out of range");
        double mx = logits(0, b);
        std::size_t arg = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (logits(c, b) > mx) {
                mx = logits(c, b);
                arg = c;
            }
        if (arg == y) ++g.correct;
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) sum += std::exp(logits(c, b) - mx);
        const double log_sum = std::log(sum);
        for (std::size_t c = 0; c < classes; ++c) {
            const double logp = logits(c, b) - mx - log_sum;
            const double target = c == y ? on : off;
            loss -= target * logp;
            delta(c, b) = (std::exp(logp) - target) / static_cast<double>(batch);
        }
    }
    g.loss = loss / static_cast<double>(batch);

    for (std::size_t l = L; l-- > 0;) {
        const auto& layer = model.layers[l];
        const auto& m = layer.topo.matrix;
        const Matrix<double>& a = cache.inputs[l];
        const std::size_t n = m.rows, d = m.cols;

        g.bias[l].assign(n, 0.0);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t b = 0; b < batch; ++b) g.bias[l][r] += delta(r, b);

        auto dot = [&](std::size_t r, std::size_t c) {
            double s = 0.0;
            const double* dr = delta.data.data() + r * batch;
            const double* ac = a.data.data() + c * batch;
            for (std::size_t b = 0; b < batch; ++b) s += dr[b] * ac[b];
            return s;
        };
        g.weights[l] = Matrix<double>(n, d);
        if (want_dense) {
            g.dense_weights[l] = Matrix<double>(n, d);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) {
                    const double v = dot(r, c);
                    g.dense_weights[l](r, c) = v;
                    if (m.active(r, c)) g.weights[l](r, c) = v;
                }
        } else {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c)
                    if (m.active(r, c)) g.weights[l](r, c) = dot(r, c);
        }

        if (l == 0) break;
        Matrix<double> prev(d, batch);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) {
                if (!m.active(r, c)) continue;
                const double w = m.weight(r, c);
                double* dst = prev.data.data() + c * batch;
                const double* src = delta.data.data() + r * batch;
                for (std::size_t b = 0; b < batch; ++b) dst[b] += w * src[b];
            }
        const Matrix<double>& z_prev = cache.pre[l - 1];
        for (std::size_t i = 0; i < prev.data.size(); ++i)
            if (z_prev.data[i] <= 0.0) prev.data[i] = 0.0;
        delta = std::move(prev);
    }
    return g;
}

/// Mean softmax cross-entropy of a forward pass (no gradients).
inline double cross_entropy(const Matrix<double>& logits, std::span<const int> labels, double label_smoothing = 0.0) {
    const std::size_t classes = logits.rows;
    const double off = label_smoothing / static_cast<double>(classes);
    const double on = 1.0 - label_smoothing + off;
    double loss = 0.0;
    for (std::size_t b = 0; b < logits.cols; ++b) {
        double mx = logits(0, b);
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, logits(c, b));
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) sum += std::exp(logits(c, b) - mx);
        const double log_sum = std::log(sum);
        for (std::size_t c = 0; c < classes; ++c)
            loss -= (c == static_cast<std::size_t>(labels[b]) ? on : off) * (logits(c, b) - mx - log_sum);
    }
    return loss / static_cast<double>(logits.cols);
}

/// Step-wise learning rate: base, linear warm-up, then multiplied by `gamma`
/// at every milestone passed.
struct LrSchedule {
    double base = 0.1;
    std::vector<std::size_t> milestones;
    double gamma = 0.1;
    std::size_t warmup_steps = 0;

    double at(std::size_t t) const {
        double lr = base;
        if (t < warmup_steps) lr *= static_cast<double>(t + 1) / static_cast<double>(warmup_steps);
        for (std::size_t m : milestones)
            if (t >= m) lr *= gamma;
        return lr;
    }
};

struct OptimizerConfig {
    LrSchedule lr;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

struct SgdState {
    std::vector<std::vector<double>> weight_velocity;
    std::vector<std::vector<double>> bias_velocity;

    explicit SgdState(const MlpModel& model) {
        for (const auto& l : model.layers) {
            weight_velocity.emplace_back(l.topo.matrix.weights.size(), 0.0);
            bias_velocity.emplace_back(l.bias.size(), 0.0);
        }
    }

    /// Clears momentum wherever the mask changed.
    void reset_changed(std::size_t layer, const std::vector<std::uint8_t>& old_mask,
                       const std::vector<std::uint8_t>& new_mask) {
        auto& v = weight_velocity[layer];
        for (std::size_t i = 0; i < v.size(); ++i)
            if (old_mask[i] != new_mask[i]) v[i] = 0.0;
    }
};

/// Momentum SGD with L2 decay on active weights and biases:
///   v = mu v + (g + lambda w),  w -= lr v.
/// Inactive weights are not touched and stay exactly zero.
inline void sgd_step(MlpModel& model, const Gradients& grads, const OptimizerConfig& cfg, std::size_t t,
                     SgdState& state) {
    const double lr = cfg.lr.at(t);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        auto& m = layer.topo.matrix;
        auto& vw = state.weight_velocity[l];
        for (std::size_t i = 0; i < m.weights.size(); ++i) {
            if (!m.mask[i]) continue;
            vw[i] = cfg.momentum * vw[i] + grads.weights[l].data[i] + cfg.weight_decay * m.weights[i];
            m.weights[i] -= lr * vw[i];
        }
        auto& vb = state.bias_velocity[l];
        for (std::size_t r = 0; r < layer.bias.size(); ++r) {
            vb[r] = cfg.momentum * vb[r] + grads.bias[l][r] + cfg.weight_decay * layer.bias[r];
            layer.bias[r] -= lr * vb[r];
        }
    }
}

}  // namespace srigl
