// SPDX-License-Identifier: Apache-2.0
//
// FLOPs accounting for linear and convolutional layers.
//
// A layer costs 2 FLOPs per multiply-accumulate on its non-zero weights and 1
// FLOP per activation output; adds, pooling, normalisation and softmax are not
// counted. Training per example and step is forward + backward (a multiple of
// the forward cost) plus a dense weight-gradient pass amortised over the
// steps between mask updates.
//
// Architecture files are a JSON array of layer records:
//   {"name": "conv1", "type": "conv", "c_in": 3, "c_out": 64, "kh": 7, "kw": 7,
//    "out_h": 112, "out_w": 112, "activation": true, "sparsity": 0.0}
//   {"name": "fc", "type": "linear", "n_in": 2048, "n_out": 1000, "activation": false}
// "activation" defaults to true, "sparsity" to 0 and "sparsifiable" to true.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "srigl/error.hpp"
#include "srigl/topology.hpp"

namespace srigl {

struct LinearShape {
    std::uint64_t n_in = 0;
    std::uint64_t n_out = 0;
};

struct ConvShape {
    std::uint64_t c_in = 0;
    std::uint64_t c_out = 0;
    std::uint64_t kh = 0;
    std::uint64_t kw = 0;
    std::uint64_t out_h = 0;
    std::uint64_t out_w = 0;
};

struct LayerRecord {
    std::string name;
    std::variant<LinearShape, ConvShape> shape;
    double sparsity = 0.0;
    bool activation = true;
    bool sparsifiable = true;

    bool is_conv() const { return std::holds_alternative<ConvShape>(shape); }

    std::uint64_t params() const {
        if (const auto* c = std::get_if<ConvShape>(&shape)) return c->c_in * c->c_out * c->kh * c->kw;
        const auto& l = std::get<LinearShape>(shape);
        return l.n_in * l.n_out;
    }
    /// Output positions each weight is applied at.
    std::uint64_t spatial() const {
        if (const auto* c = std::get_if<ConvShape>(&shape)) return c->out_h * c->out_w;
        return 1;
    }
    std::uint64_t outputs() const {
        if (const auto* c = std::get_if<ConvShape>(&shape)) return c->c_out * c->out_h * c->out_w;
        return std::get<LinearShape>(shape).n_out;
    }
    LayerShape topology_shape() const {
        if (const auto* c = std::get_if<ConvShape>(&shape)) return {c->c_out, c->c_in, c->kh, c->kw};
        const auto& l = std::get<LinearShape>(shape);
        return {l.n_out, l.n_in, 1, 1};
    }
};

using ArchitectureSpec = std::vector<LayerRecord>;

inline std::uint64_t layer_nnz(const LayerRecord& layer, double sparsity) {
    return static_cast<std::uint64_t>(std::llround((1.0 - sparsity) * static_cast<double>(layer.params())));
}

inline std::uint64_t layer_inference_flops(const LayerRecord& layer, double sparsity) {
    return 2 * layer_nnz(layer, sparsity) * layer.spatial() + (layer.activation ? layer.outputs() : 0);
}

inline std::uint64_t layer_inference_flops(const LayerRecord& layer) {
    return layer_inference_flops(layer, layer.sparsity);
}

inline std::uint64_t model_inference_flops(const ArchitectureSpec& spec) {
    std::uint64_t total = 0;
    for (const auto& l : spec) total += layer_inference_flops(l);
    return total;
}

/// One dense weight-gradient pass: 2 FLOPs per weight per output position.
inline std::uint64_t dense_weight_grad_flops(const ArchitectureSpec& spec) {
    std::uint64_t total = 0;
    for (const auto& l : spec) total += 2 * l.params() * l.spatial();
    return total;
}

struct TrainingCostModel {
    std::uint64_t steps = 1;
    std::uint64_t batch = 1;
    std::uint64_t delta_t = 100;
    double backward_multiplier = 2.0;
    double dense_grad_passes = 1.0;  // dense gradient batches gathered per mask update

    void validate() const {
        if (steps < 1 || batch < 1) fail(Errc::DomainError, "training cost model needs steps, batch >= 1");
        if (delta_t < 1) fail(Errc::DomainError, "delta_t must be >= 1");
    }
};

inline double training_flops_per_example_step(const ArchitectureSpec& spec, const TrainingCostModel& cost) {
    cost.validate();
    const double forward = static_cast<double>(model_inference_flops(spec));
    const double surcharge = cost.dense_grad_passes * static_cast<double>(dense_weight_grad_flops(spec)) /
                             static_cast<double>(cost.delta_t);
    return (1.0 + cost.backward_multiplier) * forward + surcharge;
}

inline double training_flops(const ArchitectureSpec& spec, const TrainingCostModel& cost) {
    return training_flops_per_example_step(spec, cost) * static_cast<double>(cost.batch) *
           static_cast<double>(cost.steps);
}

enum class SparsityDistribution { Uniform, Erk };

inline SparsityDistribution parse_distribution(const std::string& s) {
    if (s == "uniform") return SparsityDistribution::Uniform;
    if (s == "erk") return SparsityDistribution::Erk;
    fail(Errc::ConfigError, "unknown sparsity distribution '" + s + "' (expected uniform|erk)");
}

/// Assigns per-layer sparsities for a global target; non-sparsifiable layers
/// stay dense and are left out of the budget.
inline ArchitectureSpec with_sparsity(ArchitectureSpec spec, double global_sparsity, SparsityDistribution dist) {
    std::vector<std::size_t> idx;
    std::vector<LayerShape> shapes;
    for (std::size_t i = 0; i < spec.size(); ++i) {
        spec[i].sparsity = 0.0;
        if (!spec[i].sparsifiable) continue;
        idx.push_back(i);
        shapes.push_back(spec[i].topology_shape());
    }
    if (dist == SparsityDistribution::Uniform) {
        if (!(global_sparsity >= 0.0 && global_sparsity < 1.0))
            fail(Errc::DomainError, "global sparsity must lie in [0, 1)");
        for (std::size_t i : idx) spec[i].sparsity = global_sparsity;
    } else {
        const auto s = erk_sparsities(shapes, global_sparsity);
        for (std::size_t j = 0; j < idx.size(); ++j) spec[idx[j]].sparsity = s[j];
    }
    return spec;
}

namespace detail {

inline std::uint64_t positive_field(const nlohmann::json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key)) fail(Errc::ConfigError, where + "." + key + ": missing required field");
    const auto& v = j.at(key);
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0)
        fail(Errc::ConfigError, where + "." + key + ": expected a positive integer");
    return v.get<std::uint64_t>();
}

}  // namespace detail

inline ArchitectureSpec parse_architecture(const nlohmann::json& doc) {
    if (!doc.is_array()) fail(Errc::ConfigError, "architecture: expected a JSON array of layer records");
    ArchitectureSpec spec;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& j = doc[i];
        const std::string where = "architecture[" + std::to_string(i) + "]";
        if (!j.is_object()) fail(Errc::ConfigError, where + ": expected an object");
        LayerRecord rec;
        rec.name = j.value("name", "layer" + std::to_string(i));
        const std::string type = j.value("type", "");
        if (type == "linear") {
            rec.shape = LinearShape{detail::positive_field(j, "n_in", where), detail::positive_field(j, "n_out", where)};
        } else if (type == "conv") {
            rec.shape = ConvShape{detail::positive_field(j, "c_in", where),  detail::positive_field(j, "c_out", where),
                                  detail::positive_field(j, "kh", where),    detail::positive_field(j, "kw", where),
                                  detail::positive_field(j, "out_h", where), detail::positive_field(j, "out_w", where)};
        } else {
            fail(Errc::ConfigError, where + ".type: expected \"linear\" or \"conv\"");
        }
        rec.activation = j.value("activation", true);
        rec.sparsifiable = j.value("sparsifiable", true);
        rec.sparsity = j.value("sparsity", 0.0);
        if (!(rec.sparsity >= 0.0 && rec.sparsity < 1.0)) fail(Errc::ConfigError, where + ".sparsity: must lie in [0, 1)");
        spec.push_back(std::move(rec));
    }
    return spec;
}

inline ArchitectureSpec load_architecture(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::IoError, "cannot open architecture file " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::ConfigError, path + ": " + e.what());
    }
    return parse_architecture(doc);
}

/// CSV: layer,type,params,nnz,flops (inference FLOPs at each layer's sparsity).
inline void write_flops_csv(std::ostream& os, const ArchitectureSpec& spec) {
    os << "layer,type,params,nnz,flops\n";
    for (const auto& l : spec)
        os << l.name << ',' << (l.is_conv() ? "conv" : "linear") << ',' << l.params() << ','
           << layer_nnz(l, l.sparsity) << ',' << layer_inference_flops(l) << '\n';
}

}  // namespace srigl
