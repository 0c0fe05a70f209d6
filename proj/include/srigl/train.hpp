// SPDX-License-Identifier: Apache-2.0
//
// Training loop for dense, RigL and SRigL masked MLPs.
//
// Every delta_t steps before the freeze point the dense weight gradients
// (averaged over the last `grad_accumulation` mini-batches) and the current
// weights feed one topology update per sparse layer, exchanging
// K = floor(drop_fraction(t) * nnz) connections. Momentum is cleared at every
// position whose mask bit changed.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srigl/condensed.hpp"
#include "srigl/dataset.hpp"
#include "srigl/error.hpp"
#include "srigl/flops.hpp"
#include "srigl/mlp.hpp"
#include "srigl/rng.hpp"
#include "srigl/topology.hpp"

namespace srigl {

struct TrainConfig {
    std::vector<std::size_t> hidden{128, 128};
    std::size_t batch_size = 64;
    OptimizerConfig optimizer;
    double label_smoothing = 0.0;
    std::size_t total_steps = 2000;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::SRigL;
    UpdateSchedule schedule;  // total_steps is taken from the field above
    AblationPolicy ablation;
    double sparsity = 0.9;
    SparsityDistribution distribution = SparsityDistribution::Uniform;
    bool dense_first_layer = false;
    std::size_t grad_accumulation = 1;
    std::size_t eval_interval = 100;
    ForwardPath path = ForwardPath::Condensed;
    bool check_invariants = false;  // verify mask invariants after every step

    UpdateSchedule effective_schedule() const {
        UpdateSchedule s = schedule;
        s.total_steps = total_steps;
        return s;
    }
};

struct EvalPoint {
    std::size_t step = 0;
    double train_loss = 0.0;      // mean over steps since the previous point
    double train_accuracy = 0.0;  // same window
    double test_loss = 0.0;
    double test_accuracy = 0.0;
    std::size_t nnz = 0;
    std::size_t n_active = 0;
};

struct RunReport {
    TrainConfig config;
    std::vector<std::size_t> dims;
    std::vector<double> layer_sparsity;
    std::vector<EvalPoint> curve;
    std::vector<nlohmann::json> update_records;
    std::vector<AblationStats> layer_stats;
    std::size_t mask_changes_after_freeze = 0;
    double final_test_accuracy = 0.0;
    double inference_flops = 0.0;  // per example, final sparsities
    double training_flops = 0.0;   // whole run
    MlpModel model;

    /// Condensed form of each constant fan-in layer of the final model.
    std::vector<std::optional<BasicCondensedMatrix<double>>> condensed_layers() const {
        std::vector<std::optional<BasicCondensedMatrix<double>>> out;
        for (const auto& l : model.layers) {
            if (l.topo.mode == TopologyMode::ConstantFanIn)
                out.emplace_back(l.topo.condensed());
            else
                out.emplace_back(std::nullopt);
        }
        return out;
    }
};

/// Per-layer sparsities for the configured distribution; the first layer is
/// dense when requested.
inline std::vector<double> layer_sparsities(const TrainConfig& cfg, const std::vector<std::size_t>& dims) {
    const std::size_t L = dims.size() - 1;
    std::vector<double> s(L, 0.0);
    if (cfg.mode == TrainMode::Dense) return s;
    const std::size_t first = cfg.dense_first_layer ? 1 : 0;
    if (first >= L) return s;
    if (cfg.distribution == SparsityDistribution::Uniform) {
        for (std::size_t l = first; l < L; ++l) s[l] = cfg.sparsity;
        return s;
    }
    std::vector<LayerShape> shapes;
    for (std::size_t l = first; l < L; ++l) shapes.push_back({dims[l + 1], dims[l], 1, 1});
    const auto erk = erk_sparsities(shapes, cfg.sparsity);
    for (std::size_t l = first; l < L; ++l) s[l] = erk[l - first];
    return s;
}

inline ArchitectureSpec architecture_of(const MlpModel& model) {
    ArchitectureSpec spec;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        LayerRecord rec;
        rec.name = "fc" + std::to_string(l);
        rec.shape = LinearShape{layer.in_dim(), layer.out_dim()};
        const double params = static_cast<double>(layer.in_dim() * layer.out_dim());
        rec.sparsity = 1.0 - static_cast<double>(layer.topo.nnz()) / params;
        rec.activation = l + 1 < model.layers.size();
        spec.push_back(rec);
    }
    return spec;
}

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

inline Evaluation evaluate(const MlpModel& model, const Dataset& data, ForwardPath path = ForwardPath::Condensed,
                           std::size_t chunk = 512) {
    Evaluation ev;
    if (data.size() == 0) return ev;
    std::size_t correct = 0;
    double loss = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(data.size(), start + chunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const auto cache = forward(model, data.batch(idx), path);
        const auto labels = data.batch_labels(idx);
        const auto& logits = cache.logits();
        loss += cross_entropy(logits, labels) * static_cast<double>(idx.size());
        for (std::size_t b = 0; b < logits.cols; ++b) {
            std::size_t arg = 0;
            for (std::size_t c = 1; c < logits.rows; ++c)
                if (logits(c, b) > logits(arg, b)) arg = c;
            if (static_cast<int>(arg) == labels[b]) ++correct;
        }
    }
    ev.loss = loss / static_cast<double>(data.size());
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return ev;
}

namespace detail {

inline void check_model_invariants(const MlpModel& model, std::size_t step) {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        try {
            model.layers[l].topo.check_invariants();
        } catch (const Error& e) {
            fail(e.code(), "step " + std::to_string(step) + " layer " + std::to_string(l) + ": " + e.what());
        }
    }
}

/// True when the dense gradient of step t feeds an upcoming mask update.
inline bool gathers_dense_grad(const UpdateSchedule& s, std::size_t t, std::size_t accumulation) {
    const std::size_t next = (t + s.delta_t - 1) / s.delta_t * s.delta_t;
    return s.is_update_step(next) && next - t < std::max<std::size_t>(accumulation, 1);
}

}  // namespace detail

inline RunReport train(const TrainConfig& cfg, const DataSplit& data) {
    if (cfg.batch_size < 1 || cfg.total_steps < 1) fail(Errc::ConfigError, "batch_size and total_steps must be >= 1");
    if (data.train.size() == 0) fail(Errc::ConfigError, "empty training set");
    const UpdateSchedule sched = cfg.effective_schedule();
    if (cfg.mode != TrainMode::Dense) sched.validate();

    RunReport report;
    report.config = cfg;
    report.dims.push_back(data.train.dim());
    for (std::size_t h : cfg.hidden) report.dims.push_back(h);
    report.dims.push_back(data.train.classes);
    report.layer_sparsity = layer_sparsities(cfg, report.dims);

    Rng init_rng = make_rng(cfg.seed, 1);
    Rng data_rng = make_rng(cfg.seed, 2);
    MlpModel model = build_mlp(report.dims, report.layer_sparsity, cfg.mode, init_rng);
    SgdState opt(model);

    const std::size_t L = model.layers.size();
    std::vector<Matrix<double>> dense_acc(L);
    std::size_t acc_count = 0;

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    std::vector<std::size_t> idx(cfg.batch_size);

    double window_loss = 0.0;
    std::size_t window_correct = 0, window_seen = 0, window_steps = 0;

    auto record_eval = [&](std::size_t step) {
        EvalPoint p;
        p.step = step;
        p.train_loss = window_steps ? window_loss / static_cast<double>(window_steps) : 0.0;
        p.train_accuracy = window_seen ? static_cast<double>(window_correct) / static_cast<double>(window_seen) : 0.0;
        const auto ev = evaluate(model, data.test, cfg.path);
        p.test_loss = ev.loss;
        p.test_accuracy = ev.accuracy;
        for (const auto& l : model.layers) {
            p.nnz += l.topo.nnz();
            p.n_active += ablation_stats(l.topo).n_active;
        }
        report.curve.push_back(p);
        window_loss = 0.0;
        window_correct = window_seen = window_steps = 0;
    };

    const bool has_sparse = std::any_of(model.layers.begin(), model.layers.end(), [](const auto& l) { return l.sparse; });
    std::vector<std::vector<std::uint8_t>> frozen_masks;  // captured once the schedule stops

    for (std::size_t t = 0; t < cfg.total_steps; ++t) {
        for (auto& i : idx) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), data_rng);
                cursor = 0;
            }
            i = order[cursor++];
        }
        const auto x = data.train.batch(idx);
        const auto y = data.train.batch_labels(idx);

        const bool want_dense = has_sparse && detail::gathers_dense_grad(sched, t, cfg.grad_accumulation);
        const auto cache = forward(model, x, cfg.path);
        const auto grads = backward(model, cache, y, want_dense, cfg.label_smoothing);
        if (!std::isfinite(grads.loss)) {
            std::ostringstream msg;
            msg << "non-finite loss at step " << t << " (lr " << cfg.optimizer.lr.at(t) << ", last train loss "
                << (window_steps ? window_loss / static_cast<double>(window_steps) : 0.0) << ")";
            fail(Errc::DivergenceDetected, msg.str());
        }
        window_loss += grads.loss;
        window_correct += grads.correct;
        window_seen += y.size();
        ++window_steps;

        if (want_dense) {
            for (std::size_t l = 0; l < L; ++l) {
                if (acc_count == 0) dense_acc[l] = Matrix<double>(grads.dense_weights[l].rows, grads.dense_weights[l].cols);
                for (std::size_t i = 0; i < dense_acc[l].data.size(); ++i)
                    dense_acc[l].data[i] += grads.dense_weights[l].data[i];
            }
            ++acc_count;
        }

        sgd_step(model, grads, cfg.optimizer, t, opt);

        if (has_sparse && sched.is_update_step(t)) {
            const double fraction = drop_fraction(sched, t);
            for (std::size_t l = 0; l < L; ++l) {
                auto& layer = model.layers[l];
                if (!layer.sparse) continue;
                Matrix<double> g = dense_acc[l];
                for (auto& v : g.data) v /= static_cast<double>(acc_count);
                const auto sal = make_snapshot(layer.topo, g, update_count(fraction, layer.topo.nnz()));
                const auto old_mask = layer.topo.matrix.mask;
                layer.topo = cfg.mode == TrainMode::SRigL ? srigl_update(std::move(layer.topo), sal, cfg.ablation, t)
                                                          : rigl_update(std::move(layer.topo), sal);
                opt.reset_changed(l, old_mask, layer.topo.matrix.mask);
                report.update_records.push_back(update_record(t, l, layer.topo));
            }
            acc_count = 0;
        }

        if (frozen_masks.empty() && static_cast<double>(t) >= sched.end_step())
            for (const auto& l : model.layers) frozen_masks.push_back(l.topo.matrix.mask);
        if (cfg.check_invariants) detail::check_model_invariants(model, t);
        if ((t + 1) % std::max<std::size_t>(cfg.eval_interval, 1) == 0 || t + 1 == cfg.total_steps) record_eval(t + 1);
    }

    for (const auto& l : model.layers) report.layer_stats.push_back(ablation_stats(l.topo));
    for (std::size_t l = 0; l < frozen_masks.size(); ++l)
        for (std::size_t i = 0; i < frozen_masks[l].size(); ++i)
            report.mask_changes_after_freeze += frozen_masks[l][i] != model.layers[l].topo.matrix.mask[i];
    report.final_test_accuracy = report.curve.empty() ? 0.0 : report.curve.back().test_accuracy;

    const ArchitectureSpec arch = architecture_of(model);
    TrainingCostModel cost;
    cost.steps = cfg.total_steps;
    cost.batch = cfg.batch_size;
    cost.delta_t = cfg.mode == TrainMode::Dense ? 1 : sched.delta_t;
    cost.dense_grad_passes = cfg.mode == TrainMode::Dense ? 0.0 : static_cast<double>(cfg.grad_accumulation);
    report.inference_flops = static_cast<double>(model_inference_flops(arch));
    report.training_flops = training_flops(arch, cost);
    report.model = std::move(model);
    return report;
}

// ---------------------------------------------------------------------------
// JSON config
// ---------------------------------------------------------------------------
//
// {
//   "model":    {"hidden": [128, 128]},
//   "data":     {"kind": "blobs", "classes": 3, "dim": 16, "clusters_per_class": 4,
//                "center_scale": 1.0, "cluster_std": 0.6, "train_size": 6000, "test_size": 2000}
//            or {"kind": "idx", "train_images": "...", "train_labels": "...",
//                "test_images": "...", "test_labels": "..."},
//   "train":    {"batch_size": 64, "total_steps": 2000, "eval_interval": 100, "label_smoothing": 0.0,
//                "seed": 0, "seeds": [0, 1, 2]},
//   "optimizer":{"lr": 0.1, "momentum": 0.9, "weight_decay": 5e-4,
//                "milestones": [1000], "gamma": 0.2, "warmup_steps": 0},
//   "sparsity": {"mode": "srigl", "modes": ["dense", "rigl", "srigl"], "level": 0.9,
//                "distribution": "uniform", "dense_first_layer": false},
//   "topology": {"delta_t": 100, "alpha": 0.3, "end_fraction": 0.75,
//                "gamma_sal": 0.3, "salience": "kept", "grad_accumulation": 1}
// }
//
// The fields model.hidden, train.batch_size, train.total_steps, optimizer.lr
// and sparsity.level are required; everything else, including the data and
// topology sections, falls back to the defaults shown. "seeds"/"modes" request a sweep.

struct DataConfig {
    std::string kind = "blobs";
    BlobSpec blobs;
    std::string train_images, train_labels, test_images, test_labels;
};

struct ExperimentConfig {
    TrainConfig train;
    DataConfig data;
    std::vector<std::uint64_t> seeds;
    std::vector<TrainMode> modes;
};

namespace detail {

class ConfigReader {
public:
    explicit ConfigReader(const nlohmann::json& root) : root_(root) {}

    const nlohmann::json& section(const std::string& name) const {
        if (!root_.contains(name)) fail(Errc::ConfigError, name + ": missing required section");
        const auto& s = root_.at(name);
        if (!s.is_object()) fail(Errc::ConfigError, name + ": expected an object");
        return s;
    }

    template <typename V>
    V get(const std::string& sec, const std::string& key, std::optional<V> fallback = std::nullopt) const {
        if (fallback && !root_.contains(sec)) return *fallback;
        const auto& s = section(sec);
        const std::string path = sec + "." + key;
        if (!s.contains(key)) {
            if (fallback) return *fallback;
            fail(Errc::ConfigError, path + ": missing required field");
        }
        try {
            return s.at(key).get<V>();
        } catch (const nlohmann::json::exception&) {
            fail(Errc::ConfigError, path + ": wrong type");
        }
    }

    bool has(const std::string& sec, const std::string& key) const {
        return root_.contains(sec) && root_.at(sec).is_object() && root_.at(sec).contains(key);
    }

private:
    const nlohmann::json& root_;
};

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& root) {
    if (!root.is_object()) fail(Errc::ConfigError, "config: expected a JSON object");
    detail::ConfigReader r(root);
    ExperimentConfig ec;
    TrainConfig& c = ec.train;

    c.hidden = r.get<std::vector<std::size_t>>("model", "hidden");

    ec.data.kind = r.get<std::string>("data", "kind", std::string("blobs"));
    if (ec.data.kind == "blobs") {
        auto& b = ec.data.blobs;
        b.classes = r.get<std::size_t>("data", "classes", b.classes);
        b.dim = r.get<std::size_t>("data", "dim", b.dim);
        b.clusters_per_class = r.get<std::size_t>("data", "clusters_per_class", b.clusters_per_class);
        b.center_scale = r.get<double>("data", "center_scale", b.center_scale);
        b.cluster_std = r.get<double>("data", "cluster_std", b.cluster_std);
        b.train_size = r.get<std::size_t>("data", "train_size", b.train_size);
        b.test_size = r.get<std::size_t>("data", "test_size", b.test_size);
    } else if (ec.data.kind == "idx") {
        ec.data.train_images = r.get<std::string>("data", "train_images");
        ec.data.train_labels = r.get<std::string>("data", "train_labels");
        ec.data.test_images = r.get<std::string>("data", "test_images");
        ec.data.test_labels = r.get<std::string>("data", "test_labels");
    } else {
        fail(Errc::ConfigError, "data.kind: expected \"blobs\" or \"idx\"");
    }

    c.batch_size = r.get<std::size_t>("train", "batch_size");
    c.total_steps = r.get<std::size_t>("train", "total_steps");
    c.eval_interval = r.get<std::size_t>("train", "eval_interval", c.eval_interval);
    c.label_smoothing = r.get<double>("train", "label_smoothing", c.label_smoothing);
    c.seed = r.get<std::uint64_t>("train", "seed", c.seed);
    if (r.has("train", "seeds")) ec.seeds = r.get<std::vector<std::uint64_t>>("train", "seeds");

    auto& o = c.optimizer;
    o.lr.base = r.get<double>("optimizer", "lr");
    o.momentum = r.get<double>("optimizer", "momentum", o.momentum);
    o.weight_decay = r.get<double>("optimizer", "weight_decay", o.weight_decay);
    o.lr.milestones = r.get<std::vector<std::size_t>>("optimizer", "milestones", o.lr.milestones);
    o.lr.gamma = r.get<double>("optimizer", "gamma", o.lr.gamma);
    o.lr.warmup_steps = r.get<std::size_t>("optimizer", "warmup_steps", o.lr.warmup_steps);

    c.mode = parse_train_mode(r.get<std::string>("sparsity", "mode", std::string("srigl")));
    if (r.has("sparsity", "modes"))
        for (const auto& m : r.get<std::vector<std::string>>("sparsity", "modes")) ec.modes.push_back(parse_train_mode(m));
    c.sparsity = r.get<double>("sparsity", "level");
    if (!(c.sparsity >= 0.0 && c.sparsity < 1.0)) fail(Errc::ConfigError, "sparsity.level: must lie in [0, 1)");
    c.distribution = parse_distribution(r.get<std::string>("sparsity", "distribution", std::string("uniform")));
    c.dense_first_layer = r.get<bool>("sparsity", "dense_first_layer", c.dense_first_layer);

    auto& s = c.schedule;
    s.delta_t = r.get<std::size_t>("topology", "delta_t", s.delta_t);
    s.alpha = r.get<double>("topology", "alpha", s.alpha);
    s.end_fraction = r.get<double>("topology", "end_fraction", s.end_fraction);
    c.ablation.gamma_sal = r.get<double>("topology", "gamma_sal", c.ablation.gamma_sal);
    const auto salience = r.get<std::string>("topology", "salience", std::string("kept"));
    if (salience == "kept")
        c.ablation.rule = SalienceRule::Kept;
    else if (salience == "top_k")
        c.ablation.rule = SalienceRule::TopK;
    else
        fail(Errc::ConfigError, "topology.salience: expected \"kept\" or \"top_k\"");
    c.grad_accumulation = r.get<std::size_t>("topology", "grad_accumulation", c.grad_accumulation);
    try {
        c.effective_schedule().validate();
    } catch (const Error& e) {
        fail(Errc::ConfigError, std::string("topology: ") + e.what());
    }
    if (c.ablation.gamma_sal < 0.0 || c.ablation.gamma_sal > 1.0)
        fail(Errc::ConfigError, "topology.gamma_sal: must lie in [0, 1]");

    if (ec.seeds.empty()) ec.seeds.push_back(c.seed);
    if (ec.modes.empty()) ec.modes.push_back(c.mode);
    return ec;
}

inline DataSplit load_data(const DataConfig& dc, std::uint64_t seed) {
    if (dc.kind == "idx")
        return {load_idx(dc.train_images, dc.train_labels), load_idx(dc.test_images, dc.test_labels)};
    return make_blobs(dc.blobs, seed);
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {
        {"hidden", c.hidden},
        {"batch_size", c.batch_size},
        {"total_steps", c.total_steps},
        {"seed", c.seed},
        {"mode", to_string(c.mode)},
        {"sparsity", c.sparsity},
        {"distribution", c.distribution == SparsityDistribution::Erk ? "erk" : "uniform"},
        {"dense_first_layer", c.dense_first_layer},
        {"lr", c.optimizer.lr.base},
        {"milestones", c.optimizer.lr.milestones},
        {"gamma", c.optimizer.lr.gamma},
        {"warmup_steps", c.optimizer.lr.warmup_steps},
        {"momentum", c.optimizer.momentum},
        {"weight_decay", c.optimizer.weight_decay},
        {"label_smoothing", c.label_smoothing},
        {"delta_t", c.schedule.delta_t},
        {"alpha", c.schedule.alpha},
        {"end_fraction", c.schedule.end_fraction},
        {"gamma_sal", c.ablation.gamma_sal},
        {"salience", c.ablation.rule == SalienceRule::Kept ? "kept" : "top_k"},
        {"grad_accumulation", c.grad_accumulation},
        {"eval_interval", c.eval_interval},
    };
}

inline nlohmann::json to_json(const RunReport& r) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : r.curve)
        curve.push_back({{"step", p.step},
                         {"train_loss", p.train_loss},
                         {"train_accuracy", p.train_accuracy},
                         {"test_loss", p.test_loss},
                         {"test_accuracy", p.test_accuracy},
                         {"nnz", p.nnz},
                         {"n_active", p.n_active}});
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < r.layer_stats.size(); ++l) {
        auto j = to_json(r.layer_stats[l]);
        const auto& topo = r.model.layers[l].topo;
        j["index"] = l;
        j["shape"] = {topo.rows(), topo.cols()};
        j["initial_sparsity"] = r.layer_sparsity[l];
        j["nnz"] = topo.nnz();
        j["structure"] = topo.mode == TopologyMode::ConstantFanIn ? "constant_fan_in" : "unstructured";
        if (topo.mode == TopologyMode::ConstantFanIn) j["fan_in"] = topo.fan_in;
        layers.push_back(std::move(j));
    }
    return {{"config", to_json(r.config)},
            {"dims", r.dims},
            {"metrics", curve},
            {"layers", layers},
            {"final_test_accuracy", r.final_test_accuracy},
            {"mask_changes_after_freeze", r.mask_changes_after_freeze},
            {"flops", {{"inference_per_example", r.inference_flops}, {"training_total", r.training_flops}}}};
}

inline constexpr const char* kMetricsCsvHeader =
    "mode,seed,step,train_loss,train_accuracy,test_loss,test_accuracy,nnz,n_active";

/// One row per evaluation point; fixed precision so reruns compare byte for byte.
inline void write_metrics_csv(std::ostream& os, const std::vector<RunReport>& runs) {
    os << kMetricsCsvHeader << '\n';
    for (const auto& r : runs)
        for (const auto& p : r.curve) {
            char buf[256];
            std::snprintf(buf, sizeof buf, "%s,%llu,%zu,%.6f,%.6f,%.6f,%.6f,%zu,%zu\n", to_string(r.config.mode).c_str(),
                          static_cast<unsigned long long>(r.config.seed), p.step, p.train_loss, p.train_accuracy,
                          p.test_loss, p.test_accuracy, p.nnz, p.n_active);
            os << buf;
        }
}

}  // namespace srigl
