// SPDX-License-Identifier: Apache-2.0
//
// Mask updates for dynamic sparse training.
//
//   rigl_update   unstructured prune-by-magnitude / grow-by-gradient swap
//   srigl_update  the same exchange under a constant fan-in constraint, with
//                 neuron ablation when too few of a neuron's weights are salient
//
// Also hosts the ERK per-layer sparsity allocator and the cosine drop-fraction
// schedule. Ranking ties are always broken towards the lower flat index.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srigl/condensed.hpp"
#include "srigl/error.hpp"
#include "srigl/matrix.hpp"

namespace srigl {

enum class TopologyMode { Unstructured, ConstantFanIn };

struct AblationEvent {
    std::size_t step = 0;
    std::vector<std::size_t> neurons;
};

/// Mask state of one layer: n neurons x d inputs (a conv layer enters as its
/// n x (c * kh * kw) view).
template <typename T>
struct LayerTopology {
    TopologyMode mode = TopologyMode::Unstructured;
    DenseMaskedMatrix<T> matrix;
    std::size_t fan_in = 0;                 // constant fan-in mode only
    std::vector<std::uint8_t> active_rows;  // cleared rows are ablated for good
    std::vector<AblationEvent> ablation_log;

    std::size_t rows() const { return matrix.rows; }
    std::size_t cols() const { return matrix.cols; }
    std::size_t nnz() const { return matrix.nnz(); }
    std::size_t n_active() const {
        return static_cast<std::size_t>(std::count(active_rows.begin(), active_rows.end(), 1));
    }

    static LayerTopology unstructured(DenseMaskedMatrix<T> m) {
        LayerTopology t;
        t.mode = TopologyMode::Unstructured;
        t.matrix = std::move(m);
        t.active_rows.assign(t.matrix.rows, 1);
        t.matrix.apply_mask();
        return t;
    }

    /// Rows with an empty mask start out ablated.
    static LayerTopology constant_fan_in(DenseMaskedMatrix<T> m) {
        LayerTopology t;
        t.mode = TopologyMode::ConstantFanIn;
        t.matrix = std::move(m);
        t.active_rows.assign(t.matrix.rows, 0);
        t.matrix.apply_mask();
        bool seen = false;
        for (std::size_t r = 0; r < t.rows(); ++r) {
            const std::size_t pop = t.matrix.row_nnz(r);
            if (pop == 0) continue;
            if (seen && pop != t.fan_in)
                fail(Errc::NonUniformFanIn, "row " + std::to_string(r) + " has fan-in " + std::to_string(pop) +
                                                ", expected " + std::to_string(t.fan_in));
            t.fan_in = pop;
            seen = true;
            t.active_rows[r] = 1;
        }
        return t;
    }

    /// Throws if the mode's structural invariant is broken.
    void check_invariants() const {
        if (matrix.weights.size() != rows() * cols() || matrix.mask.size() != rows() * cols())
            fail(Errc::DimensionMismatch, "layer planes do not match shape");
        for (std::size_t i = 0; i < matrix.weights.size(); ++i)
            if (!matrix.mask[i] && matrix.weights[i] != T{})
                fail(Errc::DomainError, "non-zero weight at inactive position " + std::to_string(i));
        if (mode != TopologyMode::ConstantFanIn) return;
        for (std::size_t r = 0; r < rows(); ++r) {
            const std::size_t pop = matrix.row_nnz(r);
            const std::size_t want = active_rows[r] ? fan_in : 0;
            if (pop != want)
                fail(Errc::NonUniformFanIn, "row " + std::to_string(r) + " has fan-in " + std::to_string(pop) +
                                                ", expected " + std::to_string(want));
        }
    }

    BasicCondensedMatrix<T> condensed() const { return from_dense(matrix); }
};

struct UpdateSchedule {
    std::size_t delta_t = 100;  // steps between connectivity updates
    double alpha = 0.3;         // initial drop fraction
    double end_fraction = 0.75; // mask frozen after this fraction of training
    std::size_t total_steps = 0;

    double end_step() const { return end_fraction * static_cast<double>(total_steps); }

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) fail(Errc::DomainError, "alpha must lie in (0, 1)");
        if (!(end_fraction > 0.0 && end_fraction <= 1.0)) fail(Errc::DomainError, "end_fraction must lie in (0, 1]");
        if (delta_t < 1) fail(Errc::DomainError, "delta_t must be >= 1");
    }

    /// Steps at which the mask is updated: positive multiples of delta_t strictly
    /// before the freeze point.
    bool is_update_step(std::size_t t) const {
        return t > 0 && t % delta_t == 0 && static_cast<double>(t) < end_step();
    }
};

/// Cosine-annealed drop fraction: alpha/2 (1 + cos(pi t / T_end)), 0 past T_end.
inline double drop_fraction(const UpdateSchedule& sched, std::size_t t) {
    const double t_end = sched.end_step();
    const double x = static_cast<double>(t);
    if (t_end <= 0.0 || x > t_end) return 0.0;
    return sched.alpha / 2.0 * (1.0 + std::cos(std::numbers::pi * x / t_end));
}

/// K = floor(fraction * nnz).
inline std::size_t update_count(double fraction, std::size_t nnz) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(nnz)));
}

/// Which active weights count as salient by magnitude: the K largest, or all
/// nnz - K weights the magnitude drop would keep.
enum class SalienceRule { TopK, Kept };

struct AblationPolicy {
    double gamma_sal = 0.3;  // minimum fraction of salient weights a neuron must keep
    SalienceRule rule = SalienceRule::Kept;

    /// max(1, ceil(gamma * k)); 0 disables ablation.
    std::size_t threshold(std::size_t fan_in) const {
        if (gamma_sal <= 0.0) return 0;
        const auto t = static_cast<std::size_t>(std::ceil(gamma_sal * static_cast<double>(fan_in) - 1e-12));
        return std::max<std::size_t>(1, t);
    }
};

template <typename T>
struct SaliencySnapshot {
    Matrix<T> weight_magnitudes;  // |w| at active positions, 0 elsewhere
    Matrix<T> grad_magnitudes;    // |dL/dw| everywhere (dense)
    std::size_t K = 0;            // weights to prune and regrow
};

template <typename T>
SaliencySnapshot<T> make_snapshot(const LayerTopology<T>& layer, const Matrix<T>& dense_grads, std::size_t K) {
    require_dims(dense_grads.rows == layer.rows() && dense_grads.cols == layer.cols(),
                 "make_snapshot: gradient shape differs from layer");
    SaliencySnapshot<T> s;
    s.weight_magnitudes = Matrix<T>(layer.rows(), layer.cols());
    s.grad_magnitudes = Matrix<T>(layer.rows(), layer.cols());
    for (std::size_t i = 0; i < layer.matrix.weights.size(); ++i) {
        s.weight_magnitudes.data[i] = layer.matrix.mask[i] ? std::abs(layer.matrix.weights[i]) : T{};
        s.grad_magnitudes.data[i] = std::abs(dense_grads.data[i]);
    }
    s.K = K;
    return s;
}

namespace detail {

/// First `count` of `candidates` ranked by score (largest or smallest first),
/// ties to the lower index. Returned in rank order.
template <typename T>
std::vector<std::size_t> rank_select(std::vector<std::size_t> candidates, const std::vector<T>& score,
                                     std::size_t count, bool largest) {
    count = std::min(count, candidates.size());
    auto better = [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return largest ? score[a] > score[b] : score[a] < score[b];
        return a < b;
    };
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count), candidates.end(),
                      better);
    candidates.resize(count);
    return candidates;
}

template <typename T>
void check_snapshot(const LayerTopology<T>& layer, const SaliencySnapshot<T>& sal) {
    require_dims(sal.weight_magnitudes.rows == layer.rows() && sal.weight_magnitudes.cols == layer.cols() &&
                     sal.grad_magnitudes.rows == layer.rows() && sal.grad_magnitudes.cols == layer.cols(),
                 "saliency snapshot shape differs from layer");
}

}  // namespace detail

/// Unstructured update: drop the K smallest-magnitude active weights and
/// activate the K inactive positions with the largest gradient magnitude.
/// Grown weights start at zero; nnz is unchanged.
template <typename T>
LayerTopology<T> rigl_update(LayerTopology<T> layer, const SaliencySnapshot<T>& sal) {
    detail::check_snapshot(layer, sal);
    if (sal.K == 0) return layer;
    std::vector<std::size_t> active, inactive;
    for (std::size_t i = 0; i < layer.matrix.mask.size(); ++i)
        (layer.matrix.mask[i] ? active : inactive).push_back(i);
    if (sal.K > active.size())
        fail(Errc::DomainError, "K=" + std::to_string(sal.K) + " exceeds nnz=" + std::to_string(active.size()));
    if (sal.K > inactive.size())
        fail(Errc::InsufficientInactive, "K=" + std::to_string(sal.K) + " but only " +
                                             std::to_string(inactive.size()) + " inactive positions");

    const auto drop = detail::rank_select(std::move(active), sal.weight_magnitudes.data, sal.K, false);
    const auto grow = detail::rank_select(std::move(inactive), sal.grad_magnitudes.data, sal.K, true);
    for (std::size_t i : drop) {
        layer.matrix.mask[i] = 0;
        layer.matrix.weights[i] = T{};
    }
    for (std::size_t i : grow) {
        layer.matrix.mask[i] = 1;
        layer.matrix.weights[i] = T{};
    }
    return layer;
}

/// Per-neuron number of salient weights: positions in the layer-wide top-K of
/// active weight magnitude (or all nnz - K weights the drop keeps, under
/// SalienceRule::Kept), plus positions in the top-K of inactive gradient
/// magnitude (the grow criterion). The two sets are disjoint.
template <typename T>
std::vector<std::size_t> count_salient(const SaliencySnapshot<T>& sal, const LayerTopology<T>& layer,
                                       SalienceRule rule = SalienceRule::TopK) {
    detail::check_snapshot(layer, sal);
    std::vector<std::size_t> counts(layer.rows(), 0);
    if (sal.K == 0) return counts;
    std::vector<std::size_t> active, inactive;
    for (std::size_t i = 0; i < layer.matrix.mask.size(); ++i) {
        if (layer.matrix.mask[i])
            active.push_back(i);
        else if (layer.active_rows[i / layer.cols()] && sal.grad_magnitudes.data[i] != T{})
            inactive.push_back(i);  // a zero gradient ranks nowhere
    }
    const std::size_t by_weight = rule == SalienceRule::TopK ? sal.K : active.size() - std::min(sal.K, active.size());
    for (std::size_t i : detail::rank_select(std::move(active), sal.weight_magnitudes.data, by_weight, true))
        ++counts[i / layer.cols()];
    for (std::size_t i : detail::rank_select(std::move(inactive), sal.grad_magnitudes.data, sal.K, true))
        ++counts[i / layer.cols()];
    return counts;
}

template <typename T>
struct AblationResult {
    LayerTopology<T> layer;
    std::size_t k_prime = 0;
    std::vector<std::size_t> ablated;
    std::size_t threshold = 0;       // threshold that was finally applied
    std::size_t iterations = 0;      // passes of the threshold loop
    bool all_below_threshold = false; // some pass would have emptied the layer
};

/// Ablates active neurons with fewer than threshold salient weights. The new
/// fan-in is k' = floor(nnz_target / n_active'); while k' would exceed the
/// dense fan-in d (or no neuron would survive) the threshold is lowered by one
/// and the selection retried. A threshold of 0 ablates nothing.
template <typename T>
AblationResult<T> ablate(LayerTopology<T> layer, const std::vector<std::size_t>& counts, const AblationPolicy& policy,
                         std::size_t nnz_target, std::size_t step = 0) {
    require_dims(counts.size() == layer.rows(), "ablate: one count per neuron expected");
    AblationResult<T> res;
    const std::size_t d = layer.cols();
    const std::size_t n_active = layer.n_active();
    std::size_t threshold = policy.threshold(layer.fan_in);

    std::vector<std::size_t> chosen;
    std::size_t k_prime = n_active ? nnz_target / n_active : 0;
    while (threshold > 0) {
        ++res.iterations;
        chosen.clear();
        for (std::size_t r = 0; r < layer.rows(); ++r)
            if (layer.active_rows[r] && counts[r] < threshold) chosen.push_back(r);
        const std::size_t survivors = n_active - chosen.size();
        if (survivors == 0) {
            res.all_below_threshold = true;
        } else if (nnz_target / survivors <= d) {
            k_prime = nnz_target / survivors;
            break;
        }
        chosen.clear();
        --threshold;
    }
    if (threshold == 0) k_prime = n_active ? nnz_target / n_active : 0;
    k_prime = std::min(k_prime, d);

    for (std::size_t r : chosen) {
        layer.active_rows[r] = 0;
        for (std::size_t c = 0; c < d; ++c) layer.matrix.clear(r, c);
    }
    if (!chosen.empty()) layer.ablation_log.push_back({step, chosen});
    res.layer = std::move(layer);
    res.k_prime = k_prime;
    res.ablated = std::move(chosen);
    res.threshold = threshold;
    return res;
}

/// Constant fan-in update with neuron ablation:
///   1-3. rank weights and gradients, count salient weights per neuron
///   4-5. ablate weak neurons, derive the new fan-in k'
///   6.   prune the K smallest-magnitude active weights across the layer
///   7.   regrow every active neuron to exactly k' by descending gradient
///        magnitude over its currently inactive positions (grown weights = 0)
/// nnz after the update is n_active * k', within n_active of the old nnz.
template <typename T>
LayerTopology<T> srigl_update(LayerTopology<T> layer, const SaliencySnapshot<T>& sal, const AblationPolicy& policy,
                              std::size_t step = 0) {
    if (layer.mode != TopologyMode::ConstantFanIn) fail(Errc::DomainError, "srigl_update needs a constant fan-in layer");
    detail::check_snapshot(layer, sal);
    const std::size_t d = layer.cols();
    const std::size_t nnz_target = layer.nnz();

    const auto counts = count_salient(sal, layer, policy.rule);
    auto abl = ablate(std::move(layer), counts, policy, nnz_target, step);
    layer = std::move(abl.layer);
    const std::size_t k_prime = abl.k_prime;

    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < layer.matrix.mask.size(); ++i)
        if (layer.matrix.mask[i]) active.push_back(i);
    for (std::size_t i : detail::rank_select(std::move(active), sal.weight_magnitudes.data, sal.K, false))
        layer.matrix.clear(i / d, i % d);

    std::vector<std::size_t> free_cols;
    std::vector<T> row_grad(d);
    for (std::size_t r = 0; r < layer.rows(); ++r) {
        if (!layer.active_rows[r]) continue;
        const std::size_t have = layer.matrix.row_nnz(r);
        if (have >= k_prime) continue;  // only when k' did not grow and nothing was pruned here
        free_cols.clear();
        for (std::size_t c = 0; c < d; ++c) {
            if (!layer.matrix.active(r, c)) free_cols.push_back(c);
            row_grad[c] = sal.grad_magnitudes(r, c);
        }
        const std::size_t need = k_prime - have;
        if (free_cols.size() < need)
            fail(Errc::RegrowExhausted, "neuron " + std::to_string(r) + " cannot reach fan-in " + std::to_string(k_prime));
        for (std::size_t c : detail::rank_select(std::move(free_cols), row_grad, need, true)) layer.matrix.set(r, c, T{});
    }
    layer.fan_in = layer.n_active() ? k_prime : 0;
    return layer;
}

struct AblationStats {
    std::size_t n_neurons = 0;
    std::size_t n_active = 0;               // neurons with at least one incoming weight
    double active_fraction = 0.0;
    std::map<std::size_t, std::size_t> fan_in_histogram;  // fan-in -> neurons (active only)
    double fan_in_mean = 0.0;
    double fan_in_variance = 0.0;           // population variance over active neurons
};

template <typename T>
AblationStats ablation_stats(const LayerTopology<T>& layer) {
    AblationStats s;
    s.n_neurons = layer.rows();
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t r = 0; r < layer.rows(); ++r) {
        const std::size_t pop = layer.matrix.row_nnz(r);
        if (pop == 0) continue;
        ++s.n_active;
        ++s.fan_in_histogram[pop];
        sum += static_cast<double>(pop);
        sum2 += static_cast<double>(pop) * static_cast<double>(pop);
    }
    if (s.n_neurons) s.active_fraction = static_cast<double>(s.n_active) / static_cast<double>(s.n_neurons);
    if (s.n_active) {
        s.fan_in_mean = sum / static_cast<double>(s.n_active);
        s.fan_in_variance = std::max(0.0, sum2 / static_cast<double>(s.n_active) - s.fan_in_mean * s.fan_in_mean);
    }
    return s;
}

inline nlohmann::json to_json(const AblationStats& s) {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [k, v] : s.fan_in_histogram) hist[std::to_string(k)] = v;
    return {{"n_neurons", s.n_neurons},     {"n_active", s.n_active},
            {"active_fraction", s.active_fraction}, {"fan_in_mean", s.fan_in_mean},
            {"fan_in_variance", s.fan_in_variance}, {"fan_in_histogram", hist}};
}

/// One JSON-lines record per layer update.
template <typename T>
nlohmann::json update_record(std::size_t step, std::size_t layer_index, const LayerTopology<T>& layer) {
    std::size_t ablated = 0;
    if (!layer.ablation_log.empty() && layer.ablation_log.back().step == step)
        ablated = layer.ablation_log.back().neurons.size();
    const std::size_t n_active = layer.mode == TopologyMode::ConstantFanIn ? layer.n_active()
                                                                           : ablation_stats(layer).n_active;
    nlohmann::json rec = {{"step", step}, {"layer", layer_index}, {"n_active", n_active},
                          {"k_prime", nullptr}, {"nnz", layer.nnz()}, {"ablated_this_step", ablated}};
    if (layer.mode == TopologyMode::ConstantFanIn) rec["k_prime"] = layer.fan_in;
    return rec;
}

// ---------------------------------------------------------------------------
// ERK layer-sparsity allocation
// ---------------------------------------------------------------------------

struct LayerShape {
    std::size_t n_out = 0;
    std::size_t n_in = 0;
    std::size_t kh = 1;
    std::size_t kw = 1;

    std::size_t params() const { return n_out * n_in * kh * kw; }
    /// Unnormalised ERK density: sum of dims over their product.
    double erk_score() const {
        if (kh == 1 && kw == 1)
            return static_cast<double>(n_out + n_in) / static_cast<double>(n_out * n_in);
        return static_cast<double>(n_out + n_in + kh + kw) / static_cast<double>(params());
    }
};

/// Per-layer sparsities whose nonzero budget totals (1 - s) of all weights,
/// density proportional to erk_score(). Layers that would exceed density 1 are
/// made dense and the scale re-solved over the rest.
inline std::vector<double> erk_sparsities(const std::vector<LayerShape>& layers, double global_sparsity) {
    if (!(global_sparsity >= 0.0 && global_sparsity < 1.0))
        fail(Errc::DomainError, "global sparsity must lie in [0, 1)");
    std::vector<double> density(layers.size(), 0.0);
    if (layers.empty()) return {};
    double total = 0.0;
    for (const auto& l : layers) {
        if (l.params() == 0) fail(Errc::DomainError, "layer with zero parameters");
        total += static_cast<double>(l.params());
    }
    const double budget = (1.0 - global_sparsity) * total;

    std::vector<bool> dense(layers.size(), false);
    for (;;) {
        double fixed = 0.0, scored = 0.0;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (dense[i])
                fixed += static_cast<double>(layers[i].params());
            else
                scored += layers[i].erk_score() * static_cast<double>(layers[i].params());
        }
        if (scored == 0.0) {
            for (std::size_t i = 0; i < layers.size(); ++i) density[i] = 1.0;
            break;
        }
        const double eps = (budget - fixed) / scored;
        bool capped = false;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (dense[i]) continue;
            if (eps * layers[i].erk_score() > 1.0) {
                dense[i] = true;
                capped = true;
            }
        }
        if (capped) continue;
        for (std::size_t i = 0; i < layers.size(); ++i) density[i] = dense[i] ? 1.0 : eps * layers[i].erk_score();
        break;
    }

    std::vector<double> sparsity(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (density[i] * static_cast<double>(layers[i].params()) < 1.0)
            fail(Errc::InfeasibleSparsity, "layer " + std::to_string(i) + " would keep fewer than one weight");
        sparsity[i] = std::clamp(1.0 - density[i], 0.0, 1.0);
    }
    return sparsity;
}

}  // namespace srigl
