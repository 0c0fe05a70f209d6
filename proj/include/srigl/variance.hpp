// SPDX-License-Identifier: Apache-2.0
//
// Output-norm variance of a randomly masked ReLU layer.
//
// Model: z = sqrt(2/k) (W .* I)(xi .* u) with W iid N(0,1), I a binary mask,
// xi iid Bernoulli(1/2) and u uniform on the unit sphere. E||z||^2 = 1 for all
// three mask families; the variance of ||z||^2 depends on how I is drawn.
//
// The 18 n/k term comes from the i=i', j=j' fourth-moment contribution
// (4/k^2) n^2 * 3 * (k/n) * (1/2) * 3/(n(n+2)); writing it as 18 k/n disagrees
// with the Monte Carlo estimate.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <numeric>
#include <ostream>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <boost/random/binomial_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

#include "srigl/error.hpp"
#include "srigl/matrix.hpp"
#include "srigl/rng.hpp"
#include "srigl/stats.hpp"

namespace srigl {

enum class SparsityKind { Bernoulli, ConstantPerLayer, ConstantFanIn };

inline constexpr SparsityKind kAllSparsityKinds[] = {SparsityKind::Bernoulli, SparsityKind::ConstantPerLayer,
                                                     SparsityKind::ConstantFanIn};

inline std::string_view to_string(SparsityKind kind) {
    switch (kind) {
        case SparsityKind::Bernoulli: return "bernoulli";
        case SparsityKind::ConstantPerLayer: return "constant_per_layer";
        case SparsityKind::ConstantFanIn: return "constant_fan_in";
    }
    return "?";
}

inline std::optional<SparsityKind> parse_sparsity_kind(std::string_view s) {
    for (SparsityKind k : kAllSparsityKinds)
        if (to_string(k) == s) return k;
    return std::nullopt;
}

struct VarianceParams {
    std::size_t n = 0;  // layer width
    std::size_t k = 0;  // (mean) fan-in
};

inline void validate(const VarianceParams& p) {
    if (p.n == 0) fail(Errc::DomainError, "n must be positive");
    if (p.k == 0) fail(Errc::DomainError, "k must be positive");
    if (p.k > p.n) fail(Errc::DomainError, "k=" + std::to_string(p.k) + " exceeds n=" + std::to_string(p.n));
}

/// C_{n,k} = (n - 1/k) / (n - 1/n); the pair-correlation factor of a mask with
/// exactly kn ones.
inline double c_nk(const VarianceParams& p) {
    if (p.n < 2) fail(Errc::DomainError, "C_{n,k} needs n >= 2");
    validate(p);
    const double n = static_cast<double>(p.n);
    const double k = static_cast<double>(p.k);
    return (n - 1.0 / k) / (n - 1.0 / n);
}

inline double variance_closed_form(SparsityKind kind, const VarianceParams& p) {
    validate(p);
    const double n = static_cast<double>(p.n);
    const double k = static_cast<double>(p.k);
    const double denom = n * (n + 2.0);
    const double bernoulli = (5.0 * n - 8.0 + 18.0 * n / k) / denom;
    switch (kind) {
        case SparsityKind::Bernoulli: return bernoulli;
        case SparsityKind::ConstantPerLayer: {
            // n = 1 forces k = n, where C is 1 in the limit.
            const double c = p.k == p.n ? 1.0 : c_nk(p);
            return ((n * n + 7.0 * n - 8.0) * c + 18.0 * n / k - n * n - 2.0 * n) / denom;
        }
        case SparsityKind::ConstantFanIn: return bernoulli - 3.0 * (n - k) / (k * n * (n + 2.0));
    }
    return 0.0;
}

using BinaryMatrix = Matrix<std::uint8_t>;

namespace detail {

/// Sums a[j] over uniformly random h-subsets of the indices of `a`, by a
/// partial Fisher-Yates shuffle over whichever of the subset or its
/// complement is smaller. The scratch permutation is not reset between
/// calls; a partial shuffle picks a uniform subset from any starting order.
class SubsetSummer {
public:
    void reset(const std::vector<double>& a, double total) {
        a_ = &a;
        total_ = total;
        perm_.resize(a.size());
        std::iota(perm_.begin(), perm_.end(), 0u);
    }

    template <typename G>
    double operator()(std::size_t h, HalfWordDraws<G>& draws) {
        const std::size_t m = perm_.size();
        const bool complement = h > m / 2;
        const std::size_t count = complement ? m - h : h;
        const auto& a = *a_;
        double s = 0.0;
        for (std::size_t t = 0; t < count; ++t) {
            const std::size_t j = t + draws.below(static_cast<std::uint32_t>(m - t));
            std::swap(perm_[t], perm_[j]);
            s += a[perm_[t]];
        }
        return complement ? total_ - s : s;
    }

private:
    const std::vector<double>* a_ = nullptr;
    double total_ = 0.0;
    std::vector<std::uint32_t> perm_;
};

}  // namespace detail

/// Draws one n x n mask of the given family.
inline BinaryMatrix sample_mask(SparsityKind kind, const VarianceParams& p, Rng& rng) {
    validate(p);
    const std::size_t n = p.n;
    const std::size_t k = p.k;
    BinaryMatrix mask(n, n, 0);
    switch (kind) {
        case SparsityKind::Bernoulli: {
            std::bernoulli_distribution coin(static_cast<double>(k) / static_cast<double>(n));
            for (auto& e : mask.data) e = coin(rng) ? 1 : 0;
            break;
        }
        case SparsityKind::ConstantPerLayer: {
            std::vector<std::uint32_t> perm(n * n);
            for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::uint32_t>(i);
            for (std::size_t t = 0; t < n * k; ++t) {
                std::swap(perm[t], perm[t + uniform_below(rng, perm.size() - t)]);
                mask.data[perm[t]] = 1;
            }
            break;
        }
        case SparsityKind::ConstantFanIn: {
            std::vector<std::uint32_t> perm(n);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
                for (std::size_t t = 0; t < k; ++t) {
                    std::swap(perm[t], perm[t + uniform_below(rng, n - t)]);
                    mask(r, perm[t]) = 1;
                }
            }
            break;
        }
    }
    return mask;
}

struct NormRatioStats {
    double mean = 0.0;
    double variance = 0.0;
    double std_error = 0.0;  // standard error of `mean`
    std::size_t trials = 0;
};

namespace detail {

/// log(i!) for i = 0..max.
class LogFactorials {
public:
    explicit LogFactorials(std::size_t max) : v_(max + 1) {
        for (std::size_t i = 0; i <= max; ++i) v_[i] = std::lgamma(static_cast<double>(i) + 1.0);
    }
    double choose(std::uint64_t n, std::uint64_t r) const { return v_[n] - v_[r] - v_[n - r]; }
    std::size_t max() const { return v_.size() - 1; }

private:
    std::vector<double> v_;
};

/// Hypergeometric variate: successes among `draws` items taken without
/// replacement from `total` items of which `good` are successes. Inversion
/// outward from the mode, so the expected cost is O(standard deviation).
class Hypergeometric {
public:
    Hypergeometric(std::uint64_t total, std::uint64_t good, std::uint64_t draws, const LogFactorials& lf)
        : N_(static_cast<double>(total)), K_(static_cast<double>(good)), d_(static_cast<double>(draws)) {
        if (good > total || draws > total || total > lf.max())
            fail(Errc::DomainError, "hypergeometric parameters out of range");
        lo_ = draws + good > total ? draws + good - total : 0;
        hi_ = std::min(good, draws);
        const double m = std::floor((d_ + 1.0) * (K_ + 1.0) / (N_ + 2.0));
        mode_ = std::clamp(static_cast<std::uint64_t>(m), lo_, hi_);
        p_mode_ = std::exp(lf.choose(good, mode_) + lf.choose(total - good, draws - mode_) - lf.choose(total, draws));
    }

    template <typename G>
    std::uint64_t operator()(G& rng) const {
        double u = std::generate_canonical<double, 64>(rng) - p_mode_;
        if (u < 0.0 || lo_ == hi_) return mode_;
        std::uint64_t left = mode_, right = mode_;
        double p_left = p_mode_, p_right = p_mode_;
        while (left > lo_ || right < hi_) {
            if (right < hi_) {
                const double x = static_cast<double>(right);
                p_right *= (K_ - x) * (d_ - x) / ((x + 1.0) * (N_ - K_ - d_ + x + 1.0));
                ++right;
                if ((u -= p_right) < 0.0) return right;
            }
            if (left > lo_) {
                const double x = static_cast<double>(left);
                p_left *= x * (N_ - K_ - d_ + x) / ((K_ - x + 1.0) * (d_ - x + 1.0));
                --left;
                if ((u -= p_left) < 0.0) return left;
            }
        }
        return mode_;  // rounding left u just above the summed mass
    }

private:
    double N_, K_, d_;
    std::uint64_t lo_ = 0, hi_ = 0, mode_ = 0;
    double p_mode_ = 0.0;
};

}  // namespace detail

/// Samples ||z||^2 through its row decomposition
///   ||z||^2 = (2/k) sum_i g_i^2 s_i,   s_i = sum_j I_ij xi_j u_j^2.
/// Only the m columns with xi_j = 1 contribute. Each row draws how many of
/// its mask entries land on those columns (binomial for Bernoulli masks,
/// hypergeometric for fixed fan-in, sequential hypergeometric over rows for a
/// fixed layer total) and then sums over a uniform subset of that size. The
/// result has the same distribution as forming W, I, xi and u explicitly.
class NormRatioSampler {
public:
    NormRatioSampler(SparsityKind kind, const VarianceParams& p)
        : kind_(kind), p_(p), log_fact_(kind == SparsityKind::ConstantPerLayer ? p.n * p.n : p.n) {
        validate(p);
        if (p.n > 65535) fail(Errc::DomainError, "Monte Carlo sampler supports n <= 65535");
        x_.resize(p.n);
        b_.reserve(p.n);
        row_sum_.resize(p.n);
    }

    double draw(Rng& rng) {
        const std::size_t n = p_.n;
        const std::size_t k = p_.k;
        boost::random::normal_distribution<double> normal;

        double norm2 = 0.0;
        for (auto& v : x_) {
            v = normal(rng);
            norm2 += v * v;
        }
        // b holds u_j^2 for the columns dropout keeps.
        b_.clear();
        double total = 0.0;
        for (std::size_t j = 0; j < n; j += 64) {
            std::uint64_t bits = rng();
            for (std::size_t t = j; t < std::min(n, j + 64); ++t, bits >>= 1)
                if (bits & 1u) {
                    b_.push_back(x_[t] * x_[t] / norm2);
                    total += b_.back();
                }
        }
        const std::size_t m = b_.size();
        summer_.reset(b_, total);
        HalfWordDraws<Rng> draws(rng);

        switch (kind_) {
            case SparsityKind::ConstantFanIn: {
                const detail::Hypergeometric hits(n, m, k, log_fact_);
                for (auto& s : row_sum_) s = summer_(hits(rng), draws);
                break;
            }
            case SparsityKind::Bernoulli: {
                boost::random::binomial_distribution<std::int64_t> hits(static_cast<std::int64_t>(m),
                                                                        static_cast<double>(k) / static_cast<double>(n));
                for (auto& s : row_sum_) s = summer_(static_cast<std::size_t>(hits(rng)), draws);
                break;
            }
            case SparsityKind::ConstantPerLayer: {
                // n k ones over n^2 cells: row i holds a hypergeometric share of what the
                // earlier rows left, and a hypergeometric part of that falls on kept columns.
                std::uint64_t cells_left = n * n;
                std::uint64_t ones_left = n * k;
                for (auto& s : row_sum_) {
                    const auto row_ones = detail::Hypergeometric(cells_left, ones_left, n, log_fact_)(rng);
                    const auto hits = detail::Hypergeometric(n, row_ones, m, log_fact_)(rng);
                    s = summer_(static_cast<std::size_t>(hits), draws);
                    cells_left -= n;
                    ones_left -= row_ones;
                }
                break;
            }
        }

        double y = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = normal(rng);
            y += g * g * row_sum_[i];
        }
        return 2.0 / static_cast<double>(k) * y;
    }

private:
    SparsityKind kind_;
    VarianceParams p_;
    detail::LogFactorials log_fact_;
    std::vector<double> x_;
    std::vector<double> b_;
    std::vector<double> row_sum_;
    detail::SubsetSummer summer_;
};

inline constexpr std::size_t kMinNormRatioTrials = 1000;

/// Monte Carlo estimate of mean and variance of ||z||^2. Trial t uses the
/// generator stream derive_seed(seed, t), so results do not depend on how
/// trials are scheduled.
inline NormRatioStats simulate_norm_ratio(SparsityKind kind, const VarianceParams& p, std::size_t trials,
                                          std::uint64_t seed) {
    if (trials < kMinNormRatioTrials)
        fail(Errc::DomainError, "simulate_norm_ratio needs at least " + std::to_string(kMinNormRatioTrials) + " trials");
    NormRatioSampler sampler(kind, p);
    std::vector<double> samples(trials);
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng = make_rng(seed, t);
        samples[t] = sampler.draw(rng);
    }
    const SampleMoments m = sample_moments(samples);
    return {m.mean, m.variance, m.std_error, trials};
}

struct VarianceRow {
    SparsityKind kind = SparsityKind::Bernoulli;
    std::size_t n = 0;
    std::size_t k = 0;
    double closed_form = 0.0;
    NormRatioStats mc;
    std::uint64_t seed = 0;

    double relative_error() const { return std::abs(mc.variance - closed_form) / closed_form; }
    /// |mean - 1| in units of the standard error.
    double mean_z() const { return mc.std_error > 0.0 ? std::abs(mc.mean - 1.0) / mc.std_error : 0.0; }
    bool within(double rel_tol, double mean_sigmas = 3.0) const {
        return relative_error() <= rel_tol && mean_z() <= mean_sigmas;
    }
};

/// Fan-ins for one n: integers, or the tokens "n/2" (floor) and "n".
inline std::vector<std::size_t> resolve_fan_ins(const std::vector<std::string>& tokens, std::size_t n) {
    std::vector<std::size_t> ks;
    for (const auto& t : tokens) {
        if (t == "n") {
            ks.push_back(n);
        } else if (t == "n/2") {
            ks.push_back(n / 2);
        } else {
            std::size_t pos = 0;
            unsigned long long v = 0;
            try {
                v = std::stoull(t, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != t.size() || pos == 0) fail(Errc::ConfigError, "fan-in '" + t + "': expected an integer, n/2 or n");
            ks.push_back(static_cast<std::size_t>(v));
        }
    }
    return ks;
}

inline const std::vector<std::size_t> kDefaultVarianceNs{50, 100, 500};
inline const std::vector<std::string> kDefaultVarianceKs{"5", "10", "n/2", "n"};

/// One row per (kind, n, k), kinds outermost.
inline std::vector<VarianceRow> variance_grid(const std::vector<SparsityKind>& kinds, const std::vector<std::size_t>& ns,
                                              const std::vector<std::string>& k_tokens, std::size_t trials,
                                              std::uint64_t seed) {
    std::vector<VarianceRow> rows;
    for (SparsityKind kind : kinds)
        for (std::size_t n : ns)
            for (std::size_t k : resolve_fan_ins(k_tokens, n)) {
                const VarianceParams p{n, k};
                VarianceRow row;
                row.kind = kind;
                row.n = n;
                row.k = k;
                row.closed_form = variance_closed_form(kind, p);
                row.mc = simulate_norm_ratio(kind, p, trials, seed);
                row.seed = seed;
                rows.push_back(row);
            }
    return rows;
}

inline constexpr const char* kVarianceCsvHeader = "kind,n,k,closed_form,mc_mean,mc_variance,trials,seed";

inline void write_variance_csv(std::ostream& os, const std::vector<VarianceRow>& rows) {
    os << kVarianceCsvHeader << '\n';
    for (const auto& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.12g,%.12g,%.12g,%zu,%llu\n", std::string(to_string(r.kind)).c_str(),
                      r.n, r.k, r.closed_form, r.mc.mean, r.mc.variance, r.mc.trials,
                      static_cast<unsigned long long>(r.seed));
        os << buf;
    }
}

}  // namespace srigl
