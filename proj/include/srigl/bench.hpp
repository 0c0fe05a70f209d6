// SPDX-License-Identifier: Apache-2.0
//
// Condensed-vs-dense timing harness. Matrices and inputs are built before
// timing starts; only the multiply call sits between the clock reads.
#pragma once

#include <chrono>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "srigl/condensed.hpp"
#include "srigl/error.hpp"
#include "srigl/matrix.hpp"
#include "srigl/mlp.hpp"
#include "srigl/rng.hpp"
#include "srigl/stats.hpp"

namespace srigl {

inline constexpr std::size_t kMinBenchRepeats = 5;

struct BenchConfig {
    std::size_t n = 10;
    std::size_t d = 65536;
    std::vector<double> sparsities{0.90, 0.95, 0.99};
    std::vector<std::size_t> batches{1, 2, 4, 8, 16, 32, 64, 128, 256};
    std::size_t repeats = 10;
    std::size_t warmup = 2;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const {
        if (n < 1 || d < 1) fail(Errc::ConfigError, "bench: n and d must be >= 1");
        if (repeats < kMinBenchRepeats) fail(Errc::ConfigError, "bench: repeats must be >= 5");
        if (sparsities.empty() || batches.empty()) fail(Errc::ConfigError, "bench: empty sparsity or batch list");
        for (double s : sparsities)
            if (!(s >= 0.0 && s < 1.0)) fail(Errc::ConfigError, "bench: sparsity must lie in [0, 1)");
        for (std::size_t b : batches)
            if (b < 1) fail(Errc::ConfigError, "bench: batch sizes must be >= 1");
        if (threads < 1) fail(Errc::ConfigError, "bench: threads must be >= 1");
    }
};

struct BenchRow {
    std::string impl;  // "dense" or "condensed"
    double sparsity = 0.0;
    std::size_t batch = 0;
    std::size_t repeats = 0;
    unsigned threads = 1;
    double mean_s = 0.0;
    double std_s = 0.0;
};

/// Times `fn` `warmup + repeats` times and returns moments of the last `repeats`.
inline SampleMoments time_call(const std::function<void()>& fn, std::size_t repeats, std::size_t warmup) {
    for (std::size_t i = 0; i < warmup; ++i) fn();
    std::vector<double> secs(repeats);
    for (auto& s : secs) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        s = std::chrono::duration<double>(t1 - t0).count();
    }
    return sample_moments(secs);
}

namespace detail {

template <typename T>
void do_not_optimize(const Matrix<T>& m) {
    asm volatile("" : : "r"(m.data.data()) : "memory");
}

}  // namespace detail

/// Rows ordered by batch, then dense followed by condensed per sparsity.
/// The dense product ignores sparsity, so it is timed once per batch and
/// repeated for every sparsity row.
inline std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
    cfg.validate();
    Rng rng = make_rng(cfg.seed, 0xbe7c);
    std::normal_distribution<float> normal;

    Matrix<float> dense(cfg.n, cfg.d);
    for (auto& v : dense.data) v = normal(rng);

    std::vector<CondensedMatrix> condensed;
    for (double s : cfg.sparsities) {
        const std::size_t k = fan_in_for(cfg.d, s);
        std::vector<std::uint32_t> cols(cfg.n * k);
        std::vector<float> vals(cfg.n * k);
        std::vector<std::uint32_t> perm(cfg.d);
        for (std::size_t r = 0; r < cfg.n; ++r) {
            std::iota(perm.begin(), perm.end(), 0u);
            for (std::size_t i = 0; i < k; ++i) {
                std::swap(perm[i], perm[i + uniform_below(rng, cfg.d - i)]);
                cols[r * k + i] = perm[i];
                vals[r * k + i] = normal(rng);
            }
        }
        condensed.push_back(CondensedMatrix::from_rows(cfg.n, cfg.d, k, cols, vals, std::vector<std::uint8_t>(cfg.n, 1)));
    }

    std::vector<BenchRow> rows;
    for (std::size_t b : cfg.batches) {
        Matrix<float> v(cfg.d, b);
        for (auto& x : v.data) x = normal(rng);

        const auto dm = time_call(
            [&] {
                const auto out = dense_matmul(dense, v);
                detail::do_not_optimize(out);
            },
            cfg.repeats, cfg.warmup);
        for (double s : cfg.sparsities)
            rows.push_back({"dense", s, b, cfg.repeats, cfg.threads, dm.mean, std::sqrt(dm.variance)});

        for (std::size_t i = 0; i < cfg.sparsities.size(); ++i) {
            const auto& c = condensed[i];
            const auto cm = time_call(
                [&] {
                    const auto out = condensed_matmul(c, v, cfg.threads);
                    detail::do_not_optimize(out);
                },
                cfg.repeats, cfg.warmup);
            rows.push_back({"condensed", cfg.sparsities[i], b, cfg.repeats, cfg.threads, cm.mean, std::sqrt(cm.variance)});
        }
    }
    return rows;
}

inline constexpr const char* kBenchCsvHeader = "impl,sparsity,batch,repeats,threads,mean_s,std_s";

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << kBenchCsvHeader << '\n';
    for (const auto& r : rows) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%.4f,%zu,%zu,%u,%.9e,%.9e\n", r.impl.c_str(), r.sparsity, r.batch, r.repeats,
                      r.threads, r.mean_s, r.std_s);
        os << buf;
    }
}

}  // namespace srigl
