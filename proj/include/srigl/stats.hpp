// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace srigl {

/// Pairwise (cascade) summation; fixed association order for a given length.
inline double pairwise_sum(std::span<const double> xs) {
    constexpr std::size_t kBlock = 64;
    if (xs.size() <= kBlock) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

struct SampleMoments {
    double mean = 0.0;
    double variance = 0.0;  // unbiased (n - 1)
    double std_error = 0.0; // of the mean
    std::size_t count = 0;
};

inline SampleMoments sample_moments(std::span<const double> xs) {
    SampleMoments m;
    m.count = xs.size();
    if (xs.empty()) return m;
    m.mean = pairwise_sum(xs) / static_cast<double>(xs.size());
    if (xs.size() < 2) return m;
    std::vector<double> dev(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) dev[i] = (xs[i] - m.mean) * (xs[i] - m.mean);
    const double acc = pairwise_sum(dev);
    m.variance = acc / static_cast<double>(xs.size() - 1);
    m.std_error = std::sqrt(m.variance / static_cast<double>(xs.size()));
    return m;
}

}  // namespace srigl
