// SPDX-License-Identifier: Apache-2.0
// Builds a small constant fan-in layer, condenses it and multiplies a vector.

#include <cstdio>
#include <vector>

#include "srigl/condensed.hpp"

int main() {
    srigl::DenseMaskedMatrix<float> m(3, 5);
    m.set(0, 1, 0.5f);
    m.set(0, 4, -1.0f);
    m.set(1, 0, 2.0f);
    m.set(1, 2, 1.5f);
    // row 2 stays empty: it is treated as an ablated neuron

    const auto c = srigl::from_dense(m);
    std::printf("n=%zu d=%zu k=%zu active=%zu\n", c.rows(), c.dense_cols(), c.fan_in(), c.n_active());

    const std::vector<float> v{1.0f, 2.0f, 3.0f, 4.0f, 5.0f};
    const auto y = srigl::condensed_matvec(c, std::span<const float>(v));
    for (std::size_t r = 0; r < y.size(); ++r) std::printf("y[%zu] = %g\n", r, static_cast<double>(y[r]));
}
