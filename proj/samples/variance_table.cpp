// SPDX-License-Identifier: Apache-2.0
// Prints the closed-form output-norm variance of the three mask families.

#include <cstdio>

#include "srigl/variance.hpp"

int main() {
    const std::size_t n = 100;
    std::printf("%6s %12s %12s %12s\n", "k", "bernoulli", "per_layer", "fan_in");
    for (std::size_t k : {1, 5, 10, 25, 50, 100}) {
        const srigl::VarianceParams p{n, k};
        std::printf("%6zu %12.6f %12.6f %12.6f\n", k,
                    srigl::variance_closed_form(srigl::SparsityKind::Bernoulli, p),
                    srigl::variance_closed_form(srigl::SparsityKind::ConstantPerLayer, p),
                    srigl::variance_closed_form(srigl::SparsityKind::ConstantFanIn, p));
    }
}
