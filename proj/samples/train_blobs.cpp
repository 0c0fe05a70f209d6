// SPDX-License-Identifier: Apache-2.0
// Trains a 90% sparse SRigL MLP on a small Gaussian-blob task.

#include <cstdio>

#include "srigl/train.hpp"

int main() {
    srigl::BlobSpec blobs;
    blobs.dim = 32;
    blobs.clusters_per_class = 6;
    blobs.cluster_std = 1.0;
    const auto data = srigl::make_blobs(blobs, 7);

    srigl::TrainConfig cfg;
    cfg.total_steps = 1000;
    cfg.optimizer.lr.milestones = {500, 750};
    cfg.seed = 7;
    const auto report = srigl::train(cfg, data);

    for (const auto& p : report.curve)
        if (p.step % 200 == 0) std::printf("step %4zu  test acc %.4f  active neurons %zu\n", p.step, p.test_accuracy, p.n_active);
    for (std::size_t l = 0; l < report.layer_stats.size(); ++l)
        std::printf("layer %zu: %zu/%zu neurons active, fan-in %.0f\n", l, report.layer_stats[l].n_active,
                    report.layer_stats[l].n_neurons, report.layer_stats[l].fan_in_mean);
}
