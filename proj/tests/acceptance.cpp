// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.
// IDX data for the image task is read from $SRIGL_IDX_DIR when set
// (train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-* alongside).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "srigl/bench.hpp"
#include "srigl/condensed.hpp"
#include "srigl/flops.hpp"
#include "srigl/rng.hpp"
#include "srigl/topology.hpp"
#include "srigl/train.hpp"
#include "srigl/variance.hpp"

using namespace srigl;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& what) {
    std::printf("AC%d %s  %s\n", id, ok ? "PASS" : "FAIL", what.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

void note(const std::string& line) { std::printf("      %s\n", line.c_str()); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

// 1 ---------------------------------------------------------------------------

void variance_grid_check() {
    const double t0 = cpu_seconds();
    const auto rows = variance_grid({std::begin(kAllSparsityKinds), std::end(kAllSparsityKinds)}, kDefaultVarianceNs,
                                    kDefaultVarianceKs, 50000, 1);
    const double cpu = cpu_seconds() - t0;
    bool ok = cpu < 120.0;
    double worst_rel = 0.0, worst_z = 0.0;
    for (const auto& r : rows) {
        worst_rel = std::max(worst_rel, r.relative_error());
        worst_z = std::max(worst_z, std::abs(r.mean_z()));
        if (!r.within(0.10, 3.0)) {
            ok = false;
            note(fmt("%s n=%zu k=%zu: closed %.5g mc %.5g mean_z %.2f", std::string(to_string(r.kind)).c_str(), r.n, r.k,
                     r.closed_form, r.mc.variance, r.mean_z()));
        }
    }
    verdict(1, ok,
            fmt("variance MC vs closed form: %zu cells, worst rel err %.4f (<0.10), worst |mean z| %.2f (<3), cpu %.1fs "
                "(<120s)",
                rows.size(), worst_rel, worst_z, cpu));
}

// 2, 3 ------------------------------------------------------------------------

void dominance_check() {
    std::size_t pairs = 0, bad = 0;
    for (std::size_t n = 1; n <= 1000; ++n)
        for (std::size_t k = 1; k <= n; ++k, ++pairs)
            if (variance_closed_form(SparsityKind::ConstantFanIn, {n, k}) >
                variance_closed_form(SparsityKind::Bernoulli, {n, k}))
                ++bad;
    verdict(2, bad == 0, fmt("Var(constant fan-in) <= Var(Bernoulli) on %zu (n,k) pairs, %zu violations", pairs, bad));
}

void coincidence_check() {
    double worst = 0.0;
    for (std::size_t n = 1; n <= 1000; ++n)
        for (SparsityKind kind : kAllSparsityKinds)
            worst = std::max(worst, std::abs(variance_closed_form(kind, {n, n}) - 5.0 / static_cast<double>(n)));
    verdict(3, worst <= 1e-12, fmt("closed forms equal 5/n at k=n for n<=1000, max abs diff %.3g", worst));
}

// 4 ---------------------------------------------------------------------------

DenseMaskedMatrix<float> random_fan_in(Rng& rng, std::size_t n, std::size_t d, std::size_t k) {
    std::normal_distribution<float> normal;
    DenseMaskedMatrix<float> m(n, d);
    std::vector<std::size_t> perm(d);
    for (std::size_t r = 0; r < n; ++r) {
        if (n > 1 && uniform_below(rng, 8) == 0) continue;
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(perm[i], perm[i + uniform_below(rng, d - i)]);
            m.set(r, perm[i], normal(rng));
        }
    }
    return m;
}

template <typename A, typename B>
double norm_rel(const std::vector<A>& a, const std::vector<B>& b) {
    double num = 0.0, den = 1e-30;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
        den = std::max(den, std::abs(static_cast<double>(b[i])));
    }
    return num / den;
}

void kernel_check() {
    Rng rng = make_rng(4);
    std::normal_distribution<float> normal;
    double worst = 0.0;
    std::size_t roundtrip_bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + uniform_below(rng, 64);
        const std::size_t d = 1 + uniform_below(rng, 256);
        const std::size_t k = 1 + uniform_below(rng, d);
        const auto m = random_fan_in(rng, n, d, k);
        const auto c = from_dense(m);
        std::vector<float> v(d);
        for (auto& x : v) x = normal(rng);
        worst = std::max(worst, norm_rel(condensed_matvec(c, std::span<const float>(v)),
                                         dense_masked_matvec(m, std::span<const float>(v))));
        Matrix<float> vb(d, 1 + uniform_below(rng, 8));
        for (auto& x : vb.data) x = normal(rng);
        worst = std::max(worst, norm_rel(condensed_matmul(c, vb).data, dense_masked_matmul(m, vb).data));

        std::stringstream ss;
        write_cfin(ss, c);
        const std::string bytes = ss.str();
        const auto back = read_cfin(ss);
        std::ostringstream again;
        write_cfin(again, back);
        if (!(back == c) || again.str() != bytes) ++roundtrip_bad;
    }
    verdict(4, worst <= 1e-6 && roundtrip_bad == 0,
            fmt("1000 random kernels vs dense oracle, max rel err %.3g (<=1e-6); CFIN round trips failed: %zu", worst,
                roundtrip_bad));
}

// 5 ---------------------------------------------------------------------------

bool golden_fixture() {
    DenseMaskedMatrix<double> m(3, 4);
    m.set(0, 0, 0.9);
    m.set(0, 1, -0.8);
    m.set(1, 2, 0.01);
    m.set(1, 3, -0.02);
    m.set(2, 0, 0.7);
    m.set(2, 3, 0.03);
    const auto layer = LayerTopology<double>::constant_fan_in(std::move(m));
    Matrix<double> g(3, 4);
    g.data = {0.1, 0.05, 0.5, -0.2, 0.3, -0.25, 0.01, 0.02, 0.4, -0.6, 0.35, 0.15};
    const auto sal = make_snapshot(layer, g, 2);
    if (count_salient(sal, layer) != std::vector<std::size_t>{3, 0, 1}) return false;
    const auto out = srigl_update(layer, sal, AblationPolicy{0.5});
    DenseMaskedMatrix<double> want(3, 4);
    want.set(0, 0, 0.9);
    want.set(0, 1, -0.8);
    want.set(0, 2, 0.0);
    want.set(2, 0, 0.0);
    want.set(2, 1, 0.0);
    want.set(2, 2, 0.0);
    return out.matrix == want && out.fan_in == 3 && out.active_rows == std::vector<std::uint8_t>{1, 0, 1};
}

void topology_check() {
    bool ok = true;
    std::string detail;
    for (double gamma : {0.0, 0.3, 0.5, 0.95}) {
        Rng rng = make_rng(5, static_cast<std::uint64_t>(gamma * 100));
        std::normal_distribution<double> normal;
        const std::size_t n = 32, d = 64;
        DenseMaskedMatrix<double> m(n, d);
        std::vector<std::size_t> perm(d);
        for (std::size_t r = 0; r < n; ++r) {
            std::iota(perm.begin(), perm.end(), 0);
            for (std::size_t i = 0; i < 8; ++i) {
                std::swap(perm[i], perm[i + uniform_below(rng, d - i)]);
                m.set(r, perm[i], normal(rng));
            }
        }
        auto layer = LayerTopology<double>::constant_fan_in(std::move(m));
        const AblationPolicy policy{gamma};
        std::size_t violations = 0;
        for (std::size_t step = 1; step <= 200; ++step) {
            for (std::size_t i = 0; i < layer.matrix.weights.size(); ++i)
                if (layer.matrix.mask[i]) layer.matrix.weights[i] += 0.1 * normal(rng);
            Matrix<double> grads(n, d);
            for (auto& v : grads.data) v = normal(rng);
            const std::size_t target = layer.nnz();
            const double f = 0.15 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / 200.0));
            try {
                layer = srigl_update(std::move(layer), make_snapshot(layer, grads, update_count(f, target)), policy, step);
                layer.check_invariants();
            } catch (const Error& e) {
                ++violations;
                detail = e.what();
                break;
            }
            const std::size_t active = layer.n_active();
            if (active == 0 || layer.nnz() != active * layer.fan_in || layer.nnz() > target ||
                target - layer.nnz() >= active)
                ++violations;
        }
        note(fmt("gamma_sal %.2f: %zu violations, final active %zu/%zu, fan-in %zu", gamma, violations,
                 layer.n_active(), n, layer.fan_in));
        ok = ok && violations == 0;
    }
    const bool golden = golden_fixture();
    verdict(5, ok && golden,
            fmt("200 randomized updates x 4 gamma values keep constant fan-in and nnz within n_active of target; "
                "golden fixture %s%s",
                golden ? "reproduced" : "MISMATCH", detail.empty() ? "" : (" (" + detail + ")").c_str()));
}

// 6 ---------------------------------------------------------------------------

double gradient_check() {
    Rng rng = make_rng(6);
    std::normal_distribution<double> normal;
    double worst = 0.0;
    for (TrainMode mode : {TrainMode::Dense, TrainMode::RigL, TrainMode::SRigL}) {
        auto model = build_mlp({6, 4, 3}, {0.5, 0.5}, mode, rng);
        for (auto& l : model.layers)
            for (auto& b : l.bias) b = 0.1 * normal(rng);
        Matrix<double> x(6, 5);
        for (auto& v : x.data) v = normal(rng);
        std::vector<int> y(5);
        for (auto& v : y) v = static_cast<int>(uniform_below(rng, 3));
        const auto g = backward(model, forward(model, x), y);
        for (int i = 0; i < 20; ++i) {
            const std::size_t l = uniform_below(rng, 2);
            auto& mat = model.layers[l].topo.matrix;
            const bool bias = uniform_below(rng, 4) == 0;
            std::size_t idx = 0;
            if (bias) {
                idx = uniform_below(rng, model.layers[l].bias.size());
            } else {
                do idx = uniform_below(rng, mat.weights.size());
                while (!mat.mask[idx]);
            }
            double& w = bias ? model.layers[l].bias[idx] : mat.weights[idx];
            const double saved = w, h = 1e-5;
            w = saved + h;
            const double up = cross_entropy(forward(model, x).logits(), y);
            w = saved - h;
            const double down = cross_entropy(forward(model, x).logits(), y);
            w = saved;
            const double numeric = (up - down) / (2 * h);
            const double analytic = bias ? g.bias[l][idx] : g.weights[l].data[idx];
            worst = std::max(worst, std::abs(numeric - analytic) /
                                        std::max(std::abs(numeric) + std::abs(analytic), 1e-7));
        }
    }
    return worst;
}

struct TaskResult {
    std::map<TrainMode, double> mean_accuracy;
    bool ok = false;
};

TaskResult run_task(const ExperimentConfig& ec, const std::string& name) {
    TaskResult res;
    for (TrainMode mode : {TrainMode::Dense, TrainMode::RigL, TrainMode::SRigL}) {
        double sum = 0.0;
        std::string per_seed;
        for (std::uint64_t seed : ec.seeds) {
            TrainConfig cfg = ec.train;
            cfg.mode = mode;
            cfg.seed = seed;
            const auto r = train(cfg, load_data(ec.data, seed));
            sum += 100.0 * r.final_test_accuracy;
            per_seed += fmt(" %.2f", 100.0 * r.final_test_accuracy);
        }
        res.mean_accuracy[mode] = sum / static_cast<double>(ec.seeds.size());
        note(fmt("%s %-5s mean %.2f%% (seeds:%s)", name.c_str(), std::string(to_string(mode)).c_str(), res.mean_accuracy[mode],
                 per_seed.c_str()));
    }
    const double dense = res.mean_accuracy[TrainMode::Dense];
    const double rigl = res.mean_accuracy[TrainMode::RigL];
    const double srigl = res.mean_accuracy[TrainMode::SRigL];
    res.ok = srigl >= rigl - 2.0 && srigl >= dense - 3.0 && rigl >= dense - 3.0;
    return res;
}

void training_check() {
    const double t0 = cpu_seconds();
    const double grad_err = gradient_check();
    note(fmt("finite-difference gradient check: worst rel err %.3g", grad_err));

    std::ifstream in(std::string(SRIGL_FIXTURE_DIR) + "/blobs.json");
    nlohmann::json doc;
    in >> doc;
    const auto blobs = run_task(parse_experiment_config(doc), "blobs");
    bool ok = blobs.ok && grad_err < 1e-4;

    std::string idx_status = "IDX task skipped (SRIGL_IDX_DIR not set)";
    if (const char* dir = std::getenv("SRIGL_IDX_DIR"); dir && *dir) {
        const std::filesystem::path p(dir);
        auto ec = parse_experiment_config(doc);
        ec.data.kind = "idx";
        ec.data.train_images = (p / "train-images-idx3-ubyte").string();
        ec.data.train_labels = (p / "train-labels-idx1-ubyte").string();
        ec.data.test_images = (p / "t10k-images-idx3-ubyte").string();
        ec.data.test_labels = (p / "t10k-labels-idx1-ubyte").string();
        if (std::filesystem::exists(ec.data.train_images)) {
            const auto idx = run_task(ec, "idx");
            ok = ok && idx.ok;
            idx_status = std::string("IDX task ") + (idx.ok ? "within margins" : "OUTSIDE margins");
        } else {
            idx_status = "IDX task skipped (files not found in SRIGL_IDX_DIR)";
        }
    }
    const double cpu = cpu_seconds() - t0;
    verdict(6, ok,
            fmt("blobs @90%%, 3 seeds: srigl %.2f >= rigl %.2f - 2, both >= dense %.2f - 3; grad check %.2g < 1e-4; %s; "
                "cpu %.0fs",
                blobs.mean_accuracy.at(TrainMode::SRigL), blobs.mean_accuracy.at(TrainMode::RigL),
                blobs.mean_accuracy.at(TrainMode::Dense), grad_err, idx_status.c_str(), cpu));
}

// 7 ---------------------------------------------------------------------------

void flops_check() {
    const auto dense = load_architecture(std::string(SRIGL_FIXTURE_DIR) + "/resnet50.json");
    const auto erk = with_sparsity(dense, 0.9, SparsityDistribution::Erk);
    const double inf_dense = static_cast<double>(model_inference_flops(dense));
    const double inf_erk = static_cast<double>(model_inference_flops(erk));
    TrainingCostModel cost;
    cost.steps = 256000;
    cost.batch = 512;
    cost.dense_grad_passes = 0.0;
    const double train_dense = training_flops(dense, cost);
    cost.dense_grad_passes = 1.0;
    const double train_erk = training_flops(erk, cost);
    const bool ok = std::abs(inf_dense / 8.20e9 - 1.0) <= 0.10 && std::abs(train_dense / 3.15e18 - 1.0) <= 0.15 &&
                    std::abs(inf_erk / 1.99e9 - 1.0) <= 0.15;
    note(fmt("90%% ERK training %.3g (reference 0.77e18)", train_erk));
    verdict(7, ok,
            fmt("ResNet-50 dense inference %.3g (8.20e9 +-10%%), dense training %.3g (3.15e18 +-15%%), 90%% ERK "
                "inference %.3g (1.99e9 +-15%%)",
                inf_dense, train_dense, inf_erk));
}

// 8 ---------------------------------------------------------------------------

void bench_check() {
    BenchConfig cfg;  // n=10, d=65536, sparsities .90/.95/.99, batches 1..256
    const auto rows = run_bench(cfg);
    std::ostringstream csv;
    write_bench_csv(csv, rows);
    bool ok = csv.str().rfind(kBenchCsvHeader, 0) == 0;
    std::map<std::size_t, std::vector<const BenchRow*>> condensed;
    for (const auto& r : rows) {
        ok = ok && r.repeats >= kMinBenchRepeats && std::isfinite(r.mean_s) && std::isfinite(r.std_s);
        if (r.impl == "condensed") condensed[r.batch].push_back(&r);
    }
    std::string crossover;
    for (const auto& [batch, rs] : condensed) {
        for (std::size_t i = 1; i < rs.size(); ++i)
            if (rs[i]->mean_s > rs[i - 1]->mean_s) {
                ok = false;
                note(fmt("batch %zu: condensed %.2f%% %.3gs > %.2f%% %.3gs", batch, 100 * rs[i]->sparsity, rs[i]->mean_s,
                         100 * rs[i - 1]->sparsity, rs[i - 1]->mean_s));
            }
    }
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].impl == "dense" && rows[i].sparsity == 0.9) {
            const auto& c = *condensed[rows[i].batch].front();
            note(fmt("batch %3zu: dense %.3gs, condensed@90%% %.3gs (%.1fx)", rows[i].batch, rows[i].mean_s, c.mean_s,
                     rows[i].mean_s / c.mean_s));
        }
    verdict(8, ok,
            fmt("bench n=10 d=65536: condensed runtime non-increasing 90%%->95%%->99%% at %zu batch sizes, repeats %zu "
                ">= 5 with mean/std",
                condensed.size(), cfg.repeats));
}

}  // namespace

int main() {
    const auto wall0 = std::chrono::steady_clock::now();
    const std::pair<int, void (*)()> checks[] = {{1, variance_grid_check}, {2, dominance_check}, {3, coincidence_check},
                                                 {4, kernel_check},        {5, topology_check},  {6, training_check},
                                                 {7, flops_check},         {8, bench_check}};
    for (const auto& [id, fn] : checks) {
        try {
            fn();
        } catch (const std::exception& e) {
            verdict(id, false, std::string("threw: ") + e.what());
        }
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    std::printf("acceptance: %d of 8 criteria failed, %.0fs wall\n", failures, wall);
    return failures ? 1 : 0;
}
