// SPDX-License-Identifier: Apache-2.0
//
// srigl: command-line workbench.
//
//   srigl variance [--n 50,100,500] [--k 5,10,n/2,n] [--trials 50000] [--tolerance 0.1]
//   srigl train    [--config blobs.json]             (--out is a directory)
//   srigl bench    [--n 10] [--d 65536] [--sparsities ...] [--batches ...] [--repeats 10]
//   srigl flops    [--arch resnet50.json] [--sparsity 0.9] [--distribution erk]
//
// Global flags: --seed, --threads, --out. Relative fixture names resolve
// against $SRIGL_FIXTURES (or the source tree's fixtures/ directory).
//
// Exit codes: 0 ok, 2 usage/config error, 3 training diverged, 4 I/O error,
// 5 a result fell outside its tolerance.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "srigl/bench.hpp"
#include "srigl/error.hpp"
#include "srigl/flops.hpp"
#include "srigl/train.hpp"
#include "srigl/variance.hpp"

#ifndef SRIGL_DEFAULT_FIXTURES
#define SRIGL_DEFAULT_FIXTURES "fixtures"
#endif

namespace fs = std::filesystem;

namespace {

enum Exit : int { kOk = 0, kUsage = 2, kDiverged = 3, kIo = 4, kTolerance = 5 };

struct Globals {
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string out;
};

fs::path fixture_dir() {
    if (const char* env = std::getenv("SRIGL_FIXTURES"); env && *env) return env;
    return SRIGL_DEFAULT_FIXTURES;
}

/// Existing paths are used as given; bare names fall back to the fixture dir.
std::string resolve_fixture(const std::string& name) {
    if (fs::exists(name)) return name;
    const fs::path p = fixture_dir() / name;
    if (fs::exists(p)) return p.string();
    return name;
}

/// Writes to `path`, or stdout when it is empty or "-".
class Output {
public:
    explicit Output(const std::string& path) : path_(path) {
        if (path.empty() || path == "-") return;
        const fs::path parent = fs::path(path).parent_path();
        std::error_code ec;
        if (!parent.empty()) fs::create_directories(parent, ec);
        file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
        if (!*file_) srigl::fail(srigl::Errc::IoError, "cannot open " + path + " for writing");
    }
    std::ostream& stream() { return file_ ? *file_ : std::cout; }
    void close() {
        if (!file_) return;
        file_->close();
        if (!*file_) srigl::fail(srigl::Errc::IoError, "failed writing " + path_);
    }

private:
    std::string path_;
    std::unique_ptr<std::ofstream> file_;
};

int exit_code_for(srigl::Errc e) {
    switch (e) {
        case srigl::Errc::DivergenceDetected: return kDiverged;
        case srigl::Errc::IoError: return kIo;
        default: return kUsage;
    }
}

// variance ------------------------------------------------------------------

struct VarianceArgs {
    std::vector<std::size_t> ns = srigl::kDefaultVarianceNs;
    std::vector<std::string> ks = srigl::kDefaultVarianceKs;
    std::vector<std::string> kinds{"bernoulli", "constant_per_layer", "constant_fan_in"};
    std::size_t trials = 50000;
    double tolerance = 0.10;
};

int cmd_variance(const VarianceArgs& a, const Globals& g) {
    if (a.trials < srigl::kMinNormRatioTrials) {
        std::cerr << "variance: --trials must be at least " << srigl::kMinNormRatioTrials << "\n";
        return kUsage;
    }
    std::vector<srigl::SparsityKind> kinds;
    for (const auto& k : a.kinds) {
        const auto kind = srigl::parse_sparsity_kind(k);
        if (!kind) srigl::fail(srigl::Errc::ConfigError, "unknown sparsity kind '" + k + "'");
        kinds.push_back(*kind);
    }
    const auto rows = srigl::variance_grid(kinds, a.ns, a.ks, a.trials, g.seed);
    Output out(g.out);
    srigl::write_variance_csv(out.stream(), rows);
    out.close();

    int bad = 0;
    for (const auto& r : rows)
        if (!r.within(a.tolerance)) {
            ++bad;
            std::cerr << "out of tolerance: " << srigl::to_string(r.kind) << " n=" << r.n << " k=" << r.k
                      << " rel_err=" << r.relative_error() << " mean_z=" << r.mean_z() << "\n";
        }
    return bad ? kTolerance : kOk;
}

// train ---------------------------------------------------------------------

int cmd_train(const std::string& config_path, const Globals& g, bool seed_given) {
    const std::string path = resolve_fixture(config_path);
    std::ifstream in(path);
    if (!in) srigl::fail(srigl::Errc::IoError, "cannot open config " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        srigl::fail(srigl::Errc::ConfigError, path + ": " + e.what());
    }
    auto ec = srigl::parse_experiment_config(doc);
    if (seed_given) ec.seeds = {g.seed};

    const fs::path out_dir = g.out.empty() ? fs::path("srigl_run") : fs::path(g.out);
    std::error_code err;
    fs::create_directories(out_dir, err);
    if (err) srigl::fail(srigl::Errc::IoError, "cannot create " + out_dir.string() + ": " + err.message());

    std::vector<srigl::RunReport> runs;
    nlohmann::json reports = nlohmann::json::array();
    std::ofstream updates(out_dir / "updates.jsonl", std::ios::binary);
    if (!updates) srigl::fail(srigl::Errc::IoError, "cannot open " + (out_dir / "updates.jsonl").string());
    for (std::uint64_t seed : ec.seeds) {
        const auto data = srigl::load_data(ec.data, seed);
        for (srigl::TrainMode mode : ec.modes) {
            srigl::TrainConfig cfg = ec.train;
            cfg.seed = seed;
            cfg.mode = mode;
            auto report = srigl::train(cfg, data);
            std::cerr << srigl::to_string(mode) << " seed " << seed << ": test accuracy " << report.final_test_accuracy
                      << "\n";
            for (auto rec : report.update_records) {
                rec["mode"] = srigl::to_string(mode);
                rec["seed"] = seed;
                updates << rec.dump() << '\n';
            }
            auto j = srigl::to_json(report);
            j["threads"] = g.threads;
            reports.push_back(std::move(j));
            report.model = {};
            runs.push_back(std::move(report));
        }
    }
    updates.close();
    if (!updates) srigl::fail(srigl::Errc::IoError, "failed writing updates.jsonl");

    Output report_out((out_dir / "report.json").string());
    report_out.stream() << reports.dump(2) << '\n';
    report_out.close();
    Output metrics((out_dir / "metrics.csv").string());
    srigl::write_metrics_csv(metrics.stream(), runs);
    metrics.close();
    return kOk;
}

// bench ---------------------------------------------------------------------

int cmd_bench(srigl::BenchConfig cfg, const Globals& g) {
    cfg.seed = g.seed;
    cfg.threads = g.threads;
    const auto rows = srigl::run_bench(cfg);
    Output out(g.out);
    srigl::write_bench_csv(out.stream(), rows);
    out.close();
    return kOk;
}

// flops ---------------------------------------------------------------------

struct FlopsArgs {
    std::string arch = "resnet50.json";
    double sparsity = 0.0;
    std::string distribution = "uniform";
    std::uint64_t steps = 256000;
    std::uint64_t batch = 512;
    std::uint64_t delta_t = 100;
    double dense_grad_passes = 1.0;
};

int cmd_flops(const FlopsArgs& a, const Globals& g) {
    auto spec = srigl::load_architecture(resolve_fixture(a.arch));
    spec = srigl::with_sparsity(std::move(spec), a.sparsity, srigl::parse_distribution(a.distribution));
    Output out(g.out);
    srigl::write_flops_csv(out.stream(), spec);
    out.close();

    srigl::TrainingCostModel cost;
    cost.steps = a.steps;
    cost.batch = a.batch;
    cost.delta_t = a.delta_t;
    cost.dense_grad_passes = a.sparsity > 0.0 ? a.dense_grad_passes : 0.0;
    std::cerr << "inference_flops " << static_cast<double>(srigl::model_inference_flops(spec)) << "\n"
              << "training_flops " << srigl::training_flops(spec, cost) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Constant fan-in dynamic sparse training workbench"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Random seed")->default_val(0);
    app.add_option("--threads", g.threads, "Worker threads for batched kernels")->default_val(1)->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "Output file (variance/bench/flops) or directory (train)");

    VarianceArgs va;
    auto* variance = app.add_subcommand("variance", "Closed-form vs Monte Carlo output-norm variance");
    variance->add_option("--n", va.ns, "Layer widths")->delimiter(',');
    variance->add_option("--k", va.ks, "Fan-ins: integers, n/2 or n")->delimiter(',');
    variance->add_option("--kinds", va.kinds, "bernoulli, constant_per_layer, constant_fan_in")->delimiter(',');
    variance->add_option("--trials", va.trials, "Monte Carlo trials per cell")->default_val(va.trials);
    variance->add_option("--tolerance", va.tolerance, "Relative tolerance on the variance")->default_val(va.tolerance);

    std::string config = "blobs.json";
    auto* train = app.add_subcommand("train", "Dense / RigL / SRigL training runs");
    train->add_option("--config,config", config, "Experiment config (JSON)")->default_val(config);

    srigl::BenchConfig bc;
    auto* bench = app.add_subcommand("bench", "Condensed vs dense multiply timings");
    bench->add_option("--n", bc.n, "Output neurons")->default_val(bc.n);
    bench->add_option("--d", bc.d, "Input features")->default_val(bc.d);
    bench->add_option("--sparsities", bc.sparsities, "Sparsity levels")->delimiter(',');
    bench->add_option("--batches", bc.batches, "Batch sizes")->delimiter(',');
    bench->add_option("--repeats", bc.repeats, "Timed repeats (>= 5)")->default_val(bc.repeats);
    bench->add_option("--warmup", bc.warmup, "Untimed warmup calls")->default_val(bc.warmup);

    FlopsArgs fa;
    auto* flops = app.add_subcommand("flops", "Per-layer FLOPs report");
    flops->add_option("--arch", fa.arch, "Architecture file (JSON)")->default_val(fa.arch);
    flops->add_option("--sparsity", fa.sparsity, "Global sparsity")->default_val(fa.sparsity);
    flops->add_option("--distribution", fa.distribution, "uniform or erk")->default_val(fa.distribution);
    flops->add_option("--steps", fa.steps, "Training steps")->default_val(fa.steps);
    flops->add_option("--batch", fa.batch, "Training batch size")->default_val(fa.batch);
    flops->add_option("--delta-t", fa.delta_t, "Steps between mask updates")->default_val(fa.delta_t);
    flops->add_option("--dense-grad-passes", fa.dense_grad_passes, "Dense gradient batches per update")
        ->default_val(fa.dense_grad_passes);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*variance) return cmd_variance(va, g);
        if (*train) return cmd_train(config, g, app.get_option("--seed")->count() > 0);
        if (*bench) return cmd_bench(bc, g);
        if (*flops) return cmd_flops(fa, g);
    } catch (const srigl::Error& e) {
        std::cerr << "error [" << srigl::to_string(e.code()) << "]: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    }
    return kUsage;
}
