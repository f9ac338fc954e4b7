#include "batchlab/config.hpp"
#include "batchlab/error.hpp"
#include "batchlab/experiment.hpp"
#include "batchlab/plots.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace batchlab;

namespace {

std::string stat_text(const nlohmann::json& s) {
    if (s.is_null()) return "n/a";
    return fmt::format("{:.4f} +- {:.4f} (n={})", s["mean"].get<double>(), s["std"].get<double>(),
                       s["count"].get<std::size_t>());
}

void print_summary(const ExperimentResult& r) {
    fmt::print("{}: {} run(s) in {}\n", r.name, r.replicates.size(), r.dir.string());
    for (const auto& rep : r.replicates) {
        fmt::print("  {}  test@best={}  final_test={}", rep.id,
                   rep.summary.test_accuracy_at_best ? fmt::format("{:.4f}", *rep.summary.test_accuracy_at_best) : "n/a",
                   rep.summary.final_test_accuracy ? fmt::format("{:.4f}", *rep.summary.final_test_accuracy) : "n/a");
        if (rep.collapse.collapsed)
            fmt::print("  collapse: peak {:.4f} at epoch {:.2f}, near chance from epoch {:.2f}",
                       rep.collapse.peak_accuracy, rep.collapse.peak_epoch, rep.collapse.collapse_epoch);
        fmt::print("\n");
    }
    fmt::print("  best val accuracy:      {}\n", stat_text(r.summary["best_val_accuracy"]));
    fmt::print("  test accuracy at best:  {}\n", stat_text(r.summary["test_accuracy_at_best"]));
    fmt::print("  final test accuracy:    {}\n", stat_text(r.summary["final_test_accuracy"]));
}

RunConfig load_with_overrides(const fs::path& path, const std::vector<std::string>& overrides) {
    auto doc = read_json_file(path);
    for (const auto& o : overrides) apply_override(doc, o);
    try {
        return parse_run_config(doc);
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised batch-sampling lab"};
    app.require_subcommand(1);

    std::string config_path, spec_path, ckpt_path, run_dir, manifest, out_path;
    std::vector<std::string> overrides;
    std::size_t jobs = 1;
    std::optional<std::size_t> steps;
    bool log_loss = false;

    auto* run = app.add_subcommand("run", "Train every seed and split of a run configuration");
    run->add_option("config", config_path, "Run configuration (JSON)")->required();
    run->add_option("--override", overrides, "key=value applied to the configuration");
    run->add_option("--out", out_path, "Output directory (default: $SSL_BATCHLAB_DIR/<name>)");
    run->add_option("--jobs,-j", jobs, "Parallel runs")->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "Random hyperparameter search");
    sweep->add_option("spec", spec_path, "Sweep specification (JSON)")->required();
    sweep->add_option("--out", out_path, "Output directory (default: $SSL_BATCHLAB_DIR/<name>_sweep)");
    sweep->add_option("--jobs,-j", jobs, "Parallel trials")->check(CLI::PositiveNumber);

    auto* audit = app.add_subcommand("audit-sampler", "Count per-sample exposure of a sampling plan");
    audit->add_option("config", config_path, "Run configuration (JSON)")->required();
    audit->add_option("--steps", steps, "Number of batches (default: one epoch)");
    audit->add_option("--override", overrides, "key=value applied to the configuration");
    audit->add_option("--out", out_path, "CSV path (default: $SSL_BATCHLAB_DIR/<name>_audit.csv)");

    auto* plots = app.add_subcommand("export-plots", "Write the four training-curve panels as SVG");
    plots->add_option("dir", run_dir, "Run directory, or output directory with --compare")->required();
    plots->add_option("--compare", manifest, "Manifest of runs to overlay");
    plots->add_option("--out", out_path, "Output directory (default: <dir>/plots, or <dir> with --compare)");
    plots->add_flag("--log-loss", log_loss, "Log scale for the loss panel");

    auto* resume = app.add_subcommand("resume", "Continue training from a checkpoint");
    resume->add_option("checkpoint", ckpt_path, "ckpt_best or ckpt_final of a run")->required();
    resume->add_option("--override", overrides, "key=value applied to the stored configuration");
    resume->add_option("--jobs,-j", jobs, "Parallel runs")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) {
            const RunConfig cfg = load_with_overrides(config_path, overrides);
            const fs::path dir = out_path.empty() ? output_root() / cfg.name : fs::path(out_path);
            print_summary(run_experiment(cfg, dir, jobs));
        } else if (*sweep) {
            const SweepSpec spec = load_sweep_spec(spec_path);
            const std::string name = spec.base.value("name", std::string("run"));
            const fs::path dir = out_path.empty() ? output_root() / (name + "_sweep") : fs::path(out_path);
            const SweepResult r = run_sweep(spec, dir, jobs);
            std::size_t failed = 0;
            for (const auto& t : r.leaderboard) failed += t.failed ? 1 : 0;
            fmt::print("{} trial(s), {} failed; leaderboard in {}\n", r.leaderboard.size(), failed,
                       (dir / "leaderboard.csv").string());
            if (r.best_trial) {
                const auto& best = r.leaderboard.front();
                fmt::print("best: trial_{:03d} val_acc={}\n", best.index,
                           best.val_accuracy ? fmt::format("{:.4f}", *best.val_accuracy) : "n/a");
                fmt::print("best config: {}\n", (dir / "best_config.json").string());
            }
        } else if (*audit) {
            const RunConfig cfg = load_with_overrides(config_path, overrides);
            const AuditResult r = audit_sampler(cfg, steps);
            const fs::path csv =
                out_path.empty() ? output_root() / (cfg.name + "_audit.csv") : fs::path(out_path);
            if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
            write_audit_csv(csv, r);
            fmt::print("{} steps of B={} over {} training samples -> {}\n", r.steps, r.batch_size,
                       r.rows.size(), csv.string());
            fmt::print("configuration,samples,mean_exposure,expected_exposure\n");
            for (const auto& g : r.groups)
                fmt::print("{},{},{:.6g},{:.6g}\n", g.configuration, g.samples, g.mean_exposure,
                           g.expected_exposure);
            if (r.labeled_unlabeled_ratio)
                fmt::print("labeled:unlabeled exposure ratio {:.6g}\n", *r.labeled_unlabeled_ratio);
        } else if (*plots) {
            std::vector<PlotSeries> series;
            fs::path out;
            if (!manifest.empty()) {
                series = load_manifest(manifest);
                out = out_path.empty() ? fs::path(run_dir) : fs::path(out_path);
            } else {
                series.push_back(load_series(run_dir));
                out = out_path.empty() ? fs::path(run_dir) / "plots" : fs::path(out_path);
            }
            for (const auto& p : export_plots(series, out, log_loss)) fmt::print("{}\n", p.string());
        } else if (*resume) {
            print_summary(resume_experiment(ckpt_path, overrides, jobs));
        }
    } catch (const ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return 2;
    } catch (const SchemaError& e) {
        fmt::print(stderr, "schema error: {}\n", e.what());
        return 2;
    } catch (const SplitError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        fmt::print(stderr, "divergence: {}\n", e.what());
        return 3;
    } catch (const InfeasibleError& e) {
        fmt::print(stderr, "infeasible: {}\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 0;
}
