#pragma once

#include "batchlab/config.hpp"
#include "batchlab/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace batchlab {

// $SSL_BATCHLAB_DIR, or ./runs when unset.
std::filesystem::path output_root();

// "seed{S}_split{P}".
std::string replicate_id(std::uint64_t seed, std::uint64_t split_seed);

// Headline numbers of one run, derived from its metrics rows only. The best
// window is the first with the highest val_acc, or the last window when no
// validation accuracy was logged.
struct RunSummary {
    std::optional<double> best_val_accuracy;
    std::optional<double> test_accuracy_at_best;
    std::optional<double> final_test_accuracy;
    double best_epoch = 0.0;
};

RunSummary summarize_rows(std::span<const MetricsRow> rows);

// Test accuracy dropping to near chance after its peak. Reported, never enforced.
struct CollapseReport {
    bool collapsed = false;
    double chance = 0.0;
    double peak_accuracy = 0.0;
    double peak_epoch = 0.0;
    double min_after_peak = 0.0;
    double collapse_epoch = 0.0;  // first window at or below chance + margin
};

CollapseReport detect_collapse(std::span<const MetricsRow> rows, double chance, double margin = 0.1);

// Mean and population standard deviation (0 for a single value).
struct Stat {
    double mean = 0.0;
    double std = 0.0;
    std::size_t count = 0;
};

std::optional<Stat> mean_std(std::span<const double> values);

struct ReplicateOutcome {
    std::string id;
    std::uint64_t seed = 0;
    std::uint64_t split_seed = 0;
    std::filesystem::path dir;
    RunSummary summary;
    CollapseReport collapse;
    std::uint64_t samples_seen = 0;
    std::uint64_t steps = 0;
};

struct ExperimentResult {
    std::string name;
    std::filesystem::path dir;
    std::vector<ReplicateOutcome> replicates;
    nlohmann::json summary;  // also written to summary.json
};

// Trains every (seed, split_seed) pair into `dir/<replicate_id>` and writes
// `dir/summary.json`. A relative train.init_checkpoint is resolved against
// output_root(). Run errors are re-thrown with the replicate id in the message.
ExperimentResult run_experiment(const RunConfig& cfg, const std::filesystem::path& dir,
                                std::size_t jobs = 1);

// Recomputes a summary from the replicate directories under `dir`.
nlohmann::json summarize_experiment(const std::filesystem::path& dir);

// Loads config.json next to `checkpoint`, starts from that checkpoint, applies
// the overrides and runs into output_root()/<name>. The default name is the
// original name with a "_resume" suffix.
ExperimentResult resume_experiment(const std::filesystem::path& checkpoint,
                                   const std::vector<std::string>& overrides, std::size_t jobs = 1);

struct TrialOutcome {
    std::size_t index = 0;
    std::map<std::string, double> values;
    bool failed = false;
    std::string error;
    std::optional<double> val_accuracy;
    std::optional<double> test_accuracy;
    nlohmann::json config;
};

struct SweepResult {
    std::vector<TrialOutcome> leaderboard;  // best first, failed trials last
    std::optional<std::size_t> best_trial;
};

// Samples trial_budget configurations from the master seed and trains each on
// the first seed and split of the base configuration. Writes trial_NNN/,
// leaderboard.csv and best_config.json under `dir`.
SweepResult run_sweep(const SweepSpec& spec, const std::filesystem::path& dir, std::size_t jobs = 1);

// Draws the parameter values of trial `index`.
std::map<std::string, double> sample_trial(const SweepSpec& spec, std::size_t index);

struct ExposureRow {
    Index sample_id = 0;
    std::string configuration;
    std::size_t exposure_count = 0;
    double expected_exposure = 0.0;
};

struct ExposureGroup {
    std::string configuration;
    std::size_t samples = 0;
    double mean_exposure = 0.0;
    double expected_exposure = 0.0;
};

struct AuditResult {
    std::size_t steps = 0;
    std::size_t batch_size = 0;
    std::vector<ExposureRow> rows;      // every training sample, by id
    std::vector<ExposureGroup> groups;  // descending configuration
    std::optional<double> labeled_unlabeled_ratio;  // fully labeled vs unlabeled mean exposure
};

// Replays `steps` batches of the configured sampler (default: one epoch,
// floor(N / B) steps) for the first seed and split.
AuditResult audit_sampler(const RunConfig& cfg, std::optional<std::size_t> steps = std::nullopt);
void write_audit_csv(const std::filesystem::path& path, const AuditResult& audit);

}  // namespace batchlab
