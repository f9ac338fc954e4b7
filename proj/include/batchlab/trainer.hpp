#pragma once

#include "batchlab/augment.hpp"
#include "batchlab/fixmatch.hpp"
#include "batchlab/metrics.hpp"
#include "batchlab/nnet.hpp"
#include "batchlab/sampler.hpp"
#include "batchlab/synthdata.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace batchlab {

enum class LrSchedule {
    cosine,           // lr0 * 0.5 * (1 + cos(pi * step / total))
    fixmatch_cosine,  // lr0 * cos(7 pi * step / (16 total))
};

LrSchedule parse_lr_schedule(std::string_view name);
std::string_view to_string(LrSchedule schedule);

struct TrainConfig {
    double lr0 = 0.03;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double budget_epochs = 100.0;
    double budget_multiplier = 1.0;  // e.g. 6 for a "6x" run
    double eval_every = 1.0;         // epochs per metrics window
    double ema_decay = 0.999;
    std::vector<std::size_t> hidden{64, 64};
    LrSchedule lr_schedule = LrSchedule::cosine;
    std::string init_checkpoint;  // empty = fresh initialization; relative paths are resolved by the caller
    bool reset_schedule = true;   // with init_checkpoint: restart budget and schedule at zero

    void validate() const;
};

struct OptState {
    GradBuffer velocity;
    std::uint64_t step = 0;
};

OptState make_opt_state(const MlpParams& params);

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr0);
double scheduled_lr(LrSchedule schedule, std::uint64_t step, std::uint64_t total_steps, double lr0);

// grads += weight_decay * W for weight matrices; biases are not decayed.
void add_weight_decay(GradBuffer& grads, const MlpParams& params, double weight_decay);

// g~ = g + wd*W; v <- mu*v - lr*g~; p <- p + mu*v - lr*g~.
// Throws DivergenceError on a non-finite gradient.
void sgd_nesterov_step(MlpParams& params, const GradBuffer& grads, OptState& opt, double lr,
                       double momentum, double weight_decay);

bool all_finite(const MlpParams& tensors);

struct Checkpoint {
    MlpParams params;
    MlpParams ema;
    OptState opt;
    BudgetLedger ledger;
};

inline constexpr std::string_view kCheckpointMagic = "ssl-batchlab-ckpt";
inline constexpr std::string_view kCheckpointHeader = "ssl-batchlab-ckpt v1";

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct MetricsConfig {
    bool row_log = false;  // write pseudo_labels.csv with one line per teacher prediction
};

// Everything one training run needs.
struct RunSetup {
    DataConfig data;
    SamplerConfig sampler;
    AugmentConfig augment;
    FixmatchConfig fixmatch;
    TrainConfig train;
    MetricsConfig metrics;
    std::uint64_t seed = 0;        // init, sampling and augmentation
    std::uint64_t split_seed = 0;  // labeled subset selection
};

// Accuracy of `params` on `rows`, pooled over all tasks.
std::optional<double> evaluate_accuracy(const MlpParams& params, const Dataset& data,
                                        std::span<const Index> rows);
// Accuracy on labeled (sample, task) pairs only.
std::optional<double> evaluate_labeled_accuracy(const MlpParams& params, const Dataset& data,
                                                const DataSplit& split);

struct RunResult {
    std::optional<double> best_val_accuracy;
    std::optional<double> test_accuracy_at_best;
    std::optional<double> final_test_accuracy;
    double best_epoch = 0.0;
    std::uint64_t samples_seen = 0;
    std::uint64_t budget_samples = 0;
    std::uint64_t steps = 0;
    std::vector<MetricsRow> rows;
    std::filesystem::path metrics_path;
    std::filesystem::path ckpt_best;
    std::filesystem::path ckpt_final;
};

// Runs the full loop; when `out_dir` is set, writes metrics.csv, ckpt_best,
// ckpt_final (and pseudo_labels.csv with metrics.row_log) into it.
RunResult train(const RunSetup& setup, const std::optional<std::filesystem::path>& out_dir);

}  // namespace batchlab
