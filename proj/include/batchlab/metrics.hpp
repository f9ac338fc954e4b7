#pragma once

#include "batchlab/fixmatch.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace batchlab {

// One evaluation window. Empty optionals are ratios with a zero denominator
// and serialize as empty CSV fields.
struct MetricsRow {
    double epoch = 0.0;
    std::uint64_t samples_seen = 0;
    double lr = 0.0;
    std::optional<double> train_err_labeled;
    std::optional<double> val_acc;
    std::optional<double> test_err;
    std::optional<double> sup_loss;
    std::optional<double> unsup_loss;
    std::optional<double> mean_confidence_unlabeled;
    std::optional<double> pseudo_label_ratio;
    std::optional<double> unlabeled_pred_acc;
    std::optional<double> pseudo_label_acc;

    friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline constexpr std::array<std::string_view, 12> kMetricsColumns = {
    "epoch",      "samples_seen",      "lr",
    "train_err_labeled", "val_acc",    "test_err",
    "sup_loss",   "unsup_loss",        "mean_confidence_unlabeled",
    "pseudo_label_ratio", "unlabeled_pred_acc", "pseudo_label_acc"};

// Training-side sums over one window, pooled over tasks for the ratios.
class EpochAccumulator {
public:
    explicit EpochAccumulator(std::size_t num_tasks = 1);

    void add(const BatchStats& stats);
    void reset();

    std::size_t batches() const { return batches_; }
    std::size_t unlabeled_rows() const { return unlabeled_; }
    std::size_t kept_rows() const { return kept_; }
    std::size_t correct_unlabeled() const { return correct_unlabeled_; }
    std::size_t correct_kept() const { return correct_kept_; }

    // Sum over tasks of (sum CE over labeled rows) / (labeled rows).
    std::optional<double> sup_loss() const;
    // Sum over tasks of (sum CE over kept rows) / (unlabeled rows).
    std::optional<double> unsup_loss() const;
    std::optional<double> mean_confidence() const;
    std::optional<double> pseudo_label_ratio() const;
    std::optional<double> unlabeled_pred_acc() const;
    std::optional<double> pseudo_label_acc() const;

private:
    std::vector<double> sup_ce_;
    std::vector<std::size_t> labeled_per_task_;
    std::vector<double> unsup_ce_;
    std::vector<std::size_t> unlabeled_per_task_;
    std::size_t batches_ = 0;
    std::size_t unlabeled_ = 0;
    std::size_t kept_ = 0;
    std::size_t correct_unlabeled_ = 0;
    std::size_t correct_kept_ = 0;
    double confidence_sum_ = 0.0;
};

std::optional<double> safe_ratio(double numerator, std::size_t denominator);

// (accuracy over all unlabeled rows, accuracy over kept rows only).
std::pair<std::optional<double>, std::optional<double>>
privileged_accuracy(std::span<const int> predictions, std::span<const std::uint8_t> keep_mask,
                    std::span<const int> hidden_labels);

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

// Per-row teacher log: window, step, sample_id, task, prediction, confidence, kept, hidden_label.
struct LoggedRecord {
    std::size_t window = 0;
    std::uint64_t step = 0;
    PseudoLabelRecord record;
};

void write_pseudo_label_log(const std::filesystem::path& path, std::span<const LoggedRecord> rows);
std::vector<LoggedRecord> read_pseudo_label_log(const std::filesystem::path& path);

// Formats a double with 17 significant digits.
std::string format_double(double value);

}  // namespace batchlab
