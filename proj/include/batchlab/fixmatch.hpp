#pragma once

#include "batchlab/augment.hpp"
#include "batchlab/nnet.hpp"
#include "batchlab/rng.hpp"
#include "batchlab/sampler.hpp"
#include "batchlab/synthdata.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace batchlab {

enum class SupervisedAug { weak, strong };
enum class TeacherSource { live, ema };

SupervisedAug parse_supervised_aug(std::string_view name);
TeacherSource parse_teacher_source(std::string_view name);
std::string_view to_string(SupervisedAug aug);
std::string_view to_string(TeacherSource source);

struct FixmatchConfig {
    double tau = 0.95;
    double lambda_u = 1.0;
    double lambda_s = 1.0;
    SupervisedAug supervised_aug = SupervisedAug::weak;
    TeacherSource teacher = TeacherSource::live;

    void validate() const;
};

struct PseudoLabelBatch {
    std::vector<int> pseudo_labels;
    std::vector<std::uint8_t> keep_mask;  // confidence >= tau
    std::vector<double> confidences;

    std::size_t size() const { return pseudo_labels.size(); }
    std::size_t kept() const;
};

// Teacher logits are treated as constants; nothing here feeds a gradient.
PseudoLabelBatch make_pseudo_labels(const Eigen::MatrixXd& teacher_logits, double tau);

struct LossTerm {
    double loss = 0.0;
    Eigen::MatrixXd grad;        // dloss/dlogits, same shape as the logits
    Eigen::VectorXd per_row_ce;  // per-row cross-entropy (0 for unused rows)
};

// Mean cross-entropy over the given rows; 0 with zero gradient for no rows.
LossTerm supervised_loss(const Eigen::MatrixXd& student_logits, std::span<const int> labels);

// Sum of cross-entropy over kept rows divided by u_count (kept + masked rows).
// 0 when u_count is 0 or nothing is kept.
LossTerm unsupervised_loss(const Eigen::MatrixXd& student_logits, const PseudoLabelBatch& plb,
                           std::size_t u_count);

// Gathered features and label state of one batch. `true_labels` holds the
// ground truth for every row; rows not marked in `labeled` are only read by
// the privileged statistics.
struct BatchData {
    IndexList ids;
    Eigen::MatrixXd x;
    std::vector<std::vector<std::uint8_t>> labeled;  // [task][row]
    std::vector<std::vector<int>> true_labels;       // [task][row]

    std::size_t rows() const { return ids.size(); }
};

BatchData gather_batch(const Dataset& data, const Batch& batch);

struct PseudoLabelRecord {
    Index id = 0;
    std::size_t task = 0;
    int prediction = 0;
    double confidence = 0.0;
    bool kept = false;
    int hidden_label = 0;
};

struct TaskBatchStats {
    std::size_t labeled_rows = 0;
    std::size_t unlabeled_rows = 0;  // u_count
    std::size_t kept_rows = 0;
    std::size_t correct_unlabeled = 0;  // teacher prediction == hidden label
    std::size_t correct_kept = 0;
    double sup_loss = 0.0;         // L_s for this task
    double unsup_loss = 0.0;       // L_u for this task
    double sup_ce_sum = 0.0;       // sum of CE over labeled rows
    double unsup_ce_sum = 0.0;     // sum of CE over kept rows
    double confidence_sum = 0.0;   // over unlabeled rows
};

struct BatchStats {
    std::vector<TaskBatchStats> tasks;
    std::vector<PseudoLabelRecord> records;  // filled only when requested
};

// Per-task pseudo-labels for the rows unlabeled in that task.
struct TeacherOutput {
    std::vector<std::vector<std::size_t>> unlabeled_rows;  // [task] -> batch rows
    std::vector<PseudoLabelBatch> pseudo;                  // [task]
};

TeacherOutput teacher_pass(const Eigen::MatrixXd& teacher_logits, const MlpParams& layout,
                           const BatchData& batch, double tau);

struct Objective {
    double total = 0.0;
    double sup_loss = 0.0;    // sum over tasks of L_s
    double unsup_loss = 0.0;  // sum over tasks of L_u
    GradBuffer grads;
    std::vector<TaskBatchStats> tasks;
};

// lambda_s * L_s + lambda_u * L_u summed over tasks, with its exact gradient
// for fixed pseudo-labels. `weak_cache` may carry a forward pass of `params`
// on `weak_x`; it is recomputed when absent.
Objective fixmatch_objective(const MlpParams& params, const Eigen::MatrixXd& weak_x,
                             const std::optional<Eigen::MatrixXd>& strong_x, const BatchData& batch,
                             const TeacherOutput& teacher, const FixmatchConfig& cfg,
                             const ForwardCache* weak_cache = nullptr);

struct StepResult {
    double total_loss = 0.0;
    double sup_loss = 0.0;
    double unsup_loss = 0.0;
    GradBuffer grads;
    BatchStats stats;
};

// One FixMatch step: weak view for the teacher, strong view for the student.
// `teacher` defaults to `params` (live model with stop-gradient).
StepResult step_loss(const MlpParams& params, const BatchData& batch, const FixmatchConfig& cfg,
                     const AugmentConfig& aug, const Eigen::RowVectorXd& feature_std, Rng& rng,
                     const MlpParams* teacher = nullptr, bool record_rows = false);

}  // namespace batchlab
