#include "batchlab/fixmatch.hpp"

#include "batchlab/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace batchlab {

SupervisedAug parse_supervised_aug(std::string_view name) {
    if (name == "weak") return SupervisedAug::weak;
    if (name == "strong") return SupervisedAug::strong;
    throw ConfigError(fmt::format("unknown supervised augmentation '{}'", name));
}

TeacherSource parse_teacher_source(std::string_view name) {
    if (name == "live") return TeacherSource::live;
    if (name == "ema") return TeacherSource::ema;
    throw ConfigError(fmt::format("unknown teacher source '{}'", name));
}

std::string_view to_string(SupervisedAug aug) { return aug == SupervisedAug::weak ? "weak" : "strong"; }

std::string_view to_string(TeacherSource source) {
    return source == TeacherSource::live ? "live" : "ema";
}

void FixmatchConfig::validate() const {
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("fixmatch.tau must lie in (0, 1]");
    if (!(lambda_u >= 0.0) || !std::isfinite(lambda_u))
        throw ConfigError("fixmatch.lambda_u must be finite and >= 0");
    if (!(lambda_s >= 0.0) || !std::isfinite(lambda_s))
        throw ConfigError("fixmatch.lambda_s must be finite and >= 0");
}

std::size_t PseudoLabelBatch::kept() const {
    std::size_t n = 0;
    for (auto k : keep_mask) n += k;
    return n;
}

PseudoLabelBatch make_pseudo_labels(const Eigen::MatrixXd& teacher_logits, double tau) {
    const Prediction pred = predict_from_logits(teacher_logits);
    PseudoLabelBatch out;
    out.pseudo_labels = pred.classes;
    out.confidences = pred.confidences;
    out.keep_mask.resize(pred.classes.size());
    for (std::size_t i = 0; i < pred.classes.size(); ++i)
        out.keep_mask[i] = pred.confidences[i] >= tau ? 1 : 0;
    return out;
}

LossTerm supervised_loss(const Eigen::MatrixXd& student_logits, std::span<const int> labels) {
    const auto rows = static_cast<std::size_t>(student_logits.rows());
    if (labels.size() != rows) throw ConfigError("one label per labeled row is required");
    LossTerm out;
    if (rows == 0) {
        out.grad = Eigen::MatrixXd::Zero(0, student_logits.cols());
        out.per_row_ce = Eigen::VectorXd::Zero(0);
        return out;
    }
    const std::vector<double> weights(rows, 1.0 / static_cast<double>(rows));
    auto xent = softmax_xent(student_logits, labels, weights);
    out.loss = xent.loss;
    out.grad = std::move(xent.grad);
    out.per_row_ce = std::move(xent.per_row_ce);
    return out;
}

LossTerm unsupervised_loss(const Eigen::MatrixXd& student_logits, const PseudoLabelBatch& plb,
                           std::size_t u_count) {
    const auto rows = static_cast<std::size_t>(student_logits.rows());
    if (plb.size() != rows) throw ConfigError("one pseudo-label per unlabeled row is required");
    LossTerm out;
    out.grad = Eigen::MatrixXd::Zero(student_logits.rows(), student_logits.cols());
    out.per_row_ce = Eigen::VectorXd::Zero(student_logits.rows());
    if (u_count == 0 || rows == 0) return out;
    std::vector<double> weights(rows, 0.0);
    const double w = 1.0 / static_cast<double>(u_count);
    for (std::size_t i = 0; i < rows; ++i)
        if (plb.keep_mask[i]) weights[i] = w;
    auto xent = softmax_xent(student_logits, plb.pseudo_labels, weights);
    // Sum kept CE first, then normalize, so the value is exactly (sum CE) / u_count.
    double kept_sum = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
        if (plb.keep_mask[i]) {
            kept_sum += xent.per_row_ce(static_cast<Eigen::Index>(i));
            out.per_row_ce(static_cast<Eigen::Index>(i)) = xent.per_row_ce(static_cast<Eigen::Index>(i));
        }
    out.loss = kept_sum / static_cast<double>(u_count);
    out.grad = std::move(xent.grad);
    return out;
}

BatchData gather_batch(const Dataset& data, const Batch& batch) {
    BatchData out;
    out.ids = batch.indices;
    out.labeled = batch.labeled;
    const auto rows = static_cast<Eigen::Index>(batch.indices.size());
    out.x.resize(rows, static_cast<Eigen::Index>(data.dim()));
    out.true_labels.assign(data.num_tasks(), std::vector<int>(batch.indices.size()));
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Index id = batch.indices[static_cast<std::size_t>(i)];
        out.x.row(i) = data.features.row(static_cast<Eigen::Index>(id));
        for (std::size_t t = 0; t < data.num_tasks(); ++t)
            out.true_labels[t][static_cast<std::size_t>(i)] = data.labels[t][id];
    }
    return out;
}

namespace {

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows,
                            const HeadSlice& head) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(head.width));
    for (std::size_t k = 0; k < rows.size(); ++k)
        out.row(static_cast<Eigen::Index>(k)) =
            m.block(static_cast<Eigen::Index>(rows[k]), static_cast<Eigen::Index>(head.offset), 1,
                    static_cast<Eigen::Index>(head.width));
    return out;
}

void scatter_rows(Eigen::MatrixXd& target, const Eigen::MatrixXd& src,
                  const std::vector<std::size_t>& rows, const HeadSlice& head, double scale) {
    for (std::size_t k = 0; k < rows.size(); ++k)
        target.block(static_cast<Eigen::Index>(rows[k]), static_cast<Eigen::Index>(head.offset), 1,
                     static_cast<Eigen::Index>(head.width)) += scale * src.row(static_cast<Eigen::Index>(k));
}

bool has_unlabeled(const BatchData& batch) {
    for (const auto& mask : batch.labeled)
        for (auto m : mask)
            if (!m) return true;
    return false;
}

bool has_labeled(const BatchData& batch) {
    for (const auto& mask : batch.labeled)
        for (auto m : mask)
            if (m) return true;
    return false;
}

void accumulate(GradBuffer& into, const GradBuffer& add) {
    zip_tensors(into, add, [](auto& a, const auto& b, bool) { a += b; });
}

}  // namespace

TeacherOutput teacher_pass(const Eigen::MatrixXd& teacher_logits, const MlpParams& layout,
                           const BatchData& batch, double tau) {
    TeacherOutput out;
    out.unlabeled_rows.resize(layout.num_tasks());
    out.pseudo.resize(layout.num_tasks());
    for (std::size_t t = 0; t < layout.num_tasks(); ++t) {
        for (std::size_t i = 0; i < batch.rows(); ++i)
            if (!batch.labeled[t][i]) out.unlabeled_rows[t].push_back(i);
        out.pseudo[t] = make_pseudo_labels(
            select_rows(teacher_logits, out.unlabeled_rows[t], layout.heads[t]), tau);
    }
    return out;
}

Objective fixmatch_objective(const MlpParams& params, const Eigen::MatrixXd& weak_x,
                             const std::optional<Eigen::MatrixXd>& strong_x, const BatchData& batch,
                             const TeacherOutput& teacher, const FixmatchConfig& cfg,
                             const ForwardCache* weak_cache) {
    const bool sup_on_strong = cfg.supervised_aug == SupervisedAug::strong;
    const bool need_weak = !sup_on_strong && has_labeled(batch);
    const bool need_strong = sup_on_strong || has_unlabeled(batch);
    if (need_strong && !strong_x) throw ConfigError("strong view required but not provided");
    if (batch.labeled.size() != params.num_tasks())
        throw ConfigError("batch label masks do not match the number of task heads");

    std::optional<ForwardCache> own_weak;
    const ForwardCache* weak = nullptr;
    if (need_weak) {
        if (weak_cache != nullptr && weak_cache->params == &params &&
            weak_cache->revision == params.revision) {
            weak = weak_cache;
        } else {
            own_weak = forward(params, weak_x);
            weak = &*own_weak;
        }
    }
    std::optional<ForwardCache> strong;
    if (need_strong) strong = forward(params, *strong_x);

    const auto rows = static_cast<Eigen::Index>(batch.rows());
    const auto width = static_cast<Eigen::Index>(params.output_dim());
    Eigen::MatrixXd d_weak = Eigen::MatrixXd::Zero(need_weak ? rows : 0, width);
    Eigen::MatrixXd d_strong = Eigen::MatrixXd::Zero(need_strong ? rows : 0, width);

    Objective out;
    out.tasks.resize(params.num_tasks());
    for (std::size_t t = 0; t < params.num_tasks(); ++t) {
        const HeadSlice& head = params.heads[t];
        auto& stats = out.tasks[t];

        std::vector<std::size_t> labeled_rows;
        std::vector<int> labels;
        for (std::size_t i = 0; i < batch.rows(); ++i)
            if (batch.labeled[t][i]) {
                labeled_rows.push_back(i);
                labels.push_back(batch.true_labels[t][i]);
            }
        stats.labeled_rows = labeled_rows.size();
        if (!labeled_rows.empty()) {
            const Eigen::MatrixXd& src = sup_on_strong ? strong->logits : weak->logits;
            const LossTerm sup = supervised_loss(select_rows(src, labeled_rows, head), labels);
            stats.sup_loss = sup.loss;
            stats.sup_ce_sum = sup.per_row_ce.sum();
            if (cfg.lambda_s != 0.0)
                scatter_rows(sup_on_strong ? d_strong : d_weak, sup.grad, labeled_rows, head, cfg.lambda_s);
        }

        const auto& u_rows = teacher.unlabeled_rows[t];
        const auto& plb = teacher.pseudo[t];
        stats.unlabeled_rows = u_rows.size();
        stats.kept_rows = plb.kept();
        if (!u_rows.empty()) {
            const LossTerm unsup =
                unsupervised_loss(select_rows(strong->logits, u_rows, head), plb, u_rows.size());
            stats.unsup_loss = unsup.loss;
            stats.unsup_ce_sum = unsup.per_row_ce.sum();
            if (cfg.lambda_u != 0.0) scatter_rows(d_strong, unsup.grad, u_rows, head, cfg.lambda_u);
        }

        out.sup_loss += stats.sup_loss;
        out.unsup_loss += stats.unsup_loss;
        out.total += cfg.lambda_s * stats.sup_loss + cfg.lambda_u * stats.unsup_loss;
    }

    const bool weak_grad = need_weak && cfg.lambda_s != 0.0;
    const bool strong_grad =
        need_strong && ((sup_on_strong && cfg.lambda_s != 0.0) || cfg.lambda_u != 0.0);
    if (weak_grad && strong_grad) {
        out.grads = backward(params, *weak, d_weak);
        accumulate(out.grads, backward(params, *strong, d_strong));
    } else if (weak_grad) {
        out.grads = backward(params, *weak, d_weak);
    } else if (strong_grad) {
        out.grads = backward(params, *strong, d_strong);
    } else {
        out.grads = zeros_like(params);
    }
    return out;
}

StepResult step_loss(const MlpParams& params, const BatchData& batch, const FixmatchConfig& cfg,
                     const AugmentConfig& aug, const Eigen::RowVectorXd& feature_std, Rng& rng,
                     const MlpParams* teacher, bool record_rows) {
    const MlpParams& teacher_params = teacher != nullptr ? *teacher : params;
    const Eigen::MatrixXd weak_x = weak_augment(batch.x, aug, feature_std, rng);
    std::optional<Eigen::MatrixXd> strong_x;
    if (cfg.supervised_aug == SupervisedAug::strong || has_unlabeled(batch))
        strong_x = strong_augment(batch.x, aug, feature_std, rng);

    const ForwardCache teacher_cache = forward(teacher_params, weak_x);
    const TeacherOutput t_out = teacher_pass(teacher_cache.logits, params, batch, cfg.tau);

    Objective obj = fixmatch_objective(params, weak_x, strong_x, batch, t_out, cfg,
                                       &teacher_params == &params ? &teacher_cache : nullptr);

    StepResult result;
    result.total_loss = obj.total;
    result.sup_loss = obj.sup_loss;
    result.unsup_loss = obj.unsup_loss;
    result.grads = std::move(obj.grads);
    result.stats.tasks = std::move(obj.tasks);
    for (std::size_t t = 0; t < params.num_tasks(); ++t) {
        auto& stats = result.stats.tasks[t];
        const auto& plb = t_out.pseudo[t];
        const auto& u_rows = t_out.unlabeled_rows[t];
        for (std::size_t k = 0; k < u_rows.size(); ++k) {
            const std::size_t row = u_rows[k];
            const int hidden = batch.true_labels[t][row];
            const bool correct = plb.pseudo_labels[k] == hidden;
            stats.confidence_sum += plb.confidences[k];
            stats.correct_unlabeled += correct ? 1 : 0;
            if (plb.keep_mask[k]) stats.correct_kept += correct ? 1 : 0;
            if (record_rows)
                result.stats.records.push_back({batch.ids[row], t, plb.pseudo_labels[k],
                                                plb.confidences[k], plb.keep_mask[k] != 0, hidden});
        }
    }
    return result;
}

}  // namespace batchlab
