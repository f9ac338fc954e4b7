#include "batchlab/trainer.hpp"

#include "batchlab/error.hpp"

#include <fmt/format.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace batchlab {

LrSchedule parse_lr_schedule(std::string_view name) {
    if (name == "cosine") return LrSchedule::cosine;
    if (name == "fixmatch_cosine") return LrSchedule::fixmatch_cosine;
    throw ConfigError(fmt::format("unknown learning-rate schedule '{}'", name));
}

std::string_view to_string(LrSchedule schedule) {
    return schedule == LrSchedule::cosine ? "cosine" : "fixmatch_cosine";
}

void TrainConfig::validate() const {
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("train.lr0 must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(budget_epochs > 0.0) || !(budget_multiplier > 0.0))
        throw ConfigError("train.budget_epochs and train.budget_multiplier must be positive");
    if (!(eval_every > 0.0)) throw ConfigError("train.eval_every must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("train.ema_decay must lie in [0, 1)");
    for (std::size_t h : hidden)
        if (h == 0) throw ConfigError("train.hidden widths must be positive");
}

OptState make_opt_state(const MlpParams& params) { return {zeros_like(params), 0}; }

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr0) {
    if (total_steps == 0) throw ConfigError("cosine schedule needs total_steps > 0");
    if (step > total_steps) throw ConfigError("cosine schedule step beyond total_steps");
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double scheduled_lr(LrSchedule schedule, std::uint64_t step, std::uint64_t total_steps, double lr0) {
    if (schedule == LrSchedule::cosine) return cosine_lr(step, total_steps, lr0);
    if (total_steps == 0) throw ConfigError("cosine schedule needs total_steps > 0");
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * std::cos(7.0 * std::numbers::pi * progress / 16.0);
}

void add_weight_decay(GradBuffer& grads, const MlpParams& params, double weight_decay) {
    if (weight_decay == 0.0) return;
    for (std::size_t l = 0; l < grads.layers.size(); ++l)
        grads.layers[l].weight += weight_decay * params.layers[l].weight;
}

bool all_finite(const MlpParams& tensors) {
    for (const auto& layer : tensors.layers)
        if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
    return true;
}

void sgd_nesterov_step(MlpParams& params, const GradBuffer& grads, OptState& opt, double lr,
                       double momentum, double weight_decay) {
    if (!same_shape(params, grads) || !same_shape(params, opt.velocity))
        throw ConfigError("optimizer state does not match the parameters");
    if (!all_finite(grads))
        throw DivergenceError(fmt::format("non-finite gradient at step {}", opt.step));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        auto& vel = opt.velocity.layers[l];
        const Eigen::MatrixXd g_w = grads.layers[l].weight + weight_decay * layer.weight;
        vel.weight = momentum * vel.weight - lr * g_w;
        layer.weight += momentum * vel.weight - lr * g_w;
        const Eigen::VectorXd& g_b = grads.layers[l].bias;
        vel.bias = momentum * vel.bias - lr * g_b;
        layer.bias += momentum * vel.bias - lr * g_b;
    }
    ++params.revision;
    ++opt.step;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_le(std::ostream& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_le(std::istream& in, const std::filesystem::path& path) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8))
        throw CheckpointError(fmt::format("'{}' is truncated", path.string()));
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    return std::bit_cast<double>(bits);
}

// Row-major weights, then bias, layer by layer.
void write_tensors(std::ostream& out, const MlpParams& p) {
    for (const auto& layer : p.layers) {
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) write_le(out, layer.weight(i, j));
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) write_le(out, layer.bias(i));
    }
}

void read_tensors(std::istream& in, MlpParams& p, const std::filesystem::path& path) {
    for (auto& layer : p.layers) {
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = read_le(in, path);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = read_le(in, path);
    }
}

std::string expect_line(std::istream& in, std::string_view key, const std::filesystem::path& path) {
    std::string line;
    if (!std::getline(in, line)) throw CheckpointError(fmt::format("'{}' is truncated", path.string()));
    if (line.rfind(key, 0) != 0)
        throw CheckpointError(fmt::format("'{}': expected '{}' line, found '{}'", path.string(), key, line));
    return line.substr(key.size());
}

std::uint64_t parse_u64(const std::string& s, const std::filesystem::path& path) {
    try {
        return std::stoull(s);
    } catch (const std::logic_error&) {
        throw CheckpointError(fmt::format("'{}': malformed header value '{}'", path.string(), s));
    }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (!same_shape(ckpt.params, ckpt.ema) || !same_shape(ckpt.params, ckpt.opt.velocity))
        throw CheckpointError("checkpoint tensors disagree in shape");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << kCheckpointHeader << '\n';
    out << "layer_dims";
    for (auto d : ckpt.params.layer_dims) out << ' ' << d;
    out << "\nhead_slices";
    for (const auto& h : ckpt.params.heads) out << ' ' << h.offset << ' ' << h.width;
    out << "\nstep " << ckpt.opt.step << '\n';
    out << "samples_seen " << ckpt.ledger.samples_seen << '\n';
    out << "train_size " << ckpt.ledger.train_size << '\n';
    out << "budget_samples " << ckpt.ledger.budget_samples << '\n';
    out << "data\n";
    write_tensors(out, ckpt.params);
    write_tensors(out, ckpt.ema);
    write_tensors(out, ckpt.opt.velocity);
    if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::string header;
    if (!std::getline(in, header))
        throw CheckpointError(fmt::format("'{}' is empty", path.string()));
    if (header != kCheckpointHeader) {
        if (header.rfind(kCheckpointMagic, 0) == 0)
            throw CheckpointError(fmt::format("'{}': unsupported checkpoint version '{}'",
                                              path.string(), header));
        throw CheckpointError(fmt::format("'{}' is not a checkpoint file", path.string()));
    }

    std::vector<std::size_t> dims;
    {
        std::istringstream ss(expect_line(in, "layer_dims", path));
        std::size_t d = 0;
        while (ss >> d) dims.push_back(d);
    }
    std::vector<HeadSlice> heads;
    {
        std::istringstream ss(expect_line(in, "head_slices", path));
        HeadSlice h;
        while (ss >> h.offset >> h.width) heads.push_back(h);
    }
    Checkpoint ckpt;
    ckpt.opt.step = parse_u64(expect_line(in, "step ", path), path);
    ckpt.ledger.samples_seen = parse_u64(expect_line(in, "samples_seen ", path), path);
    ckpt.ledger.train_size = parse_u64(expect_line(in, "train_size ", path), path);
    ckpt.ledger.budget_samples = parse_u64(expect_line(in, "budget_samples ", path), path);
    expect_line(in, "data", path);

    try {
        ckpt.params = zeros_like(init_mlp(dims, heads, 0));
    } catch (const ConfigError& e) {
        throw CheckpointError(fmt::format("'{}': invalid network layout ({})", path.string(), e.what()));
    }
    ckpt.ema = ckpt.params;
    ckpt.opt.velocity = ckpt.params;
    read_tensors(in, ckpt.params, path);
    read_tensors(in, ckpt.ema, path);
    read_tensors(in, ckpt.opt.velocity, path);
    if (in.peek() != std::char_traits<char>::eof())
        throw CheckpointError(fmt::format("'{}' has trailing data", path.string()));
    return ckpt;
}

// ---------------------------------------------------------------------------
// Evaluation

std::optional<double> evaluate_accuracy(const MlpParams& params, const Dataset& data,
                                        std::span<const Index> rows) {
    if (rows.empty()) return std::nullopt;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(data.dim()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        x.row(static_cast<Eigen::Index>(i)) = data.features.row(static_cast<Eigen::Index>(rows[i]));
    const auto cache = forward(params, x);
    std::size_t correct = 0;
    for (std::size_t t = 0; t < params.num_tasks(); ++t) {
        const auto pred = predict_from_logits(head_logits(cache.logits, params.heads[t]));
        for (std::size_t i = 0; i < rows.size(); ++i)
            correct += pred.classes[i] == data.labels[t][rows[i]] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(rows.size() * params.num_tasks());
}

std::optional<double> evaluate_labeled_accuracy(const MlpParams& params, const Dataset& data,
                                                const DataSplit& split) {
    std::size_t correct = 0;
    std::size_t total = 0;
    for (std::size_t t = 0; t < split.labeled_idx.size(); ++t) {
        const auto& rows = split.labeled_idx[t];
        if (rows.empty()) continue;
        Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(data.dim()));
        for (std::size_t i = 0; i < rows.size(); ++i)
            x.row(static_cast<Eigen::Index>(i)) = data.features.row(static_cast<Eigen::Index>(rows[i]));
        const auto pred = predict(params, x, t);
        for (std::size_t i = 0; i < rows.size(); ++i)
            correct += pred.classes[i] == data.labels[t][rows[i]] ? 1 : 0;
        total += rows.size();
    }
    return safe_ratio(static_cast<double>(correct), total);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::optional<double> complement(const std::optional<double>& acc) {
    if (!acc) return std::nullopt;
    return 1.0 - *acc;
}

}  // namespace

RunResult train(const RunSetup& setup, const std::optional<std::filesystem::path>& out_dir) {
    setup.sampler.validate();
    setup.augment.validate();
    setup.fixmatch.validate();
    setup.train.validate();

    const PreparedData prepared = prepare_data(setup.data, setup.split_seed);
    const Dataset& data = prepared.data;
    const DataSplit& split = prepared.split;
    const LabelView labels(data, split);
    auto sampler = make_sampler(setup.sampler, split, labels, setup.seed);
    const std::size_t batch_size = sampler->batch_size();

    std::vector<std::size_t> dims{data.dim()};
    dims.insert(dims.end(), setup.train.hidden.begin(), setup.train.hidden.end());
    std::vector<HeadSlice> heads = heads_for(data.num_classes);
    dims.push_back(heads.back().offset + heads.back().width);

    MlpParams params = init_mlp(dims, heads, setup.seed);
    EmaParams ema = make_ema(params, setup.train.ema_decay);
    OptState opt = make_opt_state(params);
    BudgetLedger ledger;
    ledger.train_size = split.train_idx.size();
    ledger.budget_samples = budget_samples_for(setup.train.budget_epochs, ledger.train_size,
                                               setup.train.budget_multiplier);

    if (!setup.train.init_checkpoint.empty()) {
        Checkpoint ckpt = load_checkpoint(setup.train.init_checkpoint);
        if (!same_shape(ckpt.params, params))
            throw ConfigError(fmt::format("checkpoint '{}' does not match the configured network",
                                          setup.train.init_checkpoint));
        params = std::move(ckpt.params);
        params.revision = 0;
        ema.shadow = std::move(ckpt.ema);
        opt = std::move(ckpt.opt);
        if (setup.train.reset_schedule) {
            opt.step = 0;
        } else {
            ledger.samples_seen = ckpt.ledger.samples_seen;
        }
    }

    const std::uint64_t total_steps = steps_for_budget(ledger.budget_samples, batch_size);
    const std::uint64_t window_samples =
        std::max<std::uint64_t>(1, budget_samples_for(setup.train.eval_every, ledger.train_size));
    std::uint64_t next_boundary = (ledger.samples_seen / window_samples + 1) * window_samples;

    Rng aug_rng(derive_seed(setup.seed, Stream::augment));
    EpochAccumulator acc(data.num_tasks());
    std::vector<LoggedRecord> row_log;
    std::size_t window = 0;
    double last_lr = 0.0;

    RunResult result;
    result.budget_samples = ledger.budget_samples;
    std::optional<Checkpoint> best;

    auto close_window = [&]() {
        MetricsRow row;
        row.epoch = ledger.epochs_elapsed();
        row.samples_seen = ledger.samples_seen;
        row.lr = last_lr;
        row.train_err_labeled = complement(evaluate_labeled_accuracy(ema.shadow, data, split));
        row.val_acc = evaluate_accuracy(ema.shadow, data, split.val_idx);
        row.test_err = complement(evaluate_accuracy(ema.shadow, data, split.test_idx));
        row.sup_loss = acc.sup_loss();
        row.unsup_loss = acc.unsup_loss();
        row.mean_confidence_unlabeled = acc.mean_confidence();
        row.pseudo_label_ratio = acc.pseudo_label_ratio();
        row.unlabeled_pred_acc = acc.unlabeled_pred_acc();
        row.pseudo_label_acc = acc.pseudo_label_acc();
        result.rows.push_back(row);

        // Without a validation set the final window is taken as best.
        const bool improved = row.val_acc ? (!result.best_val_accuracy || *row.val_acc > *result.best_val_accuracy)
                                          : true;
        if (improved) {
            result.best_val_accuracy = row.val_acc;
            result.test_accuracy_at_best = complement(row.test_err);
            result.best_epoch = row.epoch;
            best = Checkpoint{params, ema.shadow, opt, ledger};
        }
        acc.reset();
        ++window;
    };

    while (budget_check(ledger, batch_size) == BudgetDecision::proceed) {
        const Batch batch = annotate(sampler->next(), labels);
        const BatchData batch_data = gather_batch(data, batch);
        const MlpParams* teacher =
            setup.fixmatch.teacher == TeacherSource::ema ? &ema.shadow : nullptr;
        StepResult step = step_loss(params, batch_data, setup.fixmatch, setup.augment,
                                    prepared.feature_std, aug_rng, teacher, setup.metrics.row_log);
        if (!std::isfinite(step.total_loss))
            throw DivergenceError(fmt::format("non-finite loss at step {} (epoch {:.3f})", opt.step,
                                              ledger.epochs_elapsed()));

        last_lr = scheduled_lr(setup.train.lr_schedule, std::min(opt.step, total_steps), total_steps,
                               setup.train.lr0);
        sgd_nesterov_step(params, step.grads, opt, last_lr, setup.train.momentum,
                          setup.train.weight_decay);
        ema_update(ema, params);
        ledger.record(batch_size);

        acc.add(step.stats);
        if (setup.metrics.row_log)
            for (const auto& rec : step.stats.records) row_log.push_back({window, opt.step, rec});

        if (ledger.samples_seen >= next_boundary) {
            close_window();
            next_boundary = (ledger.samples_seen / window_samples + 1) * window_samples;
        }
    }
    if (acc.batches() > 0) close_window();

    result.samples_seen = ledger.samples_seen;
    result.steps = opt.step;
    if (!result.rows.empty()) result.final_test_accuracy = complement(result.rows.back().test_err);
    if (!best) best = Checkpoint{params, ema.shadow, opt, ledger};

    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        result.metrics_path = *out_dir / "metrics.csv";
        result.ckpt_best = *out_dir / "ckpt_best";
        result.ckpt_final = *out_dir / "ckpt_final";
        write_metrics_csv(result.metrics_path, result.rows);
        save_checkpoint(result.ckpt_best, *best);
        save_checkpoint(result.ckpt_final, Checkpoint{params, ema.shadow, opt, ledger});
        if (setup.metrics.row_log) write_pseudo_label_log(*out_dir / "pseudo_labels.csv", row_log);
    }
    return result;
}

}  // namespace batchlab
