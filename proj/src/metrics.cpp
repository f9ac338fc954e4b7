#include "batchlab/metrics.hpp"

#include "batchlab/error.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>
#include <string>

namespace batchlab {

EpochAccumulator::EpochAccumulator(std::size_t num_tasks)
    : sup_ce_(num_tasks, 0.0),
      labeled_per_task_(num_tasks, 0),
      unsup_ce_(num_tasks, 0.0),
      unlabeled_per_task_(num_tasks, 0) {}

void EpochAccumulator::add(const BatchStats& stats) {
    if (stats.tasks.size() != sup_ce_.size())
        throw ConfigError("batch statistics have the wrong number of tasks");
    ++batches_;
    for (std::size_t t = 0; t < stats.tasks.size(); ++t) {
        const auto& s = stats.tasks[t];
        sup_ce_[t] += s.sup_ce_sum;
        labeled_per_task_[t] += s.labeled_rows;
        unsup_ce_[t] += s.unsup_ce_sum;
        unlabeled_per_task_[t] += s.unlabeled_rows;
        unlabeled_ += s.unlabeled_rows;
        kept_ += s.kept_rows;
        correct_unlabeled_ += s.correct_unlabeled;
        correct_kept_ += s.correct_kept;
        confidence_sum_ += s.confidence_sum;
    }
}

void EpochAccumulator::reset() { *this = EpochAccumulator(sup_ce_.size()); }

std::optional<double> safe_ratio(double numerator, std::size_t denominator) {
    if (denominator == 0) return std::nullopt;
    return numerator / static_cast<double>(denominator);
}

std::optional<double> EpochAccumulator::sup_loss() const {
    std::optional<double> total;
    for (std::size_t t = 0; t < sup_ce_.size(); ++t)
        if (labeled_per_task_[t] > 0)
            total = total.value_or(0.0) + sup_ce_[t] / static_cast<double>(labeled_per_task_[t]);
    return total;
}

std::optional<double> EpochAccumulator::unsup_loss() const {
    std::optional<double> total;
    for (std::size_t t = 0; t < unsup_ce_.size(); ++t)
        if (unlabeled_per_task_[t] > 0)
            total = total.value_or(0.0) + unsup_ce_[t] / static_cast<double>(unlabeled_per_task_[t]);
    return total;
}

std::optional<double> EpochAccumulator::mean_confidence() const {
    return safe_ratio(confidence_sum_, unlabeled_);
}

std::optional<double> EpochAccumulator::pseudo_label_ratio() const {
    return safe_ratio(static_cast<double>(kept_), unlabeled_);
}

std::optional<double> EpochAccumulator::unlabeled_pred_acc() const {
    return safe_ratio(static_cast<double>(correct_unlabeled_), unlabeled_);
}

std::optional<double> EpochAccumulator::pseudo_label_acc() const {
    return safe_ratio(static_cast<double>(correct_kept_), kept_);
}

std::pair<std::optional<double>, std::optional<double>>
privileged_accuracy(std::span<const int> predictions, std::span<const std::uint8_t> keep_mask,
                    std::span<const int> hidden_labels) {
    if (predictions.size() != keep_mask.size() || predictions.size() != hidden_labels.size())
        throw ConfigError("predictions, keep mask and hidden labels must have equal length");
    std::size_t correct = 0;
    std::size_t kept = 0;
    std::size_t kept_correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool ok = predictions[i] == hidden_labels[i];
        correct += ok ? 1 : 0;
        if (keep_mask[i]) {
            ++kept;
            kept_correct += ok ? 1 : 0;
        }
    }
    return {safe_ratio(static_cast<double>(correct), predictions.size()),
            safe_ratio(static_cast<double>(kept_correct), kept)};
}

std::string format_double(double value) { return fmt::format("{:.17g}", value); }

namespace {

std::string field(const std::optional<double>& v) { return v ? format_double(*v) : std::string{}; }

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::optional<double> parse_opt(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    for (std::size_t c = 0; c < kMetricsColumns.size(); ++c)
        out << (c ? "," : "") << kMetricsColumns[c];
    out << '\n';
    for (const auto& r : rows) {
        out << format_double(r.epoch) << ',' << r.samples_seen << ',' << format_double(r.lr) << ','
            << field(r.train_err_labeled) << ',' << field(r.val_acc) << ',' << field(r.test_err)
            << ',' << field(r.sup_loss) << ',' << field(r.unsup_loss) << ','
            << field(r.mean_confidence_unlabeled) << ',' << field(r.pseudo_label_ratio) << ','
            << field(r.unlabeled_pred_acc) << ',' << field(r.pseudo_label_acc) << '\n';
    }
    if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(fmt::format("'{}' is empty", path.string()));
    const auto header = split_csv_line(line);
    if (header.size() != kMetricsColumns.size())
        throw SchemaError(fmt::format("'{}': expected {} columns, found {}", path.string(),
                                      kMetricsColumns.size(), header.size()));
    for (std::size_t c = 0; c < header.size(); ++c)
        if (header[c] != kMetricsColumns[c])
            throw SchemaError(fmt::format("'{}': column {} is '{}', expected '{}'", path.string(), c,
                                          header[c], kMetricsColumns[c]));
    std::vector<MetricsRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != kMetricsColumns.size())
            throw SchemaError(fmt::format("{}:{}: expected {} fields", path.string(), line_no,
                                          kMetricsColumns.size()));
        try {
            MetricsRow r;
            r.epoch = std::stod(f[0]);
            r.samples_seen = std::stoull(f[1]);
            r.lr = std::stod(f[2]);
            r.train_err_labeled = parse_opt(f[3]);
            r.val_acc = parse_opt(f[4]);
            r.test_err = parse_opt(f[5]);
            r.sup_loss = parse_opt(f[6]);
            r.unsup_loss = parse_opt(f[7]);
            r.mean_confidence_unlabeled = parse_opt(f[8]);
            r.pseudo_label_ratio = parse_opt(f[9]);
            r.unlabeled_pred_acc = parse_opt(f[10]);
            r.pseudo_label_acc = parse_opt(f[11]);
            rows.push_back(r);
        } catch (const std::logic_error&) {
            throw SchemaError(fmt::format("{}:{}: malformed number", path.string(), line_no));
        }
    }
    return rows;
}

void write_pseudo_label_log(const std::filesystem::path& path, std::span<const LoggedRecord> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << "window,step,sample_id,task,prediction,confidence,kept,hidden_label\n";
    for (const auto& r : rows)
        out << r.window << ',' << r.step << ',' << r.record.id << ',' << r.record.task << ','
            << r.record.prediction << ',' << format_double(r.record.confidence) << ','
            << (r.record.kept ? 1 : 0) << ',' << r.record.hidden_label << '\n';
    if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
}

std::vector<LoggedRecord> read_pseudo_label_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::string line;
    std::getline(in, line);
    std::vector<LoggedRecord> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 8) throw SchemaError(fmt::format("'{}': malformed row", path.string()));
        LoggedRecord r;
        r.window = std::stoull(f[0]);
        r.step = std::stoull(f[1]);
        r.record.id = std::stoull(f[2]);
        r.record.task = std::stoull(f[3]);
        r.record.prediction = std::stoi(f[4]);
        r.record.confidence = std::stod(f[5]);
        r.record.kept = f[6] == "1";
        r.record.hidden_label = std::stoi(f[7]);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace batchlab
