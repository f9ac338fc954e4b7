#include "batchlab/synthdata.hpp"

#include "batchlab/error.hpp"
#include "batchlab/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace batchlab {

namespace {

// Center of symmetry of the two half-moons, used by the sign_x0 rule.
constexpr double kMoonsCenterX = 0.5;
constexpr double kBlobRadius = 2.5;

int required_classes(TaskDef def) {
    switch (def) {
    case TaskDef::moon:
    case TaskDef::sign_x0:
        return 2;
    case TaskDef::blob:
        return 0;  // any C >= 2
    }
    return 0;
}

}  // namespace

DatasetKind parse_dataset_kind(std::string_view name) {
    if (name == "moons") return DatasetKind::moons;
    if (name == "blobs") return DatasetKind::blobs;
    throw ConfigError(fmt::format("unknown dataset kind '{}'", name));
}

TaskDef parse_task_def(std::string_view name) {
    if (name == "moon") return TaskDef::moon;
    if (name == "blob") return TaskDef::blob;
    if (name == "sign_x0") return TaskDef::sign_x0;
    throw ConfigError(fmt::format("unknown task definition '{}'", name));
}

std::string_view to_string(DatasetKind kind) {
    return kind == DatasetKind::moons ? "moons" : "blobs";
}

std::string_view to_string(TaskDef def) {
    switch (def) {
    case TaskDef::moon: return "moon";
    case TaskDef::blob: return "blob";
    case TaskDef::sign_x0: return "sign_x0";
    }
    return "?";
}

void DatasetSpec::validate() const {
    if (n == 0) throw ConfigError("dataset size n must be positive");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
        throw ConfigError("noise_sigma must be finite and >= 0");
    if (task_defs.empty()) throw ConfigError("at least one task is required");
    if (task_defs.size() != num_classes.size())
        throw ConfigError(fmt::format("{} task definitions but {} class counts", task_defs.size(),
                                      num_classes.size()));
    for (std::size_t t = 0; t < task_defs.size(); ++t) {
        const TaskDef def = task_defs[t];
        if (num_classes[t] < 2)
            throw ConfigError(fmt::format("task {} needs at least 2 classes", t));
        if (def == TaskDef::moon && kind != DatasetKind::moons)
            throw ConfigError("task 'moon' requires the moons dataset");
        if (def == TaskDef::blob && kind != DatasetKind::blobs)
            throw ConfigError("task 'blob' requires the blobs dataset");
        const int required = required_classes(def);
        if (required != 0 && num_classes[t] != required)
            throw ConfigError(fmt::format("task {} ('{}') has exactly {} classes, got {}", t,
                                          to_string(def), required, num_classes[t]));
    }
    if (kind == DatasetKind::blobs) {
        const auto it = std::find(task_defs.begin(), task_defs.end(), TaskDef::blob);
        if (it == task_defs.end()) throw ConfigError("blobs dataset needs a 'blob' task");
    }
}

Dataset generate(const DatasetSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, Stream::data));

    const std::size_t n = spec.n;
    Dataset data;
    data.features.resize(static_cast<Eigen::Index>(n), 2);
    data.num_classes = spec.num_classes;
    data.labels.assign(spec.task_defs.size(), std::vector<int>(n, 0));

    // Generating class: balanced round-robin, then shuffled so ids carry no order.
    int generating_classes = 2;
    if (spec.kind == DatasetKind::blobs) {
        const auto t = static_cast<std::size_t>(
            std::find(spec.task_defs.begin(), spec.task_defs.end(), TaskDef::blob) -
            spec.task_defs.begin());
        generating_classes = spec.num_classes[t];
    }
    std::vector<int> source(n);
    for (std::size_t i = 0; i < n; ++i) source[i] = static_cast<int>(i % generating_classes);
    rng.shuffle(std::span<int>(source));

    for (std::size_t i = 0; i < n; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        double x = 0.0;
        double y = 0.0;
        if (spec.kind == DatasetKind::moons) {
            const double angle = rng.uniform(0.0, std::numbers::pi);
            if (source[i] == 0) {
                x = std::cos(angle);
                y = std::sin(angle);
            } else {
                x = 1.0 - std::cos(angle);
                y = 0.5 - std::sin(angle);
            }
        } else {
            const double angle = 2.0 * std::numbers::pi * source[i] / generating_classes;
            x = kBlobRadius * std::cos(angle);
            y = kBlobRadius * std::sin(angle);
        }
        x += spec.noise_sigma * rng.normal();
        y += spec.noise_sigma * rng.normal();
        data.features(row, 0) = x;
        data.features(row, 1) = y;

        const double center = spec.kind == DatasetKind::moons ? kMoonsCenterX : 0.0;
        for (std::size_t t = 0; t < spec.task_defs.size(); ++t) {
            data.labels[t][i] =
                spec.task_defs[t] == TaskDef::sign_x0 ? (x > center ? 1 : 0) : source[i];
        }
    }
    return data;
}

std::vector<IndexList> select_labeled(const Dataset& data, std::span<const Index> candidates,
                                      std::span<const std::size_t> n_labeled_per_task,
                                      std::uint64_t seed) {
    if (n_labeled_per_task.size() != data.num_tasks())
        throw ConfigError(fmt::format("expected {} labeled counts, got {}", data.num_tasks(),
                                      n_labeled_per_task.size()));
    std::vector<IndexList> result(data.num_tasks());
    for (std::size_t t = 0; t < data.num_tasks(); ++t) {
        const std::size_t n_t = n_labeled_per_task[t];
        if (n_t > candidates.size())
            throw SplitError(fmt::format("task {}: {} labels requested from {} training samples",
                                         t, n_t, candidates.size()));
        const int classes = data.num_classes[t];
        std::vector<IndexList> by_class(static_cast<std::size_t>(classes));
        for (Index id : candidates) by_class[static_cast<std::size_t>(data.labels[t][id])].push_back(id);

        Rng rng(derive_seed(derive_seed(seed, Stream::labeled_split), t));
        const std::size_t base = n_t / static_cast<std::size_t>(classes);
        const std::size_t extra = n_t % static_cast<std::size_t>(classes);
        for (std::size_t c = 0; c < by_class.size(); ++c) {
            const std::size_t want = base + (c < extra ? 1 : 0);
            auto& pool = by_class[c];
            if (want > pool.size())
                throw SplitError(fmt::format("task {} class {}: {} labels requested, {} available",
                                             t, c, want, pool.size()));
            rng.shuffle(std::span<Index>(pool));
            result[t].insert(result[t].end(), pool.begin(),
                             pool.begin() + static_cast<std::ptrdiff_t>(want));
        }
        std::sort(result[t].begin(), result[t].end());
    }
    return result;
}

std::vector<IndexList> select_labeled(const Dataset& data,
                                      std::span<const std::size_t> n_labeled_per_task,
                                      std::uint64_t seed) {
    IndexList all(data.size());
    std::iota(all.begin(), all.end(), Index{0});
    return select_labeled(data, all, n_labeled_per_task, seed);
}

namespace {

// Largest-remainder allocation of `total` over classes proportional to `counts`.
std::vector<std::size_t> proportional_allocation(const std::vector<IndexList>& by_class,
                                                 std::size_t total, std::size_t population) {
    std::vector<std::size_t> take(by_class.size(), 0);
    if (population == 0) return take;
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const double exact =
            static_cast<double>(total) * static_cast<double>(by_class[c].size()) /
            static_cast<double>(population);
        take[c] = static_cast<std::size_t>(std::floor(exact));
        assigned += take[c];
        remainders.emplace_back(exact - static_cast<double>(take[c]), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < total && k < remainders.size(); ++k) {
        const std::size_t c = remainders[k].second;
        if (take[c] < by_class[c].size()) {
            ++take[c];
            ++assigned;
        }
    }
    return take;
}

// Moves a class-balanced subset of `pool` into `out`, leaving the rest in `pool`.
void take_stratified(const Dataset& data, IndexList& pool, std::size_t count, Rng& rng,
                     IndexList& out) {
    std::vector<IndexList> by_class(static_cast<std::size_t>(data.num_classes[0]));
    for (Index id : pool) by_class[static_cast<std::size_t>(data.labels[0][id])].push_back(id);
    const auto take = proportional_allocation(by_class, count, pool.size());
    IndexList rest;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& ids = by_class[c];
        rng.shuffle(std::span<Index>(ids));
        out.insert(out.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take[c]));
        rest.insert(rest.end(), ids.begin() + static_cast<std::ptrdiff_t>(take[c]), ids.end());
    }
    std::sort(out.begin(), out.end());
    std::sort(rest.begin(), rest.end());
    pool = std::move(rest);
}

}  // namespace

DataSplit split(const Dataset& data, double val_fraction, std::uint64_t seed,
                std::size_t test_count) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw ConfigError(fmt::format("val_fraction must lie in [0, 1), got {}", val_fraction));
    if (test_count >= data.size())
        throw ConfigError(fmt::format("test_count {} leaves no training data out of {}",
                                      test_count, data.size()));
    Rng rng(derive_seed(seed, Stream::val_split));
    DataSplit out;
    IndexList pool(data.size());
    std::iota(pool.begin(), pool.end(), Index{0});
    if (test_count > 0) take_stratified(data, pool, test_count, rng, out.test_idx);
    const auto val_count =
        static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(pool.size())));
    if (val_count > 0) take_stratified(data, pool, val_count, rng, out.val_idx);
    out.train_idx = std::move(pool);
    return out;
}

Standardization fit_standardization(const Dataset& data, std::span<const Index> rows) {
    const auto d = static_cast<Eigen::Index>(data.dim());
    Standardization st{Eigen::RowVectorXd::Zero(d), Eigen::RowVectorXd::Ones(d)};
    if (rows.empty()) return st;
    for (Index id : rows) st.mean += data.features.row(static_cast<Eigen::Index>(id));
    st.mean /= static_cast<double>(rows.size());
    Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(d);
    for (Index id : rows) {
        const Eigen::RowVectorXd diff = data.features.row(static_cast<Eigen::Index>(id)) - st.mean;
        var += diff.cwiseProduct(diff);
    }
    var /= static_cast<double>(rows.size());
    for (Eigen::Index j = 0; j < d; ++j) st.scale(j) = var(j) > 0.0 ? std::sqrt(var(j)) : 1.0;
    return st;
}

void apply_standardization(Dataset& data, const Standardization& st) {
    data.features = (data.features.rowwise() - st.mean).array().rowwise() / st.scale.array();
}

Eigen::RowVectorXd feature_std(const Dataset& data, std::span<const Index> rows) {
    const auto d = static_cast<Eigen::Index>(data.dim());
    if (rows.empty()) return Eigen::RowVectorXd::Ones(d);
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
    for (Index id : rows) mean += data.features.row(static_cast<Eigen::Index>(id));
    mean /= static_cast<double>(rows.size());
    Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(d);
    for (Index id : rows) {
        const Eigen::RowVectorXd diff = data.features.row(static_cast<Eigen::Index>(id)) - mean;
        var += diff.cwiseProduct(diff);
    }
    return (var / static_cast<double>(rows.size())).cwiseSqrt();
}

LabelView::LabelView(const Dataset& data, const DataSplit& split)
    : labels_(&data.labels),
      labeled_(data.num_tasks(), std::vector<std::uint8_t>(data.size(), 0)) {
    if (split.labeled_idx.size() != data.num_tasks())
        throw ConfigError(fmt::format("split has labeled sets for {} tasks, dataset has {}",
                                      split.labeled_idx.size(), data.num_tasks()));
    for (std::size_t t = 0; t < data.num_tasks(); ++t)
        for (Index id : split.labeled_idx[t]) labeled_[t].at(id) = 1;
}

std::optional<int> LabelView::observed_label(std::size_t task, Index id) const {
    if (!is_labeled(task, id)) return std::nullopt;
    return (*labels_)[task][id];
}

std::uint32_t LabelView::configuration(Index id) const {
    std::uint32_t mask = 0;
    for (std::size_t t = 0; t < labeled_.size(); ++t)
        if (labeled_[t][id]) mask |= (1U << t);
    return mask;
}

void write_dataset_cache(const std::filesystem::path& path, const Dataset& data,
                         const LabelView* visible) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << kDatasetCacheHeader << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << i;
        for (std::size_t j = 0; j < data.dim(); ++j)
            out << ',' << fmt::format("{:.17g}", data.features(static_cast<Eigen::Index>(i),
                                                                 static_cast<Eigen::Index>(j)));
        for (std::size_t t = 0; t < data.num_tasks(); ++t) {
            if (visible != nullptr && !visible->is_labeled(t, i))
                out << ",-";
            else
                out << ',' << data.labels[t][i];
        }
        out << '\n';
    }
    if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
}

CachedDataset read_dataset_cache(const std::filesystem::path& path, std::size_t dim) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::string line;
    if (!std::getline(in, line) || line != kDatasetCacheHeader)
        throw ConfigError(fmt::format("'{}' is not a {} file", path.string(), kDatasetCacheHeader));

    std::vector<std::vector<double>> rows;
    std::vector<std::vector<std::optional<int>>> labels_by_row;
    std::size_t tasks = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < dim + 2)
            throw ConfigError(fmt::format("{}:{}: expected at least {} fields", path.string(),
                                          line_no, dim + 2));
        if (rows.empty()) tasks = fields.size() - 1 - dim;
        if (fields.size() != 1 + dim + tasks)
            throw ConfigError(fmt::format("{}:{}: inconsistent field count", path.string(), line_no));
        if (std::stoull(fields[0]) != rows.size())
            throw ConfigError(fmt::format("{}:{}: ids must be consecutive", path.string(), line_no));
        std::vector<double> feats(dim);
        for (std::size_t j = 0; j < dim; ++j) feats[j] = std::stod(fields[1 + j]);
        std::vector<std::optional<int>> labs(tasks);
        for (std::size_t t = 0; t < tasks; ++t) {
            const auto& f = fields[1 + dim + t];
            if (f != "-") labs[t] = std::stoi(f);
        }
        rows.push_back(std::move(feats));
        labels_by_row.push_back(std::move(labs));
    }

    CachedDataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
    out.labels.assign(tasks, std::vector<std::optional<int>>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < dim; ++j)
            out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        for (std::size_t t = 0; t < tasks; ++t) out.labels[t][i] = labels_by_row[i][t];
    }
    return out;
}

}  // namespace batchlab

namespace batchlab {

void DataConfig::validate() const {
    dataset.validate();
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw ConfigError("data.val_fraction must lie in [0, 1)");
    if (n_labeled.size() != dataset.task_defs.size())
        throw ConfigError(fmt::format("data.n_labeled has {} entries for {} tasks", n_labeled.size(),
                                      dataset.task_defs.size()));
}

PreparedData prepare_data(const DataConfig& cfg, std::uint64_t split_seed) {
    cfg.validate();
    PreparedData out;
    DatasetSpec spec = cfg.dataset;
    spec.n += cfg.n_test;
    out.data = generate(spec);
    out.split = split(out.data, cfg.val_fraction, cfg.dataset.seed, cfg.n_test);
    out.split.labeled_idx = select_labeled(out.data, out.split.train_idx, cfg.n_labeled, split_seed);
    apply_standardization(out.data, fit_standardization(out.data, out.split.train_idx));
    out.feature_std = feature_std(out.data, out.split.train_idx);
    return out;
}

}  // namespace batchlab
