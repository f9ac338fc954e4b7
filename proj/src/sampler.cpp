#include "batchlab/sampler.hpp"

#include "batchlab/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace batchlab {

SamplerMode parse_sampler_mode(std::string_view name) {
    if (name == "implicit") return SamplerMode::implicit;
    if (name == "explicit") return SamplerMode::explicit_labeled;
    if (name == "explicit_multitask") return SamplerMode::explicit_multitask;
    throw ConfigError(fmt::format("unknown sampler mode '{}'", name));
}

std::string_view to_string(SamplerMode mode) {
    switch (mode) {
    case SamplerMode::implicit: return "implicit";
    case SamplerMode::explicit_labeled: return "explicit";
    case SamplerMode::explicit_multitask: return "explicit_multitask";
    }
    return "?";
}

Batch annotate(IndexList indices, const LabelView& labels) {
    Batch batch;
    batch.labeled.assign(labels.num_tasks(), std::vector<std::uint8_t>(indices.size(), 0));
    for (std::size_t t = 0; t < labels.num_tasks(); ++t)
        for (std::size_t i = 0; i < indices.size(); ++i)
            batch.labeled[t][i] = labels.is_labeled(t, indices[i]) ? 1 : 0;
    batch.indices = std::move(indices);
    return batch;
}

std::size_t labeled_per_batch(double labeled_fraction, std::size_t batch_size) {
    const double scaled = labeled_fraction * static_cast<double>(batch_size);
    return static_cast<std::size_t>(std::max(0.0, std::floor(scaled + 0.5)));
}

BatchPlan implicit_epoch(std::span<const Index> train_idx, std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) throw ConfigError("batch size must be at least 1");
    if (train_idx.size() < batch_size)
        throw ConfigError(fmt::format("implicit sampling needs at least B={} training samples, got {}",
                                      batch_size, train_idx.size()));
    IndexList order(train_idx.begin(), train_idx.end());
    rng.shuffle(std::span<Index>(order));
    BatchPlan plan;
    const std::size_t full = order.size() / batch_size;
    plan.reserve(full);
    for (std::size_t b = 0; b < full; ++b) {
        const auto first = order.begin() + static_cast<std::ptrdiff_t>(b * batch_size);
        plan.emplace_back(first, first + static_cast<std::ptrdiff_t>(batch_size));
    }
    return plan;
}

CyclingStream::CyclingStream(IndexList ids, std::uint64_t seed)
    : order_(std::move(ids)), rng_(seed) {
    if (order_.empty()) throw ConfigError("cannot cycle over an empty index set");
    rng_.shuffle(std::span<Index>(order_));
}

Index CyclingStream::next() {
    if (pos_ == order_.size()) {
        rng_.shuffle(std::span<Index>(order_));
        pos_ = 0;
    }
    return order_[pos_++];
}

ImplicitSampler::ImplicitSampler(IndexList train_idx, std::size_t batch_size, std::uint64_t seed)
    : train_idx_(std::move(train_idx)), batch_size_(batch_size), rng_(seed) {
    if (batch_size_ == 0) throw ConfigError("batch size must be at least 1");
    if (train_idx_.size() < batch_size_)
        throw ConfigError(fmt::format("implicit sampling needs at least B={} training samples, got {}",
                                      batch_size_, train_idx_.size()));
}

IndexList ImplicitSampler::next() {
    if (cursor_ == pending_.size()) {
        pending_ = implicit_epoch(train_idx_, batch_size_, rng_);
        cursor_ = 0;
    }
    return std::move(pending_[cursor_++]);
}

Partition multitask_partition(std::span<const Index> train_idx, const LabelView& labels) {
    if (labels.num_tasks() == 0) throw ConfigError("at least one task is required");
    if (labels.num_tasks() > 31) throw ConfigError("at most 31 tasks are supported");
    std::map<std::uint32_t, IndexList, std::greater<>> groups;
    for (Index id : train_idx) groups[labels.configuration(id)].push_back(id);
    Partition out;
    out.reserve(groups.size());
    for (auto& [configuration, ids] : groups) out.push_back({configuration, std::move(ids)});
    return out;
}

std::string configuration_name(std::uint32_t configuration, std::size_t num_tasks) {
    std::string name(num_tasks, '0');
    for (std::size_t t = 0; t < num_tasks; ++t)
        if (configuration & (1U << t)) name[t] = '1';
    return name;
}

MultitaskSampler::MultitaskSampler(const Partition& partition, std::vector<std::size_t> group_sizes,
                                   std::uint64_t seed)
    : group_sizes_(std::move(group_sizes)) {
    batch_size_ = std::accumulate(group_sizes_.begin(), group_sizes_.end(), std::size_t{0});
    if (partition.size() > batch_size_ && batch_size_ > 0)
        throw InfeasibleError(fmt::format(
            "{} label configurations cannot each get a part of a batch of {}", partition.size(),
            batch_size_));
    if (group_sizes_.size() != partition.size())
        throw ConfigError(fmt::format("{} group sizes given for {} label configurations",
                                      group_sizes_.size(), partition.size()));
    if (batch_size_ == 0) throw ConfigError("group sizes must sum to a positive batch size");
    streams_.reserve(partition.size());
    for (std::size_t k = 0; k < partition.size(); ++k)
        streams_.emplace_back(partition[k].ids, derive_seed(seed, k));
}

IndexList MultitaskSampler::next() {
    IndexList batch;
    batch.reserve(batch_size_);
    for (std::size_t k = 0; k < streams_.size(); ++k)
        for (std::size_t j = 0; j < group_sizes_[k]; ++j) batch.push_back(streams_[k].next());
    return batch;
}

namespace {

std::size_t checked_labeled_rows(std::size_t labeled_count, double labeled_fraction,
                                 std::size_t batch_size) {
    if (labeled_count == 0) throw ConfigError("explicit sampling requires a non-empty labeled set");
    if (batch_size < 2) throw ConfigError("explicit sampling needs a batch size of at least 2");
    const std::size_t rows = labeled_per_batch(labeled_fraction, batch_size);
    if (rows < 1 || rows > batch_size - 1)
        throw ConfigError(fmt::format(
            "labeled_fraction {} gives {} labeled rows per batch of {}; need 1..{}",
            labeled_fraction, rows, batch_size, batch_size - 1));
    return rows;
}

}  // namespace

ExplicitSampler::ExplicitSampler(IndexList labeled_idx, IndexList unlabeled_idx,
                                 std::size_t batch_size, double labeled_fraction,
                                 std::uint64_t seed)
    : labeled_rows_(checked_labeled_rows(labeled_idx.size(), labeled_fraction, batch_size)) {
    if (unlabeled_idx.empty())
        throw ConfigError("explicit sampling requires a non-empty unlabeled set");
    Partition parts{{1U, std::move(labeled_idx)}, {0U, std::move(unlabeled_idx)}};
    inner_ = std::make_unique<MultitaskSampler>(
        parts, std::vector<std::size_t>{labeled_rows_, batch_size - labeled_rows_}, seed);
}

IndexList ExplicitSampler::next() { return inner_->next(); }

BatchPlan explicit_stream(std::span<const Index> labeled_idx, std::span<const Index> unlabeled_idx,
                          std::size_t batch_size, double labeled_fraction, std::uint64_t seed,
                          std::size_t num_steps) {
    ExplicitSampler sampler(IndexList(labeled_idx.begin(), labeled_idx.end()),
                            IndexList(unlabeled_idx.begin(), unlabeled_idx.end()), batch_size,
                            labeled_fraction, seed);
    BatchPlan plan;
    plan.reserve(num_steps);
    for (std::size_t s = 0; s < num_steps; ++s) plan.push_back(sampler.next());
    return plan;
}

BatchPlan explicit_multitask_stream(const Partition& partition,
                                    std::span<const std::size_t> group_sizes, std::uint64_t seed,
                                    std::size_t num_steps) {
    MultitaskSampler sampler(partition, std::vector<std::size_t>(group_sizes.begin(), group_sizes.end()),
                             seed);
    BatchPlan plan;
    plan.reserve(num_steps);
    for (std::size_t s = 0; s < num_steps; ++s) plan.push_back(sampler.next());
    return plan;
}

std::vector<std::size_t> default_group_sizes(const Partition& partition, std::size_t batch_size) {
    const std::size_t groups = partition.size();
    if (groups == 0) throw ConfigError("no label configurations to sample from");
    if (groups > batch_size)
        throw InfeasibleError(fmt::format(
            "{} label configurations cannot each get a part of a batch of {}", groups, batch_size));
    std::vector<std::size_t> sizes(groups, 1);
    const std::size_t spare = batch_size - groups;
    std::size_t total = 0;
    for (const auto& g : partition) total += g.ids.size();

    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < groups; ++k) {
        const double exact = static_cast<double>(spare) *
                             static_cast<double>(partition[k].ids.size()) /
                             static_cast<double>(total);
        const auto whole = static_cast<std::size_t>(std::floor(exact));
        sizes[k] += whole;
        assigned += whole;
        remainders.emplace_back(exact - static_cast<double>(whole), k);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t j = 0; assigned < spare; ++j, ++assigned) ++sizes[remainders[j % groups].second];
    return sizes;
}

std::vector<std::size_t> group_sizes_from_names(const Partition& partition,
                                                const std::map<std::string, std::size_t>& sizes,
                                                std::size_t num_tasks, std::size_t batch_size) {
    if (partition.size() > batch_size)
        throw InfeasibleError(fmt::format(
            "{} label configurations cannot each get a part of a batch of {}", partition.size(),
            batch_size));
    std::vector<std::size_t> out;
    out.reserve(partition.size());
    std::size_t sum = 0;
    for (const auto& group : partition) {
        const auto name = configuration_name(group.configuration, num_tasks);
        const auto it = sizes.find(name);
        if (it == sizes.end())
            throw ConfigError(fmt::format("sampler.group_sizes is missing configuration '{}'", name));
        out.push_back(it->second);
        sum += it->second;
    }
    if (sizes.size() != partition.size())
        throw ConfigError(fmt::format(
            "sampler.group_sizes names {} configurations but {} are present in the data",
            sizes.size(), partition.size()));
    if (sum != batch_size)
        throw ConfigError(fmt::format("sampler.group_sizes sum to {}, batch size is {}", sum,
                                      batch_size));
    return out;
}

BudgetDecision budget_check(const BudgetLedger& ledger, std::size_t batch_size) {
    return ledger.samples_seen + batch_size > ledger.budget_samples ? BudgetDecision::stop
                                                                    : BudgetDecision::proceed;
}

std::uint64_t budget_samples_for(double epochs, std::uint64_t train_size, double multiplier) {
    if (!(epochs >= 0.0) || !(multiplier >= 0.0))
        throw ConfigError("budget epochs and multiplier must be non-negative");
    return static_cast<std::uint64_t>(
        std::llround(epochs * multiplier * static_cast<double>(train_size)));
}

std::uint64_t steps_for_budget(std::uint64_t budget_samples, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be at least 1");
    return budget_samples / batch_size;
}

std::map<Index, std::size_t> count_exposure(const BatchPlan& plan) {
    std::map<Index, std::size_t> counts;
    for (const auto& batch : plan)
        for (Index id : batch) ++counts[id];
    return counts;
}

}  // namespace batchlab

namespace batchlab {

void SamplerConfig::validate() const {
    if (batch_size == 0) throw ConfigError("sampler.batch_size must be at least 1");
    if (mode == SamplerMode::explicit_labeled) {
        if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0))
            throw ConfigError("sampler.labeled_fraction must lie in (0, 1)");
        const std::size_t rows = labeled_per_batch(labeled_fraction, batch_size);
        if (rows < 1 || rows + 1 > batch_size)
            throw ConfigError(fmt::format(
                "sampler.labeled_fraction {} gives {} labeled rows in a batch of {}", labeled_fraction,
                rows, batch_size));
    }
    if (labeled_only && mode != SamplerMode::implicit)
        throw ConfigError("sampler.labeled_only requires implicit mode");
}

std::unique_ptr<BatchSampler> make_sampler(const SamplerConfig& cfg, const DataSplit& split,
                                           const LabelView& labels, std::uint64_t seed) {
    cfg.validate();
    const std::uint64_t sampler_seed = derive_seed(seed, Stream::sampler);
    switch (cfg.mode) {
    case SamplerMode::implicit: {
        IndexList pool;
        if (cfg.labeled_only) {
            for (Index id : split.train_idx)
                if (labels.configuration(id) != 0) pool.push_back(id);
        } else {
            pool = split.train_idx;
        }
        return std::make_unique<ImplicitSampler>(std::move(pool), cfg.batch_size, sampler_seed);
    }
    case SamplerMode::explicit_labeled: {
        if (labels.num_tasks() != 1)
            throw ConfigError("sampler.mode 'explicit' needs a single task; use 'explicit_multitask'");
        IndexList labeled;
        IndexList unlabeled;
        for (Index id : split.train_idx) (labels.is_labeled(0, id) ? labeled : unlabeled).push_back(id);
        return std::make_unique<ExplicitSampler>(std::move(labeled), std::move(unlabeled),
                                                 cfg.batch_size, cfg.labeled_fraction, sampler_seed);
    }
    case SamplerMode::explicit_multitask: {
        const Partition partition = multitask_partition(split.train_idx, labels);
        auto sizes = cfg.group_sizes.empty()
                         ? default_group_sizes(partition, cfg.batch_size)
                         : group_sizes_from_names(partition, cfg.group_sizes, labels.num_tasks(),
                                                  cfg.batch_size);
        return std::make_unique<MultitaskSampler>(partition, std::move(sizes), sampler_seed);
    }
    }
    throw ConfigError("unknown sampler mode");
}

}  // namespace batchlab
