#pragma once

#include "batchlab/rng.hpp"
#include "batchlab/synthdata.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace batchlab {

enum class SamplerMode { implicit, explicit_labeled, explicit_multitask };

SamplerMode parse_sampler_mode(std::string_view name);
std::string_view to_string(SamplerMode mode);

// Ordered sample ids of one mini-batch plus per-task label visibility.
struct Batch {
    IndexList indices;
    std::vector<std::vector<std::uint8_t>> labeled;  // [task][row]

    std::size_t size() const { return indices.size(); }
};

using BatchPlan = std::vector<IndexList>;

Batch annotate(IndexList indices, const LabelView& labels);

// Labeled rows per batch for ratio r: round(r * B), ties rounded up.
std::size_t labeled_per_batch(double labeled_fraction, std::size_t batch_size);

// One uniform pass: consecutive B-sized chunks of a random permutation of
// `train_idx`; a trailing partial chunk is dropped.
BatchPlan implicit_epoch(std::span<const Index> train_idx, std::size_t batch_size, Rng& rng);

// Endless shuffled pass over a fixed index set, reshuffled each time it is depleted.
class CyclingStream {
public:
    CyclingStream(IndexList ids, std::uint64_t seed);

    Index next();
    std::size_t size() const { return order_.size(); }

private:
    IndexList order_;
    std::size_t pos_ = 0;
    Rng rng_;
};

class BatchSampler {
public:
    virtual ~BatchSampler() = default;
    virtual IndexList next() = 0;
    virtual std::size_t batch_size() const = 0;
};

class ImplicitSampler final : public BatchSampler {
public:
    ImplicitSampler(IndexList train_idx, std::size_t batch_size, std::uint64_t seed);

    IndexList next() override;
    std::size_t batch_size() const override { return batch_size_; }

private:
    IndexList train_idx_;
    std::size_t batch_size_;
    Rng rng_;
    BatchPlan pending_;
    std::size_t cursor_ = 0;
};

// One sub-part of a multi-task explicit batch.
struct ConfigurationGroup {
    std::uint32_t configuration = 0;  // bit t set when labeled for task t
    IndexList ids;
};

// Training samples grouped by label configuration. Empty configurations are
// omitted; groups are ordered by descending configuration so the fully
// labeled group comes first and the unlabeled group last.
using Partition = std::vector<ConfigurationGroup>;

Partition multitask_partition(std::span<const Index> train_idx, const LabelView& labels);

// Bit string of a configuration, character t describing task t ("10" = labeled for task 0 only).
std::string configuration_name(std::uint32_t configuration, std::size_t num_tasks);

// One stream per group; group k draws `group_sizes[k]` ids per batch.
class MultitaskSampler final : public BatchSampler {
public:
    MultitaskSampler(const Partition& partition, std::vector<std::size_t> group_sizes,
                     std::uint64_t seed);

    IndexList next() override;
    std::size_t batch_size() const override { return batch_size_; }
    const std::vector<std::size_t>& group_sizes() const { return group_sizes_; }

private:
    std::vector<CyclingStream> streams_;
    std::vector<std::size_t> group_sizes_;
    std::size_t batch_size_ = 0;
};

// Labeled part first (round(r*B) rows), unlabeled remainder second.
class ExplicitSampler final : public BatchSampler {
public:
    ExplicitSampler(IndexList labeled_idx, IndexList unlabeled_idx, std::size_t batch_size,
                    double labeled_fraction, std::uint64_t seed);

    IndexList next() override;
    std::size_t batch_size() const override { return inner_->batch_size(); }
    std::size_t labeled_rows() const { return labeled_rows_; }

private:
    std::size_t labeled_rows_;
    std::unique_ptr<MultitaskSampler> inner_;
};

BatchPlan explicit_stream(std::span<const Index> labeled_idx, std::span<const Index> unlabeled_idx,
                          std::size_t batch_size, double labeled_fraction, std::uint64_t seed,
                          std::size_t num_steps);

BatchPlan explicit_multitask_stream(const Partition& partition,
                                    std::span<const std::size_t> group_sizes, std::uint64_t seed,
                                    std::size_t num_steps);

// One slot per group, the remaining B - K slots shared in proportion to group
// sizes (largest remainder). Throws InfeasibleError when K > B.
std::vector<std::size_t> default_group_sizes(const Partition& partition, std::size_t batch_size);

// Sizes keyed by configuration name, reordered to match `partition`.
std::vector<std::size_t> group_sizes_from_names(const Partition& partition,
                                                const std::map<std::string, std::size_t>& sizes,
                                                std::size_t num_tasks, std::size_t batch_size);

enum class BudgetDecision { proceed, stop };

struct BudgetLedger {
    std::uint64_t samples_seen = 0;
    std::uint64_t train_size = 0;
    std::uint64_t budget_samples = 0;

    double epochs_elapsed() const {
        return train_size == 0 ? 0.0
                               : static_cast<double>(samples_seen) / static_cast<double>(train_size);
    }
    void record(std::size_t batch_size) { samples_seen += batch_size; }
};

// Stops exactly when the next batch would exceed the allowance.
BudgetDecision budget_check(const BudgetLedger& ledger, std::size_t batch_size);

// round(epochs * multiplier * train_size) samples.
std::uint64_t budget_samples_for(double epochs, std::uint64_t train_size, double multiplier = 1.0);

// Number of batches a budget admits: floor(budget / B).
std::uint64_t steps_for_budget(std::uint64_t budget_samples, std::size_t batch_size);

struct SamplerConfig {
    SamplerMode mode = SamplerMode::implicit;
    std::size_t batch_size = 64;
    double labeled_fraction = 0.5;                     // explicit only
    std::map<std::string, std::size_t> group_sizes;    // explicit_multitask; empty = default sizes
    bool labeled_only = false;                         // implicit over labeled samples (supervised baseline)

    void validate() const;
};

// Sampler over the training split. `explicit` needs a single task; with
// `labeled_only` the implicit sampler draws from samples labeled for any task.
std::unique_ptr<BatchSampler> make_sampler(const SamplerConfig& cfg, const DataSplit& split,
                                           const LabelView& labels, std::uint64_t seed);

// Times each id occurs in `plan`; ids never drawn are absent from the map.
std::map<Index, std::size_t> count_exposure(const BatchPlan& plan);

}  // namespace batchlab
