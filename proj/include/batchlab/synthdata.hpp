#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace batchlab {

using Index = std::size_t;
using IndexList = std::vector<Index>;

enum class DatasetKind { moons, blobs };

// Per-task labeling rule.
//   moon    : which half-moon generated the point (moons only, 2 classes)
//   blob    : which Gaussian blob generated the point (blobs only, C classes)
//   sign_x0 : whether the first coordinate lies right of the data's center (2 classes)
enum class TaskDef { moon, blob, sign_x0 };

DatasetKind parse_dataset_kind(std::string_view name);
TaskDef parse_task_def(std::string_view name);
std::string_view to_string(DatasetKind kind);
std::string_view to_string(TaskDef def);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::moons;
    std::size_t n = 0;
    double noise_sigma = 0.1;
    std::vector<int> num_classes{2};
    std::uint64_t seed = 0;
    std::vector<TaskDef> task_defs{TaskDef::moon};

    // Throws ConfigError when the spec is inconsistent.
    void validate() const;
};

// Fully labeled synthetic dataset. Row i of `features` is the sample with id i;
// `labels[t][i]` is its ground-truth class for task t.
struct Dataset {
    Eigen::MatrixXd features;
    std::vector<std::vector<int>> labels;
    std::vector<int> num_classes;

    std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
    std::size_t num_tasks() const { return num_classes.size(); }

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.features.rows() == b.features.rows() && a.features.cols() == b.features.cols() &&
               a.features == b.features && a.labels == b.labels && a.num_classes == b.num_classes;
    }
};

struct DataSplit {
    IndexList train_idx;
    IndexList val_idx;
    IndexList test_idx;
    std::vector<IndexList> labeled_idx;  // per task, subset of train_idx, sorted
};

Dataset generate(const DatasetSpec& spec);

// Class-balanced labeled subsets drawn from `candidates`, one per task. For
// n_t labels over C_t classes, the first n_t mod C_t classes receive one extra
// sample. Results are sorted ascending. Throws SplitError when a class runs out.
std::vector<IndexList> select_labeled(const Dataset& data, std::span<const Index> candidates,
                                      std::span<const std::size_t> n_labeled_per_task,
                                      std::uint64_t seed);
std::vector<IndexList> select_labeled(const Dataset& data,
                                      std::span<const std::size_t> n_labeled_per_task,
                                      std::uint64_t seed);

// Stratified on task 0. `test_count` samples are held out first, then
// round(val_fraction * remaining) go to validation. labeled_idx is left empty.
DataSplit split(const Dataset& data, double val_fraction, std::uint64_t seed,
                std::size_t test_count = 0);

struct Standardization {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd scale;
};

// Per-dimension mean/std over `rows`; a zero std is replaced by 1.
Standardization fit_standardization(const Dataset& data, std::span<const Index> rows);
void apply_standardization(Dataset& data, const Standardization& st);

// Per-dimension population std over `rows`.
Eigen::RowVectorXd feature_std(const Dataset& data, std::span<const Index> rows);

// Label visibility for training. Masked labels stay available through
// privileged_label() for diagnostics only.
class LabelView {
public:
    LabelView(const Dataset& data, const DataSplit& split);

    std::size_t num_tasks() const { return labeled_.size(); }
    bool is_labeled(std::size_t task, Index id) const { return labeled_[task][id] != 0; }
    std::optional<int> observed_label(std::size_t task, Index id) const;
    int privileged_label(std::size_t task, Index id) const { return (*labels_)[task][id]; }

    // T-bit label configuration, bit t set when labeled for task t.
    std::uint32_t configuration(Index id) const;

private:
    const std::vector<std::vector<int>>* labels_;
    std::vector<std::vector<std::uint8_t>> labeled_;
};

// Text cache: header line, then `id,f_0,...,f_{d-1},l_0,...,l_{T-1}` per sample
// with `-` for an absent label.
struct CachedDataset {
    Eigen::MatrixXd features;
    std::vector<std::vector<std::optional<int>>> labels;  // [task][sample]
};

void write_dataset_cache(const std::filesystem::path& path, const Dataset& data,
                         const LabelView* visible = nullptr);
// `dim` is needed to tell feature fields from label fields.
CachedDataset read_dataset_cache(const std::filesystem::path& path, std::size_t dim);

inline constexpr std::string_view kDatasetCacheHeader = "ssl-batchlab-dataset v1";

// Generation plus splitting parameters for one experiment.
struct DataConfig {
    DatasetSpec dataset{.n = 1000};     // dataset.n = training pool (train + validation)
    std::size_t n_test = 1000;           // extra held-out test samples generated alongside
    double val_fraction = 0.1;          // of the non-test samples
    std::vector<std::size_t> n_labeled{4};  // per task

    void validate() const;
};

// Dataset standardized with train-split statistics, its split with labeled
// subsets, and the per-dimension train std used by augmentation.
struct PreparedData {
    Dataset data;
    DataSplit split;
    Eigen::RowVectorXd feature_std;
};

// The dataset and validation/test split depend on the dataset seed only; the
// labeled subsets depend on `split_seed`.
PreparedData prepare_data(const DataConfig& cfg, std::uint64_t split_seed);

}  // namespace batchlab
