#pragma once

#include "batchlab/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace batchlab {

inline constexpr int kConfigVersion = 1;

// A run configuration file: every section plus the replicate seeds. A run
// expands to one training run per (seed, split_seed) pair.
struct RunConfig {
    std::string name = "run";
    DataConfig data;
    SamplerConfig sampler;
    AugmentConfig augment;
    FixmatchConfig fixmatch;
    TrainConfig train;
    MetricsConfig metrics;
    std::vector<std::uint64_t> seeds{0};
    std::vector<std::uint64_t> split_seeds{0};

    void validate() const;
    RunSetup setup_for(std::uint64_t seed, std::uint64_t split_seed) const;
};

// Strict parse: unknown keys and type mismatches raise ConfigError naming the
// key path. Missing keys keep their defaults; `spec_version` is required.
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

// Applies `dotted.key=value` to a JSON document. The value is parsed as JSON
// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, std::string_view assignment);

enum class ParamScale { linear, log };

struct SearchParam {
    std::string key;  // dotted config path, e.g. "train.lr0"
    double low = 0.0;
    double high = 1.0;
    ParamScale scale = ParamScale::linear;
    bool integer = false;
};

struct SweepSpec {
    nlohmann::json base;  // a run configuration document
    std::vector<SearchParam> params;
    std::size_t trial_budget = 100;
    std::uint64_t master_seed = 0;

    void validate() const;
};

// `base` may be given inline or as `base_config`, a path relative to the sweep file.
SweepSpec load_sweep_spec(const std::filesystem::path& path);
SweepSpec parse_sweep_spec(const nlohmann::json& j, const std::filesystem::path& relative_to);

}  // namespace batchlab
