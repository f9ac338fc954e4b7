#include "batchlab/experiment.hpp"

#include "batchlab/error.hpp"
#include "batchlab/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <thread>

namespace batchlab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Runs fn(0..n-1) on up to `jobs` threads; the first failure by index is re-thrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Same exception type, message prefixed with the run id.
[[noreturn]] void rethrow_with_context(const std::string& context) {
    try {
        throw;
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", context, e.what()));
    } catch (const SchemaError& e) {
        throw SchemaError(fmt::format("{}: {}", context, e.what()));
    } catch (const DivergenceError& e) {
        throw DivergenceError(fmt::format("{}: {}", context, e.what()));
    } catch (const InfeasibleError& e) {
        throw InfeasibleError(fmt::format("{}: {}", context, e.what()));
    } catch (const SplitError& e) {
        throw SplitError(fmt::format("{}: {}", context, e.what()));
    } catch (const CheckpointError& e) {
        throw CheckpointError(fmt::format("{}: {}", context, e.what()));
    } catch (const IoError& e) {
        throw IoError(fmt::format("{}: {}", context, e.what()));
    } catch (const std::exception& e) {
        throw std::runtime_error(fmt::format("{}: {}", context, e.what()));
    }
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> complement(const std::optional<double>& v) {
    if (!v) return std::nullopt;
    return 1.0 - *v;
}

double chance_level(const std::vector<int>& num_classes) {
    double sum = 0.0;
    for (int c : num_classes) sum += 1.0 / static_cast<double>(c);
    return num_classes.empty() ? 0.0 : sum / static_cast<double>(num_classes.size());
}

json stat_json(const std::vector<double>& values) {
    const auto s = mean_std(values);
    if (!s) return nullptr;
    return {{"mean", s->mean}, {"std", s->std}, {"count", s->count}};
}

json collapse_json(const CollapseReport& c) {
    return {{"collapsed", c.collapsed},         {"chance", c.chance},
            {"peak_accuracy", c.peak_accuracy}, {"peak_epoch", c.peak_epoch},
            {"min_after_peak", c.min_after_peak}, {"collapse_epoch", c.collapse_epoch}};
}

ReplicateOutcome load_replicate(const fs::path& dir) {
    const RunConfig cfg = load_run_config(dir / "config.json");
    const std::vector<MetricsRow> rows = read_metrics_csv(dir / "metrics.csv");
    ReplicateOutcome out;
    out.id = dir.filename().string();
    out.seed = cfg.seeds.front();
    out.split_seed = cfg.split_seeds.front();
    out.dir = dir;
    out.summary = summarize_rows(rows);
    out.collapse = detect_collapse(rows, chance_level(cfg.data.dataset.num_classes));
    if (!rows.empty()) out.samples_seen = rows.back().samples_seen;
    return out;
}

json summary_from(const std::string& name, const std::vector<ReplicateOutcome>& reps) {
    json list = json::array();
    std::vector<double> best_val, test_at_best, final_test;
    std::size_t collapsed = 0;
    for (const auto& r : reps) {
        list.push_back({{"id", r.id},
                        {"seed", r.seed},
                        {"split_seed", r.split_seed},
                        {"best_val_accuracy", opt_json(r.summary.best_val_accuracy)},
                        {"test_accuracy_at_best", opt_json(r.summary.test_accuracy_at_best)},
                        {"final_test_accuracy", opt_json(r.summary.final_test_accuracy)},
                        {"best_epoch", r.summary.best_epoch},
                        {"samples_seen", r.samples_seen},
                        {"collapse", collapse_json(r.collapse)}});
        if (r.summary.best_val_accuracy) best_val.push_back(*r.summary.best_val_accuracy);
        if (r.summary.test_accuracy_at_best) test_at_best.push_back(*r.summary.test_accuracy_at_best);
        if (r.summary.final_test_accuracy) final_test.push_back(*r.summary.final_test_accuracy);
        if (r.collapse.collapsed) ++collapsed;
    }
    return {{"name", name},
            {"replicates", list},
            {"best_val_accuracy", stat_json(best_val)},
            {"test_accuracy_at_best", stat_json(test_at_best)},
            {"final_test_accuracy", stat_json(final_test)},
            {"collapsed_runs", collapsed}};
}

}  // namespace

fs::path output_root() {
    const char* env = std::getenv("SSL_BATCHLAB_DIR");
    if (env != nullptr && *env != '\0') return fs::path(env);
    return fs::path("runs");
}

std::string replicate_id(std::uint64_t seed, std::uint64_t split_seed) {
    return fmt::format("seed{}_split{}", seed, split_seed);
}

RunSummary summarize_rows(std::span<const MetricsRow> rows) {
    RunSummary s;
    const MetricsRow* best = nullptr;
    for (const auto& row : rows) {
        if (!row.val_acc) continue;
        if (best == nullptr || *row.val_acc > *best->val_acc) best = &row;
    }
    if (best == nullptr && !rows.empty()) best = &rows.back();
    if (best != nullptr) {
        s.best_val_accuracy = best->val_acc;
        s.test_accuracy_at_best = complement(best->test_err);
        s.best_epoch = best->epoch;
    }
    if (!rows.empty()) s.final_test_accuracy = complement(rows.back().test_err);
    return s;
}

CollapseReport detect_collapse(std::span<const MetricsRow> rows, double chance, double margin) {
    CollapseReport c;
    c.chance = chance;
    std::size_t peak = rows.size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].test_err) continue;
        const double acc = 1.0 - *rows[i].test_err;
        if (peak == rows.size() || acc > c.peak_accuracy) {
            peak = i;
            c.peak_accuracy = acc;
            c.peak_epoch = rows[i].epoch;
        }
    }
    if (peak == rows.size()) return c;
    c.min_after_peak = c.peak_accuracy;
    for (std::size_t i = peak + 1; i < rows.size(); ++i) {
        if (!rows[i].test_err) continue;
        const double acc = 1.0 - *rows[i].test_err;
        c.min_after_peak = std::min(c.min_after_peak, acc);
        if (!c.collapsed && acc <= chance + margin) {
            c.collapsed = true;
            c.collapse_epoch = rows[i].epoch;
        }
    }
    return c;
}

std::optional<Stat> mean_std(std::span<const double> values) {
    if (values.empty()) return std::nullopt;
    Stat s;
    s.count = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size()));
    return s;
}

ExperimentResult run_experiment(const RunConfig& cfg_in, const fs::path& dir, std::size_t jobs) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    if (!cfg.train.init_checkpoint.empty()) {
        fs::path ckpt = cfg.train.init_checkpoint;
        if (ckpt.is_relative()) ckpt = output_root() / ckpt;
        cfg.train.init_checkpoint = ckpt.string();
    }

    struct Pair {
        std::uint64_t seed, split;
    };
    std::vector<Pair> pairs;
    for (auto split : cfg.split_seeds)
        for (auto seed : cfg.seeds) pairs.push_back({seed, split});

    fs::create_directories(dir);
    save_run_config(dir / "config.json", cfg);

    ExperimentResult result;
    result.name = cfg.name;
    result.dir = dir;
    result.replicates.resize(pairs.size());
    const double chance = chance_level(cfg.data.dataset.num_classes);

    parallel_for(pairs.size(), jobs, [&](std::size_t i) {
        const auto [seed, split] = pairs[i];
        const std::string id = replicate_id(seed, split);
        try {
            const fs::path run_dir = dir / id;
            fs::create_directories(run_dir);
            RunConfig single = cfg;
            single.seeds = {seed};
            single.split_seeds = {split};
            save_run_config(run_dir / "config.json", single);
            const RunResult run = train(cfg.setup_for(seed, split), run_dir);
            ReplicateOutcome& out = result.replicates[i];
            out.id = id;
            out.seed = seed;
            out.split_seed = split;
            out.dir = run_dir;
            out.summary = summarize_rows(run.rows);
            out.collapse = detect_collapse(run.rows, chance);
            out.samples_seen = run.samples_seen;
            out.steps = run.steps;
        } catch (...) {
            rethrow_with_context(fmt::format("run {}/{}", cfg.name, id));
        }
    });

    result.summary = summary_from(cfg.name, result.replicates);
    write_json_file(dir / "summary.json", result.summary);
    return result;
}

json summarize_experiment(const fs::path& dir) {
    const RunConfig cfg = load_run_config(dir / "config.json");
    std::vector<ReplicateOutcome> reps;
    for (auto split : cfg.split_seeds)
        for (auto seed : cfg.seeds) reps.push_back(load_replicate(dir / replicate_id(seed, split)));
    return summary_from(cfg.name, reps);
}

ExperimentResult resume_experiment(const fs::path& checkpoint, const std::vector<std::string>& overrides,
                                   std::size_t jobs) {
    if (!fs::exists(checkpoint))
        throw IoError(fmt::format("checkpoint '{}' does not exist", checkpoint.string()));
    const fs::path config_path = checkpoint.parent_path() / "config.json";
    json doc = read_json_file(config_path);
    if (doc.contains("name") && doc["name"].is_string())
        doc["name"] = doc["name"].get<std::string>() + "_resume";
    doc["train"]["init_checkpoint"] = fs::absolute(checkpoint).string();
    for (const auto& o : overrides) apply_override(doc, o);
    const RunConfig cfg = parse_run_config(doc);
    return run_experiment(cfg, output_root() / cfg.name, jobs);
}

std::map<std::string, double> sample_trial(const SweepSpec& spec, std::size_t index) {
    Rng rng(derive_seed(derive_seed(spec.master_seed, Stream::sweep), index));
    std::map<std::string, double> values;
    for (const auto& p : spec.params) {
        const double u = rng.uniform();
        double v = p.scale == ParamScale::log
                       ? std::exp(std::log(p.low) + u * (std::log(p.high) - std::log(p.low)))
                       : p.low + u * (p.high - p.low);
        if (p.integer) v = std::clamp(std::round(v), std::ceil(p.low), std::floor(p.high));
        values[p.key] = v;
    }
    return values;
}

SweepResult run_sweep(const SweepSpec& spec, const fs::path& dir, std::size_t jobs) {
    spec.validate();
    const RunConfig base = parse_run_config(spec.base);
    fs::create_directories(dir);

    std::vector<TrialOutcome> trials(spec.trial_budget);
    parallel_for(trials.size(), jobs, [&](std::size_t i) {
        TrialOutcome& t = trials[i];
        t.index = i;
        t.values = sample_trial(spec, i);
        const fs::path trial_dir = dir / fmt::format("trial_{:03d}", i);
        fs::create_directories(trial_dir);
        json doc = spec.base;
        for (const auto& p : spec.params) {
            const double v = t.values[p.key];
            const std::string text = p.integer ? fmt::format("{}", static_cast<long long>(v)) : format_double(v);
            apply_override(doc, p.key + "=" + text);
        }
        try {
            RunConfig cfg = parse_run_config(doc);
            cfg.name = fmt::format("{}_trial_{:03d}", base.name, i);
            cfg.seeds = {base.seeds.front()};
            cfg.split_seeds = {base.split_seeds.front()};
            t.config = to_json(cfg);
            const ExperimentResult r = run_experiment(cfg, trial_dir, 1);
            t.val_accuracy = r.replicates.front().summary.best_val_accuracy;
            t.test_accuracy = r.replicates.front().summary.test_accuracy_at_best;
        } catch (const std::exception& e) {
            // Divergent or infeasible trials are recorded and the sweep goes on.
            t.failed = true;
            t.error = e.what();
            if (t.config.is_null()) t.config = doc;
            std::ofstream(trial_dir / "error.txt") << t.error << '\n';
        }
    });

    SweepResult result;
    result.leaderboard = trials;
    std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(),
                     [](const TrialOutcome& a, const TrialOutcome& b) {
                         if (a.failed != b.failed) return !a.failed;
                         const double va = a.val_accuracy.value_or(-1.0);
                         const double vb = b.val_accuracy.value_or(-1.0);
                         return va > vb;
                     });
    if (!result.leaderboard.empty() && !result.leaderboard.front().failed)
        result.best_trial = result.leaderboard.front().index;

    std::ofstream csv(dir / "leaderboard.csv");
    if (!csv) throw IoError(fmt::format("cannot write '{}'", (dir / "leaderboard.csv").string()));
    csv << "rank,trial,status,val_acc,test_acc";
    for (const auto& p : spec.params) csv << ',' << p.key;
    csv << ",error\n";
    for (std::size_t rank = 0; rank < result.leaderboard.size(); ++rank) {
        const auto& t = result.leaderboard[rank];
        csv << rank + 1 << ',' << fmt::format("trial_{:03d}", t.index) << ',' << (t.failed ? "failed" : "ok")
            << ',' << (t.val_accuracy ? format_double(*t.val_accuracy) : "") << ','
            << (t.test_accuracy ? format_double(*t.test_accuracy) : "");
        for (const auto& p : spec.params) csv << ',' << format_double(t.values.at(p.key));
        std::string err = t.error;
        std::replace(err.begin(), err.end(), '\n', ' ');
        std::replace(err.begin(), err.end(), '"', '\'');
        csv << ",\"" << err << "\"\n";
    }

    if (result.best_trial) {
        RunConfig best = parse_run_config(trials[*result.best_trial].config);
        best.name = base.name + "_best";
        best.seeds = base.seeds;
        best.split_seeds = base.split_seeds;
        save_run_config(dir / "best_config.json", best);
    }
    return result;
}

AuditResult audit_sampler(const RunConfig& cfg, std::optional<std::size_t> steps) {
    cfg.validate();
    const PreparedData prepared = prepare_data(cfg.data, cfg.split_seeds.front());
    const DataSplit& split = prepared.split;
    const LabelView labels(prepared.data, split);
    auto sampler = make_sampler(cfg.sampler, split, labels, cfg.seeds.front());
    const std::size_t B = sampler->batch_size();
    const std::size_t T = labels.num_tasks();

    AuditResult audit;
    audit.batch_size = B;
    audit.steps = steps.value_or(split.train_idx.size() / B);

    BatchPlan plan;
    for (std::size_t s = 0; s < audit.steps; ++s) plan.push_back(sampler->next());
    const auto counts = count_exposure(plan);

    // Per-sample expected exposure: steps * (slots for its pool) / (pool size).
    std::map<Index, double> expected;
    const double steps_d = static_cast<double>(audit.steps);
    if (cfg.sampler.mode == SamplerMode::implicit) {
        IndexList pool;
        for (Index id : split.train_idx) {
            bool any = !cfg.sampler.labeled_only;
            for (std::size_t t = 0; t < T && !any; ++t) any = labels.is_labeled(t, id);
            if (any) pool.push_back(id);
        }
        for (Index id : pool) expected[id] = steps_d * static_cast<double>(B) / static_cast<double>(pool.size());
    } else {
        const Partition partition = multitask_partition(split.train_idx, labels);
        std::vector<std::size_t> sizes;
        if (cfg.sampler.mode == SamplerMode::explicit_labeled) {
            const std::size_t n_l = labeled_per_batch(cfg.sampler.labeled_fraction, B);
            for (const auto& g : partition) sizes.push_back(g.configuration != 0 ? n_l : B - n_l);
        } else if (cfg.sampler.group_sizes.empty()) {
            sizes = default_group_sizes(partition, B);
        } else {
            sizes = group_sizes_from_names(partition, cfg.sampler.group_sizes, T, B);
        }
        for (std::size_t k = 0; k < partition.size(); ++k)
            for (Index id : partition[k].ids)
                expected[id] = steps_d * static_cast<double>(sizes[k]) /
                               static_cast<double>(partition[k].ids.size());
    }

    std::map<std::uint32_t, ExposureGroup, std::greater<>> groups;
    IndexList ids = split.train_idx;
    std::sort(ids.begin(), ids.end());
    for (Index id : ids) {
        ExposureRow row;
        row.sample_id = id;
        const std::uint32_t conf = labels.configuration(id);
        row.configuration = configuration_name(conf, T);
        const auto c = counts.find(id);
        row.exposure_count = c == counts.end() ? 0 : c->second;
        const auto e = expected.find(id);
        row.expected_exposure = e == expected.end() ? 0.0 : e->second;
        ExposureGroup& g = groups[conf];
        g.configuration = row.configuration;
        ++g.samples;
        g.mean_exposure += static_cast<double>(row.exposure_count);
        g.expected_exposure += row.expected_exposure;
        audit.rows.push_back(std::move(row));
    }
    for (auto& [conf, g] : groups) {
        g.mean_exposure /= static_cast<double>(g.samples);
        g.expected_exposure /= static_cast<double>(g.samples);
        audit.groups.push_back(g);
    }
    const std::uint32_t full = T >= 32 ? 0xffffffffu : (1u << T) - 1u;
    const auto labeled = groups.find(full);
    const auto unlabeled = groups.find(0);
    if (labeled != groups.end() && unlabeled != groups.end() && unlabeled->second.mean_exposure > 0.0)
        audit.labeled_unlabeled_ratio = labeled->second.mean_exposure / unlabeled->second.mean_exposure;
    return audit;
}

void write_audit_csv(const fs::path& path, const AuditResult& audit) {
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << "sample_id,configuration,exposure_count,expected_exposure\n";
    for (const auto& r : audit.rows)
        out << r.sample_id << ',' << r.configuration << ',' << r.exposure_count << ','
            << format_double(r.expected_exposure) << '\n';
}

}  // namespace batchlab
