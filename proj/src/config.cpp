#include "batchlab/config.hpp"

#include "batchlab/error.hpp"

#include <fmt/format.h>

#include <fstream>
#include <set>

namespace batchlab {

using nlohmann::json;

namespace {

std::string join_path(const std::string& base, std::string_view key) {
    return base.empty() ? std::string(key) : base + "." + std::string(key);
}

// Reads keys from one JSON object and rejects whatever was not read.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object())
            throw ConfigError(fmt::format("{}: expected an object", path_.empty() ? "<root>" : path_));
    }

    bool has(std::string_view key) const { return j_.contains(std::string(key)); }

    const json* find(std::string_view key) {
        seen_.insert(std::string(key));
        const auto it = j_.find(std::string(key));
        return it == j_.end() ? nullptr : &*it;
    }

    std::string key_path(std::string_view key) const { return join_path(path_, key); }

    void number(std::string_view key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw type_error(key, "a number");
            out = v->get<double>();
        }
    }

    void count(std::string_view key, std::size_t& out) {
        if (const json* v = find(key)) out = as_count(*v, key_path(key));
    }

    void seed(std::string_view key, std::uint64_t& out) {
        if (const json* v = find(key)) out = as_seed(*v, key_path(key));
    }

    void boolean(std::string_view key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw type_error(key, "a boolean");
            out = v->get<bool>();
        }
    }

    void string(std::string_view key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw type_error(key, "a string");
            out = v->get<std::string>();
        }
    }

    template <typename Enum, typename Parse>
    void enumeration(std::string_view key, Enum& out, Parse parse) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw type_error(key, "a string");
            try {
                out = parse(v->get<std::string>());
            } catch (const ConfigError& e) {
                throw ConfigError(fmt::format("{}: {}", key_path(key), e.what()));
            }
        }
    }

    template <typename T, typename Convert>
    void list(std::string_view key, std::vector<T>& out, Convert convert) {
        if (const json* v = find(key)) {
            if (!v->is_array()) throw type_error(key, "an array");
            std::vector<T> values;
            for (std::size_t i = 0; i < v->size(); ++i)
                values.push_back(convert((*v)[i], fmt::format("{}[{}]", key_path(key), i)));
            out = std::move(values);
        }
    }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.contains(item.key()))
                throw ConfigError(fmt::format("{}: unknown key", key_path(item.key())));
    }

    static std::size_t as_count(const json& v, const std::string& where) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
            throw ConfigError(fmt::format("{}: expected a non-negative integer", where));
        return v.get<std::size_t>();
    }

    static std::uint64_t as_seed(const json& v, const std::string& where) {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
            throw ConfigError(fmt::format("{}: expected a non-negative integer seed", where));
        return v.get<std::uint64_t>();
    }

private:
    ConfigError type_error(std::string_view key, std::string_view what) const {
        return ConfigError(fmt::format("{}: expected {}", key_path(key), what));
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename Fn>
void section(Reader& root, std::string_view key, Fn&& fn) {
    if (const json* v = root.find(key)) {
        Reader r(*v, root.key_path(key));
        fn(r);
        r.finish();
    }
}

}  // namespace

void RunConfig::validate() const {
    data.validate();
    sampler.validate();
    augment.validate();
    fixmatch.validate();
    train.validate();
    if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
    if (split_seeds.empty()) throw ConfigError("split_seeds: at least one split seed is required");
}

RunSetup RunConfig::setup_for(std::uint64_t seed, std::uint64_t split_seed) const {
    RunSetup s;
    s.data = data;
    s.sampler = sampler;
    s.augment = augment;
    s.fixmatch = fixmatch;
    s.train = train;
    s.metrics = metrics;
    s.seed = seed;
    s.split_seed = split_seed;
    return s;
}

RunConfig parse_run_config(const json& j) {
    Reader root(j, "");
    const json* version = root.find("spec_version");
    if (version == nullptr) throw ConfigError("spec_version: required key is missing");
    if (!version->is_number_integer() || version->get<int>() != kConfigVersion)
        throw ConfigError(fmt::format("spec_version: unsupported version {}, expected {}",
                                      version->dump(), kConfigVersion));

    RunConfig cfg;
    root.string("name", cfg.name);

    section(root, "data", [&](Reader& r) {
        auto& d = cfg.data;
        r.enumeration("kind", d.dataset.kind, parse_dataset_kind);
        r.count("n", d.dataset.n);
        r.count("n_test", d.n_test);
        r.number("noise_sigma", d.dataset.noise_sigma);
        r.list("num_classes", d.dataset.num_classes, [](const json& v, const std::string& where) {
            if (!v.is_number_integer()) throw ConfigError(fmt::format("{}: expected an integer", where));
            return v.get<int>();
        });
        r.list("task_defs", d.dataset.task_defs, [](const json& v, const std::string& where) {
            if (!v.is_string()) throw ConfigError(fmt::format("{}: expected a string", where));
            try {
                return parse_task_def(v.get<std::string>());
            } catch (const ConfigError& e) {
                throw ConfigError(fmt::format("{}: {}", where, e.what()));
            }
        });
        r.seed("seed", d.dataset.seed);
        r.number("val_fraction", d.val_fraction);
        r.list("n_labeled", d.n_labeled, Reader::as_count);
    });

    section(root, "sampler", [&](Reader& r) {
        auto& s = cfg.sampler;
        r.enumeration("mode", s.mode, parse_sampler_mode);
        r.count("batch_size", s.batch_size);
        r.number("labeled_fraction", s.labeled_fraction);
        if (const json* g = r.find("group_sizes")) {
            if (!g->is_object()) throw ConfigError(fmt::format("{}: expected an object", r.key_path("group_sizes")));
            s.group_sizes.clear();
            for (const auto& item : g->items())
                s.group_sizes[item.key()] =
                    Reader::as_count(item.value(), r.key_path("group_sizes") + "." + item.key());
        }
        r.boolean("labeled_only", s.labeled_only);
    });

    section(root, "augment", [&](Reader& r) {
        auto& a = cfg.augment;
        r.number("weak_sigma", a.weak_sigma);
        r.number("strong_sigma", a.strong_sigma);
        if (const json* range = r.find("strong_scale_range")) {
            if (!range->is_array() || range->size() != 2 || !(*range)[0].is_number() ||
                !(*range)[1].is_number())
                throw ConfigError(fmt::format("{}: expected [lo, hi]", r.key_path("strong_scale_range")));
            a.strong_scale_lo = (*range)[0].get<double>();
            a.strong_scale_hi = (*range)[1].get<double>();
        }
        r.number("strong_drop_prob", a.strong_drop_prob);
    });

    section(root, "fixmatch", [&](Reader& r) {
        auto& f = cfg.fixmatch;
        r.number("tau", f.tau);
        r.number("lambda_u", f.lambda_u);
        r.number("lambda_s", f.lambda_s);
        r.enumeration("supervised_aug", f.supervised_aug, parse_supervised_aug);
        r.enumeration("teacher", f.teacher, parse_teacher_source);
    });

    section(root, "train", [&](Reader& r) {
        auto& t = cfg.train;
        r.number("lr0", t.lr0);
        r.number("momentum", t.momentum);
        r.number("weight_decay", t.weight_decay);
        r.number("budget_epochs", t.budget_epochs);
        r.number("budget_multiplier", t.budget_multiplier);
        r.number("eval_every", t.eval_every);
        r.number("ema_decay", t.ema_decay);
        r.list("hidden", t.hidden, Reader::as_count);
        r.enumeration("lr_schedule", t.lr_schedule, parse_lr_schedule);
        r.string("init_checkpoint", t.init_checkpoint);
        r.boolean("reset_schedule", t.reset_schedule);
    });

    section(root, "metrics", [&](Reader& r) { r.boolean("row_log", cfg.metrics.row_log); });

    root.list("seeds", cfg.seeds, Reader::as_seed);
    root.list("split_seeds", cfg.split_seeds, Reader::as_seed);
    root.finish();
    cfg.validate();
    return cfg;
}

json to_json(const RunConfig& cfg) {
    json task_defs = json::array();
    for (auto def : cfg.data.dataset.task_defs) task_defs.push_back(std::string(to_string(def)));
    json group_sizes = json::object();
    for (const auto& [name, size] : cfg.sampler.group_sizes) group_sizes[name] = size;

    json j;
    j["spec_version"] = kConfigVersion;
    j["name"] = cfg.name;
    j["data"] = {
        {"kind", std::string(to_string(cfg.data.dataset.kind))},
        {"n", cfg.data.dataset.n},
        {"n_test", cfg.data.n_test},
        {"noise_sigma", cfg.data.dataset.noise_sigma},
        {"num_classes", cfg.data.dataset.num_classes},
        {"task_defs", task_defs},
        {"seed", cfg.data.dataset.seed},
        {"val_fraction", cfg.data.val_fraction},
        {"n_labeled", cfg.data.n_labeled},
    };
    j["sampler"] = {
        {"mode", std::string(to_string(cfg.sampler.mode))},
        {"batch_size", cfg.sampler.batch_size},
        {"labeled_fraction", cfg.sampler.labeled_fraction},
        {"group_sizes", group_sizes},
        {"labeled_only", cfg.sampler.labeled_only},
    };
    j["augment"] = {
        {"weak_sigma", cfg.augment.weak_sigma},
        {"strong_sigma", cfg.augment.strong_sigma},
        {"strong_scale_range", {cfg.augment.strong_scale_lo, cfg.augment.strong_scale_hi}},
        {"strong_drop_prob", cfg.augment.strong_drop_prob},
    };
    j["fixmatch"] = {
        {"tau", cfg.fixmatch.tau},
        {"lambda_u", cfg.fixmatch.lambda_u},
        {"lambda_s", cfg.fixmatch.lambda_s},
        {"supervised_aug", std::string(to_string(cfg.fixmatch.supervised_aug))},
        {"teacher", std::string(to_string(cfg.fixmatch.teacher))},
    };
    j["train"] = {
        {"lr0", cfg.train.lr0},
        {"momentum", cfg.train.momentum},
        {"weight_decay", cfg.train.weight_decay},
        {"budget_epochs", cfg.train.budget_epochs},
        {"budget_multiplier", cfg.train.budget_multiplier},
        {"eval_every", cfg.train.eval_every},
        {"ema_decay", cfg.train.ema_decay},
        {"hidden", cfg.train.hidden},
        {"lr_schedule", std::string(to_string(cfg.train.lr_schedule))},
        {"init_checkpoint", cfg.train.init_checkpoint},
        {"reset_schedule", cfg.train.reset_schedule},
    };
    j["metrics"] = {{"row_log", cfg.metrics.row_log}};
    j["seeds"] = cfg.seeds;
    j["split_seeds"] = cfg.split_seeds;
    return j;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: invalid JSON ({})", path.string(), e.what()));
    }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << j.dump(2) << '\n';
}

RunConfig load_run_config(const std::filesystem::path& path) {
    try {
        return parse_run_config(read_json_file(path));
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
    write_json_file(path, to_json(cfg));
}

void apply_override(json& doc, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw ConfigError(fmt::format("override '{}' is not of the form key=value", assignment));
    const std::string key(assignment.substr(0, eq));
    const std::string text(assignment.substr(eq + 1));
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError(fmt::format("override key '{}' is malformed", key));
        if (!node->is_object()) throw ConfigError(fmt::format("override key '{}' does not name an object member", key));
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

void SweepSpec::validate() const {
    if (trial_budget < 1) throw ConfigError("trial_budget: must be at least 1");
    for (const auto& p : params) {
        if (p.key.empty()) throw ConfigError("params: every entry needs a key");
        if (!(p.low < p.high))
            throw ConfigError(fmt::format("params.{}: range [{}, {}] is degenerate", p.key, p.low, p.high));
        if (p.scale == ParamScale::log && !(p.low > 0.0))
            throw ConfigError(fmt::format("params.{}: log scale needs a positive lower bound", p.key));
    }
    parse_run_config(base);
}

SweepSpec parse_sweep_spec(const json& j, const std::filesystem::path& relative_to) {
    Reader root(j, "");
    const json* version = root.find("spec_version");
    if (version == nullptr) throw ConfigError("spec_version: required key is missing");
    if (!version->is_number_integer() || version->get<int>() != kConfigVersion)
        throw ConfigError(fmt::format("spec_version: unsupported version {}", version->dump()));

    SweepSpec spec;
    if (const json* base = root.find("base")) {
        spec.base = *base;
    } else if (const json* path = root.find("base_config")) {
        if (!path->is_string()) throw ConfigError("base_config: expected a path string");
        std::filesystem::path p = path->get<std::string>();
        if (p.is_relative()) p = relative_to / p;
        spec.base = read_json_file(p);
    } else {
        throw ConfigError("base: a base run configuration is required (base or base_config)");
    }
    root.count("trial_budget", spec.trial_budget);
    root.seed("master_seed", spec.master_seed);
    if (const json* params = root.find("params")) {
        if (!params->is_array()) throw ConfigError("params: expected an array");
        for (std::size_t i = 0; i < params->size(); ++i) {
            Reader r((*params)[i], fmt::format("params[{}]", i));
            SearchParam p;
            r.string("key", p.key);
            r.number("low", p.low);
            r.number("high", p.high);
            std::string scale = "linear";
            r.string("scale", scale);
            if (scale == "log")
                p.scale = ParamScale::log;
            else if (scale != "linear")
                throw ConfigError(fmt::format("params[{}].scale: expected 'log' or 'linear'", i));
            r.boolean("integer", p.integer);
            r.finish();
            spec.params.push_back(std::move(p));
        }
    }
    root.finish();
    spec.validate();
    return spec;
}

SweepSpec load_sweep_spec(const std::filesystem::path& path) {
    try {
        return parse_sweep_spec(read_json_file(path), path.parent_path());
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace batchlab
