#include "batchlab/config.hpp"
#include "batchlab/error.hpp"

#include "helpers.hpp"

#include <doctest.h>

using namespace batchlab;
using nlohmann::json;

namespace {

json minimal() { return json{{"spec_version", 1}}; }

}  // namespace

TEST_SUITE("config") {

TEST_CASE("defaults when only the version is given") {
    const auto cfg = parse_run_config(minimal());
    CHECK(cfg.fixmatch.tau == 0.95);
    CHECK(cfg.train.weight_decay == 5e-4);
    CHECK(cfg.train.ema_decay == 0.999);
    CHECK(cfg.sampler.mode == SamplerMode::implicit);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{0});
}

TEST_CASE("round trip through JSON and disk") {
    RunConfig cfg;
    cfg.name = "rt";
    cfg.data.dataset.n = 300;
    cfg.sampler.mode = SamplerMode::explicit_labeled;
    cfg.sampler.labeled_fraction = 0.25;
    cfg.augment.strong_scale_lo = 0.8;
    cfg.fixmatch.teacher = TeacherSource::ema;
    cfg.train.lr_schedule = LrSchedule::fixmatch_cosine;
    cfg.train.hidden = {16, 8};
    cfg.seeds = {3, 4};
    const json j = to_json(cfg);
    CHECK(to_json(parse_run_config(j)) == j);

    const auto dir = testutil::scratch("config_rt");
    save_run_config(dir / "c.json", cfg);
    CHECK(to_json(load_run_config(dir / "c.json")) == j);
}

TEST_CASE("errors name the offending key") {
    json j = minimal();
    apply_override(j, "sampler.mode=foo");
    CHECK_THROWS_WITH_AS(parse_run_config(j), doctest::Contains("sampler.mode"), ConfigError);

    j = minimal();
    j["train"] = {{"lr", 0.1}};
    CHECK_THROWS_WITH_AS(parse_run_config(j), doctest::Contains("train.lr: unknown key"), ConfigError);

    j = minimal();
    j["fixmatch"] = {{"tau", "high"}};
    CHECK_THROWS_WITH_AS(parse_run_config(j), doctest::Contains("fixmatch.tau"), ConfigError);

    j = minimal();
    j["fixmatch"] = {{"tau", 1.5}};
    CHECK_THROWS_WITH_AS(parse_run_config(j), doctest::Contains("fixmatch.tau"), ConfigError);

    j = minimal();
    j["data"] = {{"n_labeled", {4, -1}}};
    CHECK_THROWS_WITH_AS(parse_run_config(j), doctest::Contains("data.n_labeled"), ConfigError);
}

TEST_CASE("spec_version is required and checked") {
    CHECK_THROWS_WITH_AS(parse_run_config(json::object()), doctest::Contains("spec_version"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"spec_version", 2}}), ConfigError);
}

TEST_CASE("overrides") {
    json j = minimal();
    apply_override(j, "train.lr0=0.1");
    apply_override(j, "name=hello");
    apply_override(j, "seeds=[1,2]");
    apply_override(j, "metrics.row_log=true");
    const auto cfg = parse_run_config(j);
    CHECK(cfg.train.lr0 == 0.1);
    CHECK(cfg.name == "hello");
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2});
    CHECK(cfg.metrics.row_log);
    CHECK_THROWS_AS(apply_override(j, "novalue"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "name.x=1"), ConfigError);
}

TEST_CASE("sweep spec with a relative base_config") {
    const auto dir = testutil::scratch("sweep_spec");
    save_run_config(dir / "base.json", RunConfig{});
    json s{{"spec_version", 1},
           {"base_config", "base.json"},
           {"trial_budget", 3},
           {"master_seed", 9},
           {"params", {{{"key", "train.lr0"}, {"low", 0.001}, {"high", 0.1}, {"scale", "log"}}}}};
    write_json_file(dir / "sweep.json", s);
    const auto spec = load_sweep_spec(dir / "sweep.json");
    CHECK(spec.trial_budget == 3);
    CHECK(spec.params.at(0).scale == ParamScale::log);

    s["params"][0]["low"] = 0.0;
    CHECK_THROWS_AS(parse_sweep_spec(s, dir), ConfigError);
    s["params"][0]["low"] = 0.001;
    s["trial_budget"] = 0;
    CHECK_THROWS_AS(parse_sweep_spec(s, dir), ConfigError);
}

}
