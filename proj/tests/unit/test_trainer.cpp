#include "batchlab/error.hpp"
#include "batchlab/trainer.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

using namespace batchlab;

namespace {

RunSetup tiny_setup() {
    RunSetup s;
    s.data.dataset.n = 200;
    s.data.n_test = 100;
    s.data.n_labeled = {4};
    s.sampler.mode = SamplerMode::explicit_labeled;
    s.sampler.batch_size = 16;
    s.sampler.labeled_fraction = 0.25;
    s.train.budget_epochs = 4;
    s.train.hidden = {8};
    s.seed = 1;
    s.split_seed = 2;
    return s;
}

MlpParams two_layer() {
    const int classes[] = {2};
    return init_mlp({2, 3, 2}, heads_for(classes), 7);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("cosine schedule endpoints") {
    CHECK(cosine_lr(0, 100, 0.03) == doctest::Approx(0.03));
    CHECK(cosine_lr(50, 100, 0.03) == doctest::Approx(0.015));
    CHECK(cosine_lr(100, 100, 0.03) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(scheduled_lr(LrSchedule::fixmatch_cosine, 100, 100, 0.03) ==
          doctest::Approx(0.03 * std::cos(7.0 * std::numbers::pi / 16.0)));
    CHECK_THROWS_AS(cosine_lr(1, 0, 0.03), ConfigError);
    CHECK(parse_lr_schedule("fixmatch_cosine") == LrSchedule::fixmatch_cosine);
    CHECK_THROWS_AS(parse_lr_schedule("step"), ConfigError);
}

TEST_CASE("Nesterov step by hand") {
    auto p = two_layer();
    const auto start = p;
    auto opt = make_opt_state(p);
    auto g = zeros_like(p);
    g.layers[0].weight(1, 0) = 2.0;
    g.layers[1].bias(1) = -1.0;
    const double lr = 0.1, mu = 0.9, wd = 0.01;

    sgd_nesterov_step(p, g, opt, lr, mu, wd);
    const double w0 = start.layers[0].weight(1, 0);
    const double gt = 2.0 + wd * w0;
    const double v1 = -lr * gt;
    CHECK(opt.velocity.layers[0].weight(1, 0) == doctest::Approx(v1));
    CHECK(p.layers[0].weight(1, 0) == doctest::Approx(w0 + mu * v1 - lr * gt));
    // Biases are not decayed.
    CHECK(p.layers[1].bias(1) == doctest::Approx(0.0 + mu * 0.1 + 0.1));

    const double w1 = p.layers[0].weight(1, 0);
    sgd_nesterov_step(p, g, opt, lr, mu, wd);
    const double gt2 = 2.0 + wd * w1;
    const double v2 = mu * v1 - lr * gt2;
    CHECK(p.layers[0].weight(1, 0) == doctest::Approx(w1 + mu * v2 - lr * gt2));
    CHECK(opt.step == 2);
    CHECK(p.revision == start.revision + 2);

    // Weight decay on an untouched weight.
    const double w_other = start.layers[1].weight(0, 0);
    CHECK(p.layers[1].weight(0, 0) != w_other);
}

TEST_CASE("non-finite gradient raises DivergenceError") {
    auto p = two_layer();
    auto opt = make_opt_state(p);
    auto g = zeros_like(p);
    g.layers[0].bias(0) = std::nan("");
    CHECK_THROWS_AS(sgd_nesterov_step(p, g, opt, 0.1, 0.9, 0.0), DivergenceError);
}

TEST_CASE("checkpoint round trip") {
    const auto dir = testutil::scratch("ckpt");
    Checkpoint c{two_layer(), two_layer(), make_opt_state(two_layer()), {}};
    c.ema.layers[0].weight(0, 0) = 0.125;
    c.opt.velocity.layers[1].bias(0) = -3.5;
    c.opt.step = 42;
    c.ledger = {160, 80, 800};
    save_checkpoint(dir / "a", c);
    const auto back = load_checkpoint(dir / "a");
    CHECK(back.params.same_values(c.params));
    CHECK(back.ema.same_values(c.ema));
    CHECK(back.opt.velocity.same_values(c.opt.velocity));
    CHECK(back.opt.step == 42);
    CHECK(back.ledger.samples_seen == 160);
    CHECK(back.ledger.budget_samples == 800);
    save_checkpoint(dir / "b", back);
    CHECK(slurp(dir / "a") == slurp(dir / "b"));
}

TEST_CASE("bad checkpoints") {
    const auto dir = testutil::scratch("ckpt_bad");
    Checkpoint c{two_layer(), two_layer(), make_opt_state(two_layer()), {}};
    save_checkpoint(dir / "good", c);
    const std::string bytes = slurp(dir / "good");

    std::ofstream(dir / "version") << "ssl-batchlab-ckpt v9\n";
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "version"), doctest::Contains("unsupported checkpoint version"),
                         CheckpointError);
    std::ofstream(dir / "other") << "hello\n";
    CHECK_THROWS_AS(load_checkpoint(dir / "other"), CheckpointError);
    std::ofstream(dir / "short", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "short"), doctest::Contains("truncated"), CheckpointError);
    std::ofstream(dir / "long", std::ios::binary) << bytes << "x";
    CHECK_THROWS_AS(load_checkpoint(dir / "long"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing"), IoError);
}

TEST_CASE("training loop respects the budget and writes artifacts") {
    const auto dir = testutil::scratch("train");
    const auto setup = tiny_setup();
    const auto r = train(setup, dir);
    // 200 samples, 10% validation: 180 train, 4 epochs, B = 16.
    CHECK(r.budget_samples == 720);
    CHECK(r.steps == 45);
    CHECK(r.samples_seen == 720);
    CHECK(r.rows.size() == 4);
    CHECK(r.rows.back().epoch == doctest::Approx(4.0));
    CHECK(std::filesystem::exists(dir / "metrics.csv"));
    CHECK(std::filesystem::exists(dir / "ckpt_best"));
    const auto final_ckpt = load_checkpoint(dir / "ckpt_final");
    CHECK(final_ckpt.opt.step == 45);
    CHECK(final_ckpt.ledger.samples_seen == 720);
    for (const auto& row : r.rows) {
        CHECK(row.sup_loss.has_value());
        CHECK(row.pseudo_label_ratio.has_value());
    }
}

TEST_CASE("training is deterministic") {
    const auto a = testutil::scratch("det_a");
    const auto b = testutil::scratch("det_b");
    train(tiny_setup(), a);
    train(tiny_setup(), b);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "ckpt_final") == slurp(b / "ckpt_final"));
}

TEST_CASE("an absurd learning rate diverges") {
    auto setup = tiny_setup();
    setup.train.lr0 = 1e12;
    setup.train.momentum = 0.99;
    CHECK_THROWS_AS(train(setup, std::nullopt), DivergenceError);
}

TEST_CASE("init checkpoint shape must match") {
    const auto dir = testutil::scratch("init_shape");
    Checkpoint c{two_layer(), two_layer(), make_opt_state(two_layer()), {}};
    save_checkpoint(dir / "c", c);
    auto setup = tiny_setup();
    setup.train.init_checkpoint = (dir / "c").string();
    CHECK_THROWS_AS(train(setup, std::nullopt), ConfigError);
}

}
