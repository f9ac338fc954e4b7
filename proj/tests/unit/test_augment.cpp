#include "batchlab/augment.hpp"
#include "batchlab/error.hpp"

#include <doctest.h>

#include <cmath>

using namespace batchlab;

namespace {

constexpr Eigen::Index kDraws = 100000;

struct Moments {
    double mean = 0.0;
    double var = 0.0;
    double zero_fraction = 0.0;
};

Moments column_moments(const Eigen::MatrixXd& m, Eigen::Index col) {
    Moments r;
    const auto c = m.col(col);
    r.mean = c.mean();
    r.var = (c.array() - r.mean).square().mean();
    r.zero_fraction = static_cast<double>((c.array() == 0.0).count()) / static_cast<double>(c.size());
    return r;
}

}  // namespace

TEST_SUITE("augment") {

TEST_CASE("weak noise scales with the feature std") {
    AugmentConfig cfg;
    cfg.weak_sigma = 0.1;
    Eigen::RowVectorXd std(2);
    std << 2.0, 0.5;
    Eigen::MatrixXd x(kDraws, 2);
    x.col(0).setConstant(1.0);
    x.col(1).setConstant(-3.0);
    Rng rng(4);
    const auto out = weak_augment(x, cfg, std, rng);
    const auto a = column_moments(out, 0);
    const auto b = column_moments(out, 1);
    CHECK(a.mean == doctest::Approx(1.0).epsilon(0.02));
    CHECK(b.mean == doctest::Approx(-3.0).epsilon(0.02));
    CHECK(std::sqrt(a.var) == doctest::Approx(0.2).epsilon(0.02));
    CHECK(std::sqrt(b.var) == doctest::Approx(0.05).epsilon(0.02));
}

TEST_CASE("strong augmentation moments") {
    AugmentConfig cfg;  // sigma 0.25, scale [0.7, 1.3], drop 0.1
    Eigen::RowVectorXd std = Eigen::RowVectorXd::Ones(1);
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(kDraws, 1);
    Rng rng(9);
    const auto out = strong_augment(x, cfg, std, rng);
    const auto m = column_moments(out, 0);
    const double keep = 1.0 - cfg.strong_drop_prob;
    const double s2 = 1.0 + 0.6 * 0.6 / 12.0;
    const double e2 = 1.0 + cfg.strong_sigma * cfg.strong_sigma;
    CHECK(m.mean == doctest::Approx(keep).epsilon(0.02));
    CHECK(m.var == doctest::Approx(keep * s2 * e2 - keep * keep).epsilon(0.02));
    CHECK(m.zero_fraction == doctest::Approx(cfg.strong_drop_prob).epsilon(0.02));
}

TEST_CASE("strong scale is shared within a row") {
    AugmentConfig cfg;
    cfg.strong_sigma = 0.0;
    cfg.strong_drop_prob = 0.0;
    Eigen::RowVectorXd std = Eigen::RowVectorXd::Ones(3);
    Eigen::MatrixXd x(500, 3);
    x.col(0).setConstant(1.0);
    x.col(1).setConstant(2.0);
    x.col(2).setConstant(-1.0);
    Rng rng(1);
    const auto out = strong_augment(x, cfg, std, rng);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        CHECK(out(i, 1) == doctest::Approx(2.0 * out(i, 0)));
        CHECK(out(i, 2) == doctest::Approx(-out(i, 0)));
        CHECK(out(i, 0) >= 0.7);
        CHECK(out(i, 0) <= 1.3);
    }
}

TEST_CASE("same seed gives the same views") {
    AugmentConfig cfg;
    Eigen::RowVectorXd std = Eigen::RowVectorXd::Ones(2);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(16, 2);
    Rng a(3), b(3);
    CHECK(strong_augment(x, cfg, std, a) == strong_augment(x, cfg, std, b));
    CHECK(weak_augment(x, cfg, std, a) == weak_augment(x, cfg, std, b));
}

TEST_CASE("invalid settings") {
    AugmentConfig cfg;
    cfg.strong_drop_prob = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.strong_scale_lo = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.weak_sigma = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

}
