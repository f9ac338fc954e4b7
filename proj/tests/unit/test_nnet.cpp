#include "batchlab/error.hpp"
#include "batchlab/nnet.hpp"
#include "batchlab/rng.hpp"

#include "../oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace batchlab;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

double weighted_ce(const MlpParams& p, const Eigen::MatrixXd& x, const std::vector<int>& y,
                   const std::vector<double>& w) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto z = oracle::logits(p, x, i);
        s += w[static_cast<std::size_t>(i)] * oracle::cross_entropy(z, 0, z.size(), y[static_cast<std::size_t>(i)]);
    }
    return s;
}

}  // namespace

TEST_SUITE("nnet") {

TEST_CASE("forward matches a loop implementation") {
    const int classes[] = {3};
    auto p = init_mlp({2, 5, 3}, heads_for(classes), 11);
    Rng rng(1);
    const auto x = random_matrix(7, 2, rng);
    const auto cache = forward(p, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto z = oracle::logits(p, x, i);
        for (Eigen::Index c = 0; c < 3; ++c) CHECK(cache.logits(i, c) == doctest::Approx(z[c]).epsilon(1e-12));
    }
}

TEST_CASE("backward agrees with central differences") {
    const int classes[] = {3};
    auto p = init_mlp({2, 5, 3}, heads_for(classes), 3);
    Rng rng(2);
    const auto x = random_matrix(6, 2, rng);
    const std::vector<int> y{0, 1, 2, 2, 1, 0};
    const std::vector<double> w{0.5, 0.25, 1.0, 0.0, 0.75, 0.1};

    const auto cache = forward(p, x);
    const auto xent = softmax_xent(cache.logits, y, w);
    CHECK(xent.loss == doctest::Approx(weighted_ce(p, x, y, w)).epsilon(1e-10));
    const auto analytic = oracle::flatten(backward(p, cache, xent.grad));
    const auto numeric = oracle::finite_difference(p, [&](const MlpParams& q) { return weighted_ce(q, x, y, w); });
    CHECK(oracle::max_relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("two equal logits give ln 2") {
    Eigen::MatrixXd z(1, 2);
    z << 0.3, 0.3;
    const int y[] = {1};
    const double w[] = {1.0};
    const auto r = softmax_xent(z, y, w);
    CHECK(r.loss == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(r.grad(0, 0) == doctest::Approx(0.5));
    CHECK(r.grad(0, 1) == doctest::Approx(-0.5));
}

TEST_CASE("softmax survives huge logits") {
    Eigen::MatrixXd z(1, 2);
    z << 1000.0, -1000.0;
    const auto s = softmax_rows(z);
    CHECK(std::isfinite(s(0, 1)));
    CHECK(s(0, 0) == doctest::Approx(1.0));
    const int y[] = {1};
    const double w[] = {1.0};
    CHECK(softmax_xent(z, y, w).loss == doctest::Approx(2000.0));
}

TEST_CASE("zero-weight rows report CE without contributing") {
    Eigen::MatrixXd z(2, 2);
    z << 1.0, 0.0, 0.0, 2.0;
    const int y[] = {0, 0};
    const double w[] = {1.0, 0.0};
    const auto r = softmax_xent(z, y, w);
    CHECK(r.per_row_ce(1) > 0.0);
    CHECK(r.grad.row(1).isZero());
    CHECK(r.loss == doctest::Approx(r.per_row_ce(0)));
}

TEST_CASE("prediction confidence and tie-break") {
    Eigen::MatrixXd z(2, 2);
    z << 3.0, 1.0, 0.5, 0.5;
    const auto p = predict_from_logits(z);
    CHECK(p.classes[0] == 0);
    CHECK(p.confidences[0] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(p.confidences[0] == doctest::Approx(0.8808).epsilon(1e-4));
    CHECK(p.classes[1] == 0);
    CHECK(p.confidences[1] == doctest::Approx(0.5));
}

TEST_CASE("head slices are contiguous") {
    const int classes[] = {2, 3, 2};
    const auto h = heads_for(classes);
    REQUIRE(h.size() == 3);
    CHECK(h[1] == HeadSlice{2, 3});
    CHECK(h[2] == HeadSlice{5, 2});
    CHECK_THROWS_AS(init_mlp({2, 4, 6}, h, 0), ConfigError);
}

TEST_CASE("init is seeded and He-uniform bounded") {
    const int classes[] = {2};
    const auto a = init_mlp({2, 64, 2}, heads_for(classes), 5);
    const auto b = init_mlp({2, 64, 2}, heads_for(classes), 5);
    const auto c = init_mlp({2, 64, 2}, heads_for(classes), 6);
    CHECK(a.same_values(b));
    CHECK_FALSE(a.same_values(c));
    CHECK(a.layers[0].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 2.0));
    CHECK(a.layers[1].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 64.0));
    CHECK(a.layers[0].bias.isZero());
    CHECK(a.num_parameters() == 2 * 64 + 64 + 64 * 2 + 2);
}

TEST_CASE("EMA update") {
    const int classes[] = {2};
    auto p = init_mlp({2, 3, 2}, heads_for(classes), 1);
    auto ema = make_ema(p, 0.999);
    const double before = ema.shadow.layers[0].weight(0, 0);
    p.layers[0].weight(0, 0) = before + 1.0;
    ema_update(ema, p);
    CHECK(ema.shadow.layers[0].weight(0, 0) == doctest::Approx(before + 0.001).epsilon(1e-12));
}

TEST_CASE("stale forward cache is rejected") {
    const int classes[] = {2};
    auto p = init_mlp({2, 3, 2}, heads_for(classes), 1);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 2);
    const auto cache = forward(p, x);
    ++p.revision;
    CHECK_THROWS_AS(backward(p, cache, Eigen::MatrixXd::Zero(2, 2)), ConfigError);
    const auto other = init_mlp({2, 3, 2}, heads_for(classes), 2);
    CHECK_THROWS_AS(backward(other, cache, Eigen::MatrixXd::Zero(2, 2)), ConfigError);
    CHECK_THROWS_AS(forward(p, Eigen::MatrixXd::Ones(2, 3)), ConfigError);
}

}
