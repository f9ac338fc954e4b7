#include "batchlab/error.hpp"
#include "batchlab/synthdata.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace batchlab;

namespace {

DatasetSpec moons(std::size_t n, std::uint64_t seed = 1) {
    DatasetSpec s;
    s.kind = DatasetKind::moons;
    s.n = n;
    s.noise_sigma = 0.15;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_SUITE("synthdata") {
    TEST_CASE("moons are balanced") {
        const Dataset d = generate(moons(20));
        CHECK(d.size() == 20);
        CHECK(d.dim() == 2);
        CHECK(std::count(d.labels[0].begin(), d.labels[0].end(), 0) == 10);
        CHECK(std::count(d.labels[0].begin(), d.labels[0].end(), 1) == 10);
    }

    TEST_CASE("generation is deterministic") {
        CHECK(generate(moons(1000, 5)) == generate(moons(1000, 5)));
        CHECK_FALSE(generate(moons(1000, 5)) == generate(moons(1000, 6)));
    }

    TEST_CASE("noise-free moons lie on their arcs") {
        DatasetSpec s = moons(200);
        s.noise_sigma = 0.0;
        const Dataset d = generate(s);
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double x = d.features(static_cast<Eigen::Index>(i), 0);
            const double y = d.features(static_cast<Eigen::Index>(i), 1);
            if (d.labels[0][i] == 0) {
                CHECK(x * x + y * y == doctest::Approx(1.0).epsilon(1e-12));
                CHECK(y >= -1e-12);
            } else {
                CHECK((x - 1) * (x - 1) + (y - 0.5) * (y - 0.5) == doctest::Approx(1.0).epsilon(1e-12));
                CHECK(y <= 0.5 + 1e-12);
            }
        }
    }

    TEST_CASE("blobs give C balanced classes") {
        DatasetSpec s;
        s.kind = DatasetKind::blobs;
        s.n = 30;
        s.num_classes = {3};
        s.task_defs = {TaskDef::blob};
        const Dataset d = generate(s);
        for (int c = 0; c < 3; ++c) CHECK(std::count(d.labels[0].begin(), d.labels[0].end(), c) == 10);
    }

    TEST_CASE("invalid specs are rejected") {
        DatasetSpec s = moons(0);
        CHECK_THROWS_AS(generate(s), ConfigError);
        s = moons(10);
        s.noise_sigma = -1.0;
        CHECK_THROWS_AS(generate(s), ConfigError);
        s = moons(10);
        s.num_classes = {1};
        CHECK_THROWS_AS(generate(s), ConfigError);
    }

    TEST_CASE("labeled selection is class balanced") {
        const Dataset d = generate(moons(100));
        const auto labeled = select_labeled(d, std::vector<std::size_t>{4}, 9);
        REQUIRE(labeled.size() == 1);
        REQUIRE(labeled[0].size() == 4);
        int ones = 0;
        for (auto id : labeled[0]) ones += d.labels[0][id];
        CHECK(ones == 2);
        CHECK(std::is_sorted(labeled[0].begin(), labeled[0].end()));

        const auto five = select_labeled(d, std::vector<std::size_t>{5}, 9);
        ones = 0;
        for (auto id : five[0]) ones += d.labels[0][id];
        CHECK((ones == 2 || ones == 3));
    }

    TEST_CASE("too many labels per class raises SplitError") {
        const Dataset d = generate(moons(10));
        CHECK_THROWS_AS(select_labeled(d, std::vector<std::size_t>{12}, 1), SplitError);
    }

    TEST_CASE("split partitions the indices and stratifies") {
        const Dataset d = generate(moons(1000));
        const DataSplit s = split(d, 0.1, 3, 200);
        std::set<Index> all;
        all.insert(s.train_idx.begin(), s.train_idx.end());
        all.insert(s.val_idx.begin(), s.val_idx.end());
        all.insert(s.test_idx.begin(), s.test_idx.end());
        CHECK(all.size() == 1000);
        CHECK(s.test_idx.size() == 200);
        CHECK(s.val_idx.size() == 80);
        int val_ones = 0;
        for (auto id : s.val_idx) val_ones += d.labels[0][id];
        CHECK(val_ones == 40);
    }

    TEST_CASE("label view hides labels but keeps them privileged") {
        const Dataset d = generate(moons(20));
        const DataSplit s = testutil::all_train(20, {{3, 7}});
        const LabelView v(d, s);
        CHECK(v.is_labeled(0, 3));
        CHECK_FALSE(v.is_labeled(0, 4));
        CHECK(v.observed_label(0, 3) == d.labels[0][3]);
        CHECK_FALSE(v.observed_label(0, 4).has_value());
        CHECK(v.privileged_label(0, 4) == d.labels[0][4]);
        CHECK(v.configuration(3) == 1u);
        CHECK(v.configuration(4) == 0u);
    }

    TEST_CASE("multi-task moons use the sign rule") {
        DatasetSpec s = moons(200);
        s.num_classes = {2, 2};
        s.task_defs = {TaskDef::moon, TaskDef::sign_x0};
        const Dataset d = generate(s);
        for (std::size_t i = 0; i < d.size(); ++i)
            CHECK(d.labels[1][i] == (d.features(static_cast<Eigen::Index>(i), 0) > 0.5 ? 1 : 0));
    }

    TEST_CASE("dataset cache round-trips") {
        DataConfig cfg;
        cfg.dataset = moons(50);
        const Dataset d = generate(cfg.dataset);
        const DataSplit s = testutil::all_train(50, {{1, 2}});
        const auto path = testutil::scratch("cache") / "data.csv";
        const LabelView v(d, s);
        write_dataset_cache(path, d, &v);
        const CachedDataset c = read_dataset_cache(path, 2);
        CHECK(c.features == d.features);
        CHECK(c.labels[0][1] == d.labels[0][1]);
        CHECK_FALSE(c.labels[0][3].has_value());
    }

    TEST_CASE("prepared data is standardized on the training split") {
        DataConfig cfg;
        cfg.dataset = moons(400);
        cfg.n_test = 100;
        const PreparedData p = prepare_data(cfg, 0);
        CHECK(p.split.test_idx.size() == 100);
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(2);
        for (auto id : p.split.train_idx) mean += p.data.features.row(static_cast<Eigen::Index>(id));
        mean /= static_cast<double>(p.split.train_idx.size());
        CHECK(std::abs(mean(0)) < 1e-12);
        CHECK(std::abs(mean(1)) < 1e-12);
        CHECK(p.feature_std(0) == doctest::Approx(1.0));
        CHECK(p.split.labeled_idx[0].size() == 4);
    }
}
