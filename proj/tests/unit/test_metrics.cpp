#include "batchlab/error.hpp"
#include "batchlab/metrics.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <fstream>

using namespace batchlab;

namespace {

TaskBatchStats task_stats(std::size_t labeled, std::size_t unlabeled, std::size_t kept,
                          std::size_t correct, std::size_t correct_kept) {
    TaskBatchStats s;
    s.labeled_rows = labeled;
    s.unlabeled_rows = unlabeled;
    s.kept_rows = kept;
    s.correct_unlabeled = correct;
    s.correct_kept = correct_kept;
    s.confidence_sum = 0.9 * static_cast<double>(unlabeled);
    s.sup_ce_sum = 0.2 * static_cast<double>(labeled);
    s.unsup_ce_sum = 0.5 * static_cast<double>(kept);
    return s;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("ratios pool over batches, not over batch means") {
    EpochAccumulator acc;
    acc.add(BatchStats{{task_stats(2, 4, 1, 1, 1)}, {}});
    acc.add(BatchStats{{task_stats(2, 4, 3, 3, 2)}, {}});
    CHECK(acc.batches() == 2);
    CHECK(*acc.pseudo_label_ratio() == doctest::Approx(0.5));
    CHECK(*acc.unlabeled_pred_acc() == doctest::Approx(0.5));
    CHECK(*acc.pseudo_label_acc() == doctest::Approx(0.75));
    CHECK(*acc.mean_confidence() == doctest::Approx(0.9));
    CHECK(*acc.sup_loss() == doctest::Approx(0.2));
    CHECK(*acc.unsup_loss() == doctest::Approx(0.5 * 4 / 8.0));
}

TEST_CASE("zero denominators are undefined") {
    EpochAccumulator acc;
    acc.add(BatchStats{{task_stats(4, 0, 0, 0, 0)}, {}});
    CHECK_FALSE(acc.pseudo_label_ratio().has_value());
    CHECK_FALSE(acc.pseudo_label_acc().has_value());
    CHECK_FALSE(acc.unsup_loss().has_value());
    CHECK(acc.sup_loss().has_value());
    CHECK_FALSE(safe_ratio(1.0, 0).has_value());
    acc.reset();
    CHECK(acc.batches() == 0);
    CHECK_FALSE(acc.sup_loss().has_value());
}

TEST_CASE("task count must match") {
    EpochAccumulator acc(2);
    CHECK_THROWS_AS(acc.add(BatchStats{{task_stats(1, 1, 1, 1, 1)}, {}}), ConfigError);
}

TEST_CASE("privileged accuracy") {
    const int pred[] = {0, 1, 1, 0};
    const std::uint8_t keep[] = {1, 0, 1, 0};
    const int hidden[] = {0, 0, 1, 1};
    const auto [all, kept] = privileged_accuracy(pred, keep, hidden);
    CHECK(*all == doctest::Approx(0.5));
    CHECK(*kept == doctest::Approx(1.0));
    const std::uint8_t none[] = {0, 0, 0, 0};
    CHECK_FALSE(privileged_accuracy(pred, none, hidden).second.has_value());
}

TEST_CASE("metrics CSV round trip keeps empty fields") {
    const auto dir = testutil::scratch("metrics_csv");
    MetricsRow a;
    a.epoch = 1.0 / 3.0;
    a.samples_seen = 60;
    a.lr = 0.029999;
    a.val_acc = 0.875;
    a.sup_loss = 1e-17;
    MetricsRow b = a;
    b.epoch = 2.0;
    b.pseudo_label_ratio = 0.0;
    const std::vector<MetricsRow> rows{a, b};
    write_metrics_csv(dir / "m.csv", rows);
    CHECK(read_metrics_csv(dir / "m.csv") == rows);

    std::ifstream in(dir / "m.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "epoch,samples_seen,lr,train_err_labeled,val_acc,test_err,sup_loss,unsup_loss,"
          "mean_confidence_unlabeled,pseudo_label_ratio,unlabeled_pred_acc,pseudo_label_acc");
}

TEST_CASE("malformed metrics files") {
    const auto dir = testutil::scratch("metrics_bad");
    write_metrics_csv(dir / "header_only.csv", {});
    CHECK(read_metrics_csv(dir / "header_only.csv").empty());
    std::ofstream(dir / "empty.csv");
    CHECK_THROWS_AS(read_metrics_csv(dir / "empty.csv"), SchemaError);
    std::ofstream(dir / "cols.csv") << "epoch,lr\n1,2\n";
    CHECK_THROWS_AS(read_metrics_csv(dir / "cols.csv"), SchemaError);
    CHECK_THROWS_AS(read_metrics_csv(dir / "nope.csv"), IoError);
}

TEST_CASE("pseudo-label log round trip") {
    const auto dir = testutil::scratch("plog");
    std::vector<LoggedRecord> rows{{0, 1, {5, 0, 1, 0.75, true, 1}}, {2, 9, {7, 1, 0, 0.5, false, 1}}};
    write_pseudo_label_log(dir / "p.csv", rows);
    const auto back = read_pseudo_label_log(dir / "p.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[1].window == 2);
    CHECK(back[1].step == 9);
    CHECK(back[1].record.id == 7);
    CHECK(back[1].record.task == 1);
    CHECK(back[0].record.kept);
    CHECK(back[0].record.confidence == 0.75);
}

}
