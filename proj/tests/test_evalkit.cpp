#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "attnseg/errors.hpp"
#include "attnseg/evalkit.hpp"
#include "attnseg/rng.hpp"
#include "oracles.hpp"

using namespace attnseg;

namespace {

MaskGrid mask_from(std::initializer_list<int> bits, int rows, int cols) {
  MaskGrid m(rows, cols);
  auto it = bits.begin();
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<std::uint8_t>(*it++);
  return m;
}

MaskGrid random_mask(int side, double p, Rng& rng) {
  MaskGrid m(side, side);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(p) ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("dice and iou") {
  const MaskGrid a = mask_from({1, 1, 1, 1, 0, 0}, 2, 3);
  const MaskGrid b = mask_from({1, 1, 0, 0, 0, 0}, 2, 3);
  CHECK(dice(a, a) == 1.0);
  CHECK(iou(a, a) == 1.0);
  CHECK(dice(a, b) == doctest::Approx(4.0 / 6.0));
  CHECK(iou(a, b) == doctest::Approx(0.5));
  const MaskGrid empty = MaskGrid::Zero(2, 3);
  CHECK(dice(empty, empty) == 1.0);
  CHECK(iou(empty, empty) == 1.0);
  const MaskGrid c = mask_from({0, 0, 0, 0, 1, 1}, 2, 3);
  CHECK(dice(a, c) == 0.0);
  CHECK(iou(a, c) == 0.0);
  CHECK_THROWS_AS(dice(a, MaskGrid::Zero(3, 2)), InputError);
  CHECK_THROWS_AS(iou(a, MaskGrid::Zero(3, 2)), InputError);

  SUBCASE("symmetry and iou <= dice with equality only at 0 and 1") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      const MaskGrid x = random_mask(6, 0.4, rng);
      const MaskGrid y = random_mask(6, 0.4, rng);
      const double d = dice(x, y), i = iou(x, y);
      CHECK(d == dice(y, x));
      CHECK(i == iou(y, x));
      CHECK(i <= d + 1e-15);
      if (std::abs(d - i) < 1e-15) CHECK((d == 0.0 || d == 1.0));
      CHECK(d == doctest::Approx(oracle::brute_dice(x, y)));
      CHECK(i == doctest::Approx(oracle::brute_iou(x, y)));
    }
  }
}

TEST_CASE("detection metrics") {
  SUBCASE("perfect predictions") {
    const auto m = detection_metrics({1, 0, 1, 0}, {1, 0, 1, 0});
    CHECK(m.accuracy == 1.0);
    CHECK(*m.precision == 1.0);
    CHECK(*m.recall == 1.0);
    CHECK(*m.specificity == 1.0);
    CHECK(*m.f1 == 1.0);
  }
  SUBCASE("one of each confusion cell gives one half everywhere") {
    const auto m = detection_metrics({1, 1, 0, 0}, {1, 0, 0, 1});
    CHECK(m.accuracy == 0.5);
    CHECK(*m.precision == 0.5);
    CHECK(*m.recall == 0.5);
    CHECK(*m.specificity == 0.5);
    CHECK(*m.f1 == 0.5);
  }
  SUBCASE("all-negative predictions leave precision absent") {
    const auto m = detection_metrics({0, 0, 0}, {1, 0, 1});
    CHECK_FALSE(m.precision.has_value());
    CHECK_FALSE(m.f1.has_value());
    CHECK(*m.specificity == 1.0);
    CHECK(*m.recall == 0.0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(detection_metrics({1}, {1, 0}), InputError);
    CHECK_THROWS_AS(detection_metrics({}, {}), InputError);
  }
  SUBCASE("matches the brute confusion oracle") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<int> preds, gts;
      const int n = 1 + static_cast<int>(rng.uniform_int(0, 20));
      for (int i = 0; i < n; ++i) {
        preds.push_back(rng.bernoulli(0.5));
        gts.push_back(rng.bernoulli(0.5));
      }
      const auto m = detection_metrics(preds, gts);
      const auto ref = oracle::brute_confusion(preds, gts);
      CHECK(m.accuracy == ref.accuracy());
      CHECK(m.precision.has_value() == ref.has_precision());
      if (m.precision) CHECK(*m.precision == ref.precision());
      CHECK(m.recall.has_value() == ref.has_recall());
      if (m.recall) CHECK(*m.recall == ref.recall());
      CHECK(m.specificity.has_value() == ref.has_specificity());
      if (m.specificity) CHECK(*m.specificity == ref.specificity());
    }
  }
}

TEST_CASE("auc") {
  CHECK(*auc_roc({0.2, 0.8}, {0, 1}) == 1.0);
  CHECK(*auc_roc({0.8, 0.2}, {0, 1}) == 0.0);
  CHECK(*auc_roc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
  CHECK_FALSE(auc_roc({0.1, 0.2}, {1, 1}).has_value());
  CHECK_FALSE(auc_roc({0.1, 0.2}, {0, 0}).has_value());
  CHECK_THROWS_AS(auc_roc({0.1}, {1, 0}), InputError);

  SUBCASE("invariant under strictly increasing transforms") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> scores;
      std::vector<int> gts;
      for (int i = 0; i < 30; ++i) {
        scores.push_back(std::round(rng.normal() * 4.0) / 4.0);
        gts.push_back(rng.bernoulli(0.4));
      }
      if (std::count(gts.begin(), gts.end(), 1) == 0 ||
          std::count(gts.begin(), gts.end(), 0) == 0)
        continue;
      std::vector<double> warped = scores;
      for (auto& s : warped) s = std::exp(0.7 * s) + 3.0;
      CHECK(*auc_roc(scores, gts) == doctest::Approx(*auc_roc(warped, gts)).epsilon(1e-12));
    }
  }
  SUBCASE("rank sweep agrees with pairwise counting on large tied inputs") {
    Rng rng(4);
    std::vector<double> scores;
    std::vector<int> gts;
    for (int i = 0; i < 300; ++i) {  // 300 forces the sweep path
      scores.push_back(std::round(rng.uniform() * 10.0) / 10.0);
      gts.push_back(rng.bernoulli(0.5));
    }
    CHECK(*auc_roc(scores, gts) ==
          doctest::Approx(oracle::brute_auc_pairwise(scores, gts)).epsilon(1e-12));
  }
}

TEST_CASE("fold making") {
  std::vector<std::string> studies;
  for (int i = 0; i < 10; ++i) studies.push_back("s" + std::to_string(i));
  const FoldSplit split = make_folds(studies, 5, 42);
  CHECK(split.k == 5);
  REQUIRE(split.folds.size() == 5);
  std::vector<std::string> seen;
  for (const auto& fold : split.folds) {
    CHECK(fold.size() == 2);
    for (const auto& s : fold) seen.push_back(s);
  }
  std::sort(seen.begin(), seen.end());
  std::vector<std::string> want = studies;
  std::sort(want.begin(), want.end());
  CHECK(seen == want);

  const FoldSplit again = make_folds(studies, 5, 42);
  CHECK(again.folds == split.folds);
  const FoldSplit other = make_folds(studies, 5, 43);
  CHECK(other.folds != split.folds);

  CHECK_THROWS_AS(make_folds({"a", "b"}, 5, 1), ConfigError);

  SUBCASE("every study lands in exactly one fold on random inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 5 + static_cast<int>(rng.uniform_int(0, 40));
      std::vector<std::string> ids;
      for (int i = 0; i < n; ++i) ids.push_back("p" + std::to_string(i));
      const auto s = make_folds(ids, 5, trial);
      long total = 0;
      for (const auto& fold : s.folds) total += static_cast<long>(fold.size());
      CHECK(total == n);
      for (const auto& id : ids) CHECK(s.fold_of(id) >= 0);
    }
  }
}

TEST_CASE("paired t-test") {
  SUBCASE("identical samples are degenerate") {
    CHECK_THROWS_AS(paired_ttest({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}), DegenerateInputError);
  }
  SUBCASE("reference values") {
    // frozen from an independent statistics package
    const auto r = paired_ttest({1, 2, 3, 4}, {1.1, 1.9, 3.2, 3.8});
    CHECK(r.df == 3);
    CHECK(r.t == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(r.p == doctest::Approx(1.0).epsilon(1e-9));

    const auto r2 = paired_ttest({0.46, 0.52, 0.38, 0.61, 0.49}, {0.41, 0.44, 0.40, 0.52, 0.47});
    CHECK(r2.df == 4);
    CHECK(r2.t == doctest::Approx(2.183683334736).epsilon(1e-6));
    CHECK(r2.p == doctest::Approx(0.094355335631).epsilon(1e-6));
  }
  SUBCASE("swapping the samples negates t and keeps p") {
    const auto a = paired_ttest({0.5, 0.7, 0.3, 0.9}, {0.4, 0.5, 0.35, 0.8});
    const auto b = paired_ttest({0.4, 0.5, 0.35, 0.8}, {0.5, 0.7, 0.3, 0.9});
    CHECK(a.t == doctest::Approx(-b.t).epsilon(1e-12));
    CHECK(a.p == doctest::Approx(b.p).epsilon(1e-12));
  }
  SUBCASE("length checks") {
    CHECK_THROWS_AS(paired_ttest({1.0}, {2.0}), UsageError);
    CHECK_THROWS_AS(paired_ttest({1.0, 2.0}, {2.0}), InputError);
  }
}

TEST_CASE("evaluate_method aggregates folds and subjects") {
  FoldSplit split;
  split.k = 2;
  split.folds = {{"a", "b"}, {"c", "d"}};

  auto result = [](const std::string& study, int slice, int gt, int pred, double score,
                   std::optional<double> d, std::optional<double> i) {
    SliceResult r;
    r.study_id = study;
    r.slice_index = slice;
    r.gt_positive = gt;
    r.pred_positive = pred;
    r.score = score;
    r.dice_score = d;
    r.iou_score = i;
    return r;
  };

  SUBCASE("perfect outputs give all ones") {
    std::vector<SliceResult> results = {
        result("a", 0, 1, 1, 0.9, 1.0, 1.0), result("a", 1, 0, 0, 0.1, {}, {}),
        result("b", 0, 0, 0, 0.2, {}, {}),   result("c", 0, 1, 1, 0.8, 1.0, 1.0),
        result("d", 0, 0, 0, 0.3, {}, {}),   result("d", 1, 1, 1, 0.95, 1.0, 1.0),
    };
    const FoldReport report = evaluate_method(results, split, "hgi-sam");
    REQUIRE(report.folds.size() == 2);
    for (const auto& f : report.folds) {
      CHECK(f.detection.accuracy == 1.0);
      CHECK(*f.auc == 1.0);
      CHECK(f.dice_mean == 1.0);
    }
    CHECK(report.dice_mean == 1.0);
    CHECK(report.accuracy.mean == 1.0);
    CHECK(report.n_subjects == 3);
    const std::string text = report_table_text(report);
    CHECK(text.find("hgi-sam") != std::string::npos);
    const std::string csv = report_csv(report);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 2 folds + aggregate
  }

  SUBCASE("aggregate equals the pooled per-subject mean") {
    Rng rng(6);
    std::vector<SliceResult> results;
    std::map<std::string, std::vector<double>> per_subject;
    for (const auto& fold : split.folds)
      for (const auto& study : fold) {
        const int n_slices = 1 + static_cast<int>(rng.uniform_int(0, 3));
        for (int s = 0; s < n_slices; ++s) {
          const int gt = rng.bernoulli(0.7);
          const double d = rng.uniform();
          results.push_back(result(study, s, gt, rng.bernoulli(0.5), rng.uniform(),
                                   gt ? std::optional<double>(d) : std::nullopt,
                                   gt ? std::optional<double>(d * 0.8) : std::nullopt));
          if (gt) per_subject[study].push_back(d);
        }
      }
    const FoldReport report = evaluate_method(results, split, "sam");
    double acc = 0.0;
    long n = 0;
    for (const auto& [study, ds] : per_subject) {
      double m = 0.0;
      for (double d : ds) m += d;
      acc += m / static_cast<double>(ds.size());
      ++n;
    }
    CHECK(report.n_subjects == n);
    CHECK(report.dice_mean == doctest::Approx(acc / n).epsilon(1e-9));
  }

  SUBCASE("missing studies are a coverage error naming them") {
    std::vector<SliceResult> results = {result("a", 0, 1, 1, 0.9, 1.0, 1.0),
                                        result("b", 0, 0, 0, 0.2, {}, {}),
                                        result("c", 0, 1, 1, 0.8, 1.0, 1.0)};
    CHECK_THROWS_WITH_AS(evaluate_method(results, split, "sam"), doctest::Contains("d"),
                         CoverageError);
  }
}
