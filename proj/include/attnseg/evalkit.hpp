#pragma once

#include <optional>
#include <string>
#include <vector>

#include "attnseg/grid.hpp"

namespace attnseg {

/// Overlap of binary masks: 2|a&b| / (|a|+|b|). Two empty masks agree
/// perfectly by convention.
double dice(const MaskGrid& a, const MaskGrid& b);

/// |a&b| / |a|b|union|; empty-vs-empty is 1.
double iou(const MaskGrid& a, const MaskGrid& b);

/// Confusion-matrix readouts. Ratios with zero denominators are absent rather
/// than zero.
struct DetectionMetrics {
  double accuracy = 0.0;
  std::optional<double> precision, recall, specificity, f1;
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

DetectionMetrics detection_metrics(const std::vector<int>& preds, const std::vector<int>& gts);

/// Mann-Whitney AUC: P(score+ > score-) + 0.5 P(tie). Pairwise for small
/// inputs, rank sweep otherwise. Absent when only one class is present.
std::optional<double> auc_roc(const std::vector<double>& scores, const std::vector<int>& gts);

struct FoldSplit {
  int k = 5;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::string>> folds;  // study ids, disjoint, covering

  int fold_of(const std::string& study_id) const;
};

/// Deterministic study-level partition into k folds.
FoldSplit make_folds(const std::vector<std::string>& study_ids, int k, std::uint64_t seed);

struct TTestResult {
  double t = 0.0;
  double p = 0.0;  // two-sided
  int df = 0;
};

/// Two-sided paired t-test on equal-length samples.
TTestResult paired_ttest(const std::vector<double>& x, const std::vector<double>& y);

/// Regularized incomplete beta, used for the t distribution tail.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_two_sided_p(double t, int df);

/// One evaluated slice: detection readouts plus segmentation overlap on
/// gt-positive slices.
struct SliceResult {
  std::string study_id;
  int slice_index = 0;
  int gt_positive = 0;
  int pred_positive = 0;
  double score = 0.0;  // detection score for AUC
  std::optional<double> dice_score;
  std::optional<double> iou_score;
};

struct FoldMetrics {
  int fold = 0;
  long n_slices = 0;
  long n_gt_positive = 0;
  double dice_mean = 0.0, dice_std = 0.0;
  double iou_mean = 0.0, iou_std = 0.0;
  DetectionMetrics detection;
  std::optional<double> auc;
};

struct FoldReport {
  std::string method;
  std::vector<FoldMetrics> folds;
  // Segmentation aggregates are subject-wise over gt-positive slices pooled
  // across folds; detection aggregates are mean +- std of the per-fold values.
  long n_subjects = 0;
  double dice_mean = 0.0, dice_std = 0.0;
  double iou_mean = 0.0, iou_std = 0.0;
  struct AggStat {
    double mean = 0.0, stddev = 0.0;
    bool defined = false;
  };
  AggStat accuracy, auc, precision, f1, recall, specificity;
  std::vector<std::pair<std::string, double>> per_subject_dice;
};

/// Aggregates per-slice results over a fold split. Every study in the split
/// must be covered by the results.
FoldReport evaluate_method(const std::vector<SliceResult>& results, const FoldSplit& split,
                           const std::string& method);

std::string report_table_text(const FoldReport& report);
std::string report_csv(const FoldReport& report);

}  // namespace attnseg
