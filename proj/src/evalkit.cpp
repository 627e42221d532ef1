#include "attnseg/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "attnseg/errors.hpp"
#include "attnseg/rng.hpp"

namespace attnseg {

double dice(const MaskGrid& a, const MaskGrid& b) {
  if (!same_shape(a, b)) throw InputError("dice: shape mismatch");
  long inter = 0, na = 0, nb = 0;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) {
      const bool pa = a(i, j) != 0, pb = b(i, j) != 0;
      inter += pa && pb;
      na += pa;
      nb += pb;
    }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double iou(const MaskGrid& a, const MaskGrid& b) {
  if (!same_shape(a, b)) throw InputError("iou: shape mismatch");
  long inter = 0, uni = 0;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) {
      const bool pa = a(i, j) != 0, pb = b(i, j) != 0;
      inter += pa && pb;
      uni += pa || pb;
    }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

DetectionMetrics detection_metrics(const std::vector<int>& preds, const std::vector<int>& gts) {
  if (preds.size() != gts.size()) throw InputError("detection_metrics: length mismatch");
  if (preds.empty()) throw InputError("detection_metrics: empty input");
  DetectionMetrics m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] != 0, g = gts[i] != 0;
    m.tp += p && g;
    m.fp += p && !g;
    m.tn += !p && !g;
    m.fn += !p && g;
  }
  const auto n = static_cast<double>(preds.size());
  m.accuracy = static_cast<double>(m.tp + m.tn) / n;
  if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn > 0) m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  if (m.tn + m.fp > 0) m.specificity = static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp);
  if (m.precision && m.recall && (*m.precision + *m.recall) > 0.0)
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  return m;
}

std::optional<double> auc_roc(const std::vector<double>& scores, const std::vector<int>& gts) {
  if (scores.size() != gts.size()) throw InputError("auc_roc: length mismatch");
  long n_pos = 0, n_neg = 0;
  for (int g : gts) (g ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  if (n_pos * n_neg <= 4096) {
    double wins = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!gts[i]) continue;
      for (std::size_t j = 0; j < scores.size(); ++j) {
        if (gts[j]) continue;
        if (scores[i] > scores[j])
          wins += 1.0;
        else if (scores[i] == scores[j])
          wins += 0.5;
      }
    }
    return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  }

  // Rank sweep with midranks for ties.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (gts[order[k]]) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

int FoldSplit::fold_of(const std::string& study_id) const {
  for (std::size_t f = 0; f < folds.size(); ++f)
    for (const auto& s : folds[f])
      if (s == study_id) return static_cast<int>(f);
  return -1;
}

FoldSplit make_folds(const std::vector<std::string>& study_ids, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("make_folds: k must be positive");
  std::vector<std::string> unique = study_ids;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  if (static_cast<int>(unique.size()) < k)
    throw ConfigError("make_folds: fewer studies (" + std::to_string(unique.size()) +
                      ") than folds (" + std::to_string(k) + ")");
  Rng rng(seed);
  rng.shuffle(unique);
  FoldSplit split;
  split.k = k;
  split.seed = seed;
  split.folds.assign(static_cast<std::size_t>(k), {});
  for (std::size_t i = 0; i < unique.size(); ++i)
    split.folds[i % static_cast<std::size_t>(k)].push_back(unique[i]);
  return split;
}

namespace {

double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, int df) {
  const double v = static_cast<double>(df);
  return regularized_incomplete_beta(v / 2.0, 0.5, v / (v + t * t));
}

TTestResult paired_ttest(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InputError("paired_ttest: length mismatch");
  if (x.size() < 2) throw UsageError("paired_ttest: need at least two pairs");
  const auto n = static_cast<double>(x.size());
  std::vector<double> d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - y[i];
  const double mean = mean_of(d);
  const double sd = sample_std(d, mean);
  if (sd == 0.0)
    throw DegenerateInputError("paired_ttest: zero-variance differences");
  TTestResult r;
  r.df = static_cast<int>(x.size()) - 1;
  r.t = mean / (sd / std::sqrt(n));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

FoldReport evaluate_method(const std::vector<SliceResult>& results, const FoldSplit& split,
                           const std::string& method) {
  std::map<std::string, std::vector<const SliceResult*>> by_study;
  for (const auto& r : results) by_study[r.study_id].push_back(&r);

  std::vector<std::string> uncovered;
  for (const auto& fold : split.folds)
    for (const auto& study : fold)
      if (!by_study.count(study)) uncovered.push_back(study);
  if (!uncovered.empty()) {
    std::string msg = "evaluation results missing for studies:";
    for (const auto& s : uncovered) msg += " " + s;
    throw CoverageError(msg);
  }

  FoldReport report;
  report.method = method;

  std::vector<double> fold_acc, fold_auc, fold_prec, fold_f1, fold_rec, fold_spec;
  for (std::size_t f = 0; f < split.folds.size(); ++f) {
    FoldMetrics fm;
    fm.fold = static_cast<int>(f) + 1;
    std::vector<int> preds, gts;
    std::vector<double> scores, dices, ious;
    for (const auto& study : split.folds[f]) {
      for (const SliceResult* r : by_study.at(study)) {
        preds.push_back(r->pred_positive);
        gts.push_back(r->gt_positive);
        scores.push_back(r->score);
        if (r->gt_positive) {
          if (!r->dice_score || !r->iou_score)
            throw CoverageError("missing segmentation overlap for gt-positive slice " +
                                r->study_id + "_" + std::to_string(r->slice_index));
          dices.push_back(*r->dice_score);
          ious.push_back(*r->iou_score);
        }
      }
    }
    fm.n_slices = static_cast<long>(preds.size());
    fm.n_gt_positive = static_cast<long>(dices.size());
    if (!preds.empty()) {
      fm.detection = detection_metrics(preds, gts);
      fm.auc = auc_roc(scores, gts);
    }
    fm.dice_mean = mean_of(dices);
    fm.dice_std = sample_std(dices, fm.dice_mean);
    fm.iou_mean = mean_of(ious);
    fm.iou_std = sample_std(ious, fm.iou_mean);
    fold_acc.push_back(fm.detection.accuracy);
    if (fm.auc) fold_auc.push_back(*fm.auc);
    if (fm.detection.precision) fold_prec.push_back(*fm.detection.precision);
    if (fm.detection.f1) fold_f1.push_back(*fm.detection.f1);
    if (fm.detection.recall) fold_rec.push_back(*fm.detection.recall);
    if (fm.detection.specificity) fold_spec.push_back(*fm.detection.specificity);
    report.folds.push_back(std::move(fm));
  }

  // Subject-wise aggregates over gt-positive slices, pooled across folds.
  std::vector<double> subj_dice, subj_iou;
  for (const auto& [study, slices] : by_study) {
    if (split.fold_of(study) < 0) continue;  // outside the split: ignored
    std::vector<double> ds, is;
    for (const SliceResult* r : slices)
      if (r->gt_positive && r->dice_score) {
        ds.push_back(*r->dice_score);
        is.push_back(*r->iou_score);
      }
    if (ds.empty()) continue;
    subj_dice.push_back(mean_of(ds));
    subj_iou.push_back(mean_of(is));
    report.per_subject_dice.emplace_back(study, subj_dice.back());
  }
  report.n_subjects = static_cast<long>(subj_dice.size());
  report.dice_mean = mean_of(subj_dice);
  report.dice_std = sample_std(subj_dice, report.dice_mean);
  report.iou_mean = mean_of(subj_iou);
  report.iou_std = sample_std(subj_iou, report.iou_mean);

  auto agg = [](const std::vector<double>& v) {
    FoldReport::AggStat s;
    if (!v.empty()) {
      s.defined = true;
      s.mean = mean_of(v);
      s.stddev = sample_std(v, s.mean);
    }
    return s;
  };
  report.accuracy = agg(fold_acc);
  report.auc = agg(fold_auc);
  report.precision = agg(fold_prec);
  report.f1 = agg(fold_f1);
  report.recall = agg(fold_rec);
  report.specificity = agg(fold_spec);
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "-"; }

std::string fmt_pm(double mean, double stddev) { return fmt(mean) + " +- " + fmt(stddev); }

}  // namespace

std::string report_table_text(const FoldReport& report) {
  std::ostringstream os;
  os << "method: " << report.method << "\n";
  os << "fold | dice (mean +- std) | iou (mean +- std) | accuracy | auc | precision | f1 | recall | "
        "specificity\n";
  for (const auto& f : report.folds) {
    os << f.fold << " | " << fmt_pm(f.dice_mean, f.dice_std) << " | " << fmt_pm(f.iou_mean, f.iou_std)
       << " | " << fmt(f.detection.accuracy) << " | " << fmt_opt(f.auc) << " | "
       << fmt_opt(f.detection.precision) << " | " << fmt_opt(f.detection.f1) << " | "
       << fmt_opt(f.detection.recall) << " | " << fmt_opt(f.detection.specificity) << "\n";
  }
  auto agg = [&os](const char* name, const FoldReport::AggStat& s) {
    os << " | " << (s.defined ? fmt_pm(s.mean, s.stddev) : std::string("-"));
    (void)name;
  };
  os << "mean +- std | " << fmt_pm(report.dice_mean, report.dice_std) << " | "
     << fmt_pm(report.iou_mean, report.iou_std);
  agg("accuracy", report.accuracy);
  agg("auc", report.auc);
  agg("precision", report.precision);
  agg("f1", report.f1);
  agg("recall", report.recall);
  agg("specificity", report.specificity);
  os << "\n";
  os << "subjects with gt-positive slices: " << report.n_subjects << "\n";
  return os.str();
}

std::string report_csv(const FoldReport& report) {
  std::ostringstream os;
  os << "fold,n_slices,n_gt_positive,dice_mean,dice_std,iou_mean,iou_std,accuracy,auc,precision,f1,"
        "recall,specificity\n";
  auto opt_field = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const auto& f : report.folds) {
    os << f.fold << ',' << f.n_slices << ',' << f.n_gt_positive << ',' << fmt(f.dice_mean) << ','
       << fmt(f.dice_std) << ',' << fmt(f.iou_mean) << ',' << fmt(f.iou_std) << ','
       << fmt(f.detection.accuracy) << ',' << opt_field(f.auc) << ','
       << opt_field(f.detection.precision) << ',' << opt_field(f.detection.f1) << ','
       << opt_field(f.detection.recall) << ',' << opt_field(f.detection.specificity) << "\n";
  }
  auto agg_field = [](const FoldReport::AggStat& s) {
    return s.defined ? fmt(s.mean) + ';' + fmt(s.stddev) : std::string();
  };
  os << "aggregate," << report.n_subjects << ',' << ',' << fmt(report.dice_mean) << ','
     << fmt(report.dice_std) << ',' << fmt(report.iou_mean) << ',' << fmt(report.iou_std) << ','
     << agg_field(report.accuracy) << ',' << agg_field(report.auc) << ','
     << agg_field(report.precision) << ',' << agg_field(report.f1) << ','
     << agg_field(report.recall) << ',' << agg_field(report.specificity) << "\n";
  return os.str();
}

}  // namespace attnseg
