#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shiftadapt/models/erm.hpp"

namespace shiftadapt::evaluation {

/// Mann-Whitney AUC: P(score of a positive > score of a negative), ties 1/2.
/// Labels are 0/1. Throws UndefinedMetric unless both classes occur.
double auc(std::span<const double> scores, std::span<const double> labels);

double mae(std::span<const double> predictions, std::span<const double> targets);

/// Fairness gap with the per-group ingredients behind it.
struct FairnessResult {
  double value = 0;
  std::map<std::string, double> positive_rate;        // DPD
  std::map<std::string, double> true_positive_rate;   // EOD
  std::map<std::string, double> false_positive_rate;  // EOD
  std::vector<std::string> excluded;

  nlohmann::json to_json() const;
};

/// Demographic parity difference: largest gap in positive-prediction rate
/// between any two groups. `vocabulary` lists groups expected to appear;
/// those with no rows are excluded with a record.
FairnessResult dpd(std::span<const int> predictions, std::span<const std::string> groups,
                   const std::vector<std::string>& vocabulary = {});

/// Equalized odds difference: largest max(|dTPR|, |dFPR|) between two groups.
/// Groups lacking a label class are excluded; fewer than two usable groups
/// throws UndefinedMetric.
FairnessResult eod(std::span<const int> predictions, std::span<const double> labels,
                   std::span<const std::string> groups);

struct Correlation {
  double r = 0;
  double p_value = 1;
};

/// Pearson r with a two-sided t-test on n - 2 degrees of freedom.
Correlation pearson(std::span<const double> x, std::span<const double> y);

struct PairedTest {
  double p_value = 1;
  double t = 0;
  double mean_difference = 0;
  /// Zero-variance differences: p is 0 for a nonzero difference, else 1.
  bool degenerate = false;
};

/// Two-sided paired t-test on fold-level differences a - b.
PairedTest paired_significance(std::span<const double> a, std::span<const double> b);

/// Higher-is-better selection score: AUC for binary tasks, -MAE for regression.
double selection_score(models::Task task, std::span<const double> predictions, std::span<const double> labels);

/// The metric reported for a task: AUC or MAE.
double task_metric(models::Task task, std::span<const double> predictions, std::span<const double> labels);
std::string metric_name(models::Task task);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_std(std::span<const double> v);

}  // namespace shiftadapt::evaluation
