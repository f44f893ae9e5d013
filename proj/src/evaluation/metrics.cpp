#include "shiftadapt/evaluation/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "shiftadapt/util/error.hpp"

namespace shiftadapt::evaluation {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw Error("evaluation.length_mismatch", std::string(what) + ": inputs differ in length");
}

double two_sided_t(double t, double dof) {
  boost::math::students_t dist(dof);
  return 2 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

}  // namespace

double auc(std::span<const double> scores, std::span<const double> labels) {
  require_same_length(scores.size(), labels.size(), "auc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Sum of midranks of the positives.
  double rank_sum = 0;
  double pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0.0 && labels[order[k]] != 1.0) throw Error("evaluation.bad_label", "auc needs 0/1 labels");
      if (labels[order[k]] == 1.0) {
        rank_sum += midrank;
        pos += 1;
      }
    }
    i = j;
  }
  const double neg = static_cast<double>(scores.size()) - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetric("auc needs both classes");
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

double mae(std::span<const double> predictions, std::span<const double> targets) {
  require_same_length(predictions.size(), targets.size(), "mae");
  if (predictions.empty()) throw Error("evaluation.empty", "mae needs at least one value");
  double s = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) s += std::abs(predictions[i] - targets[i]);
  return s / static_cast<double>(predictions.size());
}

nlohmann::json FairnessResult::to_json() const {
  nlohmann::json j{{"value", value}, {"excluded", excluded}};
  if (!positive_rate.empty()) j["positive_rate"] = positive_rate;
  if (!true_positive_rate.empty()) j["true_positive_rate"] = true_positive_rate;
  if (!false_positive_rate.empty()) j["false_positive_rate"] = false_positive_rate;
  return j;
}

namespace {

double max_gap(const std::map<std::string, double>& rates) {
  if (rates.empty()) return 0;
  auto [lo, hi] = std::minmax_element(rates.begin(), rates.end(),
                                      [](const auto& a, const auto& b) { return a.second < b.second; });
  return hi->second - lo->second;
}

}  // namespace

FairnessResult dpd(std::span<const int> predictions, std::span<const std::string> groups,
                   const std::vector<std::string>& vocabulary) {
  require_same_length(predictions.size(), groups.size(), "dpd");
  std::map<std::string, std::pair<double, double>> counts;  // positives, total
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    auto& c = counts[groups[i]];
    c.first += predictions[i] != 0;
    c.second += 1;
  }
  FairnessResult out;
  for (const auto& g : vocabulary)
    if (!counts.count(g)) out.excluded.push_back(g);
  for (const auto& [g, c] : counts) out.positive_rate[g] = c.first / c.second;
  if (out.positive_rate.size() < 2) throw UndefinedMetric("dpd needs at least two nonempty groups");
  out.value = max_gap(out.positive_rate);
  return out;
}

FairnessResult eod(std::span<const int> predictions, std::span<const double> labels,
                   std::span<const std::string> groups) {
  require_same_length(predictions.size(), labels.size(), "eod");
  require_same_length(predictions.size(), groups.size(), "eod");
  struct Confusion {
    double tp = 0, fn = 0, fp = 0, tn = 0;
  };
  std::map<std::string, Confusion> conf;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    auto& c = conf[groups[i]];
    const bool pred = predictions[i] != 0;
    if (labels[i] == 1.0)
      (pred ? c.tp : c.fn) += 1;
    else
      (pred ? c.fp : c.tn) += 1;
  }
  FairnessResult out;
  for (const auto& [g, c] : conf) {
    if (c.tp + c.fn == 0 || c.fp + c.tn == 0) {
      out.excluded.push_back(g);
      continue;
    }
    out.true_positive_rate[g] = c.tp / (c.tp + c.fn);
    out.false_positive_rate[g] = c.fp / (c.fp + c.tn);
  }
  if (out.true_positive_rate.size() < 2) throw UndefinedMetric("eod needs two groups with both label classes");
  out.value = std::max(max_gap(out.true_positive_rate), max_gap(out.false_positive_rate));
  return out;
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), "pearson");
  if (x.size() < 3) throw Error("evaluation.too_few_values", "pearson needs at least 3 pairs");
  const double mx = mean(x), my = mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw UndefinedMetric("pearson with zero variance");
  Correlation c;
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = static_cast<double>(x.size()) - 2;
  if (std::abs(c.r) == 1.0) {
    c.p_value = 0;
  } else {
    c.p_value = two_sided_t(c.r * std::sqrt(dof / (1 - c.r * c.r)), dof);
  }
  return c;
}

PairedTest paired_significance(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "paired_significance");
  if (a.size() < 2) throw Error("evaluation.too_few_values", "paired test needs at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  PairedTest out;
  out.mean_difference = mean(d);
  const double sd = sample_std(d);
  if (sd == 0 || sd < 1e-14 * std::abs(out.mean_difference)) {
    out.degenerate = true;
    out.p_value = out.mean_difference == 0 ? 1.0 : 0.0;
    return out;
  }
  const double n = static_cast<double>(d.size());
  out.t = out.mean_difference / (sd / std::sqrt(n));
  out.p_value = two_sided_t(out.t, n - 1);
  return out;
}

double task_metric(models::Task task, std::span<const double> predictions, std::span<const double> labels) {
  return task == models::Task::binary ? auc(predictions, labels) : mae(predictions, labels);
}

double selection_score(models::Task task, std::span<const double> predictions, std::span<const double> labels) {
  return task == models::Task::binary ? auc(predictions, labels) : -mae(predictions, labels);
}

std::string metric_name(models::Task task) { return task == models::Task::binary ? "auc" : "mae"; }

double mean(std::span<const double> v) {
  if (v.empty()) return 0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0;
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace shiftadapt::evaluation
