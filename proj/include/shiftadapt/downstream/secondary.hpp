#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"
#include "shiftadapt/evaluation/experiment.hpp"
#include "shiftadapt/models/model.hpp"

namespace shiftadapt::downstream {

enum class PriorPolicy { empirical, uniform };

/// Two Gaussian classes on one covariate sharing a pooled variance.
struct LdaModel1D {
  double mean0 = 0, mean1 = 0;
  double prior0 = 0.5, prior1 = 0.5;
  double variance = 1;

  /// log P(1|x) - log P(0|x).
  double log_odds(double x) const;
  double posterior(double x) const;
  int predict(double x) const { return log_odds(x) > 0 ? 1 : 0; }
  /// Point where both posteriors are equal.
  double threshold() const;
  nlohmann::json to_json() const;
};

/// Throws downstream.single_class, downstream.too_few_rows (< 2 per class)
/// or downstream.zero_variance.
LdaModel1D lda_fit_1d(std::span<const double> covariate, std::span<const double> labels,
                      PriorPolicy priors = PriorPolicy::empirical);

struct TransferOptions {
  double label_fraction = 0.2;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  PriorPolicy priors = PriorPolicy::empirical;
};

/// Scores a frozen primary model on a secondary binary task: per fold, an
/// LDA on the model's probabilities is fitted on one fold's labels and its
/// posterior is scored by AUC on the other folds. The model is never refit;
/// its parameter digest is recorded before and after.
evaluation::MetricReport secondary_transfer_eval(const models::Model& primary, const data::Dataset& secondary,
                                                 const TransferOptions& opts = {});

struct BarRecord {
  double predicted_age = 0;
  double chronological_age = 0;
  double residual() const { return predicted_age - chronological_age; }
};

struct Covariate {
  std::string name;
  /// One value per record; NaN marks a missing score.
  std::vector<double> values;
  /// Expected sign of the correlation, if configured.
  std::optional<int> expected_sign;
};

struct BarRow {
  std::string name;
  std::size_t n = 0;
  std::optional<double> r;
  std::optional<double> p_value;
  std::string undefined_reason;
  std::optional<int> expected_sign;
  std::optional<bool> sign_matches;
};

/// Pearson correlation of the brain age residual with each covariate, over
/// the records where the covariate is present.
std::vector<BarRow> bar_analysis(const std::vector<BarRecord>& records, const std::vector<Covariate>& covariates);

nlohmann::json bar_to_json(const std::vector<BarRow>& rows);
std::string bar_to_csv(const std::vector<BarRow>& rows);

}  // namespace shiftadapt::downstream
