#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"

namespace shiftadapt::preprocess {

/// Empirical CDF knot: a distinct fitted value and its mid-rank / (N + 1).
struct QuantileKnot {
  double value = 0;
  double rank = 0;
};

struct ContinuousStats {
  std::string column;
  double median = 0;
  double mean = 0;
  double std = 1;  ///< sample (N-1) standard deviation, > 0
  double skewness = 0;
  bool use_quantile = false;
  std::vector<QuantileKnot> knots;  ///< strictly increasing values
};

struct CategoricalVocabulary {
  std::string column;
  /// Categories observed in the fit rows, in schema order, then "unknown".
  std::vector<std::string> categories;
};

struct DroppedColumn {
  std::string column;
  std::string reason;
};

struct PreprocessorState {
  data::FeatureSchema input_schema;
  double skew_threshold = 1.0;
  std::vector<ContinuousStats> continuous;
  std::vector<CategoricalVocabulary> categorical;
  /// Feature columns with at least one missing fit value, sorted by name.
  std::vector<std::string> indicator_columns;
  std::vector<DroppedColumn> dropped;
  std::vector<std::string> fit_row_ids;

  const ContinuousStats* find_continuous(std::string_view column) const;

  /// Schema of transform() output.
  data::FeatureSchema output_schema() const;

  nlohmann::json to_json() const;
  static PreprocessorState from_json(const nlohmann::json& j);
};

struct TransformDiagnostics {
  /// Categories not seen during fit, mapped to "unknown", per column.
  std::map<std::string, std::size_t> unseen_categories;
};

inline constexpr const char* kIndicatorSuffix = "__missing";

/// Fits imputation, standardization, quantile maps and vocabularies on every
/// row of `data` (callers pass training rows only).
PreprocessorState fit(const data::Dataset& data, double skew_threshold = 1.0);

/// Imputes, normalizes and appends missingness indicators. Rejects data whose
/// schema differs from the fitted one, including already-transformed data.
data::Dataset transform(const PreprocessorState& state, const data::Dataset& data,
                        TransformDiagnostics* diagnostics = nullptr);

/// Standard-normal quantile of the interpolated empirical CDF rank of x,
/// clamped to the first and last knot.
double quantile_normalize(std::span<const QuantileKnot> knots, double x);

/// Fisher-Pearson moment coefficient of skewness g1 = m3 / m2^1.5.
double sample_skewness(std::span<const double> values);

}  // namespace shiftadapt::preprocess
