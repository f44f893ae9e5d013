#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"
#include "shiftadapt/ensemble/stacking.hpp"
#include "shiftadapt/evaluation/metrics.hpp"
#include "shiftadapt/models/learner.hpp"

namespace shiftadapt::evaluation {

/// A single learner or a stacked ensemble.
using ModelSpec = std::variant<models::LearnerSpec, ensemble::EnsembleSpec>;

std::string model_name(const ModelSpec& spec);
nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);
std::unique_ptr<models::Model> fit_model(const ModelSpec& spec, const data::GroupedDataset& pair,
                                         const models::TrainConfig& cfg);

/// How much of the target group enters training.
///  none:      source only, scored once on every target row.
///  tenth:     half of one target fold (10%); scored on the four other folds.
///  fifth:     one target fold (20%); scored on the four other folds.
///  all_folds: target only, four target folds (80%); scored on the fifth.
enum class TargetShare { none, tenth, fifth, all_folds };

std::string to_string(TargetShare s);
TargetShare target_share_from_string(std::string_view text);
double training_fraction(TargetShare s);

struct AlphaPolicy {
  enum class Kind { fixed, grid, theory };
  Kind kind = Kind::grid;
  double value = 0.0;
  /// theory only: inputs of optimal_alpha besides m, n and the measured MMD.
  double vc_dimension = 10;
  double delta = 0.05;

  nlohmann::json to_json() const;
  static AlphaPolicy from_json(const nlohmann::json& j);
};

/// alpha = k/(k+1) for k = 1..10.
std::vector<double> alpha_grid();

struct ExperimentSpec {
  models::Task task = models::Task::binary;
  std::string source_group;
  std::string target_group;
  TargetShare share = TargetShare::fifth;
  /// Hyper-parameter candidates; the inner search picks one per outer fold.
  std::vector<ModelSpec> candidates;
  AlphaPolicy alpha;
  /// Regularizer and optimizer shared by every fit; alpha is overwritten.
  models::TrainConfig train;
  std::size_t outer_folds = 5;
  std::size_t inner_folds = 5;
  /// Score only the first this-many outer folds (all when 0).
  std::size_t outer_limit = 0;
  std::uint64_t seed = 0;
  /// tenth: score on exactly four folds and leave the rest of the training
  /// fold unused. Off: score on every target row not used for training.
  bool strict_paper_splits = true;
  /// Fit the preprocessing transform on each training set (skipped for
  /// already-normalized input).
  bool preprocess = true;
  double skew_threshold = 1.0;
  std::size_t jobs = 0;
  /// Keep test predictions in the report (for fairness metrics).
  bool keep_predictions = false;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentSpec from_json(const nlohmann::json& j);
};

struct GridPoint {
  std::size_t candidate = 0;
  double alpha = 0;
  std::optional<double> score;  // mean inner validation score
  std::size_t folds_used = 0;
};

struct FoldResult {
  std::size_t fold = 0;
  std::optional<double> value;
  std::string undefined_reason;
  /// Set when a value is reported under a convention (e.g. all-tied scores).
  std::string note;
  double alpha = 0;
  std::size_t candidate = 0;
  std::string model;
  std::size_t train_source = 0;
  std::size_t train_target = 0;
  std::size_t test_rows = 0;
  std::string selection_digest;
  std::string test_digest;
  std::vector<GridPoint> grid;
  std::vector<std::string> test_row_ids;
  std::vector<double> predictions;
  std::vector<double> labels;
};

struct Comparison {
  std::string baseline;
  PairedTest test;
  std::size_t pairs = 0;
};

struct MetricReport {
  std::string metric;
  std::string setting;
  std::string source_group;
  std::string target_group;
  std::string model;
  std::vector<FoldResult> folds;
  double mean = 0;
  double std = 0;
  std::size_t defined = 0;
  std::vector<Comparison> comparisons;
  /// Extra sections appended by later stages (fairness, secondary tasks).
  nlohmann::json sections = nlohmann::json::object();

  std::vector<double> fold_values() const;
  /// Recomputes mean/std from the defined fold values.
  void summarize();
  nlohmann::json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// Adds a paired t-test of this report's fold values against `baseline`,
/// pairing folds by index where both are defined.
void compare(MetricReport& report, const MetricReport& baseline, const std::string& name);

/// Nested cross-validation over the target group. Outer folds are stratified
/// splits of the target rows; model and alpha selection uses inner folds of
/// the training rows only, and the selection/test disjointness is checked by
/// row-id digests on every fold (throws evaluation.leakage otherwise).
MetricReport nested_cv(const ExperimentSpec& spec, const data::GroupedDataset& pair);

/// Inner folds over a training pair: stratified by label separately over
/// source and target rows so each fold gets an equal (+-1) target share.
/// Returns fold indices for source rows then target rows.
std::vector<int> inner_fold_assignment(const data::GroupedDataset& pair, std::size_t k, std::uint64_t seed);

}  // namespace shiftadapt::evaluation
