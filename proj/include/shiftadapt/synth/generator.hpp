#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"
#include "shiftadapt/evaluation/experiment.hpp"
#include "shiftadapt/models/erm.hpp"

namespace shiftadapt::synth {

struct GroupSpec {
  std::string name;
  std::size_t size = 100;
  Eigen::VectorXd mean;
  /// Per-dimension standard deviations (diagonal covariance).
  Eigen::VectorXd scale;
  /// Label: logistic P(y=1) = sigmoid(w.x + b) or w.x + b + noise * N(0,1).
  Eigen::VectorXd weights;
  double intercept = 0;
  double noise = 1.0;
  /// Per categorical column, category frequencies (normalized on use).
  std::vector<std::vector<double>> category_freqs;
};

struct ShiftSpec {
  std::size_t dimensions = 2;
  models::Task task = models::Task::binary;
  std::vector<GroupSpec> groups;
  /// Missing-completely-at-random rate for feature cells.
  double missingness = 0;
  /// Category names per categorical column c0, c1, ...
  std::vector<std::vector<std::string>> categories;
  std::string group_attribute = "group";
  std::uint64_t seed = 0;

  /// Per unit of shift, applied by apply_shift: added to the target mean,
  /// to the target weights and intercept, and to the log of the source scale.
  Eigen::VectorXd target_mean_shift;
  Eigen::VectorXd target_weight_shift;
  double target_intercept_shift = 0;
  Eigen::VectorXd source_log_scale_shift;

  void validate() const;
  nlohmann::json to_json() const;
  static ShiftSpec from_json(const nlohmann::json& j);
};

/// Two groups "source" and "target" of `dimensions` standard normals with
/// shared label weights; shifts are zero.
ShiftSpec two_group_spec(std::size_t dimensions, std::size_t m, std::size_t n, const Eigen::VectorXd& weights,
                         models::Task task = models::Task::binary);

/// Columns x0.., c0.., the group attribute and label y; row ids
/// "<group>-<i>". Same spec, same bytes.
data::Dataset generate(const ShiftSpec& spec);

/// Base spec with `shift` units of the spec's shift directions applied to
/// groups[0] (source) and groups[1] (target).
ShiftSpec apply_shift(const ShiftSpec& base, double shift);

/// Rows of two groups as a source/target pair.
data::GroupedDataset shifted_pair(const data::Dataset& data, const std::string& attribute, const std::string& source,
                                  const std::string& target);

struct SweepOptions {
  evaluation::ExperimentSpec experiment;  // share, candidates, training config; alpha is set per arm
  /// Rows per side for the MMD estimate.
  std::size_t mmd_rows = 200;
  std::size_t jobs = 0;
};

struct SweepCell {
  double shift = 0;
  std::uint64_t seed = 0;
  double mmd = 0;
  double tuned = 0;
  double alpha0 = 0;
  double alpha1 = 0;
  std::vector<double> tuned_alphas;
};

struct SweepRow {
  double shift = 0;
  double mean_mmd = 0;
  double tuned = 0;
  double alpha0 = 0;
  double alpha1 = 0;
  std::vector<SweepCell> cells;
  /// Chosen alpha -> count over all evaluated folds.
  std::map<double, std::size_t> alpha_histogram;
};

/// For each shift magnitude and seed: generates the shifted pair, measures
/// MMD, and runs nested CV with a tuned alpha grid and with alpha fixed at 0
/// and at 1. Metric values are the per-seed means over evaluated folds.
std::vector<SweepRow> shift_sweep(const ShiftSpec& base, const std::vector<double>& shifts,
                                  const std::vector<std::uint64_t>& seeds, const SweepOptions& opts);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

}  // namespace shiftadapt::synth
