#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"
#include "shiftadapt/models/learner.hpp"
#include "shiftadapt/models/model.hpp"

namespace shiftadapt::ensemble {

/// One trained fold model and the rows it saw.
struct FoldRecord {
  std::string model_id;
  std::size_t repeat = 0;
  std::size_t fold = 0;
  std::vector<std::string> training_rows;
  std::string training_digest;
};

/// Out-of-fold predictions: rows x models. `producers[c][r][i]` is the index
/// into `folds` of the model that produced repeat r's prediction for row i in
/// column c; the entry is the mean over repeats.
struct OofMatrix {
  std::vector<std::string> row_ids;
  std::vector<std::string> model_ids;
  Eigen::MatrixXd values;
  std::vector<FoldRecord> folds;
  std::vector<std::vector<std::vector<std::size_t>>> producers;

  /// Appends the columns of `other` (same rows).
  void append(OofMatrix other);
  nlohmann::json to_json() const;
};

/// Verifies that every entry's producing model was trained on a row set that
/// excludes the row and whose recorded digest matches. Throws
/// ensemble.leakage on failure; returns the number of entries checked.
std::size_t audit_oof(const OofMatrix& oof);

/// Mean prediction of k x R fold models.
class BaggedModel final : public models::Model {
 public:
  BaggedModel(std::string id, std::vector<std::unique_ptr<models::Model>> members)
      : id_(std::move(id)), members_(std::move(members)) {}

  std::vector<double> predict(const data::Dataset& data) const override;
  std::string kind() const override { return "bagged"; }
  nlohmann::json to_json() const override;
  static BaggedModel from_json(const nlohmann::json& j);

  const std::string& id() const noexcept { return id_; }
  std::size_t size() const noexcept { return members_.size(); }

 private:
  std::string id_;
  std::vector<std::unique_ptr<models::Model>> members_;
};

struct BaggingSpec {
  std::size_t folds = 5;
  std::size_t repeats = 2;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
};

struct BaggedFit {
  BaggedModel model;
  OofMatrix oof;  // one column
};

/// k-fold bagging repeated R times on the alpha-weighted pair. Folds are
/// stratified by label separately over source and target rows so each fold
/// holds an equal (+-1) share of target rows.
BaggedFit bagged_oof_fit(const data::GroupedDataset& pair, const models::LearnerSpec& learner,
                         const models::TrainConfig& cfg, const BaggingSpec& spec, const std::string& model_id);

struct Selection {
  std::vector<double> weights;
  std::vector<std::size_t> picks;
  /// Score after each accepted iteration; never decreases.
  std::vector<double> trajectory;
};

/// Greedy forward selection with replacement. Each iteration adds the column
/// whose inclusion maximizes the score of the uniform average over the
/// picked multiset; stops early if every candidate would lower the score.
/// Weights are selection frequencies.
Selection ensemble_select(const Eigen::MatrixXd& oof, std::span<const double> labels, models::Task task,
                          std::size_t iterations = 25);

struct EnsembleSpec {
  std::vector<models::LearnerSpec> zoo;
  BaggingSpec bagging;
  std::size_t iterations = 25;
  /// 1 or 2. A zoo of one learner always uses a single level.
  std::size_t levels = 2;

  nlohmann::json to_json() const;
  static EnsembleSpec from_json(const nlohmann::json& j);
};

struct ExcludedModel {
  std::string model_id;
  std::string reason;
};

/// Level-1 bagged models, optional level-2 bagged models trained on
/// [features | level-1 OOF], and selection weights over the top level.
class StackedEnsemble final : public models::Model {
 public:
  std::vector<double> predict(const data::Dataset& data) const override;
  std::string kind() const override { return "ensemble"; }
  nlohmann::json to_json() const override;
  static StackedEnsemble from_json(const nlohmann::json& j);

  /// Top-level scores before weighting, one column per top-level model.
  Eigen::MatrixXd top_level_scores(const data::Dataset& data) const;

  std::vector<std::vector<BaggedModel>> levels;
  std::vector<double> weights;
  std::vector<ExcludedModel> excluded;
  /// OOF predictions of the top level on the training rows.
  OofMatrix top_oof;
  Selection selection;
  models::Task task = models::Task::binary;
};

/// Feature table with one continuous column per model appended (before
/// nothing else changes); column names are the model ids.
data::Dataset append_prediction_columns(const data::Dataset& data, const std::vector<std::string>& names,
                                        const Eigen::MatrixXd& values);

/// Level inputs of the pair: features plus OOF columns, split back into
/// source and target rows.
data::GroupedDataset augment_pair(const data::GroupedDataset& pair, const OofMatrix& oof);

StackedEnsemble stack_fit(const data::GroupedDataset& pair, const EnsembleSpec& spec, const models::TrainConfig& cfg);

}  // namespace shiftadapt::ensemble
