#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"
#include "shiftadapt/models/model.hpp"
#include "shiftadapt/preprocess/preprocessor.hpp"

namespace shiftadapt::evaluation {

/// A fitted preprocessor followed by a model, so raw rows can be scored.
class PipelineModel final : public models::Model {
 public:
  PipelineModel(std::optional<preprocess::PreprocessorState> state, std::unique_ptr<models::Model> model);

  /// Rows are first conformed to the fitted input schema by column name, so
  /// data with another label or group vocabulary can be scored.
  std::vector<double> predict(const data::Dataset& data) const override;
  std::string kind() const override { return "pipeline"; }
  nlohmann::json to_json() const override;
  static PipelineModel from_json(const nlohmann::json& j);

  const models::Model& inner() const noexcept { return *model_; }

 private:
  std::optional<preprocess::PreprocessorState> state_;
  std::unique_ptr<models::Model> model_;
};

/// Dispatches on "kind": pipeline, ensemble, or any single learner.
std::unique_ptr<models::Model> load_model(const nlohmann::json& j);

/// Reorders and re-encodes columns of `data` to match `schema` by name.
/// Missing label and group columns become missing cells; categories absent
/// from the schema map to its "unknown" category when it has one.
data::Dataset conform(const data::Dataset& data, const data::FeatureSchema& schema);

}  // namespace shiftadapt::evaluation
