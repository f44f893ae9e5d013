#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"

namespace shiftadapt::models {

/// A fitted predictor. Binary tasks yield probabilities in (0,1), regression
/// tasks real values, one per row.
class Model {
 public:
  virtual ~Model() = default;
  virtual std::vector<double> predict(const data::Dataset& data) const = 0;
  virtual std::string kind() const = 0;
  virtual nlohmann::json to_json() const = 0;
};

std::unique_ptr<Model> model_from_json(const nlohmann::json& j);

}  // namespace shiftadapt::models
