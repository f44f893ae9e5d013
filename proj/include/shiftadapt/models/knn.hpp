#pragma once

#include <cstddef>

#include <Eigen/Dense>

#include "shiftadapt/models/erm.hpp"
#include "shiftadapt/models/model.hpp"

namespace shiftadapt::models {

/// Weighted k-nearest-neighbour vote in Euclidean distance over numeric and
/// one-hot features. Rows with zero weight are not neighbours.
class KnnModel final : public Model {
 public:
  KnnModel(FeatureLayout layout, Eigen::MatrixXd points, Eigen::VectorXd labels, Eigen::VectorXd weights,
           std::size_t k, Task task);

  static KnnModel fit(const data::GroupedDataset& pair, std::size_t k, const TrainConfig& cfg);

  std::vector<double> predict(const data::Dataset& data) const override;
  Eigen::VectorXd predict(const Features& x) const;
  std::string kind() const override { return "knn"; }
  nlohmann::json to_json() const override;
  static KnnModel from_json(const nlohmann::json& j);

 private:
  FeatureLayout layout_;
  Eigen::MatrixXd points_;  // d x N
  Eigen::VectorXd labels_;
  Eigen::VectorXd weights_;
  std::size_t k_;
  Task task_;
};

}  // namespace shiftadapt::models
