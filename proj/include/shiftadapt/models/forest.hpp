#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "shiftadapt/models/erm.hpp"
#include "shiftadapt/models/model.hpp"

namespace shiftadapt::models {

struct ForestSpec {
  std::size_t n_trees = 100;
  std::size_t max_depth = 0;  ///< 0 = unlimited
  std::size_t min_leaf = 1;
  std::size_t mtry = 0;  ///< features tried per split; 0 = ceil(sqrt(p))
  bool bootstrap = true;

  friend bool operator==(const ForestSpec&, const ForestSpec&) = default;
};

struct TreeNode {
  int feature = -1;  ///< -1 marks a leaf
  double threshold = 0;
  int left = -1;
  int right = -1;
  double value = 0;  ///< weighted mean label of the node's training rows
};

using Tree = std::vector<TreeNode>;

/// CART trees grown on weighted squared error (for 0/1 labels this is half the
/// weighted Gini impurity), averaged over the forest.
class ForestModel final : public Model {
 public:
  ForestModel(FeatureLayout layout, std::vector<Tree> trees, Task task);

  /// Seeds come from cfg.optimizer.seed; tree t uses its own stream.
  static ForestModel fit(const data::GroupedDataset& pair, const ForestSpec& spec, const TrainConfig& cfg);

  std::vector<double> predict(const data::Dataset& data) const override;
  Eigen::VectorXd predict(const Features& x) const;
  std::string kind() const override { return "forest"; }
  nlohmann::json to_json() const override;
  static ForestModel from_json(const nlohmann::json& j);

  const std::vector<Tree>& trees() const noexcept { return trees_; }

 private:
  FeatureLayout layout_;
  std::vector<Tree> trees_;
  Task task_;
};

/// Grows one tree on columns of `x` (features x samples) with per-sample
/// weights; rows with zero weight are ignored.
Tree grow_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, const ForestSpec& spec,
               Rng& rng);

}  // namespace shiftadapt::models
