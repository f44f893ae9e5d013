#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"
#include "shiftadapt/models/erm.hpp"
#include "shiftadapt/models/network.hpp"

namespace shiftadapt::mmd {

struct FeatureMapConfig {
  models::MlpConfig mlp{{64, 64, 64}, {0.1, 0.1, 0.1}, {true, true, true}, true, {}};
  models::RegularizerSpec regularizer{models::RegularizerSpec::Kind::l2, 1e-4};
  models::OptimizerSpec optimizer{models::OptimizerKind::adam, 1e-3, 64, 60, 0, 0.0, 0.0};

  nlohmann::json to_json() const;
  static FeatureMapConfig from_json(const nlohmann::json& j);
};

struct ExcludedAttribute {
  std::string attribute;
  std::string reason;
};

/// Shared MLP trunk with one softmax head per group attribute; features are
/// the activations of the last hidden layer in inference mode.
class FeatureMap {
 public:
  FeatureMap(models::Network net, std::vector<std::string> attributes, std::vector<ExcludedAttribute> excluded);

  /// (trunk width x rows); the width does not depend on the attribute count.
  Eigen::MatrixXd transform(const data::Dataset& data) const;
  std::size_t dimension() const;

  /// Most probable group index per row for one attribute head.
  std::vector<std::size_t> predict_group(const data::Dataset& data, const std::string& attribute) const;

  const std::vector<std::string>& attributes() const noexcept { return attributes_; }
  const std::vector<ExcludedAttribute>& excluded() const noexcept { return excluded_; }
  const models::Network& network() const noexcept { return net_; }

  nlohmann::json to_json() const;
  static FeatureMap from_json(const nlohmann::json& j);

 private:
  models::Network net_;
  std::vector<std::string> attributes_;
  std::vector<ExcludedAttribute> excluded_;
};

/// Trains the trunk and heads on the summed per-head cross-entropy.
/// Attributes with fewer than two groups of at least two rows are excluded
/// and recorded; rows with a missing group fall in the "unknown" class.
FeatureMap learn_feature_map(const data::Dataset& data, const std::vector<std::string>& attributes,
                             const FeatureMapConfig& config);

}  // namespace shiftadapt::mmd
