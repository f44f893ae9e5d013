#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"

namespace shiftadapt::models {

/// Which feature columns a model consumes and the categorical vocabulary
/// sizes it was built for. Group and label columns are never features.
struct FeatureLayout {
  std::vector<std::string> numeric;
  std::vector<std::string> categorical;
  std::vector<std::size_t> vocab_sizes;

  std::size_t one_hot_width() const;

  friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;
  nlohmann::json to_json() const;
  static FeatureLayout from_json(const nlohmann::json& j);
};

FeatureLayout layout_of(const data::FeatureSchema& schema);

/// Encoded design matrix, samples as columns.
struct Features {
  Eigen::MatrixXd numeric;     ///< numeric.size() x N
  Eigen::MatrixXi categories;  ///< categorical.size() x N
  std::vector<std::size_t> vocab_sizes;

  std::size_t n() const { return static_cast<std::size_t>(numeric.cols()); }
  /// Numeric block followed by one-hot blocks; (p + sum vocab) x N.
  Eigen::MatrixXd dense() const;
  Features select(const std::vector<std::size_t>& columns) const;
};

/// Rejects missing feature cells and any mismatch with `layout`.
Features encode(const data::Dataset& data, const FeatureLayout& layout);

/// Label values (class index or regression target); missing labels rejected.
Eigen::VectorXd label_vector(const data::Dataset& data);

}  // namespace shiftadapt::models
