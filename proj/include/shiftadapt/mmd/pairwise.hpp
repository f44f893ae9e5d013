#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"
#include "shiftadapt/mmd/feature_map.hpp"
#include "shiftadapt/mmd/mmd.hpp"

namespace shiftadapt::mmd {

struct ExcludedGroup {
  std::string group;
  std::string reason;
};

/// Symmetric matrix of pairwise MMD^2_u statistics with a zero diagonal.
struct DistanceMatrix {
  std::string attribute;
  std::vector<std::string> groups;
  Eigen::MatrixXd values;
  std::vector<ExcludedGroup> excluded;
  Kernel kernel;
  std::size_t repeats = 0;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

struct PairwiseOptions {
  /// Unset: rbf with the median bandwidth over the pooled features.
  std::optional<Kernel> kernel;
  std::size_t repeats = 10;  ///< subsampling repeats for unequal group sizes
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
};

/// MMD^2_u between every pair of groups of `attribute` on `features`
/// (columns aligned with the rows of `data`). Equal-size pairs use all rows in
/// order; otherwise the larger group is subsampled `repeats` times and the
/// mean is reported.
DistanceMatrix pairwise_mmd(const data::Dataset& data, const std::string& attribute, const Eigen::MatrixXd& features,
                            const PairwiseOptions& options = {});

/// Convenience overload mapping rows through a learned feature map.
DistanceMatrix pairwise_mmd(const data::Dataset& data, const std::string& attribute, const FeatureMap& fmap,
                            const PairwiseOptions& options = {});

struct DendrogramNode {
  int left = -1;  ///< child node indices; -1 for leaves
  int right = -1;
  double height = 0;
  std::string leaf;  ///< group name for leaves
  std::vector<std::string> members;
};

/// Nodes in creation order: leaves first, root last.
struct Dendrogram {
  std::vector<DendrogramNode> nodes;

  int root() const { return static_cast<int>(nodes.size()) - 1; }
  nlohmann::json to_json() const;  ///< nested {left, right, height} / {leaf, height}
};

/// Average-linkage agglomerative clustering. Among equal linkage distances the
/// pair containing the earliest-created cluster merges first.
Dendrogram build_dendrogram(const std::vector<std::string>& names, const Eigen::MatrixXd& distances);
Dendrogram build_dendrogram(const DistanceMatrix& d);

}  // namespace shiftadapt::mmd
