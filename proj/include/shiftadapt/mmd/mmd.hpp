#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace shiftadapt::mmd {

/// Samples are the columns of a (dimension x count) matrix.
using Samples = Eigen::MatrixXd;

struct Kernel {
  enum class Kind { rbf, linear };
  Kind kind = Kind::rbf;
  /// rbf only: k(a,b) = exp(-|a-b|^2 / (2 bandwidth^2)).
  double bandwidth = 1.0;

  double operator()(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) const;
  void validate() const;
  nlohmann::json to_json() const;
};

/// Gram matrix k(x_i, y_j).
Eigen::MatrixXd kernel_matrix(const Samples& xs, const Samples& ys, const Kernel& k);

/// Unbiased MMD^2 for equal-size samples:
/// 1/(n^2-n) sum_{i != j} k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j) - k(x_j,y_i).
/// Exactly symmetric in (xs, ys) and exactly 0 when xs == ys.
double mmd_unbiased(const Samples& xs, const Samples& ys, const Kernel& k);

/// Same statistic from a pooled Gram matrix and index lists of equal length.
double mmd_unbiased_from_gram(const Eigen::MatrixXd& gram, const std::vector<std::size_t>& x_idx,
                              const std::vector<std::size_t>& y_idx);

/// Median pairwise Euclidean distance over the pooled columns; falls back to
/// the smallest positive distance when the median is 0.
double median_bandwidth(const Samples& pooled);

struct MmdResult {
  double statistic = 0;
  double p_value = 1;
  std::size_t n_per_side = 0;
  std::size_t permutations = 0;
  std::size_t exceed_count = 0;  ///< permuted statistics >= observed

  nlohmann::json to_json() const;
};

inline constexpr std::size_t kDefaultPermutations = 10000;

/// p = (1 + #{permuted >= observed}) / (1 + B). Replica b draws its split from
/// its own stream derived from (seed, b).
MmdResult permutation_test(const Samples& xs, const Samples& ys, const Kernel& k,
                           std::size_t permutations = kDefaultPermutations, std::uint64_t seed = 0,
                           std::size_t jobs = 0);

}  // namespace shiftadapt::mmd
