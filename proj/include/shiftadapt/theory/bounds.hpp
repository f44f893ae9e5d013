#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"
#include "shiftadapt/models/erm.hpp"
#include "shiftadapt/models/network.hpp"

namespace shiftadapt::theory {

/// Inputs of the generalization and adaptation bounds. Logarithms are natural.
/// `divergence` is usually the MMD statistic, a stand-in for the paper's d.
struct BoundInputs {
  double vc_dimension = 1;
  double delta = 0.05;
  std::size_t m = 0;
  std::size_t n = 0;
  double divergence = 0;
  double lambda = 0;
  double constant_c = 1;

  void validate() const;
  /// V - ln(delta), the complexity term shared by all bounds.
  double complexity() const { return vc_dimension - std::log(delta); }
  nlohmann::json to_json() const;
  static BoundInputs from_json(const nlohmann::json& j);
};

/// R + c sqrt((V - ln delta) / n).
double vc_bound(double empirical_risk, const BoundInputs& b);

/// R_s + c sqrt((V - ln delta) / n) + d/2 + lambda.
double domain_adaptation_bound(double source_risk, const BoundInputs& b);

/// R_t(theta*_t) + 4 sqrt((alpha^2/n + (1-alpha)^2/m)(V - ln delta)) + 2(1-alpha) d.
double weighted_erm_bound_rhs(double alpha, double target_opt_risk, const BoundInputs& b);

/// Smallest n for which alpha = 1 minimizes the right-hand side:
/// 4 (V - ln delta) / d^2 (infinite when d = 0).
double alpha_one_threshold(const BoundInputs& b);

/// Minimizer of weighted_erm_bound_rhs over [0,1]: 0 without target rows, 1
/// past the threshold, otherwise a 1e-4 grid search refined by golden-section
/// search on the bracketing cell (the function is convex in alpha).
double optimal_alpha(const BoundInputs& b);

struct BoundRow {
  double alpha;
  double rhs;
};
std::vector<BoundRow> bound_table(const BoundInputs& b, const std::vector<double>& alphas, double target_opt_risk = 0);
std::string bound_table_csv(const std::vector<BoundRow>& rows);

/// Upper estimate of lambda = min R_s + R_t: trains one model with equal
/// weight on both mean risks and returns the achieved Rs + Rt.
double estimate_lambda(const data::GroupedDataset& pair, const models::Architecture& arch,
                       const models::TrainConfig& cfg);

/// Parameter count as a stand-in for the VC dimension of a network.
double vc_dimension_heuristic(const models::Network& net);

}  // namespace shiftadapt::theory
