#include "shiftadapt/theory/bounds.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/io.hpp"

namespace shiftadapt::theory {

void BoundInputs::validate() const {
  if (!(vc_dimension > 0 && std::isfinite(vc_dimension))) throw Error("theory.bad_input", "V must be positive");
  if (!(delta > 0 && delta < 1)) throw Error("theory.bad_input", "delta must be in (0,1)");
  if (!(divergence >= 0 && std::isfinite(divergence))) throw Error("theory.bad_input", "divergence must be >= 0");
  if (!(lambda >= 0 && std::isfinite(lambda))) throw Error("theory.bad_input", "lambda must be >= 0");
  if (!(constant_c > 0 && std::isfinite(constant_c))) throw Error("theory.bad_input", "c must be positive");
}

nlohmann::json BoundInputs::to_json() const {
  return {{"vc_dimension", vc_dimension}, {"delta", delta},   {"m", m},
          {"n", n},                       {"divergence", divergence}, {"lambda", lambda},
          {"constant_c", constant_c}};
}

BoundInputs BoundInputs::from_json(const nlohmann::json& j) {
  BoundInputs b;
  b.vc_dimension = j.value("vc_dimension", b.vc_dimension);
  b.delta = j.value("delta", b.delta);
  b.m = j.value("m", b.m);
  b.n = j.value("n", b.n);
  b.divergence = j.value("divergence", b.divergence);
  b.lambda = j.value("lambda", b.lambda);
  b.constant_c = j.value("constant_c", b.constant_c);
  b.validate();
  return b;
}

double vc_bound(double empirical_risk, const BoundInputs& b) {
  b.validate();
  if (b.n < 1) throw Error("theory.bad_input", "the VC bound needs n >= 1");
  return empirical_risk + b.constant_c * std::sqrt(b.complexity() / static_cast<double>(b.n));
}

double domain_adaptation_bound(double source_risk, const BoundInputs& b) {
  return vc_bound(source_risk, b) + b.divergence / 2 + b.lambda;
}

double weighted_erm_bound_rhs(double alpha, double target_opt_risk, const BoundInputs& b) {
  b.validate();
  if (!(alpha >= 0 && alpha <= 1)) throw Error("theory.bad_input", "alpha must be in [0,1]");
  if (alpha > 0 && b.n == 0) throw Error("theory.no_target_rows", "alpha > 0 requires n >= 1");
  if (alpha < 1 && b.m == 0) throw Error("theory.no_source_rows", "alpha < 1 requires m >= 1");
  double var = 0;
  if (alpha > 0) var += alpha * alpha / static_cast<double>(b.n);
  if (alpha < 1) var += (1 - alpha) * (1 - alpha) / static_cast<double>(b.m);
  return target_opt_risk + 4 * std::sqrt(var * b.complexity()) + 2 * (1 - alpha) * b.divergence;
}

double alpha_one_threshold(const BoundInputs& b) {
  b.validate();
  if (b.divergence == 0) return std::numeric_limits<double>::infinity();
  return 4 * b.complexity() / (b.divergence * b.divergence);
}

double optimal_alpha(const BoundInputs& b) {
  b.validate();
  if (b.m == 0) throw Error("theory.no_source_rows", "optimal alpha needs m >= 1");
  if (b.n == 0) return 0.0;
  if (b.divergence > 0 && static_cast<double>(b.n) >= alpha_one_threshold(b)) return 1.0;

  constexpr int kSteps = 10000;
  auto f = [&](double a) { return weighted_erm_bound_rhs(a, 0.0, b); };
  int best = 0;
  double best_v = f(0.0);
  for (int i = 1; i <= kSteps; ++i) {
    const double v = f(static_cast<double>(i) / kSteps);
    if (v < best_v) {
      best_v = v;
      best = i;
    }
  }
  // Convexity puts the true minimizer within one cell of the grid argmin.
  double lo = std::max(0, best - 1) / static_cast<double>(kSteps);
  double hi = std::min(kSteps, best + 1) / static_cast<double>(kSteps);
  const double phi = (std::sqrt(5.0) - 1) / 2;
  double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = f(x2);
    }
  }
  const double refined = 0.5 * (lo + hi);
  return f(refined) <= best_v ? refined : static_cast<double>(best) / kSteps;
}

std::vector<BoundRow> bound_table(const BoundInputs& b, const std::vector<double>& alphas, double target_opt_risk) {
  std::vector<BoundRow> rows;
  for (double a : alphas) rows.push_back({a, weighted_erm_bound_rhs(a, target_opt_risk, b)});
  return rows;
}

std::string bound_table_csv(const std::vector<BoundRow>& rows) {
  std::ostringstream out;
  out << "alpha,rhs\n";
  for (const auto& r : rows) out << format_double(r.alpha) << ',' << format_double(r.rhs) << '\n';
  return out.str();
}

double estimate_lambda(const data::GroupedDataset& pair, const models::Architecture& arch,
                       const models::TrainConfig& cfg) {
  if (pair.m() == 0 || pair.n() == 0) throw Error("theory.bad_input", "lambda needs source and target rows");
  models::TrainConfig c = cfg;
  c.alpha = 0.5;  // (Rs + Rt) / 2 + Omega
  const models::Network net = models::train(pair, arch, c);
  const models::RiskValues r = models::weighted_erm_loss(net, pair, c);
  return r.source_risk + r.target_risk;
}

double vc_dimension_heuristic(const models::Network& net) { return static_cast<double>(net.size()); }

}  // namespace shiftadapt::theory
