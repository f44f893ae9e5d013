#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"
#include "shiftadapt/models/features.hpp"
#include "shiftadapt/models/network.hpp"
#include "shiftadapt/util/error.hpp"

namespace shiftadapt::models {

enum class Task { binary, regression };

std::string to_string(Task task);
Task task_from_string(std::string_view text);

struct RegularizerSpec {
  enum class Kind { l2, none };
  Kind kind = Kind::l2;
  double strength = 1e-3;

  double value(const Eigen::VectorXd& theta) const;
};

/// lbfgs is always full-batch on the exact objective (dropout off).
enum class OptimizerKind { sgd, adam, lbfgs };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::adam;
  double step_size = 1e-3;
  /// 0 (or >= N) trains full-batch. Full-batch sgd runs gradient descent with
  /// Armijo backtracking on the exact objective and ignores dropout.
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  double momentum = 0.0;
  /// Full-batch only: stop once the gradient infinity norm falls below this.
  double tolerance = 0.0;
};

struct TrainConfig {
  double alpha = 0.0;
  Task task = Task::binary;
  RegularizerSpec regularizer;
  OptimizerSpec optimizer;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Empirical source/target risks and the weighted objective
/// (1 - alpha) * Rs + alpha * Rt + Omega(theta).
struct RiskValues {
  double source_risk = 0;
  double target_risk = 0;
  double objective = 0;
};

/// Per-sample weights (1 - alpha)/m for the m source rows followed by
/// alpha/n for the n target rows.
Eigen::VectorXd sample_weights(std::size_t m, std::size_t n, double alpha);

/// Pooled encoded training set, source rows first.
struct TrainingSet {
  Features x;
  Eigen::MatrixXd targets;  ///< 1 x N
  Eigen::VectorXd weights;
  std::size_t m = 0;
  std::size_t n = 0;
};

TrainingSet make_training_set(const data::GroupedDataset& pair, const FeatureLayout& layout, const TrainConfig& cfg);

RiskValues weighted_erm_loss(const Network& net, const data::GroupedDataset& pair, const TrainConfig& cfg);
Eigen::VectorXd gradient(const Network& net, const data::GroupedDataset& pair, const TrainConfig& cfg);

/// Objective at the current parameters on a prepared training set.
RiskValues risk_values(Network& net, const TrainingSet& set, const RegularizerSpec& reg, Eigen::VectorXd* grad = nullptr);

struct TrainHistory {
  std::vector<RiskValues> epochs;
};

/// Raised when the objective or parameters stop being finite. Carries the
/// parameters after the last epoch whose objective was finite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(Network checkpoint, std::size_t epoch, const std::string& message)
      : Error("models.diverged", message), checkpoint_(std::move(checkpoint)), epoch_(epoch) {}
  const Network& checkpoint() const noexcept { return checkpoint_; }
  std::size_t last_finite_epoch() const noexcept { return epoch_; }

 private:
  Network checkpoint_;
  std::size_t epoch_;
};

using EpochCallback = std::function<void(std::size_t epoch, const Eigen::VectorXd& per_sample_loss, double objective)>;

/// Generic optimizer loop over (features, targets, weights). After every
/// epoch the full-set losses (dropout off, BN over the full set) are computed;
/// a non-finite objective raises TrainingDiverged.
void fit_network(Network& net, const Features& x, const Eigen::MatrixXd& targets, const Eigen::VectorXd& weights,
                 const RegularizerSpec& reg, const OptimizerSpec& opt, const EpochCallback& on_epoch = {});

/// Minimizes the alpha-weighted objective. Linear architectures start from
/// zero; others from a seeded random initialization.
Network train(const data::GroupedDataset& pair, const Architecture& arch, const TrainConfig& cfg,
              TrainHistory* history = nullptr);

Architecture task_architecture(const data::FeatureSchema& schema, Task task, const MlpConfig* mlp);

/// Probabilities for binary tasks, real predictions for regression.
std::vector<double> predict(const Network& net, const data::Dataset& data, Task task);

}  // namespace shiftadapt::models
