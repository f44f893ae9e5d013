#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "shiftadapt/models/features.hpp"
#include "shiftadapt/util/rng.hpp"

namespace shiftadapt::models {

enum class HeadKind { logistic, squared, softmax };

struct HeadSpec {
  HeadKind kind = HeadKind::logistic;
  std::size_t classes = 1;  ///< output width; 1 unless softmax

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

/// Three ReLU layers with batch norm and dropout; the output of the first
/// layer is added to the output of the last hidden layer.
struct MlpConfig {
  std::vector<std::size_t> widths{128, 128, 128};
  std::vector<double> dropout{0.25, 0.25, 0.25};
  std::vector<bool> batch_norm{true, true, true};
  bool skip = true;
  /// Per categorical column; empty means ceil(sqrt(vocabulary size)).
  std::vector<std::size_t> embedding_dims;

  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
  nlohmann::json to_json() const;
  static MlpConfig from_json(const nlohmann::json& j);
};

/// Shape of a network. A linear model is the case with no hidden layers and
/// one-hot categorical inputs.
struct Architecture {
  FeatureLayout layout;
  bool one_hot = false;
  std::vector<std::size_t> embedding_dims;
  std::vector<std::size_t> widths;
  std::vector<double> dropout;
  std::vector<bool> batch_norm;
  bool skip = false;
  std::vector<HeadSpec> heads;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  std::size_t input_width() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
};

Architecture linear_architecture(const FeatureLayout& layout, HeadSpec head);
Architecture mlp_architecture(const FeatureLayout& layout, const MlpConfig& config, std::vector<HeadSpec> heads);

/// Named slice of the flat parameter vector, stored column-major.
struct ParamBlock {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
};

std::vector<ParamBlock> param_layout(const Architecture& arch);

enum class Mode {
  train,      ///< dropout on, mini-batch BN statistics, running stats updated
  full,       ///< dropout off, BN statistics of the evaluated set
  inference,  ///< dropout off, BN running statistics
};

/// Architecture plus parameters θ and batch-norm running statistics.
class Network {
 public:
  Network() = default;
  explicit Network(Architecture arch);

  const Architecture& architecture() const noexcept { return arch_; }
  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }
  const Eigen::VectorXd& theta() const noexcept { return theta_; }
  Eigen::VectorXd& theta() noexcept { return theta_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(theta_.size()); }

  /// He-normal hidden weights, Xavier head weights, small embeddings,
  /// zero biases, unit BN scale.
  void initialize(Rng& rng);

  /// Sum over samples of weight_i * loss_i (no regularizer). `targets` has one
  /// row per head; softmax heads hold the class index. When `grad` is set it
  /// receives the gradient (resized to size()). In Mode::train the BN running
  /// statistics are updated and `rng` drives dropout.
  double evaluate(const Features& x, const Eigen::MatrixXd& targets, const Eigen::VectorXd& weights,
                  Mode mode, Eigen::VectorXd* grad = nullptr, Rng* rng = nullptr,
                  Eigen::VectorXd* per_sample_loss = nullptr);

  /// Head outputs before the link function; one matrix per head, (classes x N).
  std::vector<Eigen::MatrixXd> outputs(const Features& x, Mode mode = Mode::inference) const;

  /// Activations of the last hidden layer (after the skip), (width x N).
  Eigen::MatrixXd embed(const Features& x) const;

  /// Sets the BN running statistics to the statistics of `x` (unbiased
  /// variance), layer by layer. Used after full-batch training.
  void calibrate_batch_norm(const Features& x);

  const std::vector<Eigen::VectorXd>& running_mean() const noexcept { return running_mean_; }
  const std::vector<Eigen::VectorXd>& running_var() const noexcept { return running_var_; }

  nlohmann::json to_json() const;
  static Network from_json(const nlohmann::json& j);

  friend bool operator==(const Network&, const Network&) = default;

 private:
  struct Trace;
  void forward(const Features& x, Mode mode, Rng* rng, Trace& t) const;

  Architecture arch_;
  std::vector<ParamBlock> blocks_;
  Eigen::VectorXd theta_;
  std::vector<Eigen::VectorXd> running_mean_;
  std::vector<Eigen::VectorXd> running_var_;
};

/// Numerically stable log(1 + exp(z)).
double softplus(double z);
double sigmoid(double z);

}  // namespace shiftadapt::models
