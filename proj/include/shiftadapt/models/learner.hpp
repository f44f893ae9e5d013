#pragma once

#include <memory>
#include <string>
#include <variant>

#include "shiftadapt/models/erm.hpp"
#include "shiftadapt/models/forest.hpp"
#include "shiftadapt/models/knn.hpp"
#include "shiftadapt/models/model.hpp"
#include "shiftadapt/models/network.hpp"

namespace shiftadapt::models {

/// Linear/logistic or MLP network trained by weighted ERM.
class NetworkModel final : public Model {
 public:
  NetworkModel(Network net, Task task) : net_(std::move(net)), task_(task) {}

  std::vector<double> predict(const data::Dataset& data) const override { return models::predict(net_, data, task_); }
  std::string kind() const override { return net_.architecture().widths.empty() ? "linear" : "mlp"; }
  nlohmann::json to_json() const override;
  static NetworkModel from_json(const nlohmann::json& j);

  const Network& network() const noexcept { return net_; }
  Task task() const noexcept { return task_; }

 private:
  Network net_;
  Task task_;
};

struct LinearSpec {
  friend bool operator==(const LinearSpec&, const LinearSpec&) = default;
};
struct MlpSpec {
  MlpConfig config;
  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};
struct KnnSpec {
  std::size_t k = 5;
  friend bool operator==(const KnnSpec&, const KnnSpec&) = default;
};

using LearnerSpec = std::variant<LinearSpec, MlpSpec, KnnSpec, ForestSpec>;

std::string learner_name(const LearnerSpec& spec);
nlohmann::json learner_to_json(const LearnerSpec& spec);
LearnerSpec learner_from_json(const nlohmann::json& j);

/// Fits any learner on the alpha-weighted pair.
std::unique_ptr<Model> fit_learner(const LearnerSpec& spec, const data::GroupedDataset& pair, const TrainConfig& cfg);

}  // namespace shiftadapt::models
