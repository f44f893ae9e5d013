#include "shiftadapt/models/learner.hpp"

namespace shiftadapt::models {

nlohmann::json NetworkModel::to_json() const {
  return {{"kind", kind()}, {"task", to_string(task_)}, {"network", net_.to_json()}};
}

NetworkModel NetworkModel::from_json(const nlohmann::json& j) {
  return NetworkModel(Network::from_json(j.at("network")), task_from_string(j.at("task").get<std::string>()));
}

std::unique_ptr<Model> model_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear" || kind == "mlp") return std::make_unique<NetworkModel>(NetworkModel::from_json(j));
  if (kind == "knn") return std::make_unique<KnnModel>(KnnModel::from_json(j));
  if (kind == "forest") return std::make_unique<ForestModel>(ForestModel::from_json(j));
  throw Error("models.bad_model", "unknown model kind '" + kind + "'");
}

std::string learner_name(const LearnerSpec& spec) {
  struct V {
    std::string operator()(const LinearSpec&) const { return "linear"; }
    std::string operator()(const MlpSpec&) const { return "mlp"; }
    std::string operator()(const KnnSpec& s) const { return "knn" + std::to_string(s.k); }
    std::string operator()(const ForestSpec&) const { return "forest"; }
  };
  return std::visit(V{}, spec);
}

nlohmann::json learner_to_json(const LearnerSpec& spec) {
  struct V {
    nlohmann::json operator()(const LinearSpec&) const { return {{"kind", "linear"}}; }
    nlohmann::json operator()(const MlpSpec& s) const {
      auto j = s.config.to_json();
      j["kind"] = "mlp";
      return j;
    }
    nlohmann::json operator()(const KnnSpec& s) const { return {{"kind", "knn"}, {"k", s.k}}; }
    nlohmann::json operator()(const ForestSpec& s) const {
      return {{"kind", "forest"},       {"n_trees", s.n_trees}, {"max_depth", s.max_depth},
              {"min_leaf", s.min_leaf}, {"mtry", s.mtry},       {"bootstrap", s.bootstrap}};
    }
  };
  return std::visit(V{}, spec);
}

LearnerSpec learner_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") return LinearSpec{};
  if (kind == "mlp") return MlpSpec{MlpConfig::from_json(j)};
  if (kind == "knn") return KnnSpec{j.value("k", std::size_t{5})};
  if (kind == "forest") {
    ForestSpec s;
    s.n_trees = j.value("n_trees", s.n_trees);
    s.max_depth = j.value("max_depth", s.max_depth);
    s.min_leaf = j.value("min_leaf", s.min_leaf);
    s.mtry = j.value("mtry", s.mtry);
    s.bootstrap = j.value("bootstrap", s.bootstrap);
    return s;
  }
  throw Error("models.bad_config", "unknown learner kind '" + kind + "'");
}

std::unique_ptr<Model> fit_learner(const LearnerSpec& spec, const data::GroupedDataset& pair, const TrainConfig& cfg) {
  struct V {
    const data::GroupedDataset& pair;
    const TrainConfig& cfg;
    std::unique_ptr<Model> operator()(const LinearSpec&) const {
      return std::make_unique<NetworkModel>(train(pair, task_architecture(pair.schema(), cfg.task, nullptr), cfg),
                                            cfg.task);
    }
    std::unique_ptr<Model> operator()(const MlpSpec& s) const {
      return std::make_unique<NetworkModel>(train(pair, task_architecture(pair.schema(), cfg.task, &s.config), cfg),
                                            cfg.task);
    }
    std::unique_ptr<Model> operator()(const KnnSpec& s) const {
      return std::make_unique<KnnModel>(KnnModel::fit(pair, s.k, cfg));
    }
    std::unique_ptr<Model> operator()(const ForestSpec& s) const {
      return std::make_unique<ForestModel>(ForestModel::fit(pair, s, cfg));
    }
  };
  return std::visit(V{pair, cfg}, spec);
}

}  // namespace shiftadapt::models
