#include "shiftadapt/mmd/feature_map.hpp"

#include <map>

#include "shiftadapt/util/error.hpp"

namespace shiftadapt::mmd {

using data::ColumnKind;
using Eigen::Index;

nlohmann::json FeatureMapConfig::to_json() const {
  models::TrainConfig t;
  t.regularizer = regularizer;
  t.optimizer = optimizer;
  const auto tj = t.to_json();
  return {{"mlp", mlp.to_json()}, {"regularizer", tj.at("regularizer")}, {"optimizer", tj.at("optimizer")}};
}

FeatureMapConfig FeatureMapConfig::from_json(const nlohmann::json& j) {
  FeatureMapConfig c;
  if (j.contains("mlp")) c.mlp = models::MlpConfig::from_json(j.at("mlp"));
  nlohmann::json tj = {{"regularizer", c.to_json().at("regularizer")}, {"optimizer", c.to_json().at("optimizer")}};
  if (j.contains("regularizer")) tj["regularizer"].update(j.at("regularizer"));
  if (j.contains("optimizer")) tj["optimizer"].update(j.at("optimizer"));
  const auto t = models::TrainConfig::from_json(tj);
  c.regularizer = t.regularizer;
  c.optimizer = t.optimizer;
  return c;
}

FeatureMap::FeatureMap(models::Network net, std::vector<std::string> attributes, std::vector<ExcludedAttribute> excluded)
    : net_(std::move(net)), attributes_(std::move(attributes)), excluded_(std::move(excluded)) {}

Eigen::MatrixXd FeatureMap::transform(const data::Dataset& data) const {
  return net_.embed(models::encode(data, net_.architecture().layout));
}

std::size_t FeatureMap::dimension() const {
  const auto& w = net_.architecture().widths;
  return w.empty() ? net_.architecture().input_width() : w.back();
}

std::vector<std::size_t> FeatureMap::predict_group(const data::Dataset& data, const std::string& attribute) const {
  std::size_t head = attributes_.size();
  for (std::size_t h = 0; h < attributes_.size(); ++h) {
    if (attributes_[h] == attribute) head = h;
  }
  if (head == attributes_.size()) throw Error("mmd.unknown_attribute", "no head for attribute '" + attribute + "'");
  const auto out = net_.outputs(models::encode(data, net_.architecture().layout), models::Mode::inference)[head];
  std::vector<std::size_t> pred(static_cast<std::size_t>(out.cols()));
  for (Index i = 0; i < out.cols(); ++i) {
    Index best = 0;
    out.col(i).maxCoeff(&best);
    pred[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return pred;
}

nlohmann::json FeatureMap::to_json() const {
  nlohmann::json ex = nlohmann::json::array();
  for (const auto& e : excluded_) ex.push_back({{"attribute", e.attribute}, {"reason", e.reason}});
  return {{"network", net_.to_json()}, {"attributes", attributes_}, {"excluded", ex}};
}

FeatureMap FeatureMap::from_json(const nlohmann::json& j) {
  std::vector<ExcludedAttribute> ex;
  for (const auto& e : j.at("excluded")) ex.push_back({e.at("attribute"), e.at("reason")});
  return FeatureMap(models::Network::from_json(j.at("network")), j.at("attributes").get<std::vector<std::string>>(),
                    std::move(ex));
}

FeatureMap learn_feature_map(const data::Dataset& data, const std::vector<std::string>& attributes,
                             const FeatureMapConfig& config) {
  const auto& schema = data.schema();
  std::vector<std::string> kept;
  std::vector<ExcludedAttribute> excluded;
  std::vector<std::vector<double>> labels;
  std::vector<models::HeadSpec> heads;
  for (const auto& attr : attributes) {
    const std::size_t col = schema.index_of(attr);
    if (schema.column(col).kind != ColumnKind::group) {
      throw Error("mmd.not_a_group", "column '" + attr + "' is not a group attribute");
    }
    const std::size_t unknown = schema.unknown_index(col);
    std::vector<double> y(data.n_rows());
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t r = 0; r < data.n_rows(); ++r) {
      const auto* c = std::get_if<data::Category>(&data.cell(r, col));
      y[r] = static_cast<double>(c ? c->index : unknown);
      ++counts[static_cast<std::size_t>(y[r])];
    }
    std::size_t usable = 0;
    for (const auto& [g, n] : counts) usable += n >= 2 ? 1 : 0;
    if (usable < 2) {
      excluded.push_back({attr, "fewer than two groups with at least two rows"});
      continue;
    }
    kept.push_back(attr);
    labels.push_back(std::move(y));
    heads.push_back({models::HeadKind::softmax, schema.column(col).categories.size()});
  }
  if (kept.empty()) throw Error("mmd.no_attributes", "no attribute has two usable groups");

  const auto layout = models::layout_of(schema);
  models::Network net(models::mlp_architecture(layout, config.mlp, heads));
  Rng rng = make_rng(config.optimizer.seed, {0});
  net.initialize(rng);
  const models::Features x = models::encode(data, layout);
  Eigen::MatrixXd targets(static_cast<Index>(kept.size()), static_cast<Index>(data.n_rows()));
  for (std::size_t h = 0; h < kept.size(); ++h)
    for (std::size_t r = 0; r < data.n_rows(); ++r) targets(static_cast<Index>(h), static_cast<Index>(r)) = labels[h][r];
  const Eigen::VectorXd w = Eigen::VectorXd::Constant(static_cast<Index>(data.n_rows()), 1.0 / static_cast<double>(data.n_rows()));
  models::fit_network(net, x, targets, w, config.regularizer, config.optimizer);
  return FeatureMap(std::move(net), std::move(kept), std::move(excluded));
}

}  // namespace shiftadapt::mmd
