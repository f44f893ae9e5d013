#include "shiftadapt/models/knn.hpp"

#include <algorithm>
#include <numeric>

namespace shiftadapt::models {

using Eigen::Index;

KnnModel::KnnModel(FeatureLayout layout, Eigen::MatrixXd points, Eigen::VectorXd labels, Eigen::VectorXd weights,
                   std::size_t k, Task task)
    : layout_(std::move(layout)),
      points_(std::move(points)),
      labels_(std::move(labels)),
      weights_(std::move(weights)),
      k_(k),
      task_(task) {
  if (k_ < 1) throw Error("models.bad_config", "k must be >= 1");
  if (k_ > static_cast<std::size_t>(points_.cols())) {
    throw Error("models.k_too_large", "k = " + std::to_string(k_) + " exceeds the " +
                                          std::to_string(points_.cols()) + " weighted training rows");
  }
}

KnnModel KnnModel::fit(const data::GroupedDataset& pair, std::size_t k, const TrainConfig& cfg) {
  const FeatureLayout layout = layout_of(pair.schema());
  const TrainingSet set = make_training_set(pair, layout, cfg);
  const Eigen::MatrixXd dense = set.x.dense();
  std::vector<Index> keep;
  for (Index i = 0; i < set.weights.size(); ++i) {
    if (set.weights(i) > 0) keep.push_back(i);
  }
  Eigen::MatrixXd pts(dense.rows(), static_cast<Index>(keep.size()));
  Eigen::VectorXd y(static_cast<Index>(keep.size())), w(static_cast<Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    pts.col(static_cast<Index>(j)) = dense.col(keep[j]);
    y(static_cast<Index>(j)) = set.targets(0, keep[j]);
    w(static_cast<Index>(j)) = set.weights(keep[j]);
  }
  return KnnModel(layout, std::move(pts), std::move(y), std::move(w), k, cfg.task);
}

Eigen::VectorXd KnnModel::predict(const Features& x) const {
  const Eigen::MatrixXd q = x.dense();
  if (q.rows() != points_.rows()) throw Error("models.feature_mismatch", "feature width differs from training");
  const Index N = points_.cols();
  Eigen::VectorXd out(q.cols());
  std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(N));
  for (Index c = 0; c < q.cols(); ++c) {
    for (Index i = 0; i < N; ++i) dist[static_cast<std::size_t>(i)] = {(points_.col(i) - q.col(c)).squaredNorm(), i};
    const auto kth = dist.begin() + static_cast<std::ptrdiff_t>(k_);
    std::partial_sort(dist.begin(), kth, dist.end());
    double sw = 0, swy = 0;
    for (auto it = dist.begin(); it != kth; ++it) {
      sw += weights_(it->second);
      swy += weights_(it->second) * labels_(it->second);
    }
    out(c) = swy / sw;
  }
  return out;
}

std::vector<double> KnnModel::predict(const data::Dataset& data) const {
  const Eigen::VectorXd p = predict(encode(data, layout_));
  return {p.data(), p.data() + p.size()};
}

nlohmann::json KnnModel::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (Index i = 0; i < points_.cols(); ++i) {
    pts.push_back(std::vector<double>(points_.col(i).data(), points_.col(i).data() + points_.rows()));
  }
  return {{"kind", kind()},
          {"layout", layout_.to_json()},
          {"k", k_},
          {"task", to_string(task_)},
          {"points", pts},
          {"labels", std::vector<double>(labels_.data(), labels_.data() + labels_.size())},
          {"weights", std::vector<double>(weights_.data(), weights_.data() + weights_.size())}};
}

KnnModel KnnModel::from_json(const nlohmann::json& j) {
  const auto pts = j.at("points").get<std::vector<std::vector<double>>>();
  const auto labels = j.at("labels").get<std::vector<double>>();
  const auto weights = j.at("weights").get<std::vector<double>>();
  const FeatureLayout layout = FeatureLayout::from_json(j.at("layout"));
  const Index d = static_cast<Index>(layout.numeric.size() + layout.one_hot_width());
  Eigen::MatrixXd m(d, static_cast<Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (static_cast<Index>(pts[i].size()) != d) throw Error("models.bad_model", "point width mismatch");
    m.col(static_cast<Index>(i)) = Eigen::Map<const Eigen::VectorXd>(pts[i].data(), d);
  }
  return KnnModel(layout, std::move(m), Eigen::Map<const Eigen::VectorXd>(labels.data(), static_cast<Index>(labels.size())),
                  Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Index>(weights.size())),
                  j.at("k").get<std::size_t>(), task_from_string(j.at("task").get<std::string>()));
}

}  // namespace shiftadapt::models
