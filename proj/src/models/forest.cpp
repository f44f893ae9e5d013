#include "shiftadapt/models/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace shiftadapt::models {

using Eigen::Index;

namespace {

struct Split {
  int feature = -1;
  double threshold = 0;
  double gain = 0;
  std::size_t position = 0;  // rows [0, position) of the sorted order go left
};

struct Grower {
  const Eigen::MatrixXd& x;
  const Eigen::VectorXd& y;
  const std::vector<double>& w;  // per-sample weight times bootstrap multiplicity
  const ForestSpec& spec;
  std::size_t mtry;
  Rng& rng;
  Tree tree;

  double weighted_mean(const std::vector<Index>& rows) const {
    double sw = 0, swy = 0;
    for (Index i : rows) {
      sw += w[static_cast<std::size_t>(i)];
      swy += w[static_cast<std::size_t>(i)] * y(i);
    }
    return swy / sw;
  }

  Split best_split(std::vector<Index>& rows) {
    const auto p = static_cast<std::size_t>(x.rows());
    std::vector<std::size_t> features(p);
    std::iota(features.begin(), features.end(), 0);
    shuffle(features.begin(), features.end(), rng);
    features.resize(mtry);
    std::sort(features.begin(), features.end());

    double W = 0, S = 0, Q = 0;
    for (Index i : rows) {
      const double wi = w[static_cast<std::size_t>(i)];
      W += wi;
      S += wi * y(i);
      Q += wi * y(i) * y(i);
    }
    const double parent = Q - S * S / W;
    Split best;
    std::vector<Index> sorted = rows;
    for (std::size_t f : features) {
      const auto fi = static_cast<Index>(f);
      std::stable_sort(sorted.begin(), sorted.end(), [&](Index a, Index b) { return x(fi, a) < x(fi, b); });
      double wl = 0, sl = 0, ql = 0;
      for (std::size_t pos = 1; pos < sorted.size(); ++pos) {
        const Index i = sorted[pos - 1];
        const double wi = w[static_cast<std::size_t>(i)];
        wl += wi;
        sl += wi * y(i);
        ql += wi * y(i) * y(i);
        const double lo = x(fi, i), hi = x(fi, sorted[pos]);
        if (!(lo < hi)) continue;
        if (pos < spec.min_leaf || sorted.size() - pos < spec.min_leaf) continue;
        const double wr = W - wl, sr = S - sl, qr = Q - ql;
        const double child = (ql - sl * sl / wl) + (qr - sr * sr / wr);
        const double gain = parent - child;
        if (gain > best.gain + 1e-12 * std::max(1.0, std::abs(parent))) {
          best = {static_cast<int>(f), 0.5 * (lo + hi), gain, pos};
        }
      }
    }
    return best;
  }

  int grow(std::vector<Index> rows, std::size_t depth) {
    const int id = static_cast<int>(tree.size());
    tree.push_back({});
    tree[static_cast<std::size_t>(id)].value = weighted_mean(rows);
    if (spec.max_depth != 0 && depth >= spec.max_depth) return id;
    if (rows.size() < 2 * spec.min_leaf) return id;
    const Split s = best_split(rows);
    if (s.feature < 0) return id;
    std::vector<Index> left, right;
    for (Index i : rows) (x(s.feature, i) < s.threshold ? left : right).push_back(i);
    tree[static_cast<std::size_t>(id)].feature = s.feature;
    tree[static_cast<std::size_t>(id)].threshold = s.threshold;
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    tree[static_cast<std::size_t>(id)].left = l;
    tree[static_cast<std::size_t>(id)].right = r;
    return id;
  }
};

double tree_predict(const Tree& tree, const Eigen::VectorXd& v) {
  std::size_t node = 0;
  while (tree[node].feature >= 0) {
    node = static_cast<std::size_t>(v(tree[node].feature) < tree[node].threshold ? tree[node].left : tree[node].right);
  }
  return tree[node].value;
}

}  // namespace

Tree grow_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, const ForestSpec& spec,
               Rng& rng) {
  std::vector<Index> support;
  for (Index i = 0; i < w.size(); ++i) {
    if (w(i) > 0) support.push_back(i);
  }
  if (support.empty()) throw Error("models.empty_training_set", "no rows with positive weight");
  std::vector<double> eff(static_cast<std::size_t>(w.size()), 0.0);
  std::vector<Index> rows;
  if (spec.bootstrap) {
    std::vector<std::size_t> count(static_cast<std::size_t>(w.size()), 0);
    for (std::size_t draw = 0; draw < support.size(); ++draw) {
      ++count[static_cast<std::size_t>(support[uniform_index(rng, support.size())])];
    }
    for (Index i : support) {
      if (count[static_cast<std::size_t>(i)] == 0) continue;
      eff[static_cast<std::size_t>(i)] = static_cast<double>(count[static_cast<std::size_t>(i)]) * w(i);
      rows.push_back(i);
    }
  } else {
    for (Index i : support) eff[static_cast<std::size_t>(i)] = w(i);
    rows = support;
  }
  const auto p = static_cast<std::size_t>(x.rows());
  std::size_t mtry = spec.mtry == 0 ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p)))) : spec.mtry;
  mtry = std::clamp<std::size_t>(mtry, 1, std::max<std::size_t>(p, 1));
  if (p == 0) return Tree{TreeNode{-1, 0, -1, -1, 0}};
  Grower g{x, y, eff, spec, mtry, rng, {}};
  g.grow(std::move(rows), 0);
  return std::move(g.tree);
}

ForestModel::ForestModel(FeatureLayout layout, std::vector<Tree> trees, Task task)
    : layout_(std::move(layout)), trees_(std::move(trees)), task_(task) {
  if (trees_.empty()) throw Error("models.bad_config", "forest needs at least one tree");
}

ForestModel ForestModel::fit(const data::GroupedDataset& pair, const ForestSpec& spec, const TrainConfig& cfg) {
  if (spec.n_trees < 1 || spec.min_leaf < 1) throw Error("models.bad_config", "n_trees and min_leaf must be >= 1");
  const FeatureLayout layout = layout_of(pair.schema());
  const TrainingSet set = make_training_set(pair, layout, cfg);
  const Eigen::MatrixXd x = set.x.dense();
  const Eigen::VectorXd y = set.targets.row(0).transpose();
  std::vector<Tree> trees;
  for (std::size_t t = 0; t < spec.n_trees; ++t) {
    Rng rng = make_rng(cfg.optimizer.seed, {3, t});
    trees.push_back(grow_tree(x, y, set.weights, spec, rng));
  }
  return ForestModel(layout, std::move(trees), cfg.task);
}

Eigen::VectorXd ForestModel::predict(const Features& x) const {
  const Eigen::MatrixXd d = x.dense();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(d.cols());
  for (Index c = 0; c < d.cols(); ++c) {
    const Eigen::VectorXd v = d.col(c);
    double s = 0;
    for (const auto& t : trees_) s += tree_predict(t, v);
    out(c) = s / static_cast<double>(trees_.size());
  }
  return out;
}

std::vector<double> ForestModel::predict(const data::Dataset& data) const {
  const Eigen::VectorXd p = predict(encode(data, layout_));
  return {p.data(), p.data() + p.size()};
}

nlohmann::json ForestModel::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : trees_) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    trees.push_back(std::move(nodes));
  }
  return {{"kind", kind()}, {"layout", layout_.to_json()}, {"task", to_string(task_)}, {"trees", trees}};
}

ForestModel ForestModel::from_json(const nlohmann::json& j) {
  std::vector<Tree> trees;
  for (const auto& t : j.at("trees")) {
    Tree tree;
    for (const auto& n : t) {
      tree.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                      n.at(4).get<double>()});
    }
    trees.push_back(std::move(tree));
  }
  return ForestModel(FeatureLayout::from_json(j.at("layout")), std::move(trees),
                     task_from_string(j.at("task").get<std::string>()));
}

}  // namespace shiftadapt::models
