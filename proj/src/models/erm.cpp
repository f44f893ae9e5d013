#include "shiftadapt/models/erm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace shiftadapt::models {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(Task task) { return task == Task::binary ? "binary" : "regression"; }

Task task_from_string(std::string_view text) {
  if (text == "binary") return Task::binary;
  if (text == "regression") return Task::regression;
  throw Error("models.bad_config", "unknown task '" + std::string(text) + "'");
}

namespace {

std::string optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::lbfgs: return "lbfgs";
  }
  return "";
}

OptimizerKind optimizer_from_name(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "lbfgs") return OptimizerKind::lbfgs;
  throw Error("models.bad_config", "unknown optimizer '" + s + "'");
}

}  // namespace

double RegularizerSpec::value(const VectorXd& theta) const {
  return kind == Kind::l2 ? 0.5 * strength * theta.squaredNorm() : 0.0;
}

void TrainConfig::validate() const {
  if (!(alpha >= 0 && alpha <= 1)) throw Error("models.bad_config", "alpha must be in [0,1]");
  if (!(regularizer.strength >= 0)) throw Error("models.bad_config", "regularizer strength must be >= 0");
  if (!(optimizer.step_size > 0)) throw Error("models.bad_config", "step size must be > 0");
  if (optimizer.epochs < 1) throw Error("models.bad_config", "epochs must be >= 1");
  if (!(optimizer.momentum >= 0 && optimizer.momentum < 1)) throw Error("models.bad_config", "momentum must be in [0,1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"alpha", alpha},
          {"task", to_string(task)},
          {"regularizer",
           {{"kind", regularizer.kind == RegularizerSpec::Kind::l2 ? "l2" : "none"}, {"strength", regularizer.strength}}},
          {"optimizer",
           {{"kind", optimizer_name(optimizer.kind)},
            {"step_size", optimizer.step_size},
            {"batch_size", optimizer.batch_size},
            {"epochs", optimizer.epochs},
            {"seed", optimizer.seed},
            {"momentum", optimizer.momentum},
            {"tolerance", optimizer.tolerance}}}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
  if (j.contains("regularizer")) {
    const auto& r = j.at("regularizer");
    const std::string kind = r.value("kind", std::string("l2"));
    if (kind != "l2" && kind != "none") throw Error("models.bad_config", "unknown regularizer '" + kind + "'");
    c.regularizer.kind = kind == "l2" ? RegularizerSpec::Kind::l2 : RegularizerSpec::Kind::none;
    c.regularizer.strength = r.value("strength", c.regularizer.strength);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.kind = optimizer_from_name(o.value("kind", std::string("adam")));
    c.optimizer.step_size = o.value("step_size", c.optimizer.step_size);
    c.optimizer.batch_size = o.value("batch_size", c.optimizer.batch_size);
    c.optimizer.epochs = o.value("epochs", c.optimizer.epochs);
    c.optimizer.seed = o.value("seed", c.optimizer.seed);
    c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
    c.optimizer.tolerance = o.value("tolerance", c.optimizer.tolerance);
  }
  c.validate();
  return c;
}

VectorXd sample_weights(std::size_t m, std::size_t n, double alpha) {
  VectorXd w(static_cast<Index>(m + n));
  const double ws = m > 0 ? (1.0 - alpha) / static_cast<double>(m) : 0.0;
  const double wt = n > 0 ? alpha / static_cast<double>(n) : 0.0;
  w.head(static_cast<Index>(m)).setConstant(ws);
  w.tail(static_cast<Index>(n)).setConstant(wt);
  return w;
}

TrainingSet make_training_set(const data::GroupedDataset& pair, const FeatureLayout& layout, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.alpha > 0 && pair.n() == 0) {
    throw Error("models.no_target_rows", "alpha > 0 requires at least one target row");
  }
  if (pair.target && !(pair.target->schema() == pair.source.schema())) {
    throw Error("models.schema_mismatch", "source and target schemas differ");
  }
  TrainingSet set;
  set.m = pair.m();
  set.n = pair.n();
  const Features xs = encode(pair.source, layout);
  const VectorXd ys = label_vector(pair.source);
  const Index m = static_cast<Index>(set.m), n = static_cast<Index>(set.n);
  set.x.vocab_sizes = xs.vocab_sizes;
  set.x.numeric.resize(xs.numeric.rows(), m + n);
  set.x.categories.resize(xs.categories.rows(), m + n);
  set.x.numeric.leftCols(m) = xs.numeric;
  set.x.categories.leftCols(m) = xs.categories;
  set.targets.resize(1, m + n);
  set.targets.row(0).head(m) = ys.transpose();
  if (pair.target) {
    const Features xt = encode(*pair.target, layout);
    set.x.numeric.rightCols(n) = xt.numeric;
    set.x.categories.rightCols(n) = xt.categories;
    set.targets.row(0).tail(n) = label_vector(*pair.target).transpose();
  }
  if (cfg.task == Task::binary) {
    for (Index i = 0; i < m + n; ++i) {
      const double y = set.targets(0, i);
      if (y != 0.0 && y != 1.0) throw Error("models.bad_label", "binary labels must be 0 or 1");
    }
  }
  set.weights = sample_weights(set.m, set.n, cfg.alpha);
  return set;
}

namespace {

RiskValues summarize(const VectorXd& losses, std::size_t m, std::size_t n, double objective) {
  RiskValues r;
  r.source_risk = m > 0 ? losses.head(static_cast<Index>(m)).mean() : 0.0;
  r.target_risk = n > 0 ? losses.tail(static_cast<Index>(n)).mean() : 0.0;
  r.objective = objective;
  return r;
}

bool all_finite(const VectorXd& v) { return v.allFinite(); }

}  // namespace

RiskValues risk_values(Network& net, const TrainingSet& set, const RegularizerSpec& reg, VectorXd* grad) {
  VectorXd losses;
  const double data_term = net.evaluate(set.x, set.targets, set.weights, Mode::full, grad, nullptr, &losses);
  const double objective = data_term + reg.value(net.theta());
  if (!std::isfinite(objective)) throw Error("models.non_finite_loss", "objective is not finite");
  if (grad && reg.kind == RegularizerSpec::Kind::l2) *grad += reg.strength * net.theta();
  return summarize(losses, set.m, set.n, objective);
}

RiskValues weighted_erm_loss(const Network& net, const data::GroupedDataset& pair, const TrainConfig& cfg) {
  const TrainingSet set = make_training_set(pair, net.architecture().layout, cfg);
  Network copy = net;
  return risk_values(copy, set, cfg.regularizer);
}

VectorXd gradient(const Network& net, const data::GroupedDataset& pair, const TrainConfig& cfg) {
  const TrainingSet set = make_training_set(pair, net.architecture().layout, cfg);
  Network copy = net;
  VectorXd g;
  risk_values(copy, set, cfg.regularizer, &g);
  return g;
}

void fit_network(Network& net, const Features& x, const MatrixXd& targets, const VectorXd& weights,
                 const RegularizerSpec& reg, const OptimizerSpec& opt, const EpochCallback& on_epoch) {
  const std::size_t N = x.n();
  if (N == 0) throw Error("models.empty_training_set", "no training rows");
  const bool l2 = reg.kind == RegularizerSpec::Kind::l2;
  const bool full_batch = opt.batch_size == 0 || opt.batch_size >= N;
  const auto& arch = net.architecture();
  const bool has_bn = std::any_of(arch.batch_norm.begin(), arch.batch_norm.end(), [](bool b) { return b; });

  auto full_eval = [&](Network& nw, VectorXd* grad, VectorXd* losses) {
    double f = nw.evaluate(x, targets, weights, Mode::full, grad, nullptr, losses) + reg.value(nw.theta());
    if (grad && l2) *grad += reg.strength * nw.theta();
    return f;
  };

  Network last_good = net;
  std::size_t last_good_epoch = 0;
  auto diverged = [&](std::size_t epoch) {
    throw TrainingDiverged(last_good, last_good_epoch,
                           "objective became non-finite in epoch " + std::to_string(epoch + 1) +
                               "; last finite epoch " + std::to_string(last_good_epoch));
  };

  if (opt.kind == OptimizerKind::lbfgs) {
    constexpr std::size_t kMemory = 10;
    std::vector<VectorXd> s_hist, y_hist;
    std::vector<double> rho;
    VectorXd g, losses;
    double f = full_eval(net, &g, &losses);
    if (!std::isfinite(f) || !all_finite(g)) diverged(0);
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
      if (g.lpNorm<Eigen::Infinity>() <= opt.tolerance) break;
      // Two-loop recursion for the quasi-Newton direction.
      VectorXd q = g;
      std::vector<double> a(s_hist.size());
      for (std::size_t k = s_hist.size(); k-- > 0;) {
        a[k] = rho[k] * s_hist[k].dot(q);
        q -= a[k] * y_hist[k];
      }
      if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      for (std::size_t k = 0; k < s_hist.size(); ++k) {
        const double b = rho[k] * y_hist[k].dot(q);
        q += (a[k] - b) * s_hist[k];
      }
      VectorXd dir = -q;
      double slope = g.dot(dir);
      if (!(slope < 0)) {
        dir = -g;
        slope = -g.squaredNorm();
        s_hist.clear();
        y_hist.clear();
        rho.clear();
      }
      double step = s_hist.empty() ? std::min(1.0, opt.step_size / std::max(g.norm(), 1e-300)) : 1.0;
      const VectorXd theta0 = net.theta();
      VectorXd g_new, losses_new;
      double f_new = f;
      bool accepted = false;
      for (int tries = 0; tries < 60; ++tries) {
        net.theta() = theta0 + step * dir;
        f_new = full_eval(net, &g_new, &losses_new);
        if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        net.theta() = theta0;
        break;
      }
      VectorXd sv = net.theta() - theta0, yv = g_new - g;
      const double sy = sv.dot(yv);
      if (sy > 1e-12 * sv.norm() * yv.norm()) {
        if (s_hist.size() == kMemory) {
          s_hist.erase(s_hist.begin());
          y_hist.erase(y_hist.begin());
          rho.erase(rho.begin());
        }
        s_hist.push_back(std::move(sv));
        y_hist.push_back(std::move(yv));
        rho.push_back(1.0 / sy);
      }
      const bool stalled = f - f_new <= 1e-16 * std::max(1.0, std::abs(f));
      f = f_new;
      g = std::move(g_new);
      losses = std::move(losses_new);
      if (on_epoch) on_epoch(epoch, losses, f);
      if (stalled) break;  // objective at round-off level; further steps cannot help
    }
    if (has_bn) net.calibrate_batch_norm(x);
    return;
  }

  if (full_batch && opt.kind == OptimizerKind::sgd) {
    VectorXd g, losses;
    double f = full_eval(net, &g, &losses);
    if (!std::isfinite(f) || !all_finite(g)) diverged(0);
    double step = opt.step_size;
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
      if (opt.tolerance > 0 && g.lpNorm<Eigen::Infinity>() < opt.tolerance) break;
      const double g2 = g.squaredNorm();
      const VectorXd theta0 = net.theta();
      bool accepted = false;
      VectorXd g_new, losses_new;
      double f_new = f;
      while (step > 1e-300) {
        net.theta() = theta0 - step * g;
        f_new = full_eval(net, &g_new, &losses_new);
        if (std::isfinite(f_new) && f_new <= f - 0.5 * step * g2) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        net.theta() = theta0;
        break;  // no representable descent step: numerically converged
      }
      f = f_new;
      g = std::move(g_new);
      losses = std::move(losses_new);
      step *= 1.5;
      if (on_epoch) on_epoch(epoch, losses, f);
    }
    if (has_bn) net.calibrate_batch_norm(x);
    return;
  }

  Rng order_rng = make_rng(opt.seed, {1});
  Rng dropout_rng = make_rng(opt.seed, {2});
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t B = full_batch ? N : opt.batch_size;
  const Index P = static_cast<Index>(net.size());
  VectorXd velocity = VectorXd::Zero(P), m1 = VectorXd::Zero(P), m2 = VectorXd::Zero(P);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), order_rng);
    std::size_t start = 0;
    while (start < N) {
      std::size_t end = std::min(N, start + B);
      // A trailing batch of one row has no batch-norm statistics; fold it in.
      if (has_bn && N - end == 1) end = N;
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      const Features xb = x.select(rows);
      MatrixXd yb(targets.rows(), static_cast<Index>(rows.size()));
      VectorXd wb(static_cast<Index>(rows.size()));
      const double scale = static_cast<double>(N) / static_cast<double>(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        yb.col(static_cast<Index>(i)) = targets.col(static_cast<Index>(rows[i]));
        wb(static_cast<Index>(i)) = scale * weights(static_cast<Index>(rows[i]));
      }
      VectorXd g;
      net.evaluate(xb, yb, wb, Mode::train, &g, &dropout_rng);
      if (l2) g += reg.strength * net.theta();
      ++t;
      if (opt.kind == OptimizerKind::adam) {
        m1 = beta1 * m1 + (1 - beta1) * g;
        m2 = beta2 * m2 + (1 - beta2) * g.cwiseAbs2();
        const double c1 = 1 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1 - std::pow(beta2, static_cast<double>(t));
        net.theta().array() -= opt.step_size * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
      } else {
        velocity = opt.momentum * velocity + g;
        net.theta() -= opt.step_size * velocity;
      }
      start = end;
    }
    VectorXd losses;
    const double f = all_finite(net.theta()) ? full_eval(net, nullptr, &losses) : std::nan("");
    if (!std::isfinite(f)) diverged(epoch);
    last_good = net;
    last_good_epoch = epoch + 1;
    if (on_epoch) on_epoch(epoch, losses, f);
  }
}

Architecture task_architecture(const data::FeatureSchema& schema, Task task, const MlpConfig* mlp) {
  const HeadSpec head{task == Task::binary ? HeadKind::logistic : HeadKind::squared, 1};
  const FeatureLayout layout = layout_of(schema);
  return mlp ? mlp_architecture(layout, *mlp, {head}) : linear_architecture(layout, head);
}

Network train(const data::GroupedDataset& pair, const Architecture& arch, const TrainConfig& cfg,
              TrainHistory* history) {
  if (arch.heads.size() != 1 || arch.heads[0].kind == HeadKind::softmax) {
    throw Error("models.bad_config", "weighted ERM trains a single logistic or squared head");
  }
  const TrainingSet set = make_training_set(pair, arch.layout, cfg);
  Network net(arch);
  const bool linear = arch.widths.empty() && arch.one_hot;
  if (!linear) {
    Rng rng = make_rng(cfg.optimizer.seed, {0});
    net.initialize(rng);
  }
  // Start the output bias at the weighted label mean.
  const double ybar = set.weights.dot(set.targets.row(0).transpose()) / set.weights.sum();
  const auto& bias = net.blocks().back();
  double b0 = ybar;
  if (arch.heads[0].kind == HeadKind::logistic) {
    const double p = std::clamp(ybar, 1e-6, 1 - 1e-6);
    b0 = std::log(p / (1 - p));
  }
  net.theta()(static_cast<Index>(bias.offset)) = b0;

  fit_network(net, set.x, set.targets, set.weights, cfg.regularizer, cfg.optimizer,
              [&](std::size_t, const VectorXd& losses, double objective) {
                if (history) history->epochs.push_back(summarize(losses, set.m, set.n, objective));
              });
  return net;
}

std::vector<double> predict(const Network& net, const data::Dataset& data, Task task) {
  const Features x = encode(data, net.architecture().layout);
  const MatrixXd o = net.outputs(x, Mode::inference).front();
  std::vector<double> out(static_cast<std::size_t>(o.cols()));
  for (Index i = 0; i < o.cols(); ++i) {
    out[static_cast<std::size_t>(i)] = task == Task::binary ? sigmoid(o(0, i)) : o(0, i);
  }
  return out;
}

}  // namespace shiftadapt::models
