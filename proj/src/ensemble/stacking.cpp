#include "shiftadapt/ensemble/stacking.hpp"

#include <algorithm>
#include <unordered_set>

#include "shiftadapt/data/folds.hpp"
#include "shiftadapt/evaluation/metrics.hpp"
#include "shiftadapt/models/features.hpp"
#include "shiftadapt/util/digest.hpp"
#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/parallel.hpp"
#include "shiftadapt/util/rng.hpp"

namespace shiftadapt::ensemble {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void OofMatrix::append(OofMatrix other) {
  if (model_ids.empty() && values.size() == 0) {
    *this = std::move(other);
    return;
  }
  if (other.row_ids != row_ids) throw Error("ensemble.row_mismatch", "OOF columns cover different rows");
  const std::size_t offset = folds.size();
  for (auto& col : other.producers)
    for (auto& rep : col)
      for (auto& p : rep) p += offset;
  MatrixXd merged(values.rows(), values.cols() + other.values.cols());
  merged << values, other.values;
  values = std::move(merged);
  model_ids.insert(model_ids.end(), other.model_ids.begin(), other.model_ids.end());
  folds.insert(folds.end(), std::make_move_iterator(other.folds.begin()), std::make_move_iterator(other.folds.end()));
  producers.insert(producers.end(), std::make_move_iterator(other.producers.begin()),
                   std::make_move_iterator(other.producers.end()));
}

nlohmann::json OofMatrix::to_json() const {
  nlohmann::json folds_j = nlohmann::json::array();
  for (const auto& f : folds)
    folds_j.push_back({{"model_id", f.model_id},
                       {"repeat", f.repeat},
                       {"fold", f.fold},
                       {"training_rows", f.training_rows.size()},
                       {"training_digest", f.training_digest}});
  nlohmann::json vals = nlohmann::json::array();
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < values.cols(); ++c) row.push_back(values(i, c));
    vals.push_back(std::move(row));
  }
  return {{"row_ids", row_ids}, {"model_ids", model_ids}, {"values", vals}, {"folds", folds_j},
          {"producers", producers}};
}

std::size_t audit_oof(const OofMatrix& oof) {
  std::vector<std::unordered_set<std::string>> seen(oof.folds.size());
  for (std::size_t f = 0; f < oof.folds.size(); ++f) {
    const auto& rec = oof.folds[f];
    if (digest_row_ids(rec.training_rows) != rec.training_digest)
      throw Error("ensemble.leakage", "training digest mismatch for " + rec.model_id);
    seen[f].insert(rec.training_rows.begin(), rec.training_rows.end());
  }
  std::size_t checked = 0;
  for (std::size_t c = 0; c < oof.producers.size(); ++c) {
    for (const auto& rep : oof.producers[c]) {
      if (rep.size() != oof.row_ids.size()) throw Error("ensemble.leakage", "incomplete provenance");
      for (std::size_t i = 0; i < rep.size(); ++i) {
        const std::size_t f = rep[i];
        if (f >= oof.folds.size() || oof.folds[f].model_id != oof.model_ids[c])
          throw Error("ensemble.leakage", "entry without a producing model in " + oof.model_ids[c]);
        if (seen[f].count(oof.row_ids[i]))
          throw Error("ensemble.leakage", "row " + oof.row_ids[i] + " was in the training set of " + oof.model_ids[c] +
                                              " fold " + std::to_string(oof.folds[f].fold));
        ++checked;
      }
    }
  }
  return checked;
}

std::vector<double> BaggedModel::predict(const data::Dataset& data) const {
  std::vector<double> out(data.n_rows(), 0.0);
  for (const auto& m : members_) {
    const auto p = m->predict(data);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
  }
  for (double& v : out) v /= static_cast<double>(members_.size());
  return out;
}

nlohmann::json BaggedModel::to_json() const {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : members_) members.push_back(m->to_json());
  return {{"kind", "bagged"}, {"id", id_}, {"members", members}};
}

BaggedModel BaggedModel::from_json(const nlohmann::json& j) {
  std::vector<std::unique_ptr<models::Model>> members;
  for (const auto& m : j.at("members")) members.push_back(models::model_from_json(m));
  return BaggedModel(j.at("id").get<std::string>(), std::move(members));
}

namespace {

std::vector<std::size_t> complement(const std::vector<int>& folds, int f, bool in_fold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < folds.size(); ++i)
    if ((folds[i] == f) == in_fold) out.push_back(i);
  return out;
}

std::vector<int> fold_assignment(const data::Dataset& d, std::size_t k, std::uint64_t seed) {
  if (d.n_rows() == 0) return {};
  const auto strata = data::label_strata(d, d.schema().label_column().name);
  return data::assign_stratified(strata, d.row_ids(), k, seed);
}

}  // namespace

BaggedFit bagged_oof_fit(const data::GroupedDataset& pair, const models::LearnerSpec& learner,
                         const models::TrainConfig& cfg, const BaggingSpec& spec, const std::string& model_id) {
  const std::size_t k = spec.folds, reps = spec.repeats;
  if (k < 2) throw Error("ensemble.bad_spec", "bagging needs at least 2 folds");
  if (reps < 1) throw Error("ensemble.bad_spec", "bagging needs at least 1 repeat");
  const std::size_t m = pair.m(), n = pair.n(), total = m + n;
  if (total < k) throw Error("ensemble.too_few_rows", "fewer rows than folds");

  std::vector<std::vector<int>> src_folds(reps), tgt_folds(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    src_folds[r] = fold_assignment(pair.source, k, derive_seed(spec.seed, {r, 0}));
    if (pair.target) tgt_folds[r] = fold_assignment(*pair.target, k, derive_seed(spec.seed, {r, 1}));
  }

  std::vector<std::string> row_ids = pair.source.row_ids();
  if (pair.target) row_ids.insert(row_ids.end(), pair.target->row_ids().begin(), pair.target->row_ids().end());

  const std::size_t jobs_n = reps * k;
  std::vector<std::unique_ptr<models::Model>> fitted(jobs_n);
  std::vector<FoldRecord> records(jobs_n);
  std::vector<std::vector<std::pair<std::size_t, double>>> held_preds(jobs_n);

  parallel_for(
      jobs_n,
      [&](std::size_t job) {
        const std::size_t r = job / k, f = job % k;
        const auto fi = static_cast<int>(f);
        const auto s_train = complement(src_folds[r], fi, false);
        const auto s_held = complement(src_folds[r], fi, true);
        std::vector<std::size_t> t_train, t_held;
        if (pair.target) {
          t_train = complement(tgt_folds[r], fi, false);
          t_held = complement(tgt_folds[r], fi, true);
        }
        std::optional<data::Dataset> tgt;
        if (!t_train.empty()) tgt = pair.target->select(t_train);
        const data::GroupedDataset train_pair(pair.source.select(s_train), std::move(tgt));

        models::TrainConfig c = cfg;
        c.optimizer.seed = derive_seed(spec.seed, {r, f, 2});
        try {
          fitted[job] = models::fit_learner(learner, train_pair, c);
        } catch (const Error& e) {
          throw Error(e.code(), "fold " + std::to_string(f) + " repeat " + std::to_string(r) + ": " + e.what());
        }

        FoldRecord& rec = records[job];
        rec.model_id = model_id;
        rec.repeat = r;
        rec.fold = f;
        for (auto i : s_train) rec.training_rows.push_back(pair.source.row_id(i));
        for (auto i : t_train) rec.training_rows.push_back(pair.target->row_id(i));
        rec.training_digest = digest_row_ids(rec.training_rows);

        if (!s_held.empty()) {
          const auto p = fitted[job]->predict(pair.source.select(s_held));
          for (std::size_t i = 0; i < s_held.size(); ++i) held_preds[job].emplace_back(s_held[i], p[i]);
        }
        if (!t_held.empty()) {
          const auto p = fitted[job]->predict(pair.target->select(t_held));
          for (std::size_t i = 0; i < t_held.size(); ++i) held_preds[job].emplace_back(m + t_held[i], p[i]);
        }
      },
      spec.jobs);

  OofMatrix oof;
  oof.row_ids = row_ids;
  oof.model_ids = {model_id};
  oof.values = MatrixXd::Zero(static_cast<Eigen::Index>(total), 1);
  oof.producers.assign(1, std::vector<std::vector<std::size_t>>(reps, std::vector<std::size_t>(total, SIZE_MAX)));
  for (std::size_t job = 0; job < jobs_n; ++job) {
    const std::size_t r = job / k;
    for (const auto& [row, v] : held_preds[job]) {
      oof.values(static_cast<Eigen::Index>(row), 0) += v / static_cast<double>(reps);
      oof.producers[0][r][row] = job;
    }
  }
  oof.folds = std::move(records);
  return {BaggedModel(model_id, std::move(fitted)), std::move(oof)};
}

Selection ensemble_select(const MatrixXd& oof, std::span<const double> labels, models::Task task,
                          std::size_t iterations) {
  if (oof.cols() < 1) throw Error("ensemble.no_models", "selection needs at least one column");
  if (static_cast<std::size_t>(oof.rows()) != labels.size())
    throw Error("ensemble.row_mismatch", "labels and OOF rows differ");
  Selection sel;
  sel.weights.assign(static_cast<std::size_t>(oof.cols()), 0.0);
  VectorXd sum = VectorXd::Zero(oof.rows());
  std::vector<double> avg(static_cast<std::size_t>(oof.rows()));
  for (std::size_t it = 0; it < std::max<std::size_t>(iterations, 1); ++it) {
    const double count = static_cast<double>(sel.picks.size() + 1);
    double best = -std::numeric_limits<double>::infinity();
    Eigen::Index best_c = -1;
    for (Eigen::Index c = 0; c < oof.cols(); ++c) {
      for (Eigen::Index i = 0; i < oof.rows(); ++i) avg[static_cast<std::size_t>(i)] = (sum(i) + oof(i, c)) / count;
      const double s = evaluation::selection_score(task, avg, labels);
      if (s > best) {
        best = s;
        best_c = c;
      }
    }
    if (!sel.trajectory.empty() && best < sel.trajectory.back()) break;
    sum += oof.col(best_c);
    sel.picks.push_back(static_cast<std::size_t>(best_c));
    sel.trajectory.push_back(best);
  }
  for (auto p : sel.picks) sel.weights[p] += 1.0;
  for (double& w : sel.weights) w /= static_cast<double>(sel.picks.size());
  return sel;
}

nlohmann::json EnsembleSpec::to_json() const {
  nlohmann::json z = nlohmann::json::array();
  for (const auto& l : zoo) z.push_back(models::learner_to_json(l));
  return {{"zoo", z},
          {"folds", bagging.folds},
          {"repeats", bagging.repeats},
          {"seed", bagging.seed},
          {"iterations", iterations},
          {"levels", levels}};
}

EnsembleSpec EnsembleSpec::from_json(const nlohmann::json& j) {
  EnsembleSpec s;
  for (const auto& l : j.at("zoo")) s.zoo.push_back(models::learner_from_json(l));
  s.bagging.folds = j.value("folds", s.bagging.folds);
  s.bagging.repeats = j.value("repeats", s.bagging.repeats);
  s.bagging.seed = j.value("seed", s.bagging.seed);
  s.iterations = j.value("iterations", s.iterations);
  s.levels = j.value("levels", s.levels);
  return s;
}

data::Dataset append_prediction_columns(const data::Dataset& data, const std::vector<std::string>& names,
                                        const MatrixXd& values) {
  if (static_cast<std::size_t>(values.rows()) != data.n_rows() || static_cast<std::size_t>(values.cols()) != names.size())
    throw Error("ensemble.width_mismatch", "prediction columns do not match the data");
  const auto& schema = data.schema();
  std::vector<data::Column> cols = schema.columns();
  for (const auto& name : names) {
    if (schema.find(name)) throw Error("ensemble.width_mismatch", "column " + name + " already present");
    cols.push_back({name, data::ColumnKind::continuous, {}});
  }
  std::vector<std::vector<data::Cell>> rows;
  rows.reserve(data.n_rows());
  for (std::size_t i = 0; i < data.n_rows(); ++i) {
    auto row = data.row(i);
    for (Eigen::Index c = 0; c < values.cols(); ++c) row.emplace_back(values(static_cast<Eigen::Index>(i), c));
    rows.push_back(std::move(row));
  }
  return data::Dataset(data::FeatureSchema(std::move(cols), schema.normalized(), schema.id_column()), std::move(rows),
                       data.row_ids());
}

data::GroupedDataset augment_pair(const data::GroupedDataset& pair, const OofMatrix& oof) {
  const auto m = static_cast<Eigen::Index>(pair.m());
  auto src = append_prediction_columns(pair.source, oof.model_ids, oof.values.topRows(m));
  std::optional<data::Dataset> tgt;
  if (pair.target)
    tgt = append_prediction_columns(*pair.target, oof.model_ids, oof.values.bottomRows(oof.values.rows() - m));
  return data::GroupedDataset(std::move(src), std::move(tgt));
}

namespace {

struct LevelFit {
  std::vector<BaggedModel> models;
  OofMatrix oof;
};

LevelFit fit_level(const data::GroupedDataset& pair, const EnsembleSpec& spec, const models::TrainConfig& cfg,
                   std::size_t level, std::vector<ExcludedModel>& excluded) {
  LevelFit out;
  for (std::size_t i = 0; i < spec.zoo.size(); ++i) {
    const std::string id = "L" + std::to_string(level) + "." + std::to_string(i) + "." + models::learner_name(spec.zoo[i]);
    BaggingSpec b = spec.bagging;
    b.seed = derive_seed(spec.bagging.seed, {level, i});
    try {
      auto fit = bagged_oof_fit(pair, spec.zoo[i], cfg, b, id);
      out.models.push_back(std::move(fit.model));
      out.oof.append(std::move(fit.oof));
    } catch (const Error& e) {
      excluded.push_back({id, e.what()});
    }
  }
  if (out.models.empty()) throw Error("ensemble.no_models", "every base model failed at level " + std::to_string(level));
  audit_oof(out.oof);
  return out;
}

}  // namespace

StackedEnsemble stack_fit(const data::GroupedDataset& pair, const EnsembleSpec& spec, const models::TrainConfig& cfg) {
  if (spec.zoo.empty()) throw Error("ensemble.bad_spec", "the learner zoo is empty");
  if (spec.levels < 1 || spec.levels > 2) throw Error("ensemble.bad_spec", "stacking supports 1 or 2 levels");
  cfg.validate();

  StackedEnsemble e;
  e.task = cfg.task;
  LevelFit l1 = fit_level(pair, spec, cfg, 1, e.excluded);
  e.levels.push_back(std::move(l1.models));
  OofMatrix top = std::move(l1.oof);
  if (spec.levels == 2 && spec.zoo.size() > 1) {
    // The alpha weighting carries over to the second level unchanged.
    LevelFit l2 = fit_level(augment_pair(pair, top), spec, cfg, 2, e.excluded);
    e.levels.push_back(std::move(l2.models));
    top = std::move(l2.oof);
  }

  std::vector<double> labels;
  const auto append_labels = [&](const data::Dataset& d) {
    const VectorXd y = models::label_vector(d);
    labels.insert(labels.end(), y.data(), y.data() + y.size());
  };
  append_labels(pair.source);
  if (pair.target) append_labels(*pair.target);

  // Select on target rows when the objective weights them and the metric is
  // defined there; otherwise on every training row.
  MatrixXd sel_values = top.values;
  std::vector<double> sel_labels = labels;
  if (cfg.alpha > 0 && pair.n() >= 2) {
    const auto m = static_cast<Eigen::Index>(pair.m());
    std::vector<double> tl(labels.begin() + m, labels.end());
    const bool both = cfg.task != models::Task::binary ||
                      (std::count(tl.begin(), tl.end(), 1.0) > 0 && std::count(tl.begin(), tl.end(), 0.0) > 0);
    if (both) {
      sel_values = top.values.bottomRows(top.values.rows() - m);
      sel_labels = std::move(tl);
    }
  }
  e.selection = ensemble_select(sel_values, sel_labels, cfg.task, spec.iterations);
  e.weights = e.selection.weights;
  e.top_oof = std::move(top);
  return e;
}

MatrixXd StackedEnsemble::top_level_scores(const data::Dataset& data) const {
  if (levels.empty()) throw Error("ensemble.empty", "ensemble has no models");
  const auto level_scores = [](const std::vector<BaggedModel>& ms, const data::Dataset& d) {
    MatrixXd s(static_cast<Eigen::Index>(d.n_rows()), static_cast<Eigen::Index>(ms.size()));
    for (std::size_t c = 0; c < ms.size(); ++c) {
      const auto p = ms[c].predict(d);
      s.col(static_cast<Eigen::Index>(c)) = Eigen::Map<const VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
    }
    return s;
  };
  MatrixXd s = level_scores(levels[0], data);
  if (levels.size() == 2) {
    std::vector<std::string> ids;
    for (const auto& m : levels[0]) ids.push_back(m.id());
    s = level_scores(levels[1], append_prediction_columns(data, ids, s));
  }
  return s;
}

std::vector<double> StackedEnsemble::predict(const data::Dataset& data) const {
  const MatrixXd s = top_level_scores(data);
  if (static_cast<std::size_t>(s.cols()) != weights.size())
    throw Error("ensemble.width_mismatch", "weights do not match the top level");
  const VectorXd w = Eigen::Map<const VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  const VectorXd out = s * w;
  return {out.data(), out.data() + out.size()};
}

nlohmann::json StackedEnsemble::to_json() const {
  nlohmann::json lv = nlohmann::json::array();
  for (const auto& level : levels) {
    nlohmann::json ms = nlohmann::json::array();
    for (const auto& m : level) ms.push_back(m.to_json());
    lv.push_back(std::move(ms));
  }
  nlohmann::json ex = nlohmann::json::array();
  for (const auto& x : excluded) ex.push_back({{"model_id", x.model_id}, {"reason", x.reason}});
  nlohmann::json digests = nlohmann::json::array();
  for (const auto& f : top_oof.folds) digests.push_back({{"model_id", f.model_id}, {"repeat", f.repeat}, {"fold", f.fold}, {"training_digest", f.training_digest}});
  return {{"kind", "ensemble"},
          {"task", models::to_string(task)},
          {"levels", lv},
          {"weights", weights},
          {"selection", {{"picks", selection.picks}, {"trajectory", selection.trajectory}}},
          {"excluded", ex},
          {"top_level_folds", digests}};
}

StackedEnsemble StackedEnsemble::from_json(const nlohmann::json& j) {
  StackedEnsemble e;
  e.task = models::task_from_string(j.at("task").get<std::string>());
  for (const auto& level : j.at("levels")) {
    std::vector<BaggedModel> ms;
    for (const auto& m : level) ms.push_back(BaggedModel::from_json(m));
    e.levels.push_back(std::move(ms));
  }
  e.weights = j.at("weights").get<std::vector<double>>();
  e.selection.weights = e.weights;
  e.selection.picks = j.at("selection").at("picks").get<std::vector<std::size_t>>();
  e.selection.trajectory = j.at("selection").at("trajectory").get<std::vector<double>>();
  for (const auto& x : j.at("excluded")) e.excluded.push_back({x.at("model_id"), x.at("reason")});
  return e;
}

}  // namespace shiftadapt::ensemble
