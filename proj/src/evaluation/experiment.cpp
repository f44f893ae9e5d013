#include "shiftadapt/evaluation/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "shiftadapt/data/folds.hpp"
#include "shiftadapt/mmd/mmd.hpp"
#include "shiftadapt/models/features.hpp"
#include "shiftadapt/preprocess/preprocessor.hpp"
#include "shiftadapt/theory/bounds.hpp"
#include "shiftadapt/util/digest.hpp"
#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/io.hpp"
#include "shiftadapt/util/parallel.hpp"
#include "shiftadapt/util/rng.hpp"

namespace shiftadapt::evaluation {

using data::Dataset;
using data::GroupedDataset;

std::string model_name(const ModelSpec& spec) {
  if (const auto* l = std::get_if<models::LearnerSpec>(&spec)) return models::learner_name(*l);
  return "ensemble";
}

nlohmann::json model_spec_to_json(const ModelSpec& spec) {
  if (const auto* l = std::get_if<models::LearnerSpec>(&spec)) return models::learner_to_json(*l);
  nlohmann::json j = std::get<ensemble::EnsembleSpec>(spec).to_json();
  j["kind"] = "ensemble";
  return j;
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  if (j.at("kind").get<std::string>() == "ensemble") return ensemble::EnsembleSpec::from_json(j);
  return models::learner_from_json(j);
}

std::unique_ptr<models::Model> fit_model(const ModelSpec& spec, const GroupedDataset& pair,
                                         const models::TrainConfig& cfg) {
  if (const auto* l = std::get_if<models::LearnerSpec>(&spec)) return models::fit_learner(*l, pair, cfg);
  auto e = ensemble::stack_fit(pair, std::get<ensemble::EnsembleSpec>(spec), cfg);
  return std::make_unique<ensemble::StackedEnsemble>(std::move(e));
}

std::string to_string(TargetShare s) {
  switch (s) {
    case TargetShare::none: return "0";
    case TargetShare::tenth: return "0.1";
    case TargetShare::fifth: return "0.2";
    case TargetShare::all_folds: return "0.8-train-all";
  }
  return "?";
}

TargetShare target_share_from_string(std::string_view text) {
  if (text == "0") return TargetShare::none;
  if (text == "0.1") return TargetShare::tenth;
  if (text == "0.2") return TargetShare::fifth;
  if (text == "0.8-train-all" || text == "all") return TargetShare::all_folds;
  throw Error("evaluation.bad_spec", "unknown target fraction '" + std::string(text) + "'");
}

double training_fraction(TargetShare s) {
  switch (s) {
    case TargetShare::none: return 0.0;
    case TargetShare::tenth: return 0.1;
    case TargetShare::fifth: return 0.2;
    case TargetShare::all_folds: return 0.8;
  }
  return 0.0;
}

std::vector<double> alpha_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 10; ++k) g.push_back(static_cast<double>(k) / (k + 1));
  return g;
}

nlohmann::json AlphaPolicy::to_json() const {
  static const char* names[] = {"fixed", "grid", "theory"};
  nlohmann::json j{{"kind", names[static_cast<int>(kind)]}};
  if (kind == Kind::fixed) j["value"] = value;
  if (kind == Kind::theory) {
    j["vc_dimension"] = vc_dimension;
    j["delta"] = delta;
  }
  return j;
}

AlphaPolicy AlphaPolicy::from_json(const nlohmann::json& j) {
  AlphaPolicy p;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "fixed")
    p.kind = Kind::fixed;
  else if (kind == "grid")
    p.kind = Kind::grid;
  else if (kind == "theory")
    p.kind = Kind::theory;
  else
    throw Error("evaluation.bad_spec", "unknown alpha policy '" + kind + "'");
  p.value = j.value("value", p.value);
  p.vc_dimension = j.value("vc_dimension", p.vc_dimension);
  p.delta = j.value("delta", p.delta);
  return p;
}

void ExperimentSpec::validate() const {
  if (candidates.empty()) throw Error("evaluation.bad_spec", "no model candidates");
  if (outer_folds < 2 || inner_folds < 2) throw Error("evaluation.bad_spec", "fold counts must be >= 2");
  if (alpha.kind == AlphaPolicy::Kind::grid && share == TargetShare::none)
    throw Error("evaluation.bad_spec", "an alpha grid needs target rows in training");
  if (alpha.kind == AlphaPolicy::Kind::fixed && !(alpha.value >= 0 && alpha.value <= 1))
    throw Error("evaluation.bad_spec", "fixed alpha must be in [0,1]");
  if (alpha.kind == AlphaPolicy::Kind::fixed && share == TargetShare::none && alpha.value > 0)
    throw Error("evaluation.bad_spec", "alpha > 0 needs target rows in training");
}

nlohmann::json ExperimentSpec::to_json() const {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : candidates) cands.push_back(model_spec_to_json(c));
  return {{"task", models::to_string(task)},
          {"source_group", source_group},
          {"target_group", target_group},
          {"target_fraction", to_string(share)},
          {"candidates", cands},
          {"alpha", alpha.to_json()},
          {"train", train.to_json()},
          {"outer_folds", outer_folds},
          {"inner_folds", inner_folds},
          {"outer_limit", outer_limit},
          {"seed", seed},
          {"strict_paper_splits", strict_paper_splits},
          {"preprocess", preprocess},
          {"skew_threshold", skew_threshold}};
}

ExperimentSpec ExperimentSpec::from_json(const nlohmann::json& j) {
  ExperimentSpec s;
  s.task = models::task_from_string(j.value("task", std::string("binary")));
  s.source_group = j.value("source_group", std::string());
  s.target_group = j.value("target_group", std::string());
  s.share = target_share_from_string(j.value("target_fraction", std::string("0.2")));
  for (const auto& c : j.at("candidates")) s.candidates.push_back(model_spec_from_json(c));
  if (j.contains("alpha")) s.alpha = AlphaPolicy::from_json(j.at("alpha"));
  if (j.contains("train")) s.train = models::TrainConfig::from_json(j.at("train"));
  s.train.task = s.task;
  s.outer_folds = j.value("outer_folds", s.outer_folds);
  s.inner_folds = j.value("inner_folds", s.inner_folds);
  s.outer_limit = j.value("outer_limit", s.outer_limit);
  s.seed = j.value("seed", s.seed);
  s.strict_paper_splits = j.value("strict_paper_splits", s.strict_paper_splits);
  s.preprocess = j.value("preprocess", s.preprocess);
  s.skew_threshold = j.value("skew_threshold", s.skew_threshold);
  s.validate();
  return s;
}

std::vector<double> MetricReport::fold_values() const {
  std::vector<double> v;
  for (const auto& f : folds)
    if (f.value) v.push_back(*f.value);
  return v;
}

void MetricReport::summarize() {
  const auto v = fold_values();
  defined = v.size();
  mean = evaluation::mean(v);
  std = sample_std(v);
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json fj = nlohmann::json::array();
  for (const auto& f : folds) {
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& g : f.grid) {
      grid.push_back({{"candidate", g.candidate},
                      {"alpha", g.alpha},
                      {"score", g.score ? nlohmann::json(*g.score) : nlohmann::json(nullptr)},
                      {"folds_used", g.folds_used}});
    }
    nlohmann::json e{{"fold", f.fold},
                     {"value", f.value ? nlohmann::json(*f.value) : nlohmann::json(nullptr)},
                     {"alpha", f.alpha},
                     {"candidate", f.candidate},
                     {"model", f.model},
                     {"train_source_rows", f.train_source},
                     {"train_target_rows", f.train_target},
                     {"test_rows", f.test_rows},
                     {"selection_digest", f.selection_digest},
                     {"test_digest", f.test_digest},
                     {"grid", grid}};
    if (!f.value) e["undefined_reason"] = f.undefined_reason;
    if (!f.note.empty()) e["note"] = f.note;
    fj.push_back(std::move(e));
  }
  nlohmann::json cj = nlohmann::json::array();
  for (const auto& c : comparisons)
    cj.push_back({{"baseline", c.baseline},
                  {"p_value", c.test.p_value},
                  {"t", c.test.t},
                  {"mean_difference", c.test.mean_difference},
                  {"degenerate", c.test.degenerate},
                  {"pairs", c.pairs}});
  nlohmann::json j{{"metric", metric},           {"target_fraction", setting}, {"source_group", source_group},
                   {"target_group", target_group}, {"model", model},            {"folds", fj},
                   {"mean", mean},                 {"std", std},                {"defined_folds", defined},
                   {"comparisons", cj}};
  for (const auto& [k, v] : sections.items()) j[k] = v;
  return j;
}

std::string MetricReport::csv_header() {
  return "source,target,target_fraction,model,metric,mean,std,defined_folds,fold_values";
}

std::string MetricReport::csv_row() const {
  std::ostringstream out;
  out << source_group << ',' << target_group << ',' << setting << ',' << model << ',' << metric << ','
      << format_double(mean) << ',' << format_double(std) << ',' << defined << ',';
  bool first = true;
  for (double v : fold_values()) {
    out << (first ? "" : ";") << format_double(v);
    first = false;
  }
  return out.str();
}

void compare(MetricReport& report, const MetricReport& baseline, const std::string& name) {
  std::vector<double> a, b;
  for (const auto& f : report.folds) {
    for (const auto& g : baseline.folds) {
      if (g.fold == f.fold && f.value && g.value) {
        a.push_back(*f.value);
        b.push_back(*g.value);
      }
    }
  }
  Comparison c;
  c.baseline = name;
  c.pairs = a.size();
  if (a.size() >= 2) {
    c.test = paired_significance(a, b);
  } else {
    c.test.degenerate = true;
  }
  report.comparisons.push_back(c);
}

std::vector<int> inner_fold_assignment(const GroupedDataset& pair, std::size_t k, std::uint64_t seed) {
  const auto assign = [&](const Dataset& d, std::uint64_t s) -> std::vector<int> {
    if (d.n_rows() == 0) return {};
    const auto strata = data::label_strata(d, d.schema().label_column().name);
    return data::assign_stratified(strata, d.row_ids(), k, s);
  };
  std::vector<int> out = assign(pair.source, derive_seed(seed, {0}));
  if (pair.target) {
    const auto t = assign(*pair.target, derive_seed(seed, {1}));
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

namespace {

std::vector<double> labels_of(const Dataset& d) {
  const auto y = models::label_vector(d);
  return {y.data(), y.data() + y.size()};
}

/// Training pair and test rows, transformed by a preprocessor fitted on the
/// training rows only.
struct Prepared {
  GroupedDataset train;
  Dataset test;
};

Prepared prepare(const ExperimentSpec& spec, const GroupedDataset& train, const Dataset& test) {
  if (!spec.preprocess || train.schema().normalized()) return {train, test};
  const Dataset all = train.target ? Dataset::concat(train.source, *train.target) : train.source;
  const auto state = preprocess::fit(all, spec.skew_threshold);
  std::optional<Dataset> tgt;
  if (train.target) tgt = preprocess::transform(state, *train.target);
  return {GroupedDataset(preprocess::transform(state, train.source), std::move(tgt)),
          preprocess::transform(state, test)};
}

GroupedDataset subset(const GroupedDataset& pair, const std::vector<int>& folds, int fold, bool in_fold) {
  std::vector<std::size_t> s, t;
  for (std::size_t i = 0; i < pair.m(); ++i)
    if ((folds[i] == fold) == in_fold) s.push_back(i);
  for (std::size_t i = 0; i < pair.n(); ++i)
    if ((folds[pair.m() + i] == fold) == in_fold) t.push_back(i);
  std::optional<Dataset> tgt;
  if (!t.empty()) tgt = pair.target->select(t);
  return GroupedDataset(pair.source.select(s), std::move(tgt));
}

std::optional<double> safe_score(models::Task task, const std::vector<double>& p, const std::vector<double>& y) {
  if (y.empty()) return std::nullopt;
  try {
    return selection_score(task, p, y);
  } catch (const UndefinedMetric&) {
    return std::nullopt;
  }
}

double theory_alpha(const ExperimentSpec& spec, const GroupedDataset& train, std::uint64_t seed) {
  if (train.n() == 0) return 0.0;
  const auto layout = models::layout_of(train.schema());
  Eigen::MatrixXd xs = models::encode(train.source, layout).dense();
  Eigen::MatrixXd xt = models::encode(*train.target, layout).dense();
  // The unbiased statistic pairs samples, so the larger side is subsampled.
  const auto subsample = [&](Eigen::MatrixXd& big, Eigen::Index size) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(big.cols()));
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = make_rng(seed, {5});
    shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(size));
    std::sort(idx.begin(), idx.end());
    Eigen::MatrixXd out(big.rows(), size);
    for (Eigen::Index i = 0; i < size; ++i) out.col(i) = big.col(idx[static_cast<std::size_t>(i)]);
    big = std::move(out);
  };
  if (xs.cols() > xt.cols()) subsample(xs, xt.cols());
  if (xt.cols() > xs.cols()) subsample(xt, xs.cols());
  double d = 0;
  if (xs.cols() >= 2 && xt.cols() >= 2) {
    Eigen::MatrixXd pooled(xs.rows(), xs.cols() + xt.cols());
    pooled << xs, xt;  // median heuristic over both samples
    mmd::Kernel k;
    k.bandwidth = mmd::median_bandwidth(pooled);
    d = std::max(0.0, mmd::mmd_unbiased(xs, xt, k));
  }
  theory::BoundInputs b;
  b.vc_dimension = spec.alpha.vc_dimension;
  b.delta = spec.alpha.delta;
  b.m = train.m();
  b.n = train.n();
  b.divergence = d;
  return theory::optimal_alpha(b);
}

FoldResult run_fold(const ExperimentSpec& spec, const GroupedDataset& raw_train, const Dataset& raw_test,
                    std::size_t fold, double forced_alpha = -1) {
  FoldResult res;
  res.fold = fold;
  res.train_source = raw_train.m();
  res.train_target = raw_train.n();
  res.test_rows = raw_test.n_rows();

  // Everything model selection may look at.
  std::vector<std::string> selection_ids = raw_train.source.row_ids();
  if (raw_train.target) selection_ids.insert(selection_ids.end(), raw_train.target->row_ids().begin(),
                                             raw_train.target->row_ids().end());
  res.selection_digest = digest_row_ids(selection_ids);
  res.test_digest = digest_row_ids(raw_test.row_ids());
  {
    const std::unordered_set<std::string> sel(selection_ids.begin(), selection_ids.end());
    for (const auto& id : raw_test.row_ids())
      if (sel.count(id)) throw Error("evaluation.leakage", "test row " + id + " is visible to model selection");
  }

  const Prepared prepared = prepare(spec, raw_train, raw_test);

  std::vector<double> alphas;
  if (forced_alpha >= 0) {
    alphas = {forced_alpha};
  } else if (spec.alpha.kind == AlphaPolicy::Kind::fixed) {
    alphas = {spec.alpha.value};
  } else if (spec.alpha.kind == AlphaPolicy::Kind::grid) {
    alphas = alpha_grid();
  } else {
    alphas = {theory_alpha(spec, prepared.train, derive_seed(spec.seed, {fold}))};
  }

  const std::size_t n_cands = spec.candidates.size();
  std::size_t best_c = 0, best_a = 0;
  if (n_cands * alphas.size() > 1) {
    const std::size_t k = spec.inner_folds;
    const auto inner = inner_fold_assignment(raw_train, k, derive_seed(spec.seed, {fold, 1}));
    if (raw_train.n() > 0) {
      std::vector<std::size_t> per_fold(k, 0);
      for (std::size_t i = 0; i < raw_train.n(); ++i) ++per_fold[static_cast<std::size_t>(inner[raw_train.m() + i])];
      if (std::find(per_fold.begin(), per_fold.end(), 0u) != per_fold.end()) {
        std::string diag;
        for (std::size_t f = 0; f < k; ++f) diag += (f ? "," : "") + std::to_string(per_fold[f]);
        throw Error("evaluation.empty_target_share",
                    "outer fold " + std::to_string(fold) + ": inner folds hold target rows [" + diag + "]");
      }
    }
    const std::size_t n_jobs = n_cands * alphas.size() * k;
    std::vector<std::optional<double>> scores(n_jobs);
    parallel_for(
        n_jobs,
        [&](std::size_t job) {
          const std::size_t c = job / (alphas.size() * k);
          const std::size_t a = (job / k) % alphas.size();
          const int f = static_cast<int>(job % k);
          // Validation scores use target rows whenever training has any.
          const GroupedDataset val = subset(raw_train, inner, f, true);
          const Prepared p = prepare(spec, subset(raw_train, inner, f, false), val.target ? *val.target : val.source);
          models::TrainConfig cfg = spec.train;
          cfg.task = spec.task;
          cfg.alpha = alphas[a];
          cfg.optimizer.seed = derive_seed(spec.seed, {fold, 2, c, a, static_cast<std::uint64_t>(f)});
          const auto model = fit_model(spec.candidates[c], p.train, cfg);
          scores[job] = safe_score(spec.task, model->predict(p.test), labels_of(p.test));
        },
        spec.jobs);

    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_cands; ++c) {
      for (std::size_t a = 0; a < alphas.size(); ++a) {
        GridPoint g{c, alphas[a], std::nullopt, 0};
        double sum = 0;
        for (std::size_t f = 0; f < k; ++f) {
          if (const auto& s = scores[(c * alphas.size() + a) * k + f]) {
            sum += *s;
            ++g.folds_used;
          }
        }
        if (g.folds_used > 0) {
          g.score = sum / static_cast<double>(g.folds_used);
          if (*g.score > best) {
            best = *g.score;
            best_c = c;
            best_a = a;
          }
        }
        res.grid.push_back(g);
      }
    }
  }

  res.candidate = best_c;
  res.alpha = alphas[best_a];
  res.model = model_name(spec.candidates[best_c]);
  models::TrainConfig cfg = spec.train;
  cfg.task = spec.task;
  cfg.alpha = res.alpha;
  cfg.optimizer.seed = derive_seed(spec.seed, {fold, 3});
  const auto model = fit_model(spec.candidates[best_c], prepared.train, cfg);
  const auto preds = model->predict(prepared.test);
  const auto y = labels_of(prepared.test);
  try {
    res.value = task_metric(spec.task, preds, y);
  } catch (const UndefinedMetric& e) {
    res.undefined_reason = e.what();
  }
  if (spec.keep_predictions) {
    res.test_row_ids = prepared.test.row_ids();
    res.predictions = preds;
    res.labels = y;
  }
  return res;
}

}  // namespace

MetricReport nested_cv(const ExperimentSpec& spec, const GroupedDataset& pair) {
  spec.validate();
  if (pair.n() == 0) throw Error("evaluation.no_target", "nested cross-validation needs target rows to score");
  MetricReport report;
  report.metric = metric_name(spec.task);
  report.setting = to_string(spec.share);
  report.source_group = spec.source_group;
  report.target_group = spec.target_group;
  report.model = spec.candidates.size() == 1 ? model_name(spec.candidates[0]) : "search";

  const Dataset& target = *pair.target;
  if (spec.share == TargetShare::none) {
    auto r = run_fold(spec, GroupedDataset(pair.source, std::nullopt), target, 0, 0.0);
    report.folds.push_back(std::move(r));
    report.summarize();
    return report;
  }

  const std::string label = target.schema().label_column().name;
  const auto plan = data::stratified_split(target, spec.outer_folds, label, derive_seed(spec.seed, {0}));
  std::vector<int> fold_of(target.n_rows());
  for (std::size_t i = 0; i < target.n_rows(); ++i) fold_of[i] = plan.assignments.at(target.row_id(i));

  const std::size_t scored = spec.outer_limit ? std::min(spec.outer_limit, spec.outer_folds) : spec.outer_folds;
  for (std::size_t f = 0; f < scored; ++f) {
    const int fi = static_cast<int>(f);
    std::vector<std::size_t> in_fold, out_fold;
    for (std::size_t i = 0; i < target.n_rows(); ++i) (fold_of[i] == fi ? in_fold : out_fold).push_back(i);

    if (spec.share == TargetShare::all_folds) {
      // Target only: the objective with alpha = 1 and no source rows at all.
      auto r = run_fold(spec, GroupedDataset(target.select(out_fold), std::nullopt), target.select(in_fold), f, 0.0);
      r.alpha = 1.0;
      r.train_target = r.train_source;
      r.train_source = 0;
      report.folds.push_back(std::move(r));
      continue;
    }

    std::vector<std::size_t> train_t = in_fold;
    if (spec.share == TargetShare::tenth) {
      const Dataset fold_rows = target.select(in_fold);
      const auto strata = data::label_strata(fold_rows, label);
      const auto count = static_cast<std::size_t>(std::llround(in_fold.size() / 2.0));
      auto pick = data::stratified_subsample(strata, fold_rows.row_ids(), count, derive_seed(spec.seed, {f, 4}));
      std::sort(pick.begin(), pick.end());
      train_t.clear();
      for (auto p : pick) train_t.push_back(in_fold[p]);
    }
    std::vector<std::size_t> test_t = out_fold;
    if (spec.share == TargetShare::tenth && !spec.strict_paper_splits) {
      test_t.clear();
      const std::unordered_set<std::size_t> used(train_t.begin(), train_t.end());
      for (std::size_t i = 0; i < target.n_rows(); ++i)
        if (!used.count(i)) test_t.push_back(i);
    }
    report.folds.push_back(
        run_fold(spec, GroupedDataset(pair.source, target.select(train_t)), target.select(test_t), f));
  }
  report.summarize();
  return report;
}

}  // namespace shiftadapt::evaluation
