#include "shiftadapt/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "shiftadapt/cli/json_schema.hpp"
#include "shiftadapt/data/csv.hpp"
#include "shiftadapt/downstream/secondary.hpp"
#include "shiftadapt/evaluation/experiment.hpp"
#include "shiftadapt/evaluation/pipeline.hpp"
#include "shiftadapt/mmd/pairwise.hpp"
#include "shiftadapt/models/features.hpp"
#include "shiftadapt/preprocess/preprocessor.hpp"
#include "shiftadapt/run_config_schema.hpp"
#include "shiftadapt/synth/generator.hpp"
#include "shiftadapt/theory/bounds.hpp"
#include "shiftadapt/util/digest.hpp"
#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/io.hpp"
#include "shiftadapt/util/parallel.hpp"
#include "shiftadapt/util/rng.hpp"

#ifndef SHIFTADAPT_VERSION
#define SHIFTADAPT_VERSION "unknown"
#endif

namespace shiftadapt::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using data::Dataset;
using data::GroupedDataset;
using evaluation::ExperimentSpec;
using evaluation::MetricReport;
using evaluation::TargetShare;

const json& run_config_schema() {
  static const json schema = json::parse(kRunConfigSchema);
  return schema;
}

fs::path RunConfig::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

RunConfig parse_run_config(const json& raw, const fs::path& base_dir) {
  require_valid(raw, run_config_schema(), "run configuration");
  return {raw, base_dir};
}

RunConfig load_run_config(const fs::path& path) {
  json raw;
  try {
    raw = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error("cli.config_invalid", path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(raw, path.parent_path());
}

namespace {

/// Collects outputs and inputs for the manifest; every write is atomic.
class Outputs {
 public:
  Outputs(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }

  void write(const std::string& name, const std::string& contents) {
    write_file_atomic(dir_ / name, contents);
    files_.push_back({{"path", name}, {"sha256", sha256_hex(contents)}});
    written_.push_back(dir_ / name);
  }

  void input(const std::string& role, const std::string& path, const std::string& digest) {
    inputs_.push_back({{"role", role}, {"path", path}, {"sha256", digest}});
  }

  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }

  std::vector<fs::path> finish(const RunConfig& config, const CommandOptions& options) {
    json opts = json::object();
    if (options.alpha) opts["alpha"] = *options.alpha;
    if (options.model) opts["model"] = *options.model;
    const json manifest{{"command", command_},
                        {"version", SHIFTADAPT_VERSION},
                        {"config_sha256", sha256_hex(config.raw.dump())},
                        {"options", opts},
                        {"inputs", inputs_},
                        {"seeds", seeds_},
                        {"outputs", files_}};
    const std::string name = command_ + ".manifest.json";
    write_file_atomic(dir_ / name, manifest.dump(2) + "\n");
    written_.push_back(dir_ / name);
    return written_;
  }

 private:
  fs::path dir_;
  std::string command_;
  json files_ = json::array();
  json inputs_ = json::array();
  json seeds_ = json::object();
  std::vector<fs::path> written_;
};

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

fs::path output_dir(const RunConfig& config, const CommandOptions& options) {
  if (options.output_dir) return *options.output_dir;
  if (const auto env = env_or_empty("SHIFTADAPT_OUTPUT_DIR"); !env.empty()) return env;
  if (config.raw.contains("output")) return config.resolve(config.raw.at("output").get<std::string>());
  return config.base_dir / "out";
}

std::size_t jobs_of(const RunConfig& config, const CommandOptions& options) {
  if (options.jobs) return options.jobs;
  if (const auto env = env_or_empty("SHIFTADAPT_JOBS"); !env.empty()) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw Error("cli.bad_option", "SHIFTADAPT_JOBS must be a positive integer, got '" + env + "'");
  }
  return config.raw.value("jobs", std::size_t{0});
}

std::uint64_t eval_seed(const RunConfig& config) {
  return config.raw.contains("evaluation") ? config.raw.at("evaluation").value("seed", std::uint64_t{0}) : 0;
}

models::Task task_of(const RunConfig& config) {
  return models::task_from_string(config.raw.at("task").at("kind").get<std::string>());
}

/// Reads the data files or generates the synthetic spec held by `owner`.
Dataset load_data(const RunConfig& config, const json& owner, const std::string& role, Outputs& out) {
  if (owner.contains("data")) {
    const auto& d = owner.at("data");
    const std::string csv = d.at("csv").get<std::string>();
    const std::string schema = d.at("schema").get<std::string>();
    out.input(role + ".schema", schema, sha256_hex(read_file(config.resolve(schema))));
    out.input(role + ".csv", csv, sha256_hex(read_file(config.resolve(csv))));
    return data::read_csv(config.resolve(csv), data::read_schema(config.resolve(schema)));
  }
  const auto spec = synth::ShiftSpec::from_json(owner.at("synth"));
  out.input(role + ".synth", "", sha256_hex(spec.to_json().dump()));
  out.seed(role + ".synth", spec.seed);
  return synth::generate(spec);
}

Dataset load_primary(const RunConfig& config, Outputs& out) {
  Dataset d = load_data(config, config.raw, "data", out);
  const std::string label = config.raw.at("task").at("label").get<std::string>();
  if (d.schema().label_column().name != label)
    throw Error("cli.label_mismatch",
                "configured label '" + label + "' is not the data's label '" + d.schema().label_column().name + "'");
  return d;
}

GroupedDataset primary_pair(const RunConfig& config, const Dataset& d) {
  const auto& g = config.raw.at("groups");
  auto pair = synth::shifted_pair(d, g.at("attribute").get<std::string>(), g.at("source").get<std::string>(),
                                  g.at("target").get<std::string>());
  if (pair.m() == 0) throw Error("cli.empty_group", "source group has no rows");
  if (pair.n() == 0) throw Error("cli.empty_group", "target group has no rows");
  return pair;
}

ensemble::EnsembleSpec default_ensemble() {
  return ensemble::EnsembleSpec::from_json(json::parse(R"({"kind":"ensemble","zoo":[
    {"kind":"linear"},
    {"kind":"mlp","widths":[32],"dropout":[0.0],"batch_norm":[false]},
    {"kind":"knn","k":15},
    {"kind":"forest","n_trees":50}]})"));
}

std::vector<evaluation::ModelSpec> candidates_of(const RunConfig& config, const CommandOptions& options) {
  std::vector<evaluation::ModelSpec> out;
  json list = json::array({{{"kind", "linear"}}});
  if (config.raw.contains("model") && config.raw.at("model").contains("candidates"))
    list = config.raw.at("model").at("candidates");
  for (const auto& c : list) {
    if (options.model && c.at("kind").get<std::string>() != *options.model) continue;
    out.push_back(evaluation::model_spec_from_json(c));
  }
  if (out.empty() && options.model == "ensemble") out.emplace_back(default_ensemble());
  if (out.empty()) throw Error("cli.no_model", "no configured candidate has kind '" + *options.model + "'");
  return out;
}

evaluation::AlphaPolicy alpha_policy(const RunConfig& config, const CommandOptions& options) {
  evaluation::AlphaPolicy p;
  if (config.raw.contains("evaluation") && config.raw.at("evaluation").contains("alpha"))
    p = evaluation::AlphaPolicy::from_json(config.raw.at("evaluation").at("alpha"));
  if (!options.alpha) return p;
  const std::string& a = *options.alpha;
  if (a == "grid") {
    p.kind = evaluation::AlphaPolicy::Kind::grid;
  } else if (a == "theory") {
    p.kind = evaluation::AlphaPolicy::Kind::theory;
  } else {
    double v = -1;
    try {
      std::size_t used = 0;
      v = std::stod(a, &used);
      if (used != a.size()) v = -1;
    } catch (const std::exception&) {
    }
    if (!(v >= 0 && v <= 1)) throw Error("cli.bad_option", "--alpha takes grid, theory or a value in [0, 1]");
    p.kind = evaluation::AlphaPolicy::Kind::fixed;
    p.value = v;
  }
  return p;
}

ExperimentSpec experiment_spec(const RunConfig& config, const CommandOptions& options, TargetShare share) {
  const json& raw = config.raw;
  const json ev = raw.value("evaluation", json::object());
  json j{{"task", raw.at("task").at("kind")},
         {"source_group", raw.at("groups").at("source")},
         {"target_group", raw.at("groups").at("target")},
         {"target_fraction", evaluation::to_string(share)},
         {"candidates", json::array()}};
  for (const char* key : {"outer_folds", "inner_folds", "outer_limit", "seed", "strict_paper_splits"})
    if (ev.contains(key)) j[key] = ev.at(key);
  if (raw.contains("preprocess")) j["skew_threshold"] = raw.at("preprocess").value("skew_threshold", 1.0);
  if (raw.contains("model") && raw.at("model").contains("train")) j["train"] = raw.at("model").at("train");
  // Candidates and alpha are set directly so command-line overrides apply.
  ExperimentSpec spec;
  {
    json tmp = j;
    tmp["candidates"] = json::array({{{"kind", "linear"}}});
    tmp["alpha"] = {{"kind", "fixed"}, {"value", 0.0}};
    spec = ExperimentSpec::from_json(tmp);
  }
  spec.candidates = candidates_of(config, options);
  spec.alpha = alpha_policy(config, options);
  // Without target rows in training there is nothing to weigh.
  if (share == TargetShare::none) spec.alpha = {evaluation::AlphaPolicy::Kind::fixed, 0.0};
  spec.jobs = jobs_of(config, options);
  spec.validate();
  return spec;
}

std::vector<TargetShare> fractions_of(const RunConfig& config, std::vector<std::string> defaults) {
  if (config.raw.contains("evaluation") && config.raw.at("evaluation").contains("fractions"))
    defaults = config.raw.at("evaluation").at("fractions").get<std::vector<std::string>>();
  std::vector<TargetShare> out;
  for (const auto& f : defaults) {
    const auto s = evaluation::target_share_from_string(f);
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  }
  return out;
}

/// Fits the deployable model on all rows of `pair`, preprocessing included.
std::unique_ptr<evaluation::PipelineModel> fit_final(const ExperimentSpec& spec, const GroupedDataset& pair,
                                                     std::size_t candidate, double alpha) {
  const Dataset all = pair.target ? Dataset::concat(pair.source, *pair.target) : pair.source;
  std::optional<preprocess::PreprocessorState> state;
  GroupedDataset train = pair;
  if (spec.preprocess && !pair.schema().normalized()) {
    state = preprocess::fit(all, spec.skew_threshold);
    std::optional<Dataset> tgt;
    if (pair.target) tgt = preprocess::transform(*state, *pair.target);
    train = GroupedDataset(preprocess::transform(*state, pair.source), std::move(tgt));
  }
  models::TrainConfig cfg = spec.train;
  cfg.task = spec.task;
  cfg.alpha = alpha;
  cfg.optimizer.seed = derive_seed(spec.seed, {7});
  auto model = evaluation::fit_model(spec.candidates.at(candidate), train, cfg);
  return std::make_unique<evaluation::PipelineModel>(std::move(state), std::move(model));
}

/// Most frequent chosen candidate (lowest index on ties) and the lower
/// median of the chosen alphas.
std::pair<std::size_t, double> consensus(const MetricReport& report) {
  std::map<std::size_t, std::size_t> counts;
  std::vector<double> alphas;
  for (const auto& f : report.folds) {
    ++counts[f.candidate];
    alphas.push_back(f.alpha);
  }
  std::size_t best = 0, best_count = 0;
  for (const auto& [c, n] : counts)
    if (n > best_count) {
      best = c;
      best_count = n;
    }
  std::sort(alphas.begin(), alphas.end());
  return {best, alphas.empty() ? 0.0 : alphas[(alphas.size() - 1) / 2]};
}

std::string report_name(const std::string& command, const MetricReport& r) {
  return "report_" + command + "_" + r.setting + ".json";
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Per-fold demographic parity and equalized odds of thresholded predictions.
json fairness_section(const MetricReport& report, const Dataset& data, const std::string& attribute,
                      double threshold) {
  const auto col = data.schema().find(attribute);
  if (!col) throw Error("cli.config_invalid", "fairness attribute '" + attribute + "' is not a column");
  const auto& categories = data.schema().column(*col).categories;
  if (categories.empty()) throw Error("cli.config_invalid", "fairness attribute '" + attribute + "' is not categorical");
  json folds = json::array();
  for (const auto& f : report.folds) {
    std::vector<int> preds;
    std::vector<std::string> groups;
    for (std::size_t i = 0; i < f.test_row_ids.size(); ++i) {
      const std::size_t row = *data.find_row(f.test_row_ids[i]);
      const auto& cell = data.cell(row, *col);
      preds.push_back(f.predictions[i] >= threshold ? 1 : 0);
      groups.push_back(data::is_missing(cell) ? std::string(data::kUnknownCategory)
                                              : categories[std::get<data::Category>(cell).index]);
    }
    json entry{{"fold", f.fold}};
    for (const char* metric : {"dpd", "eod"}) {
      try {
        const auto r = std::string(metric) == "dpd" ? evaluation::dpd(preds, groups)
                                                    : evaluation::eod(preds, f.labels, groups);
        entry[metric] = r.to_json();
      } catch (const UndefinedMetric& e) {
        entry[metric] = {{"value", nullptr}, {"undefined_reason", e.what()}};
      }
    }
    folds.push_back(std::move(entry));
  }
  return {{"attribute", attribute}, {"threshold", threshold}, {"folds", folds}};
}

/// Source-only predictions rescored on each fold's test rows so the paired
/// test compares like with like.
MetricReport aligned_baseline(const MetricReport& baseline, const MetricReport& report, models::Task task) {
  std::map<std::string, std::pair<double, double>> by_id;
  const auto& b = baseline.folds.at(0);
  for (std::size_t i = 0; i < b.test_row_ids.size(); ++i) by_id[b.test_row_ids[i]] = {b.predictions[i], b.labels[i]};
  MetricReport out = baseline;
  out.folds.clear();
  for (const auto& f : report.folds) {
    evaluation::FoldResult r;
    r.fold = f.fold;
    std::vector<double> p, y;
    for (const auto& id : f.test_row_ids) {
      const auto& [pi, yi] = by_id.at(id);
      p.push_back(pi);
      y.push_back(yi);
    }
    try {
      r.value = evaluation::task_metric(task, p, y);
    } catch (const UndefinedMetric& e) {
      r.undefined_reason = e.what();
    }
    out.folds.push_back(std::move(r));
  }
  out.summarize();
  return out;
}

// ---- commands ----

void cmd_synth(const RunConfig& config, Outputs& out) {
  if (!config.raw.contains("synth")) throw Error("cli.config_invalid", "synth needs a synth block");
  const Dataset d = load_primary(config, out);
  const auto files = data::serialize(d);
  out.write("data.csv", files.csv);
  out.write("schema.json", files.schema_json);
}

void cmd_preprocess(const RunConfig& config, Outputs& out) {
  const Dataset d = load_primary(config, out);
  const double skew = config.raw.contains("preprocess") ? config.raw.at("preprocess").value("skew_threshold", 1.0) : 1.0;
  const auto state = preprocess::fit(d, skew);
  preprocess::TransformDiagnostics diag;
  const Dataset t = preprocess::transform(state, d, &diag);
  const auto files = data::serialize(t);
  out.write("transformed.csv", files.csv);
  out.write("transformed_schema.json", files.schema_json);
  out.write("preprocessor_state.json", dump(state.to_json()));
}

void cmd_mmd(const RunConfig& config, const CommandOptions& options, Outputs& out) {
  const Dataset raw = load_primary(config, out);
  const json block = config.raw.value("mmd", json::object());
  std::vector<std::string> attributes{config.raw.at("groups").at("attribute").get<std::string>()};
  if (block.contains("attributes")) attributes = block.at("attributes").get<std::vector<std::string>>();
  const std::uint64_t seed = block.value("seed", eval_seed(config));
  const std::size_t jobs = jobs_of(config, options);
  out.seed("mmd", seed);

  const double skew = config.raw.contains("preprocess") ? config.raw.at("preprocess").value("skew_threshold", 1.0) : 1.0;
  const Dataset d = preprocess::transform(preprocess::fit(raw, skew), raw);
  Eigen::MatrixXd features;
  if (block.contains("feature_map")) {
    auto fcfg = mmd::FeatureMapConfig::from_json(block.at("feature_map"));
    fcfg.optimizer.seed = derive_seed(seed, {1});
    const auto fmap = mmd::learn_feature_map(d, attributes, fcfg);
    features = fmap.transform(d);
    out.write("feature_map.json", dump(fmap.to_json()));
  } else {
    features = models::encode(d, models::layout_of(d.schema())).dense();
  }

  mmd::PairwiseOptions popt;
  popt.repeats = block.value("repeats", popt.repeats);
  popt.seed = seed;
  popt.jobs = jobs;
  const std::size_t permutations = block.value("permutations", std::size_t{999});
  std::string lines;
  for (std::size_t a = 0; a < attributes.size(); ++a) {
    const std::string& attr = attributes[a];
    const auto dm = mmd::pairwise_mmd(d, attr, features, popt);
    out.write("mmd_distances_" + attr + ".csv", dm.to_csv());
    out.write("mmd_dendrogram_" + attr + ".json",
              dump({{"distances", dm.to_json()}, {"dendrogram", mmd::build_dendrogram(dm).to_json()}}));

    // Two-sample tests for every pair of groups kept in the matrix.
    const std::size_t col = d.schema().index_of(attr);
    const auto& cats = d.schema().column(col).categories;
    std::map<std::string, std::vector<Eigen::Index>> members;
    for (std::size_t r = 0; r < d.n_rows(); ++r) {
      const auto& cell = d.cell(r, col);
      const std::string g =
          data::is_missing(cell) ? std::string(data::kUnknownCategory) : cats[std::get<data::Category>(cell).index];
      members[g].push_back(static_cast<Eigen::Index>(r));
    }
    for (std::size_t i = 0; i < dm.groups.size(); ++i) {
      for (std::size_t j = i + 1; j < dm.groups.size(); ++j) {
        auto xi = members.at(dm.groups[i]);
        auto yi = members.at(dm.groups[j]);
        const std::size_t n = std::min(xi.size(), yi.size());
        Rng rng = make_rng(seed, {a, i, j});
        for (auto* v : {&xi, &yi}) {
          if (v->size() > n) {
            shuffle(v->begin(), v->end(), rng);
            v->resize(n);
            std::sort(v->begin(), v->end());
          }
        }
        const auto gather = [&](const std::vector<Eigen::Index>& idx) {
          Eigen::MatrixXd m(features.rows(), static_cast<Eigen::Index>(idx.size()));
          for (std::size_t k = 0; k < idx.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = features.col(idx[k]);
          return m;
        };
        const auto res = mmd::permutation_test(gather(xi), gather(yi), dm.kernel, permutations,
                                               derive_seed(seed, {a, i, j, 1}), jobs);
        json line = res.to_json();
        line["attribute"] = attr;
        line["group_a"] = dm.groups[i];
        line["group_b"] = dm.groups[j];
        lines += line.dump() + "\n";
      }
    }
  }
  out.write("mmd_tests.jsonl", lines);
}

void cmd_train(const RunConfig& config, const CommandOptions& options, Outputs& out) {
  const Dataset d = load_primary(config, out);
  const auto pair = primary_pair(config, d);
  const auto spec = experiment_spec(config, options, TargetShare::none);
  out.seed("evaluation", spec.seed);
  const auto report = evaluation::nested_cv(spec, pair);
  out.write(report_name("train", report), dump(report.to_json()));
  const auto model = fit_final(spec, GroupedDataset(pair.source, std::nullopt), report.folds.at(0).candidate, 0.0);
  out.write("model_train.json", dump(model->to_json()));
}

void cmd_adapt(const RunConfig& config, const CommandOptions& options, Outputs& out) {
  const Dataset d = load_primary(config, out);
  const auto pair = primary_pair(config, d);
  std::optional<std::pair<std::size_t, double>> chosen;
  std::optional<ExperimentSpec> chosen_spec;
  for (const auto share : fractions_of(config, {"0.2"})) {
    if (share == TargetShare::none) continue;
    const auto spec = experiment_spec(config, options, share);
    out.seed("evaluation", spec.seed);
    const auto report = evaluation::nested_cv(spec, pair);
    out.write(report_name("adapt", report), dump(report.to_json()));
    if (!chosen) {
      chosen = consensus(report);
      chosen_spec = spec;
    }
  }
  if (!chosen) throw Error("cli.config_invalid", "adapt needs a target fraction other than 0");
  GroupedDataset train = pair;
  if (chosen_spec->share == TargetShare::all_folds) train = GroupedDataset(*pair.target, std::nullopt);
  const double alpha = chosen_spec->share == TargetShare::all_folds ? 0.0 : chosen->second;
  const auto model = fit_final(*chosen_spec, train, chosen->first, alpha);
  out.write("model_adapt.json", dump(model->to_json()));
}

void cmd_evaluate(const RunConfig& config, const CommandOptions& options, Outputs& out) {
  const Dataset d = load_primary(config, out);
  const auto pair = primary_pair(config, d);
  const json ev = config.raw.value("evaluation", json::object());
  const std::optional<std::string> fairness =
      ev.contains("fairness_attribute") ? std::optional(ev.at("fairness_attribute").get<std::string>()) : std::nullopt;
  if (fairness && task_of(config) != models::Task::binary)
    throw Error("cli.config_invalid", "fairness metrics need a binary task");
  const double threshold = ev.value("decision_threshold", 0.5);

  std::vector<MetricReport> reports;
  std::optional<std::size_t> baseline;
  for (const auto share : fractions_of(config, {"0", "0.1", "0.2", "0.8-train-all"})) {
    auto spec = experiment_spec(config, options, share);
    spec.keep_predictions = true;
    out.seed("evaluation", spec.seed);
    reports.push_back(evaluation::nested_cv(spec, pair));
    if (share == TargetShare::none) baseline = reports.size() - 1;
  }
  std::string csv = MetricReport::csv_header() + "\n";
  json summary = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    auto& r = reports[i];
    if (baseline && i != *baseline) {
      evaluation::compare(r, aligned_baseline(reports[*baseline], r, task_of(config)), "0");
    }
    if (fairness) r.sections["fairness"] = fairness_section(r, d, *fairness, threshold);
    out.write(report_name("evaluate", r), dump(r.to_json()));
    csv += r.csv_row() + "\n";
    summary.push_back(r.to_json());
  }
  out.write("evaluation.csv", csv);
  out.write("evaluation.json", dump(summary));
}

fs::path primary_model_path(const RunConfig& config, const json& block, const Outputs& out) {
  if (block.contains("model")) return config.resolve(block.at("model").get<std::string>());
  for (const char* name : {"model_adapt.json", "model_train.json"})
    if (fs::exists(out.dir() / name)) return out.dir() / name;
  throw Error("cli.missing_model", "no primary model; run adapt or train first, or set secondary.model");
}

void cmd_secondary(const RunConfig& config, Outputs& out) {
  const json& raw = config.raw;
  if (!raw.contains("secondary") && !raw.contains("bar"))
    throw Error("cli.config_invalid", "secondary needs a secondary or bar block");
  const json block = raw.value("secondary", json::object());
  const fs::path model_path = primary_model_path(config, block, out);
  const std::string model_text = read_file(model_path);
  out.input("model", model_path.filename().string(), sha256_hex(model_text));
  const auto model = evaluation::load_model(json::parse(model_text));

  json result = json::object();
  if (raw.contains("secondary")) {
    const Dataset sec = load_data(config, block, "secondary", out);
    downstream::TransferOptions opts;
    opts.folds = block.value("folds", opts.folds);
    opts.label_fraction = block.value("label_fraction", 1.0 / static_cast<double>(opts.folds));
    opts.seed = block.value("seed", eval_seed(config));
    opts.priors = block.value("priors", std::string("empirical")) == "uniform" ? downstream::PriorPolicy::uniform
                                                                                 : downstream::PriorPolicy::empirical;
    out.seed("secondary", opts.seed);
    auto report = downstream::secondary_transfer_eval(*model, sec, opts);
    report.source_group = raw.at("groups").at("source").get<std::string>();
    report.target_group = raw.at("groups").at("target").get<std::string>();
    out.write("report_secondary.json", dump(report.to_json()));
    result["transfer"] = report.to_json();
  }
  if (raw.contains("bar")) {
    if (task_of(config) != models::Task::regression)
      throw Error("cli.config_invalid", "the brain age residual analysis needs a regression task");
    const Dataset d = load_primary(config, out);
    const Dataset target = *primary_pair(config, d).target;
    const auto preds = model->predict(target);
    const auto ages = models::label_vector(target);
    std::vector<downstream::BarRecord> records;
    for (std::size_t i = 0; i < preds.size(); ++i) records.push_back({preds[i], ages(static_cast<Eigen::Index>(i))});
    std::vector<downstream::Covariate> covariates;
    for (const auto& c : raw.at("bar").at("covariates")) {
      downstream::Covariate cov;
      cov.name = c.at("column").get<std::string>();
      const auto col = target.schema().find(cov.name);
      if (!col || target.schema().column(*col).kind != data::ColumnKind::continuous)
        throw Error("cli.config_invalid", "covariate '" + cov.name + "' is not a continuous column");
      for (std::size_t i = 0; i < target.n_rows(); ++i)
        cov.values.push_back(target.number(i, *col).value_or(std::numeric_limits<double>::quiet_NaN()));
      if (c.contains("expected_sign")) cov.expected_sign = c.at("expected_sign").get<int>();
      covariates.push_back(std::move(cov));
    }
    const auto rows = downstream::bar_analysis(records, covariates);
    out.write("bar.csv", downstream::bar_to_csv(rows));
    result["bar"] = downstream::bar_to_json(rows);
  }
  out.write("secondary.json", dump(result));
}

void cmd_bounds(const RunConfig& config, Outputs& out) {
  if (!config.raw.contains("bounds")) throw Error("cli.config_invalid", "bounds needs a bounds block");
  const json& block = config.raw.at("bounds");
  const auto inputs = theory::BoundInputs::from_json(block);
  std::vector<double> alphas;
  if (block.contains("alphas")) {
    alphas = block.at("alphas").get<std::vector<double>>();
  } else {
    for (int i = 0; i <= 20; ++i) alphas.push_back(i / 20.0);
  }
  const double risk = block.value("target_opt_risk", 0.0);
  const auto rows = theory::bound_table(inputs, alphas, risk);
  out.write("bounds.csv", theory::bound_table_csv(rows));
  const double threshold = theory::alpha_one_threshold(inputs);
  out.write("bounds.json", dump({{"inputs", inputs.to_json()},
                                 {"target_opt_risk", risk},
                                 {"optimal_alpha", theory::optimal_alpha(inputs)},
                                 {"alpha_one_threshold", std::isfinite(threshold) ? json(threshold) : json(nullptr)}}));
}

void cmd_report(Outputs& out) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(out.dir())) {
    const std::string name = e.path().filename().string();
    if (name.rfind("report_", 0) == 0 && e.path().extension() == ".json") files.push_back(e.path());
  }
  if (files.empty()) throw Error("cli.no_reports", "no report_*.json files in " + out.dir().string());
  std::sort(files.begin(), files.end());
  std::string csv = "report," + MetricReport::csv_header() + "\n";
  json summary = json::array();
  for (const auto& path : files) {
    const std::string text = read_file(path);
    out.input("report", path.filename().string(), sha256_hex(text));
    const json j = json::parse(text);
    MetricReport r;
    r.metric = j.at("metric").get<std::string>();
    r.setting = j.at("target_fraction").get<std::string>();
    r.source_group = j.at("source_group").get<std::string>();
    r.target_group = j.at("target_group").get<std::string>();
    r.model = j.at("model").get<std::string>();
    for (const auto& f : j.at("folds")) {
      evaluation::FoldResult fr;
      fr.fold = f.at("fold").get<std::size_t>();
      if (!f.at("value").is_null()) fr.value = f.at("value").get<double>();
      r.folds.push_back(std::move(fr));
    }
    r.summarize();
    csv += path.stem().string() + "," + r.csv_row() + "\n";
    json entry{{"report", path.filename().string()}, {"target_fraction", r.setting},  {"model", r.model},
               {"metric", r.metric},                 {"mean", r.mean},        {"std", r.std},
               {"defined_folds", r.defined},         {"comparisons", j.value("comparisons", json::array())}};
    summary.push_back(std::move(entry));
  }
  out.write("summary.csv", csv);
  out.write("summary.json", dump(summary));
}

}  // namespace

std::vector<fs::path> run_command(const std::string& command, const RunConfig& config, const CommandOptions& options) {
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end())
    throw Error("cli.unknown_command", "unknown command '" + command + "'");
  const std::size_t jobs = jobs_of(config, options);
  if (jobs) set_default_jobs(jobs);
  Outputs out(output_dir(config, options), command);
  if (command == "synth") cmd_synth(config, out);
  if (command == "preprocess") cmd_preprocess(config, out);
  if (command == "mmd") cmd_mmd(config, options, out);
  if (command == "train") cmd_train(config, options, out);
  if (command == "adapt") cmd_adapt(config, options, out);
  if (command == "evaluate") cmd_evaluate(config, options, out);
  if (command == "secondary") cmd_secondary(config, out);
  if (command == "bounds") cmd_bounds(config, out);
  if (command == "report") cmd_report(out);
  return out.finish(config, options);
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Domain adaptation toolkit for tabular data with group shift", "shiftadapt"};
  app.set_version_flag("--version", SHIFTADAPT_VERSION);
  app.require_subcommand(1);
  fs::path config_path;
  std::string out_dir, alpha, model;
  std::size_t jobs = 0;
  const std::map<std::string, std::string> about{
      {"synth", "generate synthetic source/target data"},
      {"preprocess", "fit and save the preprocessor"},
      {"mmd", "MMD shift tests between groups"},
      {"train", "train one model at the configured alpha"},
      {"adapt", "select model and alpha by nested CV, refit on all rows"},
      {"evaluate", "nested CV against a baseline alpha with a paired test"},
      {"secondary", "transfer to a secondary cohort and brain age residuals"},
      {"bounds", "generalization bound table and theory alpha"},
      {"report", "summarize metric reports in the output directory"}};
  for (const auto& name : kCommands) {
    auto* sub = app.add_subcommand(name, about.at(name));
    sub->add_option("-c,--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("-o,--out", out_dir, "output directory");
    sub->add_option("-j,--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--alpha", alpha, "alpha policy override: grid, theory or a value in [0, 1]");
    sub->add_option("--model", model, "keep only candidates of this kind (linear, mlp, knn, forest, ensemble)");
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    const auto config = load_run_config(config_path);
    CommandOptions options;
    if (!out_dir.empty()) options.output_dir = fs::path(out_dir);
    options.jobs = jobs;
    if (!alpha.empty()) options.alpha = alpha;
    if (!model.empty()) options.model = model;
    const auto command = app.get_subcommands().front()->get_name();
    for (const auto& p : run_command(command, config, options)) std::cout << p.string() << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "shiftadapt: error: " << e.what() << "\n";
    return e.code().rfind("cli.", 0) == 0 ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "shiftadapt: error: internal: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc)); }

}  // namespace shiftadapt::cli
