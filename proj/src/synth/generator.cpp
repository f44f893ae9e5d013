#include "shiftadapt/synth/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "shiftadapt/mmd/mmd.hpp"
#include "shiftadapt/models/network.hpp"
#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/io.hpp"
#include "shiftadapt/util/parallel.hpp"
#include "shiftadapt/util/rng.hpp"

namespace shiftadapt::synth {

using Eigen::VectorXd;

namespace {

nlohmann::json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd vec_from(const nlohmann::json& j, const char* key, std::size_t d, double fill) {
  if (!j.contains(key)) return VectorXd::Constant(static_cast<Eigen::Index>(d), fill);
  const auto v = j.at(key).get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

VectorXd or_zero(const VectorXd& v, std::size_t d) {
  return v.size() == 0 ? VectorXd::Zero(static_cast<Eigen::Index>(d)) : v;
}

}  // namespace

void ShiftSpec::validate() const {
  const auto d = static_cast<Eigen::Index>(dimensions);
  if (dimensions < 1) throw Error("synth.bad_spec", "need at least one dimension");
  if (groups.empty()) throw Error("synth.bad_spec", "need at least one group");
  if (!(missingness >= 0 && missingness < 1)) throw Error("synth.bad_spec", "missingness must be in [0,1)");
  for (const auto& g : groups) {
    if (g.size < 1) throw Error("synth.bad_spec", "group '" + g.name + "' is empty");
    if (g.mean.size() != d || g.scale.size() != d || g.weights.size() != d)
      throw Error("synth.bad_spec", "group '" + g.name + "' vectors must have the spec's dimension");
    if ((g.scale.array() <= 0).any()) throw Error("synth.bad_spec", "covariance scale must be positive");
    if (g.category_freqs.size() != categories.size())
      throw Error("synth.bad_spec", "group '" + g.name + "' needs frequencies for every categorical column");
    for (std::size_t c = 0; c < categories.size(); ++c) {
      const auto& f = g.category_freqs[c];
      if (f.size() != categories[c].size() || std::any_of(f.begin(), f.end(), [](double v) { return v < 0; }) ||
          std::accumulate(f.begin(), f.end(), 0.0) <= 0)
        throw Error("synth.bad_spec", "bad category frequencies in group '" + g.name + "'");
    }
  }
  for (const auto* v : {&target_mean_shift, &target_weight_shift, &source_log_scale_shift})
    if (v->size() != 0 && v->size() != d) throw Error("synth.bad_spec", "shift directions must match the dimension");
}

nlohmann::json ShiftSpec::to_json() const {
  nlohmann::json gs = nlohmann::json::array();
  for (const auto& g : groups)
    gs.push_back({{"name", g.name},
                  {"size", g.size},
                  {"mean", vec_json(g.mean)},
                  {"scale", vec_json(g.scale)},
                  {"weights", vec_json(g.weights)},
                  {"intercept", g.intercept},
                  {"noise", g.noise},
                  {"category_freqs", g.category_freqs}});
  return {{"dimensions", dimensions},
          {"task", models::to_string(task)},
          {"groups", gs},
          {"missingness", missingness},
          {"categories", categories},
          {"group_attribute", group_attribute},
          {"seed", seed},
          {"target_mean_shift", vec_json(or_zero(target_mean_shift, dimensions))},
          {"target_weight_shift", vec_json(or_zero(target_weight_shift, dimensions))},
          {"target_intercept_shift", target_intercept_shift},
          {"source_log_scale_shift", vec_json(or_zero(source_log_scale_shift, dimensions))}};
}

ShiftSpec ShiftSpec::from_json(const nlohmann::json& j) {
  ShiftSpec s;
  s.dimensions = j.at("dimensions").get<std::size_t>();
  s.task = models::task_from_string(j.value("task", std::string("binary")));
  s.missingness = j.value("missingness", 0.0);
  if (j.contains("categories")) s.categories = j.at("categories").get<std::vector<std::vector<std::string>>>();
  s.group_attribute = j.value("group_attribute", s.group_attribute);
  s.seed = j.value("seed", std::uint64_t{0});
  for (const auto& gj : j.at("groups")) {
    GroupSpec g;
    g.name = gj.at("name").get<std::string>();
    g.size = gj.at("size").get<std::size_t>();
    g.mean = vec_from(gj, "mean", s.dimensions, 0.0);
    g.scale = vec_from(gj, "scale", s.dimensions, 1.0);
    g.weights = vec_from(gj, "weights", s.dimensions, 0.0);
    g.intercept = gj.value("intercept", 0.0);
    g.noise = gj.value("noise", 1.0);
    if (gj.contains("category_freqs")) {
      g.category_freqs = gj.at("category_freqs").get<std::vector<std::vector<double>>>();
    } else {
      for (const auto& c : s.categories) g.category_freqs.emplace_back(c.size(), 1.0);
    }
    s.groups.push_back(std::move(g));
  }
  s.target_mean_shift = vec_from(j, "target_mean_shift", s.dimensions, 0.0);
  s.target_weight_shift = vec_from(j, "target_weight_shift", s.dimensions, 0.0);
  s.target_intercept_shift = j.value("target_intercept_shift", 0.0);
  s.source_log_scale_shift = vec_from(j, "source_log_scale_shift", s.dimensions, 0.0);
  s.validate();
  return s;
}

ShiftSpec two_group_spec(std::size_t dimensions, std::size_t m, std::size_t n, const VectorXd& weights,
                         models::Task task) {
  ShiftSpec s;
  s.dimensions = dimensions;
  s.task = task;
  const auto d = static_cast<Eigen::Index>(dimensions);
  for (auto [name, size] : {std::pair<std::string, std::size_t>{"source", m}, {"target", n}}) {
    GroupSpec g;
    g.name = name;
    g.size = size;
    g.mean = VectorXd::Zero(d);
    g.scale = VectorXd::Ones(d);
    g.weights = weights;
    s.groups.push_back(std::move(g));
  }
  return s;
}

data::Dataset generate(const ShiftSpec& spec) {
  spec.validate();
  const std::size_t d = spec.dimensions, n_cat = spec.categories.size();
  std::vector<data::Column> cols;
  for (std::size_t j = 0; j < d; ++j) cols.push_back({"x" + std::to_string(j), data::ColumnKind::continuous, {}});
  for (std::size_t c = 0; c < n_cat; ++c)
    cols.push_back({"c" + std::to_string(c), data::ColumnKind::categorical, spec.categories[c]});
  std::vector<std::string> names;
  for (const auto& g : spec.groups) names.push_back(g.name);
  cols.push_back({spec.group_attribute, data::ColumnKind::group, names});
  cols.push_back({"y", data::ColumnKind::label, {}});

  std::vector<std::vector<data::Cell>> rows;
  std::vector<std::string> ids;
  for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
    const auto& g = spec.groups[gi];
    Rng rng = make_rng(spec.seed, {gi});
    std::vector<std::vector<double>> cdf(n_cat);
    for (std::size_t c = 0; c < n_cat; ++c) {
      cdf[c] = g.category_freqs[c];
      std::partial_sum(cdf[c].begin(), cdf[c].end(), cdf[c].begin());
      for (double& v : cdf[c]) v /= cdf[c].back();
    }
    for (std::size_t i = 0; i < g.size; ++i) {
      VectorXd x(static_cast<Eigen::Index>(d));
      for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = g.mean(j) + g.scale(j) * standard_normal(rng);
      std::vector<data::Cell> row;
      for (Eigen::Index j = 0; j < x.size(); ++j) row.emplace_back(x(j));
      for (std::size_t c = 0; c < n_cat; ++c) {
        const double u = uniform01(rng);
        const auto k = static_cast<std::size_t>(std::upper_bound(cdf[c].begin(), cdf[c].end() - 1, u) - cdf[c].begin());
        row.emplace_back(data::Category{k});
      }
      const double z = g.weights.dot(x) + g.intercept;
      double y;
      if (spec.task == models::Task::binary) {
        y = uniform01(rng) < models::sigmoid(z) ? 1.0 : 0.0;
      } else {
        y = z + g.noise * standard_normal(rng);
      }
      if (spec.missingness > 0)
        for (std::size_t c = 0; c < d + n_cat; ++c)
          if (uniform01(rng) < spec.missingness) row[c] = data::Missing{};
      row.emplace_back(data::Category{gi});
      row.emplace_back(y);
      rows.push_back(std::move(row));
      ids.push_back(g.name + "-" + std::to_string(i));
    }
  }
  return data::Dataset(data::FeatureSchema(std::move(cols)), std::move(rows), std::move(ids));
}

ShiftSpec apply_shift(const ShiftSpec& base, double shift) {
  if (base.groups.size() < 2) throw Error("synth.bad_spec", "shifts need a source and a target group");
  ShiftSpec s = base;
  const std::size_t d = s.dimensions;
  auto& src = s.groups[0];
  auto& tgt = s.groups[1];
  tgt.mean += shift * or_zero(s.target_mean_shift, d);
  tgt.weights += shift * or_zero(s.target_weight_shift, d);
  tgt.intercept += shift * s.target_intercept_shift;
  src.scale = (src.scale.array() * (shift * or_zero(s.source_log_scale_shift, d)).array().exp()).matrix();
  return s;
}

data::GroupedDataset shifted_pair(const data::Dataset& data, const std::string& attribute, const std::string& source,
                                  const std::string& target) {
  return data::GroupedDataset(data::select_group(data, attribute, source), data::select_group(data, attribute, target));
}

namespace {

double pair_mmd(const data::GroupedDataset& pair, std::size_t rows, std::uint64_t seed) {
  const auto layout = models::layout_of(pair.schema());
  const auto take = [&](const data::Dataset& d, std::uint64_t s) {
    std::vector<std::size_t> idx(d.n_rows());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(seed, {s});
    shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(rows, idx.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  auto is = take(pair.source, 0), it = take(*pair.target, 1);
  const std::size_t k = std::min(is.size(), it.size());
  is.resize(k);
  it.resize(k);
  const Eigen::MatrixXd xs = models::encode(pair.source.select(is), layout).dense();
  const Eigen::MatrixXd xt = models::encode(pair.target->select(it), layout).dense();
  Eigen::MatrixXd pooled(xs.rows(), xs.cols() + xt.cols());
  pooled << xs, xt;
  mmd::Kernel kern;
  kern.bandwidth = mmd::median_bandwidth(pooled);
  return mmd::mmd_unbiased(xs, xt, kern);
}

}  // namespace

std::vector<SweepRow> shift_sweep(const ShiftSpec& base, const std::vector<double>& shifts,
                                  const std::vector<std::uint64_t>& seeds, const SweepOptions& opts) {
  if (shifts.size() < 2) throw Error("synth.bad_sweep", "a sweep needs at least 2 shift magnitudes");
  if (seeds.size() < 10) throw Error("synth.bad_sweep", "a sweep needs at least 10 seeds");
  if (opts.experiment.share == evaluation::TargetShare::none || opts.experiment.share == evaluation::TargetShare::all_folds)
    throw Error("synth.bad_sweep", "the sweep compares arms that train on source and target rows");

  const std::size_t cells = shifts.size() * seeds.size();
  std::vector<SweepCell> out(cells);
  parallel_for(
      cells,
      [&](std::size_t c) {
        const double shift = shifts[c / seeds.size()];
        const std::uint64_t seed = seeds[c % seeds.size()];
        ShiftSpec spec = apply_shift(base, shift);
        spec.seed = seed;
        const auto data = generate(spec);
        const auto pair = shifted_pair(data, spec.group_attribute, spec.groups[0].name, spec.groups[1].name);

        SweepCell& cell = out[c];
        cell.shift = shift;
        cell.seed = seed;
        cell.mmd = pair_mmd(pair, opts.mmd_rows, seed);

        auto exp = opts.experiment;
        exp.seed = seed;
        exp.task = spec.task;
        exp.train.task = spec.task;
        exp.jobs = 1;
        exp.alpha.kind = evaluation::AlphaPolicy::Kind::grid;
        const auto tuned = evaluation::nested_cv(exp, pair);
        for (const auto& f : tuned.folds) cell.tuned_alphas.push_back(f.alpha);
        exp.alpha.kind = evaluation::AlphaPolicy::Kind::fixed;
        exp.alpha.value = 0.0;
        const auto a0 = evaluation::nested_cv(exp, pair);
        exp.alpha.value = 1.0;
        const auto a1 = evaluation::nested_cv(exp, pair);
        cell.tuned = tuned.mean;
        cell.alpha0 = a0.mean;
        cell.alpha1 = a1.mean;
      },
      opts.jobs);

  std::vector<SweepRow> rows;
  for (std::size_t s = 0; s < shifts.size(); ++s) {
    SweepRow row;
    row.shift = shifts[s];
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const auto& cell = out[s * seeds.size() + k];
      row.mean_mmd += cell.mmd / static_cast<double>(seeds.size());
      row.tuned += cell.tuned / static_cast<double>(seeds.size());
      row.alpha0 += cell.alpha0 / static_cast<double>(seeds.size());
      row.alpha1 += cell.alpha1 / static_cast<double>(seeds.size());
      for (double a : cell.tuned_alphas) ++row.alpha_histogram[a];
      row.cells.push_back(cell);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "shift,mean_mmd,tuned_alpha_metric,alpha0_metric,alpha1_metric,median_tuned_alpha\n";
  for (const auto& r : rows) {
    std::vector<double> alphas;
    for (const auto& c : r.cells) alphas.insert(alphas.end(), c.tuned_alphas.begin(), c.tuned_alphas.end());
    std::sort(alphas.begin(), alphas.end());
    const double med = alphas.empty() ? 0.0 : alphas[alphas.size() / 2];
    out << format_double(r.shift) << ',' << format_double(r.mean_mmd) << ',' << format_double(r.tuned) << ','
        << format_double(r.alpha0) << ',' << format_double(r.alpha1) << ',' << format_double(med) << '\n';
  }
  return out.str();
}

}  // namespace shiftadapt::synth
