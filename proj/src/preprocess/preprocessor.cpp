#include "shiftadapt/preprocess/preprocessor.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <boost/math/distributions/normal.hpp>

#include "shiftadapt/util/error.hpp"

namespace shiftadapt::preprocess {

using data::Category;
using data::Cell;
using data::Column;
using data::ColumnKind;
using data::Dataset;
using data::FeatureSchema;

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<QuantileKnot> fit_knots(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double denom = static_cast<double>(v.size()) + 1.0;
  std::vector<QuantileKnot> knots;
  std::size_t i = 0;
  while (i < v.size()) {
    std::size_t j = i;
    while (j + 1 < v.size() && v[j + 1] == v[i]) ++j;
    // 1-based positions i+1 .. j+1, mid-rank for ties.
    const double mid = 0.5 * static_cast<double>(i + 1 + j + 1);
    knots.push_back({v[i], mid / denom});
    i = j + 1;
  }
  return knots;
}

bool is_feature(ColumnKind k) { return k == ColumnKind::continuous || k == ColumnKind::categorical; }

}  // namespace

double sample_skewness(std::span<const double> values) {
  const double n = static_cast<double>(values.size());
  if (values.size() < 2) return 0.0;
  double mean = 0;
  for (double v : values) mean += v;
  mean /= n;
  double m2 = 0, m3 = 0;
  for (double v : values) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  if (m2 <= 0) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

double quantile_normalize(std::span<const QuantileKnot> knots, double x) {
  if (knots.empty()) throw Error("preprocess.no_knots", "quantile map has no knots");
  double rank;
  if (x <= knots.front().value) {
    rank = knots.front().rank;
  } else if (x >= knots.back().value) {
    rank = knots.back().rank;
  } else {
    auto hi = std::upper_bound(knots.begin(), knots.end(), x,
                               [](double v, const QuantileKnot& k) { return v < k.value; });
    auto lo = hi - 1;
    const double t = (x - lo->value) / (hi->value - lo->value);
    rank = lo->rank + t * (hi->rank - lo->rank);
  }
  if (rank == 0.5) return 0.0;
  return boost::math::quantile(boost::math::normal_distribution<double>(), rank);
}

const ContinuousStats* PreprocessorState::find_continuous(std::string_view column) const {
  for (const auto& c : continuous) {
    if (c.column == column) return &c;
  }
  return nullptr;
}

PreprocessorState fit(const Dataset& data, double skew_threshold) {
  const FeatureSchema& schema = data.schema();
  if (schema.normalized()) throw Error("preprocess.already_transformed", "cannot fit on transformed data");
  PreprocessorState state;
  state.input_schema = schema;
  state.skew_threshold = skew_threshold;
  state.fit_row_ids = data.row_ids();

  std::set<std::string> indicators;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const Column& col = schema.column(c);
    if (!is_feature(col.kind)) continue;
    std::size_t missing = 0;
    for (std::size_t r = 0; r < data.n_rows(); ++r) missing += data::is_missing(data.cell(r, c)) ? 1 : 0;

    if (col.kind == ColumnKind::continuous) {
      std::vector<double> values;
      values.reserve(data.n_rows() - missing);
      for (std::size_t r = 0; r < data.n_rows(); ++r) {
        if (auto v = data.number(r, c)) values.push_back(*v);
      }
      if (values.empty()) {
        state.dropped.push_back({col.name, "all values missing"});
        continue;
      }
      if (values.size() < 2) {
        state.dropped.push_back({col.name, "fewer than two observed values"});
        continue;
      }
      ContinuousStats s;
      s.column = col.name;
      s.median = median_of(values);
      double sum = 0;
      for (double v : values) sum += v;
      s.mean = sum / static_cast<double>(values.size());
      double ss = 0;
      for (double v : values) ss += (v - s.mean) * (v - s.mean);
      s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
      if (!(s.std > 0)) {
        state.dropped.push_back({col.name, "zero variance"});
        continue;
      }
      s.skewness = sample_skewness(values);
      s.use_quantile = std::abs(s.skewness) > skew_threshold;
      if (s.use_quantile) s.knots = fit_knots(values);
      state.continuous.push_back(std::move(s));
    } else {
      std::vector<bool> seen(col.categories.size(), false);
      for (std::size_t r = 0; r < data.n_rows(); ++r) {
        if (const auto* k = std::get_if<Category>(&data.cell(r, c))) seen[k->index] = true;
      }
      CategoricalVocabulary vocab{col.name, {}};
      for (std::size_t i = 0; i < col.categories.size(); ++i) {
        if (seen[i] && col.categories[i] != data::kUnknownCategory) vocab.categories.push_back(col.categories[i]);
      }
      vocab.categories.emplace_back(data::kUnknownCategory);
      state.categorical.push_back(std::move(vocab));
    }
    if (missing > 0) indicators.insert(col.name);
  }
  for (const auto& d : state.dropped) indicators.erase(d.column);
  state.indicator_columns.assign(indicators.begin(), indicators.end());
  return state;
}

FeatureSchema PreprocessorState::output_schema() const {
  std::set<std::string> dropped_names;
  for (const auto& d : dropped) dropped_names.insert(d.column);
  std::vector<Column> cols;
  for (const auto& col : input_schema.columns()) {
    if (dropped_names.contains(col.name)) continue;
    Column out = col;
    if (col.kind == ColumnKind::categorical) {
      for (const auto& v : categorical) {
        if (v.column == col.name) out.categories = v.categories;
      }
    }
    cols.push_back(std::move(out));
  }
  for (const auto& name : indicator_columns) cols.push_back({name + kIndicatorSuffix, ColumnKind::continuous, {}});
  return FeatureSchema(std::move(cols), true, input_schema.id_column());
}

Dataset transform(const PreprocessorState& state, const Dataset& data, TransformDiagnostics* diagnostics) {
  if (data.schema().normalized()) {
    throw Error("preprocess.already_transformed", "data has already been transformed");
  }
  if (!(data.schema() == state.input_schema)) {
    throw Error("preprocess.schema_mismatch", "data schema differs from the fitted schema");
  }
  const FeatureSchema out_schema = state.output_schema();
  const FeatureSchema& in_schema = data.schema();

  // Per output column: source column index and how to map it.
  struct Plan {
    std::size_t source;
    const ContinuousStats* stats = nullptr;
    std::vector<std::size_t> category_map;  // input index -> output index
    bool indicator = false;
  };
  std::vector<Plan> plans;
  for (const auto& col : out_schema.columns()) {
    Plan p;
    if (col.name.ends_with(kIndicatorSuffix) && !in_schema.find(col.name)) {
      p.source = in_schema.index_of(col.name.substr(0, col.name.size() - std::string_view(kIndicatorSuffix).size()));
      p.indicator = true;
    } else {
      p.source = in_schema.index_of(col.name);
      const Column& in_col = in_schema.column(p.source);
      if (in_col.kind == ColumnKind::continuous) {
        p.stats = state.find_continuous(col.name);
      } else if (in_col.kind == ColumnKind::categorical) {
        const std::size_t out_col = out_schema.index_of(col.name);
        const std::size_t unknown = out_schema.unknown_index(out_col);
        p.category_map.resize(in_col.categories.size(), unknown);
        for (std::size_t i = 0; i < in_col.categories.size(); ++i) {
          if (auto j = out_schema.category_index(out_col, in_col.categories[i])) p.category_map[i] = *j;
        }
      }
    }
    plans.push_back(std::move(p));
  }

  std::vector<std::vector<Cell>> rows;
  rows.reserve(data.n_rows());
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    std::vector<Cell> out(plans.size());
    for (std::size_t c = 0; c < plans.size(); ++c) {
      const Plan& p = plans[c];
      const Cell& in = data.cell(r, p.source);
      const Column& in_col = in_schema.column(p.source);
      if (p.indicator) {
        out[c] = data::is_missing(in) ? 1.0 : 0.0;
      } else if (p.stats) {
        const double x = data::is_missing(in) ? p.stats->median : std::get<double>(in);
        out[c] = p.stats->use_quantile ? quantile_normalize(p.stats->knots, x) : (x - p.stats->mean) / p.stats->std;
      } else if (in_col.kind == ColumnKind::categorical) {
        const std::size_t unknown = out_schema.unknown_index(c);
        if (data::is_missing(in)) {
          out[c] = Category{unknown};
        } else {
          const std::size_t in_idx = std::get<Category>(in).index;
          const std::size_t mapped = p.category_map[in_idx];
          if (mapped == unknown && in_col.categories[in_idx] != data::kUnknownCategory && diagnostics) {
            ++diagnostics->unseen_categories[in_col.name];
          }
          out[c] = Category{mapped};
        }
      } else {
        out[c] = in;  // label and group columns pass through
      }
    }
    rows.push_back(std::move(out));
  }
  return Dataset(out_schema, std::move(rows), data.row_ids());
}

nlohmann::json PreprocessorState::to_json() const {
  nlohmann::json cont = nlohmann::json::array();
  for (const auto& s : continuous) {
    nlohmann::json knots_json = nlohmann::json::array();
    for (const auto& k : s.knots) knots_json.push_back({k.value, k.rank});
    cont.push_back({{"column", s.column},
                    {"median", s.median},
                    {"mean", s.mean},
                    {"std", s.std},
                    {"skewness", s.skewness},
                    {"use_quantile", s.use_quantile},
                    {"knots", std::move(knots_json)}});
  }
  nlohmann::json cat = nlohmann::json::array();
  for (const auto& v : categorical) cat.push_back({{"column", v.column}, {"categories", v.categories}});
  nlohmann::json dropped_json = nlohmann::json::array();
  for (const auto& d : dropped) dropped_json.push_back({{"column", d.column}, {"reason", d.reason}});
  return {{"input_schema", input_schema.to_json()},
          {"skew_threshold", skew_threshold},
          {"continuous", std::move(cont)},
          {"categorical", std::move(cat)},
          {"indicator_columns", indicator_columns},
          {"dropped", std::move(dropped_json)},
          {"fit_row_ids", fit_row_ids}};
}

PreprocessorState PreprocessorState::from_json(const nlohmann::json& j) {
  PreprocessorState s;
  s.input_schema = FeatureSchema::from_json(j.at("input_schema"));
  s.skew_threshold = j.at("skew_threshold").get<double>();
  for (const auto& c : j.at("continuous")) {
    ContinuousStats cs;
    cs.column = c.at("column").get<std::string>();
    cs.median = c.at("median").get<double>();
    cs.mean = c.at("mean").get<double>();
    cs.std = c.at("std").get<double>();
    cs.skewness = c.at("skewness").get<double>();
    cs.use_quantile = c.at("use_quantile").get<bool>();
    for (const auto& k : c.at("knots")) cs.knots.push_back({k.at(0).get<double>(), k.at(1).get<double>()});
    s.continuous.push_back(std::move(cs));
  }
  for (const auto& c : j.at("categorical")) {
    s.categorical.push_back({c.at("column").get<std::string>(), c.at("categories").get<std::vector<std::string>>()});
  }
  s.indicator_columns = j.at("indicator_columns").get<std::vector<std::string>>();
  for (const auto& d : j.at("dropped")) {
    s.dropped.push_back({d.at("column").get<std::string>(), d.at("reason").get<std::string>()});
  }
  s.fit_row_ids = j.at("fit_row_ids").get<std::vector<std::string>>();
  return s;
}

}  // namespace shiftadapt::preprocess
