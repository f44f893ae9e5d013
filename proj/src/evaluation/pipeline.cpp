#include "shiftadapt/evaluation/pipeline.hpp"

#include "shiftadapt/ensemble/stacking.hpp"
#include "shiftadapt/util/error.hpp"

namespace shiftadapt::evaluation {

using data::Cell;
using data::ColumnKind;
using data::Dataset;

PipelineModel::PipelineModel(std::optional<preprocess::PreprocessorState> state, std::unique_ptr<models::Model> model)
    : state_(std::move(state)), model_(std::move(model)) {
  if (!model_) throw Error("evaluation.bad_spec", "pipeline without a model");
}

std::vector<double> PipelineModel::predict(const Dataset& data) const {
  if (!state_) return model_->predict(data);
  const Dataset in = data.schema() == state_->input_schema ? data : conform(data, state_->input_schema);
  return model_->predict(preprocess::transform(*state_, in));
}

nlohmann::json PipelineModel::to_json() const {
  return {{"kind", "pipeline"},
          {"preprocessor", state_ ? state_->to_json() : nlohmann::json()},
          {"model", model_->to_json()}};
}

PipelineModel PipelineModel::from_json(const nlohmann::json& j) {
  std::optional<preprocess::PreprocessorState> state;
  if (!j.at("preprocessor").is_null()) state = preprocess::PreprocessorState::from_json(j.at("preprocessor"));
  return PipelineModel(std::move(state), load_model(j.at("model")));
}

std::unique_ptr<models::Model> load_model(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "pipeline") return std::make_unique<PipelineModel>(PipelineModel::from_json(j));
  if (kind == "ensemble") return std::make_unique<ensemble::StackedEnsemble>(ensemble::StackedEnsemble::from_json(j));
  return models::model_from_json(j);
}

Dataset conform(const Dataset& data, const data::FeatureSchema& schema) {
  const auto& have = data.schema();
  struct Map {
    std::optional<std::size_t> source;
    std::vector<std::optional<std::size_t>> categories;
  };
  std::vector<Map> maps;
  for (const auto& col : schema.columns()) {
    Map m;
    m.source = have.find(col.name);
    if (!m.source) {
      if (col.kind == ColumnKind::continuous || col.kind == ColumnKind::categorical)
        throw Error("models.feature_mismatch", "missing feature '" + col.name + "'");
      maps.push_back(m);
      continue;
    }
    const auto& from = have.column(*m.source);
    const bool numeric_to = col.kind == ColumnKind::continuous || (col.kind == ColumnKind::label && col.categories.empty());
    const bool numeric_from =
        from.kind == ColumnKind::continuous || (from.kind == ColumnKind::label && from.categories.empty());
    if (numeric_to != numeric_from) {
      if (col.kind == ColumnKind::label) {
        m.source.reset();
        maps.push_back(m);
        continue;
      }
      throw Error("models.feature_mismatch", "column '" + col.name + "' has a different kind");
    }
    if (!numeric_to) {
      const std::size_t out_col = schema.index_of(col.name);
      const auto unknown = schema.category_index(out_col, data::kUnknownCategory);
      for (const auto& c : from.categories) {
        auto idx = schema.category_index(out_col, c);
        m.categories.push_back(idx ? idx : unknown);
      }
    }
    maps.push_back(std::move(m));
  }
  std::vector<std::vector<Cell>> rows;
  rows.reserve(data.n_rows());
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    std::vector<Cell> out(maps.size(), data::Missing{});
    for (std::size_t c = 0; c < maps.size(); ++c) {
      const Map& m = maps[c];
      if (!m.source) continue;
      const Cell& in = data.cell(r, *m.source);
      if (data::is_missing(in)) continue;
      if (m.categories.empty()) {
        out[c] = in;
      } else if (auto idx = m.categories[std::get<data::Category>(in).index]) {
        out[c] = data::Category{*idx};
      }
    }
    rows.push_back(std::move(out));
  }
  return Dataset(schema, std::move(rows), data.row_ids());
}

}  // namespace shiftadapt::evaluation
