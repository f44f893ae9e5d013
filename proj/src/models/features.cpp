#include "shiftadapt/models/features.hpp"

#include "shiftadapt/util/error.hpp"

namespace shiftadapt::models {

using data::ColumnKind;

std::size_t FeatureLayout::one_hot_width() const {
  std::size_t w = 0;
  for (auto v : vocab_sizes) w += v;
  return w;
}

nlohmann::json FeatureLayout::to_json() const {
  return {{"numeric", numeric}, {"categorical", categorical}, {"vocab_sizes", vocab_sizes}};
}

FeatureLayout FeatureLayout::from_json(const nlohmann::json& j) {
  FeatureLayout l;
  l.numeric = j.at("numeric").get<std::vector<std::string>>();
  l.categorical = j.at("categorical").get<std::vector<std::string>>();
  l.vocab_sizes = j.at("vocab_sizes").get<std::vector<std::size_t>>();
  return l;
}

FeatureLayout layout_of(const data::FeatureSchema& schema) {
  FeatureLayout l;
  for (const auto& c : schema.columns()) {
    if (c.kind == ColumnKind::continuous) {
      l.numeric.push_back(c.name);
    } else if (c.kind == ColumnKind::categorical) {
      l.categorical.push_back(c.name);
      l.vocab_sizes.push_back(c.categories.size());
    }
  }
  return l;
}

Eigen::MatrixXd Features::dense() const {
  Eigen::Index width = numeric.rows();
  for (auto v : vocab_sizes) width += static_cast<Eigen::Index>(v);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(width, numeric.cols());
  out.topRows(numeric.rows()) = numeric;
  Eigen::Index offset = numeric.rows();
  for (Eigen::Index j = 0; j < categories.rows(); ++j) {
    for (Eigen::Index i = 0; i < categories.cols(); ++i) out(offset + categories(j, i), i) = 1.0;
    offset += static_cast<Eigen::Index>(vocab_sizes[static_cast<std::size_t>(j)]);
  }
  return out;
}

Features Features::select(const std::vector<std::size_t>& columns) const {
  Features f;
  f.vocab_sizes = vocab_sizes;
  f.numeric.resize(numeric.rows(), static_cast<Eigen::Index>(columns.size()));
  f.categories.resize(categories.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(columns[i]);
    f.numeric.col(static_cast<Eigen::Index>(i)) = numeric.col(c);
    f.categories.col(static_cast<Eigen::Index>(i)) = categories.col(c);
  }
  return f;
}

Features encode(const data::Dataset& data, const FeatureLayout& layout) {
  const auto& schema = data.schema();
  const auto n = static_cast<Eigen::Index>(data.n_rows());
  Features f;
  f.vocab_sizes = layout.vocab_sizes;
  f.numeric.resize(static_cast<Eigen::Index>(layout.numeric.size()), n);
  f.categories.resize(static_cast<Eigen::Index>(layout.categorical.size()), n);

  const FeatureLayout actual = layout_of(schema);
  if (actual.numeric.size() != layout.numeric.size() || actual.categorical.size() != layout.categorical.size()) {
    throw Error("models.feature_mismatch", "dataset has " + std::to_string(actual.numeric.size()) + " numeric and " +
                                               std::to_string(actual.categorical.size()) +
                                               " categorical features; model expects " +
                                               std::to_string(layout.numeric.size()) + " and " +
                                               std::to_string(layout.categorical.size()));
  }
  for (std::size_t j = 0; j < layout.numeric.size(); ++j) {
    const auto col = schema.find(layout.numeric[j]);
    if (!col || schema.column(*col).kind != ColumnKind::continuous) {
      throw Error("models.feature_mismatch", "missing numeric feature '" + layout.numeric[j] + "'");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto v = data.number(static_cast<std::size_t>(i), *col);
      if (!v) throw Error("models.missing_value", "feature '" + layout.numeric[j] + "' has a missing cell");
      f.numeric(static_cast<Eigen::Index>(j), i) = *v;
    }
  }
  for (std::size_t j = 0; j < layout.categorical.size(); ++j) {
    const auto col = schema.find(layout.categorical[j]);
    if (!col || schema.column(*col).kind != ColumnKind::categorical ||
        schema.column(*col).categories.size() != layout.vocab_sizes[j]) {
      throw Error("models.feature_mismatch", "categorical feature '" + layout.categorical[j] + "' does not match");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto* c = std::get_if<data::Category>(&data.cell(static_cast<std::size_t>(i), *col));
      if (!c) throw Error("models.missing_value", "feature '" + layout.categorical[j] + "' has a missing cell");
      f.categories(static_cast<Eigen::Index>(j), i) = static_cast<int>(c->index);
    }
  }
  return f;
}

Eigen::VectorXd label_vector(const data::Dataset& data) {
  const std::size_t li = data.schema().label_index();
  Eigen::VectorXd y(static_cast<Eigen::Index>(data.n_rows()));
  for (std::size_t i = 0; i < data.n_rows(); ++i) {
    const auto v = data.number(i, li);
    if (!v) throw Error("models.missing_label", "row '" + data.row_id(i) + "' has no label");
    y(static_cast<Eigen::Index>(i)) = *v;
  }
  return y;
}

}  // namespace shiftadapt::models
