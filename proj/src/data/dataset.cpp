#include "shiftadapt/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "shiftadapt/util/error.hpp"

namespace shiftadapt::data {

std::string_view to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::continuous: return "continuous";
    case ColumnKind::categorical: return "categorical";
    case ColumnKind::label: return "label";
    case ColumnKind::group: return "group";
  }
  return "continuous";
}

ColumnKind column_kind_from_string(std::string_view text) {
  if (text == "continuous") return ColumnKind::continuous;
  if (text == "categorical") return ColumnKind::categorical;
  if (text == "label") return ColumnKind::label;
  if (text == "group" || text == "group-attribute") return ColumnKind::group;
  throw Error("data.schema", "unknown column kind '" + std::string(text) + "'");
}

FeatureSchema::FeatureSchema(std::vector<Column> columns, bool normalized, std::string id_column)
    : columns_(std::move(columns)), normalized_(normalized), id_column_(std::move(id_column)) {
  std::set<std::string> names;
  std::size_t labels = 0;
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    auto& col = columns_[i];
    if (col.name.empty()) throw Error("data.schema", "empty column name");
    if (!names.insert(col.name).second) throw Error("data.schema", "duplicate column '" + col.name + "'");
    if (col.name == id_column_) throw Error("data.schema", "id column '" + col.name + "' is also a data column");
    if (col.kind == ColumnKind::label) {
      ++labels;
      label_index_ = i;
    }
    const bool vocab = col.kind == ColumnKind::categorical || col.kind == ColumnKind::group;
    if (vocab) {
      std::set<std::string> seen;
      for (const auto& c : col.categories) {
        if (!seen.insert(c).second) throw Error("data.schema", "duplicate category '" + c + "' in " + col.name);
      }
      if (!seen.contains(std::string(kUnknownCategory))) col.categories.emplace_back(kUnknownCategory);
    } else if (col.kind == ColumnKind::continuous && !col.categories.empty()) {
      throw Error("data.schema", "continuous column '" + col.name + "' cannot list categories");
    }
  }
  if (labels != 1) throw Error("data.schema", "schema needs exactly one label column, found " + std::to_string(labels));
}

std::optional<std::size_t> FeatureSchema::find(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t FeatureSchema::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw Error("data.missing_column", "no column named '" + std::string(name) + "'");
}

std::optional<std::size_t> FeatureSchema::category_index(std::size_t col, std::string_view value) const {
  const auto& cats = columns_.at(col).categories;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    if (cats[i] == value) return i;
  }
  return std::nullopt;
}

std::size_t FeatureSchema::unknown_index(std::size_t col) const {
  if (auto i = category_index(col, kUnknownCategory)) return *i;
  throw Error("data.schema", "column '" + columns_.at(col).name + "' has no unknown category");
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns_) {
    nlohmann::json jc{{"name", c.name}, {"kind", to_string(c.kind)}};
    if (!c.categories.empty()) jc["categories"] = c.categories;
    cols.push_back(std::move(jc));
  }
  nlohmann::json j{{"columns", std::move(cols)}, {"normalized", normalized_}};
  if (!id_column_.empty()) j["id_column"] = id_column_;
  return j;
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("columns") || !j["columns"].is_array()) {
    throw Error("data.schema", "schema document needs a 'columns' array");
  }
  std::vector<Column> cols;
  for (const auto& jc : j["columns"]) {
    Column c;
    c.name = jc.at("name").get<std::string>();
    c.kind = column_kind_from_string(jc.at("kind").get<std::string>());
    if (jc.contains("categories")) c.categories = jc["categories"].get<std::vector<std::string>>();
    cols.push_back(std::move(c));
  }
  return FeatureSchema(std::move(cols), j.value("normalized", false), j.value("id_column", std::string{}));
}

namespace {

void check_cell(const FeatureSchema& schema, std::size_t col, const Cell& cell, const std::string& row_id) {
  const Column& c = schema.column(col);
  auto fail = [&](const std::string& what) {
    throw Error("data.cell", "row '" + row_id + "' column '" + c.name + "': " + what);
  };
  if (is_missing(cell)) return;
  switch (c.kind) {
    case ColumnKind::continuous:
    case ColumnKind::label: {
      const double* v = std::get_if<double>(&cell);
      if (!v) fail("expected a number");
      if (!std::isfinite(*v)) fail("non-finite number");
      if (c.kind == ColumnKind::label && !c.categories.empty()) {
        const double idx = *v;
        if (idx < 0 || idx != std::floor(idx) || idx >= static_cast<double>(c.categories.size())) {
          fail("label index out of range");
        }
      }
      break;
    }
    case ColumnKind::categorical:
    case ColumnKind::group: {
      const Category* k = std::get_if<Category>(&cell);
      if (!k) fail("expected a category");
      if (k->index >= c.categories.size()) fail("category index out of range");
      break;
    }
  }
}

}  // namespace

Dataset::Dataset(FeatureSchema schema, std::vector<std::vector<Cell>> rows, std::vector<std::string> row_ids)
    : schema_(std::move(schema)), rows_(std::move(rows)), row_ids_(std::move(row_ids)) {
  if (rows_.size() != row_ids_.size()) throw Error("data.shape", "row count and row id count differ");
  if (rows_.empty()) throw Error("data.empty", "dataset needs at least one row");
  std::unordered_set<std::string> ids;
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    if (!ids.insert(row_ids_[r]).second) throw Error("data.duplicate_id", "duplicate row id '" + row_ids_[r] + "'");
    if (rows_[r].size() != schema_.size()) throw Error("data.shape", "row '" + row_ids_[r] + "' has wrong width");
    for (std::size_t c = 0; c < rows_[r].size(); ++c) check_cell(schema_, c, rows_[r][c], row_ids_[r]);
  }
}

std::optional<std::size_t> Dataset::find_row(std::string_view id) const {
  for (std::size_t r = 0; r < row_ids_.size(); ++r) {
    if (row_ids_[r] == id) return r;
  }
  return std::nullopt;
}

std::optional<double> Dataset::number(std::size_t row, std::size_t col) const {
  if (const double* v = std::get_if<double>(&rows_[row][col])) return *v;
  return std::nullopt;
}

Dataset Dataset::select(std::span<const std::size_t> rows) const {
  std::vector<std::vector<Cell>> out;
  std::vector<std::string> ids;
  out.reserve(rows.size());
  ids.reserve(rows.size());
  for (std::size_t r : rows) {
    out.push_back(rows_.at(r));
    ids.push_back(row_ids_.at(r));
  }
  return Dataset(schema_, std::move(out), std::move(ids));
}

Dataset Dataset::select_ids(std::span<const std::string> ids) const {
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t r = 0; r < row_ids_.size(); ++r) index.emplace(row_ids_[r], r);
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw Error("data.missing_row", "no row with id '" + id + "'");
    rows.push_back(it->second);
  }
  return select(rows);
}

Dataset Dataset::concat(const Dataset& a, const Dataset& b) {
  if (!(a.schema_ == b.schema_)) throw Error("data.schema_mismatch", "cannot concatenate datasets with different schemas");
  auto rows = a.rows_;
  rows.insert(rows.end(), b.rows_.begin(), b.rows_.end());
  auto ids = a.row_ids_;
  ids.insert(ids.end(), b.row_ids_.begin(), b.row_ids_.end());
  return Dataset(a.schema_, std::move(rows), std::move(ids));
}

GroupedDataset::GroupedDataset(Dataset source_rows, std::optional<Dataset> target_rows)
    : source(std::move(source_rows)), target(std::move(target_rows)) {
  if (target && !(target->schema() == source.schema())) {
    throw Error("data.schema_mismatch", "source and target schemas differ");
  }
}

std::vector<std::pair<std::string, Dataset>> group_partition(const Dataset& data, std::string_view attribute) {
  const auto& schema = data.schema();
  const std::size_t col = schema.index_of(attribute);
  if (schema.column(col).kind != ColumnKind::group) {
    throw Error("data.not_group", "column '" + std::string(attribute) + "' is not a group attribute");
  }
  const auto& cats = schema.column(col).categories;
  const std::size_t unknown = schema.unknown_index(col);
  std::vector<std::vector<std::size_t>> members(cats.size());
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    const Cell& c = data.cell(r, col);
    const std::size_t g = is_missing(c) ? unknown : std::get<Category>(c).index;
    members[g].push_back(r);
  }
  std::vector<std::pair<std::string, Dataset>> out;
  for (std::size_t g = 0; g < cats.size(); ++g) {
    if (members[g].empty()) continue;
    out.emplace_back(cats[g], data.select(members[g]));
  }
  return out;
}

Dataset select_group(const Dataset& data, std::string_view attribute, std::string_view group) {
  for (auto& [name, part] : group_partition(data, attribute)) {
    if (name == group) return part;
  }
  throw Error("data.missing_group", "no rows in group '" + std::string(group) + "' of '" + std::string(attribute) + "'");
}

}  // namespace shiftadapt::data
