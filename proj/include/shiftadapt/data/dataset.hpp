#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace shiftadapt::data {

inline constexpr std::string_view kUnknownCategory = "unknown";

enum class ColumnKind { continuous, categorical, label, group };

std::string_view to_string(ColumnKind kind);
ColumnKind column_kind_from_string(std::string_view text);

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
  /// Vocabulary for categorical and group columns (always ends with
  /// "unknown" once inside a schema). A label column with categories is a
  /// classification label whose cells hold the category index as a number.
  std::vector<std::string> categories;

  friend bool operator==(const Column&, const Column&) = default;
};

/// Ordered, typed column list. Exactly one label column; unique names.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<Column> columns, bool normalized = false,
                         std::string id_column = "");

  const std::vector<Column>& columns() const noexcept { return columns_; }
  std::size_t size() const noexcept { return columns_.size(); }
  const Column& column(std::size_t i) const { return columns_.at(i); }

  std::optional<std::size_t> find(std::string_view name) const;
  /// Throws data.missing_column if absent.
  std::size_t index_of(std::string_view name) const;

  std::size_t label_index() const noexcept { return label_index_; }
  const Column& label_column() const { return columns_[label_index_]; }

  /// True for schemas produced by the preprocessing transform.
  bool normalized() const noexcept { return normalized_; }
  const std::string& id_column() const noexcept { return id_column_; }

  /// Category index of `value` in column `col`, if present.
  std::optional<std::size_t> category_index(std::size_t col, std::string_view value) const;
  std::size_t unknown_index(std::size_t col) const;

  nlohmann::json to_json() const;
  static FeatureSchema from_json(const nlohmann::json& j);

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;

 private:
  std::vector<Column> columns_;
  std::size_t label_index_ = 0;
  bool normalized_ = false;
  std::string id_column_;
};

struct Missing {
  friend bool operator==(Missing, Missing) { return true; }
};

struct Category {
  std::size_t index = 0;
  friend bool operator==(Category, Category) = default;
};

/// A cell is explicitly missing, a number, or a category index.
using Cell = std::variant<Missing, double, Category>;

inline bool is_missing(const Cell& c) { return std::holds_alternative<Missing>(c); }

/// Immutable typed table with stable row identifiers.
class Dataset {
 public:
  Dataset(FeatureSchema schema, std::vector<std::vector<Cell>> rows, std::vector<std::string> row_ids);

  const FeatureSchema& schema() const noexcept { return schema_; }
  std::size_t n_rows() const noexcept { return rows_.size(); }
  std::size_t n_cols() const noexcept { return schema_.size(); }

  const Cell& cell(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  const std::vector<Cell>& row(std::size_t r) const { return rows_[r]; }
  const std::string& row_id(std::size_t r) const { return row_ids_[r]; }
  const std::vector<std::string>& row_ids() const noexcept { return row_ids_; }

  std::optional<std::size_t> find_row(std::string_view id) const;

  /// Numeric value of a label/continuous cell; nullopt when missing.
  std::optional<double> number(std::size_t row, std::size_t col) const;

  Dataset select(std::span<const std::size_t> rows) const;
  Dataset select_ids(std::span<const std::string> ids) const;

  /// Rows of `a` followed by rows of `b`; schemas must match and ids stay unique.
  static Dataset concat(const Dataset& a, const Dataset& b);

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  FeatureSchema schema_;
  std::vector<std::vector<Cell>> rows_;
  std::vector<std::string> row_ids_;
};

/// Source population P_s (m rows) and optional target population P_t (n rows).
struct GroupedDataset {
  Dataset source;
  std::optional<Dataset> target;

  GroupedDataset(Dataset source_rows, std::optional<Dataset> target_rows);

  std::size_t m() const noexcept { return source.n_rows(); }
  std::size_t n() const noexcept { return target ? target->n_rows() : 0; }
  const FeatureSchema& schema() const noexcept { return source.schema(); }
};

/// Splits rows by the value of a group-attribute column. Rows whose group
/// cell is missing (or the reserved "unknown" category) go to "unknown".
std::vector<std::pair<std::string, Dataset>> group_partition(const Dataset& data, std::string_view attribute);

/// Rows of `data` whose `attribute` equals `group`.
Dataset select_group(const Dataset& data, std::string_view attribute, std::string_view group);

}  // namespace shiftadapt::data
