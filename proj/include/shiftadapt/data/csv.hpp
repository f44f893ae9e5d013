#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "shiftadapt/data/dataset.hpp"

namespace shiftadapt::data {

struct CsvStats {
  /// Values outside a column's vocabulary, mapped to "unknown", per column.
  std::map<std::string, std::size_t> out_of_vocabulary;
};

/// Reads a header-first CSV. Empty fields are missing. Categorical and group
/// columns with an empty vocabulary in `schema` get one inferred from the data
/// (sorted distinct values); the returned dataset carries the completed schema.
/// Row ids come from schema.id_column() when set, else "r<line>".
Dataset read_csv(std::istream& in, const FeatureSchema& schema, CsvStats* stats = nullptr);
Dataset read_csv(const std::filesystem::path& path, const FeatureSchema& schema, CsvStats* stats = nullptr);

/// Writes the id column first (named schema.id_column() or "id"), then every
/// schema column. Numbers use shortest round-trip formatting.
std::string write_csv(const Dataset& data);

FeatureSchema read_schema(const std::filesystem::path& path);

/// CSV text plus schema JSON; deserialize(serialize(d)) == d.
struct DatasetFiles {
  std::string csv;
  std::string schema_json;
};
DatasetFiles serialize(const Dataset& data);
Dataset deserialize(const DatasetFiles& files);

}  // namespace shiftadapt::data
