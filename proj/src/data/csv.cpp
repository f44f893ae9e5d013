#include "shiftadapt/data/csv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/io.hpp"

namespace shiftadapt::data {
namespace {

std::vector<std::string> split_record(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (quoted) throw Error("data.csv", "unterminated quote on line " + std::to_string(line_no));
  fields.push_back(std::move(cur));
  return fields;
}

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

double parse_number(const std::string& text, const std::string& column, std::size_t line_no) {
  double v = 0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  if (first < last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw Error("data.csv", "line " + std::to_string(line_no) + " column '" + column + "': '" + text +
                                "' is not a number");
  }
  return v;
}

}  // namespace

Dataset read_csv(std::istream& in, const FeatureSchema& schema, CsvStats* stats) {
  std::vector<std::vector<std::string>> records;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_record(line, line_no);
    if (header.empty()) {
      header = std::move(fields);
      continue;
    }
    if (fields.size() != header.size()) {
      throw Error("data.csv", "line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                                  " fields, header has " + std::to_string(header.size()));
    }
    records.push_back(std::move(fields));
  }
  if (header.empty()) throw Error("data.csv", "missing header row");

  auto header_pos = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };

  // Complete vocabularies that the schema leaves open.
  std::vector<Column> columns = schema.columns();
  std::vector<std::size_t> pos(columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    auto p = header_pos(columns[c].name);
    if (!p) throw Error("data.missing_column", "CSV has no column '" + columns[c].name + "'");
    pos[c] = *p;
    const bool vocab = columns[c].kind == ColumnKind::categorical || columns[c].kind == ColumnKind::group;
    const bool open = columns[c].categories.empty() ||
                      (columns[c].categories.size() == 1 && columns[c].categories[0] == kUnknownCategory);
    if (vocab && open) {
      std::set<std::string> values;
      for (const auto& rec : records) {
        if (!rec[pos[c]].empty() && rec[pos[c]] != kUnknownCategory) values.insert(rec[pos[c]]);
      }
      columns[c].categories.assign(values.begin(), values.end());
    }
  }
  FeatureSchema completed(std::move(columns), schema.normalized(), schema.id_column());

  std::optional<std::size_t> id_pos;
  if (!completed.id_column().empty()) {
    id_pos = header_pos(completed.id_column());
    if (!id_pos) throw Error("data.missing_column", "CSV has no id column '" + completed.id_column() + "'");
  } else if (!completed.find("id")) {
    // write_csv names the id column "id" when the schema does not name one.
    id_pos = header_pos("id");
  }

  std::vector<std::vector<Cell>> rows;
  std::vector<std::string> ids;
  rows.reserve(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    std::vector<Cell> cells(completed.size());
    for (std::size_t c = 0; c < completed.size(); ++c) {
      const std::string& text = rec[pos[c]];
      const Column& col = completed.column(c);
      if (text.empty()) {
        cells[c] = Missing{};
        continue;
      }
      switch (col.kind) {
        case ColumnKind::continuous:
          cells[c] = parse_number(text, col.name, r + 2);
          break;
        case ColumnKind::label:
          if (col.categories.empty()) {
            cells[c] = parse_number(text, col.name, r + 2);
          } else if (auto idx = completed.category_index(c, text)) {
            cells[c] = static_cast<double>(*idx);
          } else {
            throw Error("data.csv", "label '" + text + "' not in vocabulary of '" + col.name + "'");
          }
          break;
        case ColumnKind::categorical:
        case ColumnKind::group:
          if (auto idx = completed.category_index(c, text)) {
            cells[c] = Category{*idx};
          } else {
            cells[c] = Category{completed.unknown_index(c)};
            if (stats) ++stats->out_of_vocabulary[col.name];
          }
          break;
      }
    }
    rows.push_back(std::move(cells));
    ids.push_back(id_pos ? rec[*id_pos] : "r" + std::to_string(r));
  }
  return Dataset(std::move(completed), std::move(rows), std::move(ids));
}

Dataset read_csv(const std::filesystem::path& path, const FeatureSchema& schema, CsvStats* stats) {
  std::ifstream in(path);
  if (!in) throw Error("io.open", "cannot open " + path.string());
  return read_csv(in, schema, stats);
}

std::string write_csv(const Dataset& data) {
  const auto& schema = data.schema();
  std::ostringstream out;
  out << quote(schema.id_column().empty() ? "id" : schema.id_column());
  for (const auto& col : schema.columns()) out << ',' << quote(col.name);
  out << '\n';
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    out << quote(data.row_id(r));
    for (std::size_t c = 0; c < schema.size(); ++c) {
      out << ',';
      const Cell& cell = data.cell(r, c);
      const Column& col = schema.column(c);
      if (is_missing(cell)) continue;
      if (const Category* k = std::get_if<Category>(&cell)) {
        out << quote(col.categories[k->index]);
      } else {
        const double v = std::get<double>(cell);
        if (col.kind == ColumnKind::label && !col.categories.empty()) {
          out << quote(col.categories[static_cast<std::size_t>(v)]);
        } else {
          out << format_double(v);
        }
      }
    }
    out << '\n';
  }
  return out.str();
}

FeatureSchema read_schema(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("data.schema", path.string() + ": " + e.what());
  }
  return FeatureSchema::from_json(j);
}

DatasetFiles serialize(const Dataset& data) {
  return {write_csv(data), data.schema().to_json().dump(2) + "\n"};
}

Dataset deserialize(const DatasetFiles& files) {
  const auto schema = FeatureSchema::from_json(nlohmann::json::parse(files.schema_json));
  std::istringstream in(files.csv);
  return read_csv(in, schema);
}

}  // namespace shiftadapt::data
