#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shiftadapt/data/dataset.hpp"

namespace fixtures {

/// Continuous features x0..x{p-1} plus label y; ids "<prefix><i>".
inline shiftadapt::data::Dataset numeric_dataset(const Eigen::MatrixXd& rows, const Eigen::VectorXd& y,
                                                 const std::string& prefix = "r", bool categorical_label = false) {
  using namespace shiftadapt::data;
  std::vector<Column> cols;
  for (Eigen::Index j = 0; j < rows.cols(); ++j) cols.push_back({"x" + std::to_string(j), ColumnKind::continuous, {}});
  cols.push_back({"y", ColumnKind::label, categorical_label ? std::vector<std::string>{"0", "1"} : std::vector<std::string>{}});
  std::vector<std::vector<Cell>> cells;
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    std::vector<Cell> r;
    for (Eigen::Index j = 0; j < rows.cols(); ++j) r.emplace_back(rows(i, j));
    r.emplace_back(y(i));
    cells.push_back(std::move(r));
    ids.push_back(prefix + std::to_string(i));
  }
  return Dataset(FeatureSchema(cols), cells, ids);
}

}  // namespace fixtures
