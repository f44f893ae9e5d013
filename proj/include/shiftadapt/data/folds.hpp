#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shiftadapt/data/dataset.hpp"

namespace shiftadapt::data {

/// Row-id to fold assignment. Rows held out of training (adaptation test
/// rows) carry kHeldOut.
struct FoldPlan {
  static constexpr int kHeldOut = -1;

  std::size_t k_folds = 0;
  std::map<std::string, int> assignments;
  std::string stratify_on;
  double target_fraction = 1.0;
  std::uint64_t seed = 0;

  std::vector<std::string> fold_rows(int fold) const;
  std::vector<std::string> training_rows() const;
  std::vector<std::string> held_out_rows() const { return fold_rows(kHeldOut); }

  nlohmann::json to_json() const;
  static FoldPlan from_json(const nlohmann::json& j);
};

/// Stratum per row used for label stratification: the class index for
/// classification labels (categorical label or values in {0,1}), otherwise
/// the quintile bin of the continuous label.
std::vector<std::size_t> label_strata(const Dataset& data, std::string_view label_col);

/// Assigns `strata.size()` items to k folds. Items are grouped by stratum,
/// ordered by `keys` inside each stratum, shuffled with `seed`, then dealt
/// round-robin across the concatenation, so fold sizes and per-stratum counts
/// each differ by at most one and the result is independent of input order.
std::vector<int> assign_stratified(std::span<const std::size_t> strata, std::span<const std::string> keys,
                                   std::size_t k, std::uint64_t seed);

/// k stratified folds over all rows.
FoldPlan stratified_split(const Dataset& data, std::size_t k, std::string_view label_col, std::uint64_t seed);

/// Train = all source rows + `target_fraction` of the target rows (stratified
/// by label); the remaining target rows are held out. Training rows get k
/// inner folds with equal (+-1) target counts.
FoldPlan adaptation_split(const GroupedDataset& pair, std::size_t k, double target_fraction, std::uint64_t seed);

/// Stratified subsample of `count` positions out of rows with the given strata.
std::vector<std::size_t> stratified_subsample(std::span<const std::size_t> strata, std::span<const std::string> keys,
                                              std::size_t count, std::uint64_t seed);

}  // namespace shiftadapt::data
