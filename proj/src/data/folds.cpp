#include "shiftadapt/data/folds.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/io.hpp"
#include "shiftadapt/util/rng.hpp"

namespace shiftadapt::data {
namespace {

// Positions grouped by stratum (ascending), each group ordered by key and then
// shuffled by a stream derived from (seed, stratum).
std::vector<std::size_t> stratified_order(std::span<const std::size_t> strata, std::span<const std::string> keys,
                                          std::uint64_t seed) {
  std::vector<std::size_t> idx(strata.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (strata[a] != strata[b]) return strata[a] < strata[b];
    return keys[a] < keys[b];
  });
  auto first = idx.begin();
  while (first != idx.end()) {
    const std::size_t s = strata[*first];
    auto last = std::find_if(first, idx.end(), [&](std::size_t i) { return strata[i] != s; });
    Rng rng = make_rng(seed, {s});
    shuffle(first, last, rng);
    first = last;
  }
  return idx;
}

std::string stratum_name(const Dataset& data, std::size_t label_col, std::size_t stratum) {
  const auto& col = data.schema().column(label_col);
  if (!col.categories.empty() && stratum < col.categories.size()) return col.categories[stratum];
  return std::to_string(stratum);
}

void require_class_counts(const Dataset& data, std::size_t label_col, std::span<const std::size_t> strata,
                          std::size_t k, const char* who) {
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t s : strata) ++counts[s];
  for (auto [s, c] : counts) {
    if (c < k) {
      throw Error("data.too_few_in_class", std::string(who) + ": label class '" + stratum_name(data, label_col, s) +
                                               "' has " + std::to_string(c) + " rows, fewer than k=" +
                                               std::to_string(k));
    }
  }
}

}  // namespace

std::vector<std::string> FoldPlan::fold_rows(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignments) {
    if (f == fold) out.push_back(id);
  }
  return out;
}

std::vector<std::string> FoldPlan::training_rows() const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignments) {
    if (f != kHeldOut) out.push_back(id);
  }
  return out;
}

nlohmann::json FoldPlan::to_json() const {
  return {{"k_folds", k_folds},
          {"seed", seed},
          {"stratify_on", stratify_on},
          {"target_fraction", target_fraction},
          {"assignments", assignments}};
}

FoldPlan FoldPlan::from_json(const nlohmann::json& j) {
  FoldPlan p;
  p.k_folds = j.at("k_folds").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.stratify_on = j.at("stratify_on").get<std::string>();
  p.target_fraction = j.at("target_fraction").get<double>();
  p.assignments = j.at("assignments").get<std::map<std::string, int>>();
  return p;
}

std::vector<std::size_t> label_strata(const Dataset& data, std::string_view label_col) {
  const std::size_t col = data.schema().index_of(label_col);
  const auto& column = data.schema().column(col);
  std::vector<double> values(data.n_rows());
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    auto v = data.number(r, col);
    if (!v) throw Error("data.missing_label", "row '" + data.row_id(r) + "' has no value in '" + column.name + "'");
    values[r] = *v;
  }
  const bool binary = std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0 || v == 1.0; });
  std::vector<std::size_t> strata(values.size());
  if (!column.categories.empty() || binary) {
    for (std::size_t r = 0; r < values.size(); ++r) strata[r] = static_cast<std::size_t>(values[r]);
    return strata;
  }
  // Continuous label: quintile bins by rank (ties broken by row order).
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  for (std::size_t rank = 0; rank < order.size(); ++rank) strata[order[rank]] = 5 * rank / order.size();
  return strata;
}

std::vector<int> assign_stratified(std::span<const std::size_t> strata, std::span<const std::string> keys,
                                   std::size_t k, std::uint64_t seed) {
  if (k == 0) throw Error("data.invalid_k", "k must be positive");
  const auto order = stratified_order(strata, keys, seed);
  std::vector<int> folds(strata.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) folds[order[pos]] = static_cast<int>(pos % k);
  return folds;
}

std::vector<std::size_t> stratified_subsample(std::span<const std::size_t> strata, std::span<const std::string> keys,
                                              std::size_t count, std::uint64_t seed) {
  const std::size_t n = strata.size();
  if (count > n) throw Error("data.subsample", "cannot take " + std::to_string(count) + " of " + std::to_string(n));
  const auto order = stratified_order(strata, keys, seed);
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(order[((2 * i + 1) * n) / (2 * count)]);
  return out;
}

FoldPlan stratified_split(const Dataset& data, std::size_t k, std::string_view label_col, std::uint64_t seed) {
  if (k < 2) throw Error("data.invalid_k", "stratified_split needs k >= 2");
  const std::size_t col = data.schema().index_of(label_col);
  const auto strata = label_strata(data, label_col);
  require_class_counts(data, col, strata, k, "stratified_split");
  const auto folds = assign_stratified(strata, data.row_ids(), k, seed);
  FoldPlan plan;
  plan.k_folds = k;
  plan.stratify_on = std::string(label_col);
  plan.target_fraction = 1.0;
  plan.seed = seed;
  for (std::size_t r = 0; r < data.n_rows(); ++r) plan.assignments.emplace(data.row_id(r), folds[r]);
  return plan;
}

FoldPlan adaptation_split(const GroupedDataset& pair, std::size_t k, double target_fraction, std::uint64_t seed) {
  if (!(target_fraction >= 0.0 && target_fraction <= 1.0)) {
    throw Error("data.invalid_fraction", "target_fraction must lie in [0,1], got " + format_double(target_fraction));
  }
  if (k < 2) throw Error("data.invalid_k", "adaptation_split needs k >= 2");
  const auto& schema = pair.schema();
  const std::string label = schema.label_column().name;

  std::vector<std::size_t> chosen;
  std::vector<std::size_t> target_strata;
  if (pair.target) {
    target_strata = label_strata(*pair.target, label);
    if (target_fraction > 0) require_class_counts(*pair.target, schema.label_index(), target_strata, k, "adaptation_split");
    const auto count = static_cast<std::size_t>(std::llround(target_fraction * static_cast<double>(pair.n())));
    chosen = stratified_subsample(target_strata, pair.target->row_ids(), count, derive_seed(seed, {1}));
    std::sort(chosen.begin(), chosen.end());
  }

  const auto source_strata = label_strata(pair.source, label);
  std::size_t n_classes = 0;
  for (auto s : source_strata) n_classes = std::max(n_classes, s + 1);
  for (auto s : target_strata) n_classes = std::max(n_classes, s + 1);

  // Target strata sort first so included target rows are dealt evenly.
  std::vector<std::size_t> strata;
  std::vector<std::string> keys;
  for (std::size_t i : chosen) {
    strata.push_back(target_strata[i]);
    keys.push_back(pair.target->row_id(i));
  }
  for (std::size_t r = 0; r < pair.m(); ++r) {
    strata.push_back(n_classes + source_strata[r]);
    keys.push_back(pair.source.row_id(r));
  }
  const auto folds = assign_stratified(strata, keys, k, derive_seed(seed, {2}));

  FoldPlan plan;
  plan.k_folds = k;
  plan.stratify_on = label;
  plan.target_fraction = target_fraction;
  plan.seed = seed;
  for (std::size_t i = 0; i < keys.size(); ++i) plan.assignments.emplace(keys[i], folds[i]);
  if (plan.assignments.size() != keys.size()) throw Error("data.duplicate_id", "source and target share row ids");
  if (pair.target) {
    std::set<std::size_t> in_train(chosen.begin(), chosen.end());
    for (std::size_t r = 0; r < pair.n(); ++r) {
      if (in_train.contains(r)) continue;
      if (!plan.assignments.emplace(pair.target->row_id(r), FoldPlan::kHeldOut).second) {
        throw Error("data.duplicate_id", "source and target share row id '" + pair.target->row_id(r) + "'");
      }
    }
  }
  return plan;
}

}  // namespace shiftadapt::data
