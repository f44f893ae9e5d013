#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "../support/fixtures.hpp"
#include "shiftadapt/evaluation/experiment.hpp"
#include "shiftadapt/evaluation/metrics.hpp"
#include "shiftadapt/util/digest.hpp"
#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/rng.hpp"

using namespace shiftadapt;
using namespace shiftadapt::evaluation;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using V = std::vector<double>;

namespace {

// Counts correctly ordered positive/negative pairs directly.
double auc_oracle(const V& s, const V& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / den;
}

}  // namespace

TEST_CASE("auc examples") {
  CHECK(auc(V{0.1, 0.2, 0.8, 0.9}, V{0, 0, 1, 1}) == 1.0);
  CHECK(auc(V{0.5, 0.5, 0.5, 0.5}, V{0, 1, 0, 1}) == 0.5);
  CHECK(auc(V{0.1, 0.4, 0.35, 0.8}, V{0, 0, 1, 1}) == 0.75);
  CHECK_THROWS_AS(auc(V{0.1, 0.2}, V{1, 1}), UndefinedMetric);
}

TEST_CASE("auc matches pair counting with ties and is rank invariant") {
  auto rng = make_rng(3, {});
  for (int rep = 0; rep < 20; ++rep) {
    V s(40), y(40);
    for (std::size_t i = 0; i < 40; ++i) {
      s[i] = std::round(4 * uniform01(rng)) / 4;
      y[i] = static_cast<double>(i % 3 == 0);
    }
    CHECK(auc(s, y) == auc_oracle(s, y));
    V t(40);
    std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::exp(3 * v) - 7; });
    CHECK(auc(t, y) == auc(s, y));
  }
}

TEST_CASE("mae examples") {
  CHECK(mae(V{1, 2, 3}, V{1, 2, 3}) == 0.0);
  CHECK(mae(V{1, 3}, V{2, 2}) == 1.0);
  CHECK(mae(V{5}, V{2}) == 3.0);
  CHECK_THROWS_AS(mae(V{1, 2}, V{1}), Error);
}

TEST_CASE("dpd examples") {
  using S = std::vector<std::string>;
  CHECK(dpd(std::vector<int>{1, 0, 1, 0}, S{"a", "a", "b", "b"}).value == 0.0);
  CHECK(dpd(std::vector<int>{1, 1, 1, 0, 1, 0, 0, 0}, S{"a", "a", "a", "a", "b", "b", "b", "b"}).value == 0.5);
  std::vector<int> p;
  S g;
  for (int i = 0; i < 10; ++i) {
    p.push_back(i < 2), g.push_back("x");
    p.push_back(i < 5), g.push_back("y");
    p.push_back(i < 9), g.push_back("z");
  }
  CHECK(dpd(p, g).value == doctest::Approx(0.7).epsilon(1e-15));
  const auto r = dpd(std::vector<int>{1, 0}, S{"a", "b"}, {"a", "b", "c"});
  CHECK(r.excluded == S{"c"});
  CHECK_THROWS_AS(dpd(std::vector<int>{1, 0}, S{"a", "a"}), UndefinedMetric);
}

TEST_CASE("eod examples") {
  using S = std::vector<std::string>;
  // Same confusion pattern in both groups.
  CHECK(eod(std::vector<int>{1, 0, 1, 0}, V{1, 0, 1, 0}, S{"a", "a", "b", "b"}).value == 0.0);
  // a: TPR 1/2, FPR 0; b: TPR 1, FPR 1/2.
  const auto r = eod(std::vector<int>{1, 0, 0, 0, 1, 1, 1, 0}, V{1, 1, 0, 0, 1, 1, 0, 0},
                     S{"a", "a", "a", "a", "b", "b", "b", "b"});
  CHECK(r.value == 0.5);
  CHECK(r.true_positive_rate.at("a") == 0.5);
  CHECK(r.false_positive_rate.at("b") == 0.5);
  CHECK_THROWS_AS(eod(std::vector<int>{1, 0}, V{1, 0}, S{"a", "a"}), UndefinedMetric);
  const auto ex = eod(std::vector<int>{1, 0, 1, 0, 1}, V{1, 0, 1, 0, 1}, S{"a", "a", "b", "b", "c"});
  CHECK(ex.excluded == S{"c"});
}

TEST_CASE("pearson examples") {
  CHECK(pearson(V{1, 2, 3, 4}, V{3, 5, 7, 9}).r == 1.0);
  CHECK(pearson(V{1, 2, 3, 4}, V{-1, -2, -3, -4}).r == -1.0);
  const auto c = pearson(V{1, 2, 3}, V{1, 3, 2});
  CHECK(c.r == doctest::Approx(0.5).epsilon(1e-15));
  // One degree of freedom: t = 1/sqrt(3), p = 1 - 2 atan(t)/pi = 2/3.
  CHECK(c.p_value == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(pearson(V{1, 1, 1}, V{1, 2, 3}), UndefinedMetric);
  CHECK_THROWS_AS(pearson(V{1, 2}, V{1, 2}), Error);
}

TEST_CASE("paired significance degenerate cases") {
  const auto same = paired_significance(V{0.8, 0.9, 0.85}, V{0.8, 0.9, 0.85});
  CHECK(same.degenerate);
  CHECK(same.p_value == 1.0);
  const auto shifted = paired_significance(V{0.5, 0.75, 1.0}, V{0.25, 0.5, 0.75});
  CHECK(shifted.degenerate);
  CHECK(shifted.p_value == 0.0);
}

TEST_CASE("paired t-test agrees with a permutation oracle") {
  const V a{0.9, 0.92, 0.91, 0.93, 0.90}, b{0.85, 0.86, 0.84, 0.88, 0.85};
  const auto t = paired_significance(a, b);
  CHECK_FALSE(t.degenerate);
  // Exact permutation test of the difference in means over all 5-of-10 splits.
  V pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const double observed = std::abs(mean(a) - mean(b));
  int extreme = 0, total = 0;
  for (int mask = 0; mask < 1024; ++mask) {
    if (__builtin_popcount(static_cast<unsigned>(mask)) != 5) continue;
    double sa = 0, sb = 0;
    for (int i = 0; i < 10; ++i) ((mask >> i) & 1 ? sa : sb) += pooled[static_cast<std::size_t>(i)];
    ++total;
    if (std::abs(sa - sb) / 5 >= observed - 1e-12) ++extreme;
  }
  const double perm_p = static_cast<double>(extreme) / total;
  CHECK((t.p_value <= 0.01) == (perm_p <= 0.01));
  CHECK(t.p_value < 0.01);

  // Hand t statistic: mean 0.056, sd of differences sqrt(0.00008).
  CHECK(t.t == doctest::Approx(0.056 / (std::sqrt(0.00008) / std::sqrt(5.0))).epsilon(1e-10));
}

TEST_CASE("alpha grid contents") {
  const auto g = alpha_grid();
  REQUIRE(g.size() == 10);
  CHECK(g.front() == 0.5);
  CHECK(g[1] == 2.0 / 3.0);
  CHECK(g.back() == 10.0 / 11.0);
}

namespace {

data::Dataset population(std::size_t n, std::uint64_t seed, double shift, double flip, const std::string& prefix) {
  auto rng = make_rng(seed, {});
  MatrixXd x(n, 3);
  VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < 3; ++j) x(r, j) = standard_normal(rng) + (j == 1 ? shift : 0.0);
    const double z = flip * 2.0 * x(r, 0) + x(r, 2) + 0.3 * standard_normal(rng);
    y(r) = z > 0 ? 1.0 : 0.0;
  }
  return fixtures::numeric_dataset(x, y, prefix);
}

ExperimentSpec linear_spec(TargetShare share, AlphaPolicy::Kind kind, double value = 0.0) {
  ExperimentSpec spec;
  spec.share = share;
  spec.candidates = {models::LearnerSpec{models::LinearSpec{}}};
  spec.alpha.kind = kind;
  spec.alpha.value = value;
  spec.train.regularizer.strength = 1e-2;
  spec.train.optimizer.kind = models::OptimizerKind::lbfgs;
  spec.train.optimizer.batch_size = 0;
  spec.train.optimizer.step_size = 1.0;
  spec.train.optimizer.epochs = 100;
  spec.train.optimizer.tolerance = 1e-8;
  spec.seed = 5;
  spec.source_group = "S";
  spec.target_group = "T";
  return spec;
}

}  // namespace

TEST_CASE("zero target share scores every target row once") {
  const data::GroupedDataset pair(population(80, 1, 0.0, 1.0, "s"), population(50, 2, 0.5, 1.0, "t"));
  const auto r = nested_cv(linear_spec(TargetShare::none, AlphaPolicy::Kind::fixed), pair);
  REQUIRE(r.folds.size() == 1);
  CHECK(r.folds[0].test_rows == 50);
  CHECK(r.folds[0].train_target == 0);
  CHECK(r.folds[0].alpha == 0.0);
  CHECK(r.defined == 1);
  CHECK_THROWS_AS(nested_cv(linear_spec(TargetShare::none, AlphaPolicy::Kind::grid), pair), Error);
}

TEST_CASE("fold bookkeeping for every target share") {
  const data::GroupedDataset pair(population(100, 3, 0.0, 1.0, "s"), population(100, 4, 0.5, 1.0, "t"));
  SUBCASE("fifth") {
    const auto r = nested_cv(linear_spec(TargetShare::fifth, AlphaPolicy::Kind::fixed, 0.5), pair);
    REQUIRE(r.folds.size() == 5);
    for (const auto& f : r.folds) {
      CHECK(f.train_source == 100);
      CHECK(f.train_target == 20);
      CHECK(f.test_rows == 80);
    }
  }
  SUBCASE("tenth, paper splits") {
    const auto r = nested_cv(linear_spec(TargetShare::tenth, AlphaPolicy::Kind::fixed, 0.5), pair);
    for (const auto& f : r.folds) {
      CHECK(f.train_target == 10);
      CHECK(f.test_rows == 80);
    }
  }
  SUBCASE("tenth, every unused row scored") {
    auto spec = linear_spec(TargetShare::tenth, AlphaPolicy::Kind::fixed, 0.5);
    spec.strict_paper_splits = false;
    for (const auto& f : nested_cv(spec, pair).folds) CHECK(f.test_rows == 90);
  }
  SUBCASE("all folds") {
    const auto r = nested_cv(linear_spec(TargetShare::all_folds, AlphaPolicy::Kind::grid), pair);
    for (const auto& f : r.folds) {
      CHECK(f.train_source == 0);
      CHECK(f.train_target == 80);
      CHECK(f.test_rows == 20);
      CHECK(f.alpha == 1.0);
    }
  }
}

TEST_CASE("test rows never reach model selection") {
  const data::GroupedDataset pair(population(100, 5, 0.0, 1.0, "s"), population(60, 6, 0.5, 1.0, "t"));
  for (auto share : {TargetShare::tenth, TargetShare::fifth, TargetShare::all_folds}) {
    auto spec = linear_spec(share, AlphaPolicy::Kind::fixed, 0.5);
    spec.keep_predictions = true;
    const auto r = nested_cv(spec, pair);
    std::map<std::string, int> tested;
    for (const auto& f : r.folds) {
      CHECK(f.test_digest == digest_row_ids(f.test_row_ids));
      CHECK(f.selection_digest != f.test_digest);
      for (const auto& id : f.test_row_ids) {
        CHECK(id[0] == 't');
        ++tested[id];
      }
    }
    // Each outer fold is scored on the other folds (paper layout) or on itself.
    const int expect = share == TargetShare::all_folds ? 1 : 4;
    if (share != TargetShare::tenth)
      for (const auto& [id, count] : tested) CHECK(count == expect);
  }
}

TEST_CASE("grid search prefers target data under concept shift") {
  // Source labels follow the opposite rule of the target's.
  const data::GroupedDataset pair(population(100, 7, 0.0, -1.0, "s"), population(200, 8, 0.0, 1.0, "t"));
  const auto r = nested_cv(linear_spec(TargetShare::fifth, AlphaPolicy::Kind::grid), pair);
  for (const auto& f : r.folds) {
    CHECK(f.alpha >= 0.7);
    CHECK(f.grid.size() == 10);
  }
  CHECK(r.mean > 0.8);
}

TEST_CASE("inner folds without target rows are rejected") {
  const data::GroupedDataset pair(population(60, 9, 0.0, 1.0, "s"), population(40, 10, 0.0, 1.0, "t"));
  try {
    // Four target rows in training cannot fill five inner folds.
    nested_cv(linear_spec(TargetShare::tenth, AlphaPolicy::Kind::grid), pair);
    FAIL("expected a rejection");
  } catch (const Error& e) {
    CHECK(e.code() == "evaluation.empty_target_share");
  }
}

TEST_CASE("single-class test fold is excluded with a record") {
  auto t = population(30, 11, 0.0, 1.0, "t");
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < t.n_rows(); ++i)
    if (*t.number(i, t.schema().label_index()) == 1.0) pos.push_back(i);
  const data::GroupedDataset pair(population(60, 12, 0.0, 1.0, "s"), t.select(pos));
  const auto r = nested_cv(linear_spec(TargetShare::none, AlphaPolicy::Kind::fixed), pair);
  CHECK_FALSE(r.folds[0].value.has_value());
  CHECK_FALSE(r.folds[0].undefined_reason.empty());
  CHECK(r.defined == 0);
  CHECK(r.to_json()["folds"][0]["value"].is_null());
}

TEST_CASE("theory policy picks an alpha in range") {
  const data::GroupedDataset pair(population(100, 13, 0.0, 1.0, "s"), population(60, 14, 1.5, 1.0, "t"));
  const auto r = nested_cv(linear_spec(TargetShare::fifth, AlphaPolicy::Kind::theory), pair);
  for (const auto& f : r.folds) {
    CHECK(f.alpha >= 0.0);
    CHECK(f.alpha <= 1.0);
  }
}

TEST_CASE("reports are reproducible and comparable") {
  const data::GroupedDataset pair(population(80, 15, 0.0, 1.0, "s"), population(60, 16, 0.5, 1.0, "t"));
  const auto spec = linear_spec(TargetShare::fifth, AlphaPolicy::Kind::grid);
  auto a = nested_cv(spec, pair);
  const auto b = nested_cv(spec, pair);
  CHECK(a.to_json().dump() == b.to_json().dump());

  auto base = nested_cv(linear_spec(TargetShare::fifth, AlphaPolicy::Kind::fixed, 0.0), pair);
  compare(a, base, "alpha0");
  REQUIRE(a.comparisons.size() == 1);
  CHECK(a.comparisons[0].pairs == 5);

  const auto v = a.fold_values();
  CHECK(a.mean == doctest::Approx(std::accumulate(v.begin(), v.end(), 0.0) / v.size()).epsilon(1e-15));
  const std::string row = a.csv_row();
  CHECK(row.rfind("S,T,0.2,linear,auc,", 0) == 0);
  const std::string header = MetricReport::csv_header();
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
}

TEST_CASE("experiment spec json round trip") {
  auto spec = linear_spec(TargetShare::tenth, AlphaPolicy::Kind::theory);
  spec.candidates.push_back(models::LearnerSpec{models::KnnSpec{7}});
  const auto back = ExperimentSpec::from_json(spec.to_json());
  CHECK(back.to_json() == spec.to_json());
}
