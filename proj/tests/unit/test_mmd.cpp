#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include "shiftadapt/mmd/feature_map.hpp"
#include "shiftadapt/mmd/mmd.hpp"
#include "shiftadapt/mmd/pairwise.hpp"
#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/rng.hpp"

using namespace shiftadapt;
using namespace shiftadapt::mmd;
using Eigen::MatrixXd;

namespace {

// Direct transcription of the i != j double sum.
double brute_mmd(const MatrixXd& x, const MatrixXd& y, const Kernel& k) {
  const auto n = x.cols();
  double s = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) s += k(x.col(i), x.col(j)) + k(y.col(i), y.col(j)) - k(x.col(i), y.col(j)) - k(x.col(j), y.col(i));
  return s / static_cast<double>(n * n - n);
}

MatrixXd gaussian(Rng& rng, Eigen::Index d, Eigen::Index n, double mu) {
  MatrixXd m(d, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < d; ++i) m(i, j) = (i == 0 ? mu : 0.0) + standard_normal(rng);
  return m;
}

MatrixXd row(std::initializer_list<double> v) {
  MatrixXd m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

const Kernel kLinear{Kernel::Kind::linear, 1.0};

// Canonical form of a dendrogram: multiset of (sorted members, height).
std::multiset<std::pair<std::vector<std::string>, double>> canonical(const Dendrogram& d) {
  std::multiset<std::pair<std::vector<std::string>, double>> out;
  for (const auto& n : d.nodes) {
    auto m = n.members;
    std::sort(m.begin(), m.end());
    out.insert({m, n.height});
  }
  return out;
}

data::Dataset grouped_blobs(std::size_t n, double sep, std::uint64_t seed, bool shuffle_labels, const std::string& prefix) {
  using namespace data;
  Rng rng(seed);
  const FeatureSchema s({{"f0", ColumnKind::continuous, {}},
                         {"f1", ColumnKind::continuous, {}},
                         {"f2", ColumnKind::continuous, {}},
                         {"site", ColumnKind::group, {"A", "B"}},
                         {"sex", ColumnKind::group, {"F", "M"}},
                         {"y", ColumnKind::label, {}}});
  std::vector<std::vector<Cell>> rows;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t g = i % 2;
    std::size_t label = g;
    if (shuffle_labels) label = static_cast<std::size_t>(uniform_index(rng, 2));
    const double shift = g == 1 ? sep : 0.0;
    rows.push_back({standard_normal(rng) + shift, standard_normal(rng) - shift, standard_normal(rng),
                    Category{label}, Category{static_cast<std::size_t>(uniform_index(rng, 2))}, 0.0});
    ids.push_back(prefix + std::to_string(i));
  }
  return Dataset(s, rows, ids);
}

FeatureMapConfig small_config() {
  FeatureMapConfig c;
  c.mlp.widths = {16, 16, 16};
  c.optimizer.epochs = 30;
  c.optimizer.batch_size = 32;
  c.optimizer.step_size = 3e-3;
  return c;
}

}  // namespace

TEST_CASE("mmd linear kernel hand example") {
  CHECK(mmd_unbiased(row({0, 2}), row({1, 3}), kLinear) == 1.0);
}

TEST_CASE("mmd of identical samples is exactly zero and swap symmetric") {
  Rng rng(1);
  const MatrixXd x = gaussian(rng, 3, 25, 0.0);
  const MatrixXd y = gaussian(rng, 3, 25, 0.7);
  for (const Kernel& k : {kLinear, Kernel{Kernel::Kind::rbf, 1.3}}) {
    CHECK(mmd_unbiased(x, x, k) == 0.0);
    CHECK(mmd_unbiased(x, y, k) == mmd_unbiased(y, x, k));
    CHECK(std::abs(mmd_unbiased(x, y, k) - brute_mmd(x, y, k)) < 1e-12);
  }
}

TEST_CASE("mmd vanishes as the rbf bandwidth grows") {
  Rng rng(2);
  const MatrixXd x = gaussian(rng, 2, 10, 0.0), y = gaussian(rng, 2, 10, 3.0);
  double prev = mmd_unbiased(x, y, {Kernel::Kind::rbf, 1.0});
  for (double bw : {10.0, 100.0, 1e4}) {
    const double s = mmd_unbiased(x, y, {Kernel::Kind::rbf, bw});
    CHECK(std::abs(s) < std::abs(prev));
    prev = s;
  }
  CHECK(std::abs(prev) < 1e-6);
}

TEST_CASE("mmd input validation") {
  CHECK_THROWS_AS(mmd_unbiased(row({1}), row({2}), kLinear), Error);
  CHECK_THROWS_AS(mmd_unbiased(row({1, 2, 3}), row({2, 3}), kLinear), Error);
  CHECK_THROWS_AS(mmd_unbiased(row({1, 2}), row({2, 3}), Kernel{Kernel::Kind::rbf, 0.0}), Error);
}

TEST_CASE("median bandwidth") {
  CHECK(median_bandwidth(row({0, 2})) == 2.0);
  CHECK(median_bandwidth(row({0, 1, 3})) == 2.0);
  CHECK(median_bandwidth(row({0, 0, 5})) == 5.0);
  CHECK(median_bandwidth(row({0, 0, 0, 0, 4})) == 4.0);  // median 0 -> smallest positive distance
  CHECK_THROWS_AS(median_bandwidth(row({1, 1, 1})), Error);
  CHECK_THROWS_AS(median_bandwidth(row({1})), Error);
}

TEST_CASE("permutation p-values follow the rank formula") {
  Rng rng(3);
  const MatrixXd x = gaussian(rng, 1, 15, 0.0), y = gaussian(rng, 1, 15, 0.4);
  const Kernel k{Kernel::Kind::rbf, median_bandwidth((MatrixXd(1, 30) << x, y).finished())};
  const auto r = permutation_test(x, y, k, 199, 42);
  CHECK(r.permutations == 199);
  CHECK(r.n_per_side == 15);

  // Audit: recompute each replica from its own stream.
  MatrixXd pooled(1, 30);
  pooled << x, y;
  const MatrixXd gram = kernel_matrix(pooled, pooled, k);
  std::size_t count = 0;
  for (std::size_t b = 0; b < 199; ++b) {
    Rng rb = make_rng(42, {b});
    std::vector<std::size_t> order(30);
    std::iota(order.begin(), order.end(), 0);
    shiftadapt::shuffle(order.begin(), order.end(), rb);
    const std::vector<std::size_t> px(order.begin(), order.begin() + 15), py(order.begin() + 15, order.end());
    count += mmd_unbiased_from_gram(gram, px, py) >= r.statistic ? 1 : 0;
  }
  CHECK(count == r.exceed_count);
  CHECK(r.p_value == static_cast<double>(1 + count) / 200.0);
  CHECK(r.statistic == doctest::Approx(mmd_unbiased(x, y, k)).epsilon(1e-12));

  const auto again = permutation_test(x, y, k, 199, 42, 1);
  CHECK(again.p_value == r.p_value);
}

TEST_CASE("permutation test extremes") {
  Rng rng(4);
  const MatrixXd x = gaussian(rng, 1, 30, 0.0), y = gaussian(rng, 1, 30, 6.0);
  const Kernel k{Kernel::Kind::rbf, 1.0};
  CHECK(permutation_test(x, y, k, 999, 1).p_value == 1.0 / 1000.0);
  const auto same = permutation_test(x, x, k, 999, 1);
  CHECK(same.statistic == 0.0);
  // The permutation law of the unbiased statistic is centred near 0, so an
  // observed 0 sits mid-distribution rather than at p = 1.
  CHECK(same.p_value > 0.1);
  CHECK_THROWS_AS(permutation_test(x, y, k, 98, 1), Error);
}

TEST_CASE("mmd is unbiased under the null") {
  Rng rng(5);
  const Kernel k{Kernel::Kind::rbf, 1.0};
  const int reps = 2000;
  double sum = 0, sum2 = 0;
  for (int r = 0; r < reps; ++r) {
    const double s = mmd_unbiased(gaussian(rng, 1, 20, 0.0), gaussian(rng, 1, 20, 0.0), k);
    sum += s;
    sum2 += s * s;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum2 / reps - mean * mean) / reps);
  CHECK(std::abs(mean) <= 3 * se);
}

TEST_CASE("mean statistic increases with the mean shift") {
  const Kernel k{Kernel::Kind::rbf, 1.0};
  std::vector<double> mean_stat;
  for (double mu : {0.0, 0.5, 1.0, 2.0}) {
    Rng rng(6);  // paired across shifts
    double s = 0;
    for (int r = 0; r < 200; ++r) s += mmd_unbiased(gaussian(rng, 1, 30, 0.0), gaussian(rng, 1, 30, mu), k);
    mean_stat.push_back(s / 200);
  }
  for (std::size_t i = 1; i < mean_stat.size(); ++i) CHECK(mean_stat[i] > mean_stat[i - 1]);
}

TEST_CASE("dendrogram average linkage") {
  SUBCASE("two groups") {
    MatrixXd d(2, 2);
    d << 0, 0.17, 0.17, 0;
    const auto t = build_dendrogram({"M", "F"}, d);
    REQUIRE(t.nodes.size() == 3);
    CHECK(t.nodes[2].height == 0.17);
  }
  SUBCASE("hand example") {
    MatrixXd d(3, 3);
    d << 0, 1, 4, 1, 0, 4, 4, 4, 0;
    const auto t = build_dendrogram({"A", "B", "C"}, d);
    REQUIRE(t.nodes.size() == 5);
    CHECK(t.nodes[3].height == 1.0);
    CHECK(t.nodes[3].members == std::vector<std::string>{"A", "B"});
    CHECK(t.nodes[4].height == 4.0);
    const auto j = t.to_json();
    CHECK(j.at("height") == 4.0);
  }
  SUBCASE("relabelling gives an isomorphic tree with monotone heights") {
    Rng rng(7);
    const std::vector<std::string> names = {"a", "b", "c", "d", "e", "f"};
    MatrixXd pts = gaussian(rng, 2, 6, 0.0);
    MatrixXd d(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) d(i, j) = (pts.col(i) - pts.col(j)).norm();
    std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    MatrixXd dp(6, 6);
    std::vector<std::string> np(6);
    for (int i = 0; i < 6; ++i) {
      np[static_cast<std::size_t>(i)] = names[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      for (int j = 0; j < 6; ++j) dp(i, j) = d(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    const auto t1 = build_dendrogram(names, d);
    const auto t2 = build_dendrogram(np, dp);
    CHECK(canonical(t1) == canonical(t2));
    for (const auto& n : t1.nodes) {
      if (n.left < 0) continue;
      CHECK(n.height >= t1.nodes[static_cast<std::size_t>(n.left)].height);
      CHECK(n.height >= t1.nodes[static_cast<std::size_t>(n.right)].height);
    }
  }
}

TEST_CASE("pairwise mmd on raw features") {
  using namespace data;
  Rng rng(8);
  const FeatureSchema s({{"x", ColumnKind::continuous, {}}, {"grp", ColumnKind::group, {"A", "B", "C", "D"}},
                         {"y", ColumnKind::label, {}}});
  std::vector<std::vector<Cell>> rows;
  std::vector<std::string> ids;
  const std::vector<double> shift = {0.0, 0.5, 2.0};
  const std::vector<std::size_t> size = {60, 80, 70};
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t i = 0; i < size[g]; ++i) {
      rows.push_back({shift[g] + standard_normal(rng), Category{g}, 0.0});
      ids.push_back("g" + std::to_string(g) + "_" + std::to_string(i));
    }
  rows.push_back({0.0, Category{3}, 0.0});  // singleton group D
  ids.push_back("lonely");
  const Dataset d(s, rows, ids);
  MatrixXd feats(1, static_cast<Eigen::Index>(d.n_rows()));
  for (std::size_t r = 0; r < d.n_rows(); ++r) feats(0, static_cast<Eigen::Index>(r)) = *d.number(r, 0);

  PairwiseOptions opt;
  opt.seed = 3;
  const auto m = pairwise_mmd(d, "grp", feats, opt);
  CHECK(m.groups == std::vector<std::string>{"A", "B", "C"});
  REQUIRE(m.excluded.size() == 1);
  CHECK(m.excluded[0].group == "D");
  CHECK(m.values(0, 1) < m.values(1, 2));
  CHECK(m.values(1, 2) < m.values(0, 2));
  CHECK((m.values - m.values.transpose()).norm() == 0.0);
  CHECK(m.values.diagonal().norm() == 0.0);
  CHECK(pairwise_mmd(d, "grp", feats, opt).values == m.values);

  const auto tree = build_dendrogram(m);
  CHECK(tree.nodes[3].members == std::vector<std::string>{"A", "B"});
  CHECK(m.to_csv().substr(0, 12) == "group,A,B,C\n");
}

TEST_CASE("pairwise mmd of copied equal-size groups is zero") {
  using namespace data;
  Rng rng(9);
  const FeatureSchema s({{"x", ColumnKind::continuous, {}}, {"grp", ColumnKind::group, {"A", "B"}},
                         {"y", ColumnKind::label, {}}});
  std::vector<std::vector<Cell>> rows;
  std::vector<std::string> ids;
  std::vector<double> xs;
  for (int i = 0; i < 20; ++i) xs.push_back(standard_normal(rng));
  for (int g = 0; g < 2; ++g)
    for (int i = 0; i < 20; ++i) {
      rows.push_back({xs[static_cast<std::size_t>(i)], Category{static_cast<std::size_t>(g)}, 0.0});
      ids.push_back(std::to_string(g) + "_" + std::to_string(i));
    }
  const Dataset d(s, rows, ids);
  MatrixXd feats(1, 40);
  for (int r = 0; r < 40; ++r) feats(0, r) = *d.number(static_cast<std::size_t>(r), 0);
  const auto m = pairwise_mmd(d, "grp", feats);
  CHECK(std::abs(m.values(0, 1)) <= 1e-12);
}

TEST_CASE("feature map separates separable groups") {
  const auto train = grouped_blobs(400, 4.0, 1, false, "tr");
  const auto test = grouped_blobs(200, 4.0, 2, false, "te");
  const auto fmap = learn_feature_map(train, {"site"}, small_config());
  const auto pred = fmap.predict_group(test, "site");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == i % 2 ? 1 : 0;
  CHECK(static_cast<double>(correct) / 200.0 >= 0.95);
  CHECK(fmap.transform(test).rows() == 16);
}

TEST_CASE("feature map on shuffled labels is at chance") {
  const auto train = grouped_blobs(400, 4.0, 3, true, "tr");
  const auto test = grouped_blobs(400, 4.0, 4, true, "te");
  const auto fmap = learn_feature_map(train, {"site"}, small_config());
  const auto pred = fmap.predict_group(test, "site");
  const std::size_t site = test.schema().index_of("site");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == std::get<data::Category>(test.cell(i, site)).index ? 1 : 0;
  const double acc = static_cast<double>(correct) / 400.0;
  // 99% binomial interval around 0.5 for 400 trials.
  CHECK(std::abs(acc - 0.5) <= 2.576 * std::sqrt(0.25 / 400.0));
}

TEST_CASE("two attributes share one trunk") {
  const auto d = grouped_blobs(200, 2.0, 5, false, "r");
  const auto one = learn_feature_map(d, {"site"}, small_config());
  const auto two = learn_feature_map(d, {"site", "sex"}, small_config());
  CHECK(one.dimension() == two.dimension());
  CHECK(two.network().architecture().heads.size() == 2);
  CHECK(two.attributes() == std::vector<std::string>{"site", "sex"});
  const auto back = FeatureMap::from_json(nlohmann::json::parse(two.to_json().dump()));
  CHECK(back.transform(d) == two.transform(d));
}

TEST_CASE("single-group attribute is excluded with a record") {
  using namespace data;
  auto d = grouped_blobs(100, 2.0, 6, false, "r");
  // Keep only site A rows: the site attribute degenerates.
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < d.n_rows(); i += 2) keep.push_back(i);
  const auto only_a = d.select(keep);
  const auto fmap = learn_feature_map(only_a, {"site", "sex"}, small_config());
  CHECK(fmap.attributes() == std::vector<std::string>{"sex"});
  REQUIRE(fmap.excluded().size() == 1);
  CHECK(fmap.excluded()[0].attribute == "site");
  CHECK_THROWS_AS(learn_feature_map(only_a, {"site"}, small_config()), Error);
}
