#include "shiftadapt/mmd/mmd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/parallel.hpp"
#include "shiftadapt/util/rng.hpp"

namespace shiftadapt::mmd {

using Eigen::Index;

double Kernel::operator()(const Eigen::Ref<const Eigen::VectorXd>& a,
                          const Eigen::Ref<const Eigen::VectorXd>& b) const {
  if (kind == Kind::linear) return a.dot(b);
  double d2 = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const double d = a(i) - b(i);
    d2 += d * d;
  }
  return std::exp(-d2 / (2.0 * bandwidth * bandwidth));
}

void Kernel::validate() const {
  if (kind == Kind::rbf && !(bandwidth > 0 && std::isfinite(bandwidth))) {
    throw Error("mmd.bad_kernel", "rbf bandwidth must be positive and finite");
  }
}

nlohmann::json Kernel::to_json() const {
  if (kind == Kind::linear) return {{"kind", "linear"}};
  return {{"kind", "rbf"}, {"bandwidth", bandwidth}};
}

Eigen::MatrixXd kernel_matrix(const Samples& xs, const Samples& ys, const Kernel& k) {
  k.validate();
  if (xs.rows() != ys.rows()) throw Error("mmd.dimension_mismatch", "samples have different dimensions");
  Eigen::MatrixXd g(xs.cols(), ys.cols());
  for (Index j = 0; j < ys.cols(); ++j)
    for (Index i = 0; i < xs.cols(); ++i) g(i, j) = k(xs.col(i), ys.col(j));
  return g;
}

namespace {

// sum_{i<j} over the paired form; see mmd_unbiased.
double paired_sum(const Eigen::MatrixXd& g, const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
  const std::size_t n = x.size();
  double sxx = 0, syy = 0, cross = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = static_cast<Index>(x[i]), yi = static_cast<Index>(y[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto xj = static_cast<Index>(x[j]), yj = static_cast<Index>(y[j]);
      sxx += g(xi, xj);
      syy += g(yi, yj);
      cross += g(xi, yj) + g(xj, yi);
    }
  }
  const double nn = static_cast<double>(n) * static_cast<double>(n) - static_cast<double>(n);
  return (2.0 * sxx + 2.0 * syy - 2.0 * cross) / nn;
}

void check_sizes(Index nx, Index ny) {
  if (nx != ny) throw Error("mmd.unequal_sizes", "samples must have equal sizes");
  if (nx < 2) throw Error("mmd.too_few_samples", "need at least two samples per side");
}

}  // namespace

double mmd_unbiased(const Samples& xs, const Samples& ys, const Kernel& k) {
  check_sizes(xs.cols(), ys.cols());
  if (xs.rows() != ys.rows()) throw Error("mmd.dimension_mismatch", "samples have different dimensions");
  k.validate();
  const Index n = xs.cols();
  double sxx = 0, syy = 0, cross = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      sxx += k(xs.col(i), xs.col(j));
      syy += k(ys.col(i), ys.col(j));
      cross += k(xs.col(i), ys.col(j)) + k(xs.col(j), ys.col(i));
    }
  }
  const double nn = static_cast<double>(n) * static_cast<double>(n) - static_cast<double>(n);
  return (2.0 * sxx + 2.0 * syy - 2.0 * cross) / nn;
}

double mmd_unbiased_from_gram(const Eigen::MatrixXd& gram, const std::vector<std::size_t>& x_idx,
                              const std::vector<std::size_t>& y_idx) {
  check_sizes(static_cast<Index>(x_idx.size()), static_cast<Index>(y_idx.size()));
  return paired_sum(gram, x_idx, y_idx);
}

double median_bandwidth(const Samples& pooled) {
  const Index n = pooled.cols();
  if (n < 2) throw Error("mmd.too_few_samples", "median bandwidth needs at least two points");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) d.push_back((pooled.col(i) - pooled.col(j)).norm());
  std::vector<double> sorted = d;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  const double median = m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  if (median > 0) return median;
  const auto pos = std::upper_bound(sorted.begin(), sorted.end(), 0.0);
  if (pos == sorted.end()) throw Error("mmd.degenerate", "all points are identical");
  return *pos;
}

nlohmann::json MmdResult::to_json() const {
  return {{"statistic", statistic},
          {"p_value", p_value},
          {"n_per_side", n_per_side},
          {"permutations", permutations},
          {"exceed_count", exceed_count},
          {"statistic_kind", "mmd2_unbiased"}};
}

MmdResult permutation_test(const Samples& xs, const Samples& ys, const Kernel& k, std::size_t permutations,
                           std::uint64_t seed, std::size_t jobs) {
  check_sizes(xs.cols(), ys.cols());
  if (permutations < 99) throw Error("mmd.too_few_permutations", "at least 99 permutations are required");
  const auto n = static_cast<std::size_t>(xs.cols());
  Samples pooled(xs.rows(), xs.cols() + ys.cols());
  pooled << xs, ys;
  const Eigen::MatrixXd gram = kernel_matrix(pooled, pooled, k);

  std::vector<std::size_t> x_idx(n), y_idx(n);
  std::iota(x_idx.begin(), x_idx.end(), 0);
  std::iota(y_idx.begin(), y_idx.end(), n);
  MmdResult r;
  r.statistic = paired_sum(gram, x_idx, y_idx);
  r.n_per_side = n;
  r.permutations = permutations;

  std::vector<double> permuted(permutations);
  parallel_for(
      permutations,
      [&](std::size_t b) {
        Rng rng = make_rng(seed, {b});
        std::vector<std::size_t> order(2 * n);
        std::iota(order.begin(), order.end(), 0);
        shuffle(order.begin(), order.end(), rng);
        const std::vector<std::size_t> px(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
        const std::vector<std::size_t> py(order.begin() + static_cast<std::ptrdiff_t>(n), order.end());
        permuted[b] = paired_sum(gram, px, py);
      },
      jobs);
  r.exceed_count = static_cast<std::size_t>(
      std::count_if(permuted.begin(), permuted.end(), [&](double s) { return s >= r.statistic; }));
  r.p_value = static_cast<double>(1 + r.exceed_count) / static_cast<double>(1 + permutations);
  return r;
}

}  // namespace shiftadapt::mmd
