#include "shiftadapt/mmd/pairwise.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/io.hpp"
#include "shiftadapt/util/parallel.hpp"
#include "shiftadapt/util/rng.hpp"

namespace shiftadapt::mmd {

using Eigen::Index;

namespace {

// Bandwidth from at most this many pooled points (seeded subsample).
constexpr std::size_t kBandwidthPoints = 1000;

Samples columns(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
  Samples s(m.rows(), static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) s.col(static_cast<Index>(i)) = m.col(static_cast<Index>(idx[i]));
  return s;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  shuffle(all.begin(), all.end(), rng);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

std::string DistanceMatrix::to_csv() const {
  std::ostringstream out;
  out << "group";
  for (const auto& g : groups) out << ',' << csv_quote(g);
  out << '\n';
  for (std::size_t i = 0; i < groups.size(); ++i) {
    out << csv_quote(groups[i]);
    for (std::size_t j = 0; j < groups.size(); ++j) out << ',' << format_double(values(static_cast<Index>(i), static_cast<Index>(j)));
    out << '\n';
  }
  return out.str();
}

nlohmann::json DistanceMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < values.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < values.cols(); ++j) row.push_back(values(i, j));
    rows.push_back(std::move(row));
  }
  nlohmann::json ex = nlohmann::json::array();
  for (const auto& e : excluded) ex.push_back({{"group", e.group}, {"reason", e.reason}});
  return {{"attribute", attribute}, {"groups", groups},   {"values", rows},
          {"excluded", ex},         {"kernel", kernel.to_json()}, {"repeats", repeats},
          {"statistic_kind", "mmd2_unbiased"}};
}

DistanceMatrix pairwise_mmd(const data::Dataset& data, const std::string& attribute, const Eigen::MatrixXd& features,
                            const PairwiseOptions& options) {
  if (static_cast<std::size_t>(features.cols()) != data.n_rows()) {
    throw Error("mmd.dimension_mismatch", "one feature column per row is required");
  }
  const std::size_t col = data.schema().index_of(attribute);
  const auto& vocab = data.schema().column(col).categories;
  const std::size_t unknown = data.schema().unknown_index(col);

  std::vector<std::vector<std::size_t>> members(vocab.size());
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    const auto* c = std::get_if<data::Category>(&data.cell(r, col));
    members[c ? c->index : unknown].push_back(r);
  }
  DistanceMatrix out;
  out.attribute = attribute;
  out.repeats = options.repeats;
  std::vector<std::vector<std::size_t>> kept;
  for (std::size_t g = 0; g < vocab.size(); ++g) {
    if (members[g].empty()) continue;
    if (members[g].size() < 2) {
      out.excluded.push_back({vocab[g], "fewer than two rows"});
      continue;
    }
    out.groups.push_back(vocab[g]);
    kept.push_back(members[g]);
  }
  if (kept.size() < 2) throw Error("mmd.too_few_groups", "need at least two groups with two or more rows");

  if (options.kernel) {
    out.kernel = *options.kernel;
  } else {
    std::vector<std::size_t> pool;
    for (const auto& m : kept) pool.insert(pool.end(), m.begin(), m.end());
    std::sort(pool.begin(), pool.end());
    if (pool.size() > kBandwidthPoints) {
      Rng rng = make_rng(options.seed, {0xBA5Eu});
      const auto pick = sample_without_replacement(pool.size(), kBandwidthPoints, rng);
      std::vector<std::size_t> sub;
      for (auto p : pick) sub.push_back(pool[p]);
      pool = std::move(sub);
    }
    out.kernel = Kernel{Kernel::Kind::rbf, median_bandwidth(columns(features, pool))};
  }
  out.kernel.validate();

  const std::size_t k = kept.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) pairs.emplace_back(a, b);
  std::vector<double> stats(pairs.size());
  parallel_for(
      pairs.size(),
      [&](std::size_t p) {
        const auto [a, b] = pairs[p];
        const auto& ga = kept[a];
        const auto& gb = kept[b];
        if (ga.size() == gb.size()) {
          stats[p] = mmd_unbiased(columns(features, ga), columns(features, gb), out.kernel);
          return;
        }
        const bool a_small = ga.size() < gb.size();
        const auto& small = a_small ? ga : gb;
        const auto& large = a_small ? gb : ga;
        const Samples s = columns(features, small);
        double sum = 0;
        for (std::size_t r = 0; r < options.repeats; ++r) {
          Rng rng = make_rng(options.seed, {a, b, r});
          const auto pick = sample_without_replacement(large.size(), small.size(), rng);
          std::vector<std::size_t> rows;
          for (auto i : pick) rows.push_back(large[i]);
          const Samples l = columns(features, rows);
          sum += a_small ? mmd_unbiased(s, l, out.kernel) : mmd_unbiased(l, s, out.kernel);
        }
        stats[p] = sum / static_cast<double>(options.repeats);
      },
      options.jobs);

  out.values = Eigen::MatrixXd::Zero(static_cast<Index>(k), static_cast<Index>(k));
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto a = static_cast<Index>(pairs[p].first), b = static_cast<Index>(pairs[p].second);
    out.values(a, b) = out.values(b, a) = stats[p];
  }
  return out;
}

DistanceMatrix pairwise_mmd(const data::Dataset& data, const std::string& attribute, const FeatureMap& fmap,
                            const PairwiseOptions& options) {
  return pairwise_mmd(data, attribute, fmap.transform(data), options);
}

nlohmann::json Dendrogram::to_json() const {
  std::function<nlohmann::json(int)> node = [&](int i) -> nlohmann::json {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    if (n.left < 0) return {{"leaf", n.leaf}, {"height", 0.0}};
    return {{"left", node(n.left)}, {"right", node(n.right)}, {"height", n.height}, {"members", n.members}};
  };
  return node(root());
}

Dendrogram build_dendrogram(const std::vector<std::string>& names, const Eigen::MatrixXd& distances) {
  const std::size_t k = names.size();
  if (k < 2) throw Error("mmd.too_few_groups", "a dendrogram needs at least two groups");
  if (distances.rows() != static_cast<Index>(k) || distances.cols() != static_cast<Index>(k)) {
    throw Error("mmd.dimension_mismatch", "distance matrix does not match the group list");
  }
  Dendrogram d;
  std::vector<std::vector<std::size_t>> leaves;  // original indices per node
  std::vector<int> active;
  for (std::size_t i = 0; i < k; ++i) {
    d.nodes.push_back({-1, -1, 0.0, names[i], {names[i]}});
    leaves.push_back({i});
    active.push_back(static_cast<int>(i));
  }
  auto linkage = [&](int a, int b) {
    double s = 0;
    for (auto i : leaves[static_cast<std::size_t>(a)])
      for (auto j : leaves[static_cast<std::size_t>(b)]) s += distances(static_cast<Index>(i), static_cast<Index>(j));
    return s / static_cast<double>(leaves[static_cast<std::size_t>(a)].size() * leaves[static_cast<std::size_t>(b)].size());
  };
  while (active.size() > 1) {
    std::size_t best_a = 0, best_b = 1;
    double best = linkage(active[0], active[1]);
    for (std::size_t a = 0; a < active.size(); ++a) {
      for (std::size_t b = a + 1; b < active.size(); ++b) {
        const double l = linkage(active[a], active[b]);
        if (l < best) {
          best = l;
          best_a = a;
          best_b = b;
        }
      }
    }
    const int left = active[best_a], right = active[best_b];
    DendrogramNode n{left, right, best, "", {}};
    auto members = leaves[static_cast<std::size_t>(left)];
    const auto& rm = leaves[static_cast<std::size_t>(right)];
    members.insert(members.end(), rm.begin(), rm.end());
    for (auto i : members) n.members.push_back(names[i]);
    d.nodes.push_back(std::move(n));
    leaves.push_back(std::move(members));
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_b));
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_a));
    active.push_back(static_cast<int>(d.nodes.size()) - 1);
  }
  return d;
}

Dendrogram build_dendrogram(const DistanceMatrix& d) { return build_dendrogram(d.groups, d.values); }

}  // namespace shiftadapt::mmd
