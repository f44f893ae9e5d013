#include "shiftadapt/downstream/secondary.hpp"

#include <cmath>
#include <sstream>

#include "shiftadapt/data/folds.hpp"
#include "shiftadapt/evaluation/metrics.hpp"
#include "shiftadapt/models/features.hpp"
#include "shiftadapt/util/digest.hpp"
#include "shiftadapt/util/error.hpp"
#include "shiftadapt/util/io.hpp"
#include "shiftadapt/util/rng.hpp"

namespace shiftadapt::downstream {

double LdaModel1D::log_odds(double x) const {
  return std::log(prior1 / prior0) + ((x - mean0) * (x - mean0) - (x - mean1) * (x - mean1)) / (2 * variance);
}

double LdaModel1D::posterior(double x) const { return 1.0 / (1.0 + std::exp(-log_odds(x))); }

double LdaModel1D::threshold() const {
  return 0.5 * (mean0 + mean1) + variance * std::log(prior0 / prior1) / (mean1 - mean0);
}

nlohmann::json LdaModel1D::to_json() const {
  nlohmann::json j{{"mean0", mean0}, {"mean1", mean1}, {"prior0", prior0}, {"prior1", prior1}, {"variance", variance}};
  if (mean0 != mean1) j["threshold"] = threshold();
  return j;
}

LdaModel1D lda_fit_1d(std::span<const double> covariate, std::span<const double> labels, PriorPolicy priors) {
  if (covariate.size() != labels.size()) throw Error("downstream.length_mismatch", "covariate and labels differ");
  double n[2] = {0, 0}, sum[2] = {0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) throw Error("downstream.bad_label", "labels must be 0/1");
    const int c = labels[i] == 1.0;
    n[c] += 1;
    sum[c] += covariate[i];
  }
  if (n[0] == 0 || n[1] == 0) throw Error("downstream.single_class", "LDA needs both classes");
  if (n[0] < 2 || n[1] < 2) throw Error("downstream.too_few_rows", "LDA needs at least 2 rows per class");
  LdaModel1D m;
  m.mean0 = sum[0] / n[0];
  m.mean1 = sum[1] / n[1];
  double ss = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double mu = labels[i] == 1.0 ? m.mean1 : m.mean0;
    ss += (covariate[i] - mu) * (covariate[i] - mu);
  }
  m.variance = ss / (n[0] + n[1] - 2);
  if (!(m.variance > 0)) throw Error("downstream.zero_variance", "pooled variance is zero");
  if (priors == PriorPolicy::empirical) {
    m.prior0 = n[0] / (n[0] + n[1]);
    m.prior1 = n[1] / (n[0] + n[1]);
  }
  return m;
}

evaluation::MetricReport secondary_transfer_eval(const models::Model& primary, const data::Dataset& secondary,
                                                 const TransferOptions& opts) {
  if (std::abs(opts.label_fraction * static_cast<double>(opts.folds) - 1.0) > 1e-9)
    throw Error("downstream.bad_fraction", "label_fraction must equal 1/folds");
  const std::string before = sha256_hex(primary.to_json().dump());
  const auto probs = primary.predict(secondary);
  const auto yv = models::label_vector(secondary);
  const std::vector<double> y(yv.data(), yv.data() + yv.size());

  const std::string label = secondary.schema().label_column().name;
  const auto plan = data::stratified_split(secondary, opts.folds, label, derive_seed(opts.seed, {0}));

  evaluation::MetricReport report;
  report.metric = "auc";
  report.setting = "secondary";
  report.model = primary.kind();
  for (std::size_t f = 0; f < opts.folds; ++f) {
    std::vector<double> fit_x, fit_y, test_x, test_y;
    std::vector<std::string> test_ids;
    for (std::size_t i = 0; i < secondary.n_rows(); ++i) {
      if (plan.assignments.at(secondary.row_id(i)) == static_cast<int>(f)) {
        fit_x.push_back(probs[i]);
        fit_y.push_back(y[i]);
      } else {
        test_x.push_back(probs[i]);
        test_y.push_back(y[i]);
        test_ids.push_back(secondary.row_id(i));
      }
    }
    evaluation::FoldResult r;
    r.fold = f;
    r.train_target = fit_x.size();
    r.test_rows = test_x.size();
    r.test_digest = digest_row_ids(test_ids);
    try {
      std::vector<double> scores;
      try {
        const auto lda = lda_fit_1d(fit_x, fit_y, opts.priors);
        for (double x : test_x) scores.push_back(lda.log_odds(x));
      } catch (const Error& e) {
        if (e.code() != "downstream.zero_variance") throw;
        // Constant covariate: every score ties.
        scores.assign(test_x.size(), 0.0);
        r.note = "constant covariate; all scores tied";
      }
      r.value = evaluation::auc(scores, test_y);
    } catch (const Error& e) {
      r.undefined_reason = e.what();
    }
    report.folds.push_back(std::move(r));
  }
  report.summarize();
  const std::string after = sha256_hex(primary.to_json().dump());
  if (before != after) throw Error("downstream.model_mutated", "primary model changed during evaluation");
  report.sections["primary_digest"] = before;
  return report;
}

std::vector<BarRow> bar_analysis(const std::vector<BarRecord>& records, const std::vector<Covariate>& covariates) {
  std::vector<BarRow> out;
  for (const auto& c : covariates) {
    if (c.values.size() != records.size())
      throw Error("downstream.length_mismatch", "covariate '" + c.name + "' does not match the records");
    BarRow row;
    row.name = c.name;
    row.expected_sign = c.expected_sign;
    std::vector<double> res, cov;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (std::isnan(c.values[i])) continue;
      res.push_back(records[i].residual());
      cov.push_back(c.values[i]);
    }
    row.n = res.size();
    try {
      const auto corr = evaluation::pearson(res, cov);
      row.r = corr.r;
      row.p_value = corr.p_value;
      if (c.expected_sign) row.sign_matches = (corr.r > 0 ? 1 : (corr.r < 0 ? -1 : 0)) == *c.expected_sign;
    } catch (const Error& e) {
      row.undefined_reason = e.what();
    }
    out.push_back(std::move(row));
  }
  return out;
}

nlohmann::json bar_to_json(const std::vector<BarRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json e{{"name", r.name}, {"n", r.n}};
    e["r"] = r.r ? nlohmann::json(*r.r) : nlohmann::json(nullptr);
    e["p_value"] = r.p_value ? nlohmann::json(*r.p_value) : nlohmann::json(nullptr);
    if (!r.undefined_reason.empty()) e["undefined_reason"] = r.undefined_reason;
    if (r.expected_sign) e["expected_sign"] = *r.expected_sign;
    if (r.sign_matches) e["sign_matches"] = *r.sign_matches;
    j.push_back(std::move(e));
  }
  return j;
}

std::string bar_to_csv(const std::vector<BarRow>& rows) {
  std::ostringstream out;
  out << "covariate,n,r,p_value,undefined\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.n << ',' << (r.r ? format_double(*r.r) : "") << ','
        << (r.p_value ? format_double(*r.p_value) : "") << ',' << (r.r ? "0" : "1") << '\n';
  }
  return out.str();
}

}  // namespace shiftadapt::downstream
