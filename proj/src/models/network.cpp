#include "shiftadapt/models/network.hpp"

#include <cmath>

#include "shiftadapt/util/error.hpp"

namespace shiftadapt::models {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index idx(std::size_t v) { return static_cast<Index>(v); }

std::string head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::logistic: return "logistic";
    case HeadKind::squared: return "squared";
    case HeadKind::softmax: return "softmax";
  }
  return "";
}

HeadKind head_kind_from(const std::string& s) {
  if (s == "logistic") return HeadKind::logistic;
  if (s == "squared") return HeadKind::squared;
  if (s == "softmax") return HeadKind::softmax;
  throw Error("models.bad_config", "unknown head kind '" + s + "'");
}

}  // namespace

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

nlohmann::json MlpConfig::to_json() const {
  return {{"widths", widths}, {"dropout", dropout}, {"batch_norm", batch_norm}, {"skip", skip},
          {"embedding_dims", embedding_dims}};
}

MlpConfig MlpConfig::from_json(const nlohmann::json& j) {
  MlpConfig c;
  if (j.contains("widths")) c.widths = j.at("widths").get<std::vector<std::size_t>>();
  if (j.contains("dropout")) c.dropout = j.at("dropout").get<std::vector<double>>();
  if (j.contains("batch_norm")) c.batch_norm = j.at("batch_norm").get<std::vector<bool>>();
  if (j.contains("skip")) c.skip = j.at("skip").get<bool>();
  if (j.contains("embedding_dims")) c.embedding_dims = j.at("embedding_dims").get<std::vector<std::size_t>>();
  return c;
}

std::size_t Architecture::input_width() const {
  std::size_t w = layout.numeric.size();
  if (one_hot) return w + layout.one_hot_width();
  for (auto e : embedding_dims) w += e;
  return w;
}

nlohmann::json Architecture::to_json() const {
  nlohmann::json heads_json = nlohmann::json::array();
  for (const auto& h : heads) heads_json.push_back({{"kind", head_kind_name(h.kind)}, {"classes", h.classes}});
  return {{"layout", layout.to_json()},   {"one_hot", one_hot},       {"embedding_dims", embedding_dims},
          {"widths", widths},             {"dropout", dropout},       {"batch_norm", batch_norm},
          {"skip", skip},                 {"heads", heads_json},      {"bn_momentum", bn_momentum},
          {"bn_eps", bn_eps}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  Architecture a;
  a.layout = FeatureLayout::from_json(j.at("layout"));
  a.one_hot = j.at("one_hot").get<bool>();
  a.embedding_dims = j.at("embedding_dims").get<std::vector<std::size_t>>();
  a.widths = j.at("widths").get<std::vector<std::size_t>>();
  a.dropout = j.at("dropout").get<std::vector<double>>();
  a.batch_norm = j.at("batch_norm").get<std::vector<bool>>();
  a.skip = j.at("skip").get<bool>();
  for (const auto& h : j.at("heads")) {
    a.heads.push_back({head_kind_from(h.at("kind").get<std::string>()), h.at("classes").get<std::size_t>()});
  }
  a.bn_momentum = j.at("bn_momentum").get<double>();
  a.bn_eps = j.at("bn_eps").get<double>();
  return a;
}

Architecture linear_architecture(const FeatureLayout& layout, HeadSpec head) {
  Architecture a;
  a.layout = layout;
  a.one_hot = true;
  a.heads = {head};
  return a;
}

Architecture mlp_architecture(const FeatureLayout& layout, const MlpConfig& config, std::vector<HeadSpec> heads) {
  const std::size_t L = config.widths.size();
  if (config.dropout.size() != L || config.batch_norm.size() != L) {
    throw Error("models.bad_config", "dropout and batch_norm need one entry per hidden layer");
  }
  for (std::size_t l = 0; l < L; ++l) {
    if (config.widths[l] < 1) throw Error("models.bad_config", "hidden widths must be >= 1");
    if (!(config.dropout[l] >= 0 && config.dropout[l] < 1)) throw Error("models.bad_config", "dropout must be in [0,1)");
  }
  if (config.skip && L >= 2 && config.widths.front() != config.widths.back()) {
    throw Error("models.bad_config", "skip connection needs equal first and last hidden widths");
  }
  Architecture a;
  a.layout = layout;
  a.widths = config.widths;
  a.dropout = config.dropout;
  a.batch_norm = config.batch_norm;
  a.skip = config.skip && L >= 2;
  a.heads = std::move(heads);
  if (config.embedding_dims.empty()) {
    for (auto v : layout.vocab_sizes) {
      a.embedding_dims.push_back(static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(v)))));
    }
  } else {
    if (config.embedding_dims.size() != layout.categorical.size()) {
      throw Error("models.bad_config", "one embedding dimension per categorical column required");
    }
    a.embedding_dims = config.embedding_dims;
  }
  return a;
}

std::vector<ParamBlock> param_layout(const Architecture& arch) {
  std::vector<ParamBlock> blocks;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t r, std::size_t c) {
    blocks.push_back({std::move(name), r, c, offset});
    offset += r * c;
  };
  if (!arch.one_hot) {
    for (std::size_t j = 0; j < arch.layout.categorical.size(); ++j) {
      add("embedding." + arch.layout.categorical[j], arch.layout.vocab_sizes[j], arch.embedding_dims[j]);
    }
  }
  std::size_t in = arch.input_width();
  for (std::size_t l = 0; l < arch.widths.size(); ++l) {
    const std::string p = "layer" + std::to_string(l);
    add(p + ".weight", arch.widths[l], in);
    if (arch.batch_norm[l]) {
      add(p + ".gamma", arch.widths[l], 1);
      add(p + ".beta", arch.widths[l], 1);
    } else {
      add(p + ".bias", arch.widths[l], 1);
    }
    in = arch.widths[l];
  }
  for (std::size_t h = 0; h < arch.heads.size(); ++h) {
    const std::string p = "head" + std::to_string(h);
    add(p + ".weight", arch.heads[h].classes, in);
    add(p + ".bias", arch.heads[h].classes, 1);
  }
  return blocks;
}

Network::Network(Architecture arch) : arch_(std::move(arch)), blocks_(param_layout(arch_)) {
  if (arch_.heads.empty()) throw Error("models.bad_config", "network needs at least one head");
  for (const auto& h : arch_.heads) {
    if (h.kind != HeadKind::softmax && h.classes != 1) throw Error("models.bad_config", "scalar head with width != 1");
    if (h.kind == HeadKind::softmax && h.classes < 2) throw Error("models.bad_config", "softmax head needs >= 2 classes");
  }
  const auto& last = blocks_.back();
  theta_ = VectorXd::Zero(idx(last.offset + last.rows * last.cols));
  for (std::size_t l = 0; l < arch_.widths.size(); ++l) {
    running_mean_.push_back(VectorXd::Zero(idx(arch_.widths[l])));
    running_var_.push_back(VectorXd::Ones(idx(arch_.widths[l])));
  }
  // Unit BN scale so a zero-initialized network is still well defined.
  for (const auto& b : blocks_) {
    if (b.name.ends_with(".gamma")) theta_.segment(idx(b.offset), idx(b.rows)).setOnes();
  }
}

namespace {

struct BlockRef {
  const ParamBlock* block;
  Eigen::Map<const MatrixXd> operator()(const VectorXd& theta) const {
    return {theta.data() + block->offset, idx(block->rows), idx(block->cols)};
  }
  Eigen::Map<MatrixXd> operator()(VectorXd& theta) const {
    return {theta.data() + block->offset, idx(block->rows), idx(block->cols)};
  }
};

// Blocks grouped by role, resolved once per call.
struct Blocks {
  std::vector<BlockRef> embedding, weight, gamma, beta, bias, head_w, head_b;
};

Blocks resolve(const Architecture& arch, const std::vector<ParamBlock>& blocks) {
  Blocks r;
  std::size_t k = 0;
  if (!arch.one_hot) {
    for (std::size_t j = 0; j < arch.layout.categorical.size(); ++j) r.embedding.push_back({&blocks[k++]});
  }
  for (std::size_t l = 0; l < arch.widths.size(); ++l) {
    r.weight.push_back({&blocks[k++]});
    if (arch.batch_norm[l]) {
      r.gamma.push_back({&blocks[k++]});
      r.beta.push_back({&blocks[k++]});
      r.bias.push_back({nullptr});
    } else {
      r.gamma.push_back({nullptr});
      r.beta.push_back({nullptr});
      r.bias.push_back({&blocks[k++]});
    }
  }
  for (std::size_t h = 0; h < arch.heads.size(); ++h) {
    r.head_w.push_back({&blocks[k++]});
    r.head_b.push_back({&blocks[k++]});
  }
  return r;
}

}  // namespace

struct Network::Trace {
  MatrixXd input;
  std::vector<MatrixXd> xhat;      // BN-normalized pre-activations
  std::vector<VectorXd> inv_std;   // BN 1/sqrt(var + eps)
  std::vector<VectorXd> batch_mean, batch_var;
  std::vector<MatrixXd> pre;       // input to the ReLU
  std::vector<MatrixXd> mask;      // scaled dropout mask, empty when unused
  std::vector<MatrixXd> hidden;    // layer outputs (last one includes the skip)
  std::vector<MatrixXd> out;
};

void Network::initialize(Rng& rng) {
  const Blocks b = resolve(arch_, blocks_);
  auto fill = [&](const BlockRef& ref, double scale) {
    auto m = ref(theta_);
    for (Index c = 0; c < m.cols(); ++c)
      for (Index r = 0; r < m.rows(); ++r) m(r, c) = scale * standard_normal(rng);
  };
  for (const auto& e : b.embedding) fill(e, 0.1);
  for (const auto& w : b.weight) fill(w, std::sqrt(2.0 / static_cast<double>(w.block->cols)));
  for (const auto& w : b.head_w) {
    fill(w, std::sqrt(2.0 / static_cast<double>(w.block->cols + w.block->rows)));
  }
  for (const auto& g : b.gamma) if (g.block) g(theta_).setOnes();
  for (const auto& z : b.beta) if (z.block) z(theta_).setZero();
  for (const auto& z : b.bias) if (z.block) z(theta_).setZero();
  for (const auto& z : b.head_b) z(theta_).setZero();
}

void Network::forward(const Features& x, Mode mode, Rng* rng, Trace& t) const {
  const FeatureLayout& layout = arch_.layout;
  if (static_cast<std::size_t>(x.numeric.rows()) != layout.numeric.size() ||
      static_cast<std::size_t>(x.categories.rows()) != layout.categorical.size() || x.vocab_sizes != layout.vocab_sizes) {
    throw Error("models.feature_mismatch", "encoded features do not match the network input layout");
  }
  const Blocks b = resolve(arch_, blocks_);
  const Index n = x.numeric.cols();
  const Index p = x.numeric.rows();

  t.input.setZero(idx(arch_.input_width()), n);
  t.input.topRows(p) = x.numeric;
  Index off = p;
  for (Index j = 0; j < x.categories.rows(); ++j) {
    const auto vocab = static_cast<int>(layout.vocab_sizes[static_cast<std::size_t>(j)]);
    if (arch_.one_hot) {
      for (Index i = 0; i < n; ++i) {
        const int c = x.categories(j, i);
        if (c < 0 || c >= vocab) throw Error("models.feature_mismatch", "category index out of range");
        t.input(off + c, i) = 1.0;
      }
      off += vocab;
    } else {
      const auto E = b.embedding[static_cast<std::size_t>(j)](theta_);
      for (Index i = 0; i < n; ++i) {
        const int c = x.categories(j, i);
        if (c < 0 || c >= vocab) throw Error("models.feature_mismatch", "category index out of range");
        t.input.block(off, i, E.cols(), 1) = E.row(c).transpose();
      }
      off += E.cols();
    }
  }

  const std::size_t L = arch_.widths.size();
  t.xhat.assign(L, {});
  t.inv_std.assign(L, {});
  t.batch_mean.assign(L, {});
  t.batch_var.assign(L, {});
  t.pre.assign(L, {});
  t.mask.assign(L, {});
  t.hidden.assign(L, {});
  const MatrixXd* a = &t.input;
  for (std::size_t l = 0; l < L; ++l) {
    MatrixXd z = b.weight[l](theta_) * *a;
    if (arch_.batch_norm[l]) {
      VectorXd mu, var;
      if (mode == Mode::inference) {
        mu = running_mean_[l];
        var = running_var_[l];
      } else {
        mu = z.rowwise().mean();
        var = (z.colwise() - mu).array().square().rowwise().mean();
      }
      t.batch_mean[l] = mu;
      t.batch_var[l] = var;
      t.inv_std[l] = (var.array() + arch_.bn_eps).rsqrt();
      t.xhat[l] = t.inv_std[l].asDiagonal() * (z.colwise() - mu);
      t.pre[l] = b.gamma[l](theta_).col(0).asDiagonal() * t.xhat[l];
      t.pre[l].colwise() += b.beta[l](theta_).col(0);
    } else {
      z.colwise() += b.bias[l](theta_).col(0);
      t.pre[l] = std::move(z);
    }
    t.hidden[l] = t.pre[l].cwiseMax(0.0);
    if (mode == Mode::train && arch_.dropout[l] > 0) {
      if (!rng) throw Error("models.internal", "dropout requires an RNG");
      const double keep = 1.0 - arch_.dropout[l];
      t.mask[l].resize(t.hidden[l].rows(), t.hidden[l].cols());
      for (Index c = 0; c < t.mask[l].cols(); ++c)
        for (Index r = 0; r < t.mask[l].rows(); ++r) t.mask[l](r, c) = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
      t.hidden[l].array() *= t.mask[l].array();
    }
    if (arch_.skip && l == L - 1) t.hidden[l] += t.hidden[0];
    a = &t.hidden[l];
  }
  t.out.clear();
  for (std::size_t h = 0; h < arch_.heads.size(); ++h) {
    MatrixXd o = b.head_w[h](theta_) * *a;
    o.colwise() += b.head_b[h](theta_).col(0);
    t.out.push_back(std::move(o));
  }
}

double Network::evaluate(const Features& x, const MatrixXd& targets, const VectorXd& weights, Mode mode,
                         VectorXd* grad, Rng* rng, VectorXd* per_sample_loss) {
  const Index n = x.numeric.cols();
  if (targets.rows() != idx(arch_.heads.size()) || targets.cols() != n || weights.size() != n) {
    throw Error("models.internal", "targets/weights do not match the sample count");
  }
  Trace t;
  forward(x, mode, rng, t);
  const Blocks b = resolve(arch_, blocks_);

  if (mode == Mode::train) {
    const double m = arch_.bn_momentum;
    for (std::size_t l = 0; l < arch_.widths.size(); ++l) {
      if (!arch_.batch_norm[l]) continue;
      const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
      running_mean_[l] = m * running_mean_[l] + (1 - m) * t.batch_mean[l];
      running_var_[l] = m * running_var_[l] + (1 - m) * unbias * t.batch_var[l];
    }
  }

  VectorXd losses = VectorXd::Zero(n);
  std::vector<MatrixXd> d_out;
  for (std::size_t h = 0; h < arch_.heads.size(); ++h) {
    const MatrixXd& o = t.out[h];
    MatrixXd d(o.rows(), n);
    for (Index i = 0; i < n; ++i) {
      const double y = targets(idx(h), i);
      switch (arch_.heads[h].kind) {
        case HeadKind::logistic: {
          const double z = o(0, i);
          losses(i) += softplus(z) - y * z;
          d(0, i) = sigmoid(z) - y;
          break;
        }
        case HeadKind::squared: {
          const double r = o(0, i) - y;
          losses(i) += 0.5 * r * r;
          d(0, i) = r;
          break;
        }
        case HeadKind::softmax: {
          const Index cls = static_cast<Index>(y);
          if (cls < 0 || cls >= o.rows()) throw Error("models.bad_label", "class index out of range");
          const double mx = o.col(i).maxCoeff();
          const VectorXd e = (o.col(i).array() - mx).exp();
          const double s = e.sum();
          losses(i) += std::log(s) + mx - o(cls, i);
          d.col(i) = e / s;
          d(cls, i) -= 1.0;
          break;
        }
      }
    }
    d_out.push_back(std::move(d));
  }
  const double total = weights.dot(losses);
  if (per_sample_loss) *per_sample_loss = losses;
  if (!grad) return total;

  grad->setZero(theta_.size());
  const std::size_t L = arch_.widths.size();
  const MatrixXd& last = L == 0 ? t.input : t.hidden[L - 1];
  MatrixXd d_a = MatrixXd::Zero(last.rows(), n);
  for (std::size_t h = 0; h < arch_.heads.size(); ++h) {
    const MatrixXd d = d_out[h] * weights.asDiagonal();
    b.head_w[h](*grad) = d * last.transpose();
    b.head_b[h](*grad) = d.rowwise().sum();
    d_a.noalias() += b.head_w[h](theta_).transpose() * d;
  }

  MatrixXd skip_grad;
  for (std::size_t l = L; l-- > 0;) {
    MatrixXd d_h = std::move(d_a);
    if (l == 0 && skip_grad.size() > 0) d_h += skip_grad;
    if (arch_.skip && l == L - 1) skip_grad = d_h;
    if (t.mask[l].size() > 0) d_h.array() *= t.mask[l].array();
    MatrixXd d_pre = (t.pre[l].array() > 0).select(d_h, 0.0);
    MatrixXd d_z;
    if (arch_.batch_norm[l]) {
      b.gamma[l](*grad) = (d_pre.cwiseProduct(t.xhat[l])).rowwise().sum();
      b.beta[l](*grad) = d_pre.rowwise().sum();
      const MatrixXd d_xhat = b.gamma[l](theta_).col(0).asDiagonal() * d_pre;
      const VectorXd mean_d = d_xhat.rowwise().mean();
      const VectorXd mean_dx = d_xhat.cwiseProduct(t.xhat[l]).rowwise().mean();
      MatrixXd centered = d_xhat.colwise() - mean_d;
      centered -= mean_dx.asDiagonal() * t.xhat[l];
      d_z = t.inv_std[l].asDiagonal() * centered;
    } else {
      b.bias[l](*grad) = d_pre.rowwise().sum();
      d_z = std::move(d_pre);
    }
    const MatrixXd& a_prev = l == 0 ? t.input : t.hidden[l - 1];
    b.weight[l](*grad) = d_z * a_prev.transpose();
    d_a = b.weight[l](theta_).transpose() * d_z;
  }

  if (!arch_.one_hot && !b.embedding.empty()) {
    Index off = x.numeric.rows();
    for (std::size_t j = 0; j < b.embedding.size(); ++j) {
      auto dE = b.embedding[j](*grad);
      for (Index i = 0; i < n; ++i) {
        dE.row(x.categories(idx(j), i)) += d_a.block(off, i, dE.cols(), 1).transpose();
      }
      off += dE.cols();
    }
  }
  return total;
}

std::vector<MatrixXd> Network::outputs(const Features& x, Mode mode) const {
  if (mode == Mode::train) throw Error("models.internal", "outputs() does not support training mode");
  Trace t;
  forward(x, mode, nullptr, t);
  return std::move(t.out);
}

MatrixXd Network::embed(const Features& x) const {
  Trace t;
  forward(x, Mode::inference, nullptr, t);
  return arch_.widths.empty() ? t.input : t.hidden.back();
}

void Network::calibrate_batch_norm(const Features& x) {
  Trace t;
  forward(x, Mode::full, nullptr, t);
  const auto n = static_cast<double>(x.n());
  const double unbias = n > 1 ? n / (n - 1) : 1.0;
  for (std::size_t l = 0; l < arch_.widths.size(); ++l) {
    if (!arch_.batch_norm[l]) continue;
    running_mean_[l] = t.batch_mean[l];
    running_var_[l] = unbias * t.batch_var[l];
  }
}

nlohmann::json Network::to_json() const {
  std::vector<double> theta(theta_.data(), theta_.data() + theta_.size());
  nlohmann::json means = nlohmann::json::array(), vars = nlohmann::json::array();
  for (std::size_t l = 0; l < running_mean_.size(); ++l) {
    means.push_back(std::vector<double>(running_mean_[l].data(), running_mean_[l].data() + running_mean_[l].size()));
    vars.push_back(std::vector<double>(running_var_[l].data(), running_var_[l].data() + running_var_[l].size()));
  }
  return {{"architecture", arch_.to_json()}, {"theta", theta}, {"running_mean", means}, {"running_var", vars}};
}

Network Network::from_json(const nlohmann::json& j) {
  Network net(Architecture::from_json(j.at("architecture")));
  const auto theta = j.at("theta").get<std::vector<double>>();
  if (theta.size() != net.size()) throw Error("models.bad_model", "parameter count does not match the layout");
  net.theta_ = Eigen::Map<const VectorXd>(theta.data(), idx(theta.size()));
  const auto means = j.at("running_mean").get<std::vector<std::vector<double>>>();
  const auto vars = j.at("running_var").get<std::vector<std::vector<double>>>();
  if (means.size() != net.running_mean_.size() || vars.size() != net.running_var_.size()) {
    throw Error("models.bad_model", "batch-norm statistics do not match the layout");
  }
  for (std::size_t l = 0; l < means.size(); ++l) {
    if (means[l].size() != static_cast<std::size_t>(net.running_mean_[l].size()) ||
        vars[l].size() != static_cast<std::size_t>(net.running_var_[l].size())) {
      throw Error("models.bad_model", "batch-norm statistics do not match the layout");
    }
    net.running_mean_[l] = Eigen::Map<const VectorXd>(means[l].data(), idx(means[l].size()));
    net.running_var_[l] = Eigen::Map<const VectorXd>(vars[l].data(), idx(vars[l].size()));
  }
  return net;
}

}  // namespace shiftadapt::models
