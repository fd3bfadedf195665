#include "bnnw/weightnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bnnw/counters.hpp"
#include "bnnw/error.hpp"
#include "bnnw/random.hpp"

namespace bnnw {

void WeightNetConfig::validate() const {
  require(width >= 1 && depth >= 1, ErrorCode::InvalidArgument, "width and depth must be >= 1");
  require(clip > 1.0, ErrorCode::InvalidArgument, "clip M must exceed 1");
  require(epochs >= 1, ErrorCode::InvalidArgument, "epochs must be >= 1");
  require(batch >= 2, ErrorCode::InvalidArgument, "batch must be >= 2");
  require(step_size > 0.0 && eps > 0.0, ErrorCode::InvalidArgument, "step size and eps must be > 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::InvalidArgument,
          "Adam betas must lie in [0, 1)");
  require(validation_fraction > 0.0 && validation_fraction < 1.0, ErrorCode::InvalidArgument,
          "validation fraction must lie in (0, 1)");
}

struct WeightNet::Trace {
  std::vector<Eigen::MatrixXd> act;  // act[0] = standardized input, act[l+1] = relu output of layer l
  Eigen::RowVectorXd out;            // pre-transform output z
  Eigen::VectorXd t_std;             // pair path: standardized t per table row
  Eigen::MatrixXd x_std;             // pair path: standardized x, one column per table row
};

WeightNet::WeightNet(Index covariate_dim, int width, int depth, double clip)
    : input_dim_(covariate_dim + 1), width_(width), depth_(depth), clip_(clip) {
  require(covariate_dim >= 1, ErrorCode::InvalidArgument, "covariate dimension must be >= 1");
  require(width >= 1 && depth >= 1, ErrorCode::InvalidArgument, "width and depth must be >= 1");
  require(clip > 1.0, ErrorCode::InvalidArgument, "clip M must exceed 1");
  Index offset = 0, in = input_dim_;
  for (int l = 0; l <= depth; ++l) {
    const Index out = l < depth ? width : 1;
    layers_.push_back({out, in, offset});
    offset += out * in + out;
    in = out;
  }
  params_ = Eigen::VectorXd::Zero(offset);
  shift_ = Eigen::VectorXd::Zero(input_dim_);
  scale_ = Eigen::VectorXd::Ones(input_dim_);
}

void WeightNet::initialize(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "weightnet-init"));
  params_.setZero();
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.cols));
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (Index k = 0; k < layer.rows * layer.cols; ++k) params_[layer.offset + k] = unif(rng);
  }
}

void WeightNet::fit_standardization(const Dataset& data) {
  require(data.dim() == covariate_dim(), ErrorCode::DimensionMismatch, "covariate width mismatch");
  const double n = static_cast<double>(data.size());
  auto fit = [&](Index k, auto column) {
    const double mean = column.mean();
    const double var = (column.array() - mean).square().sum() / n;
    shift_[k] = mean;
    scale_[k] = var > 1e-24 ? std::sqrt(var) : 1.0;
  };
  fit(0, data.t());
  for (Index j = 0; j < data.dim(); ++j) fit(j + 1, data.x().col(j));
}

Eigen::Map<const Eigen::MatrixXd> WeightNet::weight(std::size_t l) const {
  const auto& layer = layers_[l];
  return {params_.data() + layer.offset, layer.rows, layer.cols};
}

Eigen::Map<const Eigen::VectorXd> WeightNet::bias(std::size_t l) const {
  const auto& layer = layers_[l];
  return {params_.data() + layer.offset + layer.rows * layer.cols, layer.rows};
}

void WeightNet::run_hidden(Trace& trace) const {
  for (std::size_t l = 1; l + 1 < layers_.size(); ++l) {
    trace.act[l + 1].noalias() = weight(l) * trace.act[l];
    trace.act[l + 1].colwise() += bias(l);
    trace.act[l + 1] = trace.act[l + 1].cwiseMax(0.0);
  }
  const std::size_t last = layers_.size() - 1;
  trace.out.noalias() = weight(last) * trace.act[last];
  trace.out.array() += bias(last)[0];
}

void WeightNet::run_forward(const Eigen::Ref<const Eigen::MatrixXd>& raw, Trace& trace) const {
  require(raw.rows() == input_dim_, ErrorCode::DimensionMismatch, "input has wrong dimension");
  trace.act.resize(layers_.size());
  trace.act[0] = (raw.colwise() - shift_).array().colwise() / scale_.array();
  trace.act[1].noalias() = weight(0) * trace.act[0];
  trace.act[1].colwise() += bias(0);
  trace.act[1] = trace.act[1].cwiseMax(0.0);
  run_hidden(trace);
}

void WeightNet::run_pairs(const Eigen::VectorXd& t, const RowMatrix& x, std::span<const Index> js,
                          std::span<const Index> ls, Trace& trace) const {
  require(x.cols() == covariate_dim() && t.size() == x.rows(), ErrorCode::DimensionMismatch,
          "pair table has wrong shape");
  require(js.size() == ls.size(), ErrorCode::DimensionMismatch, "pair index lists differ in length");
  const Index d = covariate_dim();
  trace.act.resize(layers_.size());
  trace.t_std = ((t.array() - shift_[0]) / scale_[0]).matrix();
  trace.x_std = (x.transpose().colwise() - shift_.tail(d)).array().colwise() / scale_.tail(d).array();
  const auto w = weight(0);
  const auto b = bias(0);
  const Eigen::MatrixXd by_x = w.rightCols(d) * trace.x_std;
  const Eigen::VectorXd w_t = w.col(0);
  Eigen::MatrixXd& z = trace.act[1];
  z.resize(w.rows(), static_cast<Index>(js.size()));
  for (std::size_t c = 0; c < js.size(); ++c)
    z.col(c) = (by_x.col(ls[c]) + trace.t_std[js[c]] * w_t + b).cwiseMax(0.0);
  run_hidden(trace);
}

Eigen::VectorXd WeightNet::forward(const Eigen::Ref<const Eigen::MatrixXd>& raw) const {
  Trace trace;
  run_forward(raw, trace);
  const double cap = std::log(clip_);
  return trace.out.transpose().array().max(-cap).min(cap).exp();
}

Eigen::VectorXd WeightNet::forward_pairs(const Eigen::VectorXd& t, const RowMatrix& x,
                                         std::span<const Index> js, std::span<const Index> ls) const {
  // Reused across calls: minibatch activations are large enough that fresh allocations dominate.
  thread_local Trace trace;
  run_pairs(t, x, js, ls, trace);
  const double cap = std::log(clip_);
  return trace.out.transpose().array().max(-cap).min(cap).exp();
}

Eigen::VectorXd WeightNet::run_backward(
    Trace& trace, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& coeff,
    Eigen::MatrixXd& first_delta) const {
  const double cap = std::log(clip_);
  const Eigen::VectorXd pi = trace.out.transpose().array().max(-cap).min(cap).exp();
  const Eigen::VectorXd c = coeff(pi);
  require(c.size() == pi.size(), ErrorCode::DimensionMismatch, "coefficient length mismatch");

  // d(pi)/dz = pi strictly inside the clamp band, 0 outside.
  thread_local Eigen::MatrixXd delta, upstream;
  delta.resize(1, pi.size());
  for (Index k = 0; k < pi.size(); ++k) {
    const double z = trace.out[k];
    delta(0, k) = (z > -cap && z < cap) ? c[k] * pi[k] : 0.0;
  }

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  for (std::size_t l = layers_.size(); l-- > 1;) {
    const auto& layer = layers_[l];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + layer.offset, layer.rows, layer.cols);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + layer.offset + layer.rows * layer.cols, layer.rows);
    gw.noalias() = delta * trace.act[l].transpose();
    gb = delta.rowwise().sum();
    upstream.noalias() = weight(l).transpose() * delta;
    delta = (trace.act[l].array() > 0.0).select(upstream, 0.0);
  }
  const auto& layer = layers_[0];
  Eigen::Map<Eigen::VectorXd> gb(grad.data() + layer.offset + layer.rows * layer.cols, layer.rows);
  gb = delta.rowwise().sum();
  first_delta.swap(delta);
  return grad;
}

Eigen::VectorXd WeightNet::backward(
    const Eigen::Ref<const Eigen::MatrixXd>& raw,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& coeff) const {
  Trace trace;
  run_forward(raw, trace);
  Eigen::MatrixXd delta;
  Eigen::VectorXd grad = run_backward(trace, coeff, delta);
  const auto& layer = layers_[0];
  Eigen::Map<Eigen::MatrixXd> gw(grad.data() + layer.offset, layer.rows, layer.cols);
  gw.noalias() = delta * trace.act[0].transpose();
  return grad;
}

Eigen::VectorXd WeightNet::backward_pairs(
    const Eigen::VectorXd& t, const RowMatrix& x, std::span<const Index> js, std::span<const Index> ls,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& coeff) const {
  thread_local Trace trace;
  run_pairs(t, x, js, ls, trace);
  thread_local Eigen::MatrixXd delta;
  Eigen::VectorXd grad = run_backward(trace, coeff, delta);
  // Pairs sharing a row contribute through that row's input only once.
  const Index rows = t.size();
  Eigen::MatrixXd by_x = Eigen::MatrixXd::Zero(delta.rows(), rows);
  Eigen::VectorXd g_t = Eigen::VectorXd::Zero(delta.rows());
  for (std::size_t c = 0; c < js.size(); ++c) {
    by_x.col(ls[c]) += delta.col(c);
    g_t += trace.t_std[js[c]] * delta.col(c);
  }
  const auto& layer = layers_[0];
  Eigen::Map<Eigen::MatrixXd> gw(grad.data() + layer.offset, layer.rows, layer.cols);
  gw.col(0) = g_t;
  gw.rightCols(covariate_dim()).noalias() = by_x * trace.x_std.transpose();
  return grad;
}

double WeightNet::predict(double t, const Eigen::Ref<const Eigen::VectorXd>& x) const {
  require(x.size() == covariate_dim(), ErrorCode::DimensionMismatch, "covariate width mismatch");
  Eigen::VectorXd raw(input_dim_);
  raw[0] = t;
  raw.tail(x.size()) = x;
  return forward(raw)[0];
}

Eigen::VectorXd WeightNet::predict(const Dataset& data) const {
  require(data.dim() == covariate_dim(), ErrorCode::DimensionMismatch, "covariate width mismatch");
  Eigen::MatrixXd raw(input_dim_, data.size());
  raw.row(0) = data.t().transpose();
  raw.bottomRows(data.dim()) = data.x().transpose();
  return forward(raw);
}

void WeightNet::set_parameters(const Eigen::VectorXd& params) {
  require(params.size() == params_.size(), ErrorCode::DimensionMismatch, "parameter length mismatch");
  params_ = params;
}

nlohmann::json WeightNet::to_json() const {
  nlohmann::json doc;
  doc["covariate_dim"] = covariate_dim();
  doc["width"] = width_;
  doc["depth"] = depth_;
  doc["clip"] = clip_;
  doc["input_shift"] = std::vector<double>(shift_.data(), shift_.data() + shift_.size());
  doc["input_scale"] = std::vector<double>(scale_.data(), scale_.data() + scale_.size());
  auto layers = nlohmann::json::array();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto w = weight(l);
    std::vector<double> row_major;
    row_major.reserve(w.size());
    for (Index r = 0; r < w.rows(); ++r)
      for (Index c = 0; c < w.cols(); ++c) row_major.push_back(w(r, c));
    const auto b = bias(l);
    layers.push_back({{"rows", w.rows()},
                      {"cols", w.cols()},
                      {"weights", row_major},
                      {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  doc["layers"] = layers;
  return doc;
}

WeightNet WeightNet::from_json(const nlohmann::json& doc) {
  WeightNet net(doc.at("covariate_dim").get<Index>(), doc.at("width").get<int>(),
                doc.at("depth").get<int>(), doc.at("clip").get<double>());
  const auto shift = doc.at("input_shift").get<std::vector<double>>();
  const auto scale = doc.at("input_scale").get<std::vector<double>>();
  require(static_cast<Index>(shift.size()) == net.input_dim_ &&
              static_cast<Index>(scale.size()) == net.input_dim_,
          ErrorCode::DimensionMismatch, "standardization length mismatch");
  net.shift_ = Eigen::Map<const Eigen::VectorXd>(shift.data(), net.input_dim_);
  net.scale_ = Eigen::Map<const Eigen::VectorXd>(scale.data(), net.input_dim_);
  const auto& layers = doc.at("layers");
  require(layers.size() == net.layers_.size(), ErrorCode::DimensionMismatch, "layer count mismatch");
  for (std::size_t l = 0; l < net.layers_.size(); ++l) {
    const auto& layer = net.layers_[l];
    const auto w = layers[l].at("weights").get<std::vector<double>>();
    const auto b = layers[l].at("bias").get<std::vector<double>>();
    require(layers[l].at("rows").get<Index>() == layer.rows &&
                layers[l].at("cols").get<Index>() == layer.cols &&
                static_cast<Index>(w.size()) == layer.rows * layer.cols &&
                static_cast<Index>(b.size()) == layer.rows,
            ErrorCode::DimensionMismatch, "layer shape mismatch");
    for (Index r = 0; r < layer.rows; ++r)
      for (Index c = 0; c < layer.cols; ++c)
        net.params_[layer.offset + c * layer.rows + r] = w[r * layer.cols + c];
    for (Index r = 0; r < layer.rows; ++r) net.params_[layer.offset + layer.rows * layer.cols + r] = b[r];
  }
  return net;
}

double empirical_risk(const WeightFunction& pi, const Dataset& data) {
  const Index n = data.size();
  require(n >= 2, ErrorCode::TooFewObservations, "empirical risk needs n >= 2");
  double diag = 0.0, cross = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Eigen::VectorXd xi = data.x(i).transpose();
    const double v = pi(data.t(i), xi);
    diag += v * v;
  }
  for (Index l = 0; l < n; ++l) {
    const Eigen::VectorXd xl = data.x(l).transpose();
    for (Index j = 0; j < n; ++j)
      if (j != l) cross += pi(data.t(j), xl);
  }
  const double nd = static_cast<double>(n);
  return diag / nd - 2.0 * cross / (nd * (nd - 1.0));
}

namespace {

constexpr Index kExactPairLimit = 2000;
constexpr Index kSampledPairs = 200000;
constexpr Index kPairBlock = 8192;

// Diagonal pairs (i, i) first, then every ordered (j, l) with j != l, over table rows 0..b-1.
void batch_pairs(Index b, IndexList& js, IndexList& ls) {
  js.clear();
  ls.clear();
  js.reserve(b * b);
  ls.reserve(b * b);
  for (Index i = 0; i < b; ++i) {
    js.push_back(i);
    ls.push_back(i);
  }
  for (Index j = 0; j < b; ++j)
    for (Index l = 0; l < b; ++l)
      if (j != l) {
        js.push_back(j);
        ls.push_back(l);
      }
}

}  // namespace

double empirical_risk(const WeightNet& net, const Dataset& data) {
  const Index n = data.size();
  require(n >= 2, ErrorCode::TooFewObservations, "empirical risk needs n >= 2");
  const double nd = static_cast<double>(n);
  const double diag = net.predict(data).squaredNorm() / nd;

  IndexList js, ls;
  js.reserve(kPairBlock);
  ls.reserve(kPairBlock);
  double cross = 0.0;
  auto push = [&](Index j, Index l) {
    js.push_back(j);
    ls.push_back(l);
    if (static_cast<Index>(js.size()) < kPairBlock) return;
    cross += net.forward_pairs(data.t(), data.x(), js, ls).sum();
    js.clear();
    ls.clear();
  };
  auto flush = [&] {
    if (!js.empty()) cross += net.forward_pairs(data.t(), data.x(), js, ls).sum();
    js.clear();
    ls.clear();
  };
  if (n <= kExactPairLimit) {
    for (Index j = 0; j < n; ++j)
      for (Index l = 0; l < n; ++l)
        if (j != l) push(j, l);
    flush();
    return diag - 2.0 * cross / (nd * (nd - 1.0));
  }
  Rng rng(derive_seed(static_cast<std::uint64_t>(n), "risk-pairs"));
  std::uniform_int_distribution<Index> pick(0, n - 1);
  for (Index s = 0; s < kSampledPairs; ++s) {
    Index j = pick(rng), l = pick(rng);
    while (l == j) l = pick(rng);
    push(j, l);
  }
  flush();
  return diag - 2.0 * cross / static_cast<double>(kSampledPairs);
}

RiskGradient risk_gradient(const WeightNet& net, const Dataset& data, std::span<const Index> batch) {
  const Index b = static_cast<Index>(batch.size());
  require(b >= 2, ErrorCode::TooFewObservations, "minibatch needs at least 2 observations");
  const double bd = static_cast<double>(b);
  const double cross_weight = -2.0 / (bd * (bd - 1.0));
  const Dataset rows = data.subset(batch);
  IndexList js, ls;
  batch_pairs(b, js, ls);
  RiskGradient out;
  out.gradient = net.backward_pairs(rows.t(), rows.x(), js, ls, [&](const Eigen::VectorXd& pi) {
    Eigen::VectorXd c(pi.size());
    c.head(b) = 2.0 * pi.head(b) / bd;
    c.tail(pi.size() - b).setConstant(cross_weight);
    out.risk = pi.head(b).squaredNorm() / bd + cross_weight * pi.tail(pi.size() - b).sum();
    return c;
  });
  return out;
}

double minibatch_risk(const WeightNet& net, const Dataset& data, std::span<const Index> batch) {
  const Index b = static_cast<Index>(batch.size());
  require(b >= 2, ErrorCode::TooFewObservations, "minibatch needs at least 2 observations");
  const double bd = static_cast<double>(b);
  const Dataset rows = data.subset(batch);
  IndexList js, ls;
  batch_pairs(b, js, ls);
  const Eigen::VectorXd pi = net.forward_pairs(rows.t(), rows.x(), js, ls);
  return pi.head(b).squaredNorm() / bd - 2.0 * pi.tail(pi.size() - b).sum() / (bd * (bd - 1.0));
}

WeightNetFit train_weight_net(const Dataset& data, const WeightNetConfig& cfg) {
  cfg.validate();
  counters::record_net_training();
  const Index n = data.size();
  require(n >= 2 * static_cast<Index>(cfg.batch), ErrorCode::TooFewObservations,
          "training needs N >= 2 * batch (N = " + std::to_string(n) + ")");

  IndexList order(n);
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(derive_seed(cfg.seed, "weightnet-split"));
  std::shuffle(order.begin(), order.end(), rng);
  const Index n_val = std::max<Index>(2, static_cast<Index>(std::floor(cfg.validation_fraction * n)));
  IndexList train_idx(order.begin(), order.end() - n_val);
  IndexList val_idx(order.end() - n_val, order.end());
  std::sort(val_idx.begin(), val_idx.end());
  const Dataset validation = data.subset(val_idx);

  WeightNetFit fit{WeightNet(data.dim(), cfg.width, cfg.depth, cfg.clip), {}, 0};
  WeightNet& net = fit.net;
  net.fit_standardization(data);
  net.initialize(cfg.seed);

  Eigen::VectorXd best = net.parameters();
  double best_risk = empirical_risk(net, validation);
  fit.validation_risk.push_back(best_risk);

  Eigen::VectorXd m = Eigen::VectorXd::Zero(net.num_parameters());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(net.num_parameters());
  double b1t = 1.0, b2t = 1.0;
  Rng epoch_rng(derive_seed(cfg.seed, "weightnet-epochs"));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), epoch_rng);
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch) {
      const std::size_t len = std::min<std::size_t>(cfg.batch, train_idx.size() - start);
      if (len < 2) break;
      const auto step = risk_gradient(net, data, std::span(train_idx).subspan(start, len));
      require(std::isfinite(step.risk) && step.gradient.allFinite(), ErrorCode::Divergence,
              "minibatch risk became non-finite at epoch " + std::to_string(epoch));
      b1t *= cfg.beta1;
      b2t *= cfg.beta2;
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * step.gradient;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * step.gradient.cwiseAbs2();
      const double lr = cfg.step_size * std::sqrt(1.0 - b2t) / (1.0 - b1t);
      net.set_parameters(net.parameters().array() -
                         lr * m.array() / (v.array().sqrt() + cfg.eps * std::sqrt(1.0 - b2t)));
    }
    const double risk = empirical_risk(net, validation);
    require(std::isfinite(risk), ErrorCode::Divergence,
            "validation risk became non-finite at epoch " + std::to_string(epoch));
    fit.validation_risk.push_back(risk);
    if (risk < best_risk) {
      best_risk = risk;
      best = net.parameters();
      fit.best_epoch = epoch;
    }
  }
  net.set_parameters(best);
  return fit;
}

}  // namespace bnnw
