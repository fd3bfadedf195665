#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <json.hpp>
#include <span>
#include <vector>

#include "data.hpp"

namespace bnnw {

struct WeightNetConfig {
  int width = 64;
  int depth = 3;
  double clip = 20.0;  // predictions live in [1/clip, clip]
  int epochs = 200;
  int batch = 64;
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Feedforward ReLU network on standardized (t, x) with output exp(clamp(z, -log M, log M)).
/// Parameters are one flat vector; layer l stores its weight matrix column-major followed by its
/// bias.
class WeightNet {
 public:
  /// All-zero parameters and identity standardization: predicts exactly 1 everywhere.
  WeightNet(Index covariate_dim, int width, int depth, double clip);

  /// He-uniform hidden layers, zero output layer (so the initial prediction is still 1).
  void initialize(std::uint64_t seed);
  /// Per-coordinate mean/sd of (t, x) over `data`; constant coordinates keep scale 1.
  void fit_standardization(const Dataset& data);

  Index covariate_dim() const { return input_dim_ - 1; }
  int width() const { return width_; }
  int depth() const { return depth_; }
  double clip() const { return clip_; }

  double predict(double t, const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// pi at each observed (T_i, X_i).
  Eigen::VectorXd predict(const Dataset& data) const;
  /// Columns of `raw` are unstandardized (t, x) inputs.
  Eigen::VectorXd forward(const Eigen::Ref<const Eigen::MatrixXd>& raw) const;
  /// Gradient of sum_c coeff[c] * pi(raw.col(c)) with respect to the parameters.
  Eigen::VectorXd backward(const Eigen::Ref<const Eigen::MatrixXd>& raw,
                           const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& coeff) const;

  /// pi at the pairs (t[js[c]], x.row(ls[c])); the first layer is shared across rows of the table.
  Eigen::VectorXd forward_pairs(const Eigen::VectorXd& t, const RowMatrix& x, std::span<const Index> js,
                                std::span<const Index> ls) const;
  /// Gradient of sum_c coeff[c] * pi(t[js[c]], x.row(ls[c])).
  Eigen::VectorXd backward_pairs(
      const Eigen::VectorXd& t, const RowMatrix& x, std::span<const Index> js, std::span<const Index> ls,
      const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& coeff) const;

  const Eigen::VectorXd& parameters() const { return params_; }
  void set_parameters(const Eigen::VectorXd& params);
  Index num_parameters() const { return params_.size(); }

  const Eigen::VectorXd& input_shift() const { return shift_; }
  const Eigen::VectorXd& input_scale() const { return scale_; }

  nlohmann::json to_json() const;
  static WeightNet from_json(const nlohmann::json& doc);

 private:
  struct Layer {
    Index rows, cols, offset;
  };
  struct Trace;

  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const;
  void run_forward(const Eigen::Ref<const Eigen::MatrixXd>& raw, Trace& trace) const;
  void run_pairs(const Eigen::VectorXd& t, const RowMatrix& x, std::span<const Index> js,
                 std::span<const Index> ls, Trace& trace) const;
  void run_hidden(Trace& trace) const;
  Eigen::VectorXd run_backward(Trace& trace, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& coeff,
                               Eigen::MatrixXd& first_delta) const;

  Index input_dim_;
  int width_, depth_;
  double clip_;
  std::vector<Layer> layers_;
  Eigen::VectorXd params_;
  Eigen::VectorXd shift_, scale_;
};

using WeightFunction = std::function<double(double, const Eigen::Ref<const Eigen::VectorXd>&)>;

/// R(pi) = (1/n) sum_i pi(T_i, X_i)^2 - 2/(n(n-1)) sum_{j != l} pi(T_j, X_l), over all pairs.
double empirical_risk(const WeightFunction& pi, const Dataset& data);
double empirical_risk(const WeightNet& net, const Dataset& data);

struct RiskGradient {
  double risk = 0.0;
  Eigen::VectorXd gradient;
};

/// Minibatch risk and its parameter gradient; the cross term uses every ordered pair j != l of the
/// batch, evaluated at the mismatched input (T_j, X_l).
RiskGradient risk_gradient(const WeightNet& net, const Dataset& data, std::span<const Index> batch);
double minibatch_risk(const WeightNet& net, const Dataset& data, std::span<const Index> batch);

struct WeightNetFit {
  WeightNet net;
  std::vector<double> validation_risk;  // entry 0 is the untrained net
  int best_epoch = 0;
};

/// Adam on minibatch U-statistic risk; returns the checkpoint with the lowest validation risk.
WeightNetFit train_weight_net(const Dataset& data, const WeightNetConfig& cfg);

}  // namespace bnnw
