#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "data.hpp"

namespace bnnw {

struct BoostedTreesConfig {
  int trees = 300;
  int max_leaves = 10;
  double learning_rate = 0.1;
  int min_samples_leaf = 20;
  double min_hessian_leaf = 1e-3;
  double subsample = 1.0;  // row bagging fraction per tree
  std::uint64_t seed = 0;

  void validate() const;
};

enum class BoostLoss { Squared, Logistic };

/// Gradient-boosted regression trees with exact splits, grown leaf-wise (best gain first) up to
/// `max_leaves` leaves. Logistic boosting predicts probabilities.
class BoostedTrees {
 public:
  static BoostedTrees fit(const RowMatrix& features, const Eigen::VectorXd& target,
                          const BoostedTreesConfig& cfg, BoostLoss loss = BoostLoss::Squared);

  double predict(const double* row) const;
  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const { return predict(row.data()); }
  Eigen::VectorXd predict(const RowMatrix& features) const;

  Index num_features() const { return num_features_; }
  std::size_t num_trees() const { return trees_.size(); }

 private:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
  };
  using Tree = std::vector<Node>;

  static double tree_output(const Tree& tree, const double* row);

  std::vector<Tree> trees_;
  double base_ = 0.0;
  BoostLoss loss_ = BoostLoss::Squared;
  Index num_features_ = 0;
};

}  // namespace bnnw
