#include "bnnw/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bnnw/error.hpp"
#include "bnnw/random.hpp"

namespace bnnw {

void BoostedTreesConfig::validate() const {
  require(trees >= 1, ErrorCode::InvalidArgument, "need at least one tree");
  require(max_leaves >= 1, ErrorCode::InvalidArgument, "need at least one leaf");
  require(learning_rate > 0.0, ErrorCode::InvalidArgument, "learning rate must be positive");
  require(min_samples_leaf >= 1, ErrorCode::InvalidArgument, "min samples per leaf must be >= 1");
  require(subsample > 0.0 && subsample <= 1.0, ErrorCode::InvalidArgument,
          "subsample must lie in (0, 1]");
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct Split {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

// A growing leaf: its rows sorted by every feature, plus gradient sums.
struct Leaf {
  int node = 0;
  std::vector<std::vector<int>> sorted;
  double G = 0.0, H = 0.0;
  Split best;
};

class TreeBuilder {
 public:
  TreeBuilder(const RowMatrix& x, const std::vector<double>& g, const std::vector<double>& h,
              const BoostedTreesConfig& cfg)
      : x_(x), g_(g), h_(h), cfg_(cfg) {}

  void find_split(Leaf& leaf) const {
    leaf.best = Split{};
    const auto count = static_cast<int>(leaf.sorted[0].size());
    if (count < 2 * cfg_.min_samples_leaf) return;
    const double parent = leaf.G * leaf.G / leaf.H;
    for (int f = 0; f < static_cast<int>(leaf.sorted.size()); ++f) {
      const auto& rows = leaf.sorted[f];
      double GL = 0.0, HL = 0.0;
      for (int k = 0; k + 1 < count; ++k) {
        GL += g_[rows[k]];
        HL += h_[rows[k]];
        const int nl = k + 1;
        if (nl < cfg_.min_samples_leaf) continue;
        if (count - nl < cfg_.min_samples_leaf) break;
        const double a = x_(rows[k], f), b = x_(rows[k + 1], f);
        if (!(a < b)) continue;
        const double HR = leaf.H - HL;
        if (HL < cfg_.min_hessian_leaf || HR < cfg_.min_hessian_leaf) continue;
        const double GR = leaf.G - GL;
        const double gain = GL * GL / HL + GR * GR / HR - parent;
        if (gain > leaf.best.gain + 1e-12 * std::abs(parent)) {
          leaf.best = {gain, f, a + 0.5 * (b - a)};
        }
      }
    }
  }

  std::pair<Leaf, Leaf> split(const Leaf& leaf) const {
    Leaf left, right;
    left.sorted.resize(leaf.sorted.size());
    right.sorted.resize(leaf.sorted.size());
    const int f = leaf.best.feature;
    const double thr = leaf.best.threshold;
    for (std::size_t j = 0; j < leaf.sorted.size(); ++j) {
      for (int r : leaf.sorted[j]) (x_(r, f) <= thr ? left : right).sorted[j].push_back(r);
    }
    for (int r : left.sorted[0]) {
      left.G += g_[r];
      left.H += h_[r];
    }
    right.G = leaf.G - left.G;
    right.H = leaf.H - left.H;
    return {std::move(left), std::move(right)};
  }

 private:
  const RowMatrix& x_;
  const std::vector<double>& g_;
  const std::vector<double>& h_;
  const BoostedTreesConfig& cfg_;
};

}  // namespace

BoostedTrees BoostedTrees::fit(const RowMatrix& features, const Eigen::VectorXd& target,
                               const BoostedTreesConfig& cfg, BoostLoss loss) {
  cfg.validate();
  const Index n = features.rows();
  require(n >= 1, ErrorCode::EmptyData, "boosting needs a nonempty training set");
  require(target.size() == n, ErrorCode::DimensionMismatch, "target length mismatch");
  require(target.allFinite() && features.allFinite(), ErrorCode::DomainError,
          "boosting targets and features must be finite");

  BoostedTrees model;
  model.loss_ = loss;
  model.num_features_ = features.cols();
  const double mean = target.mean();
  if (loss == BoostLoss::Squared) {
    model.base_ = mean;
  } else {
    for (Index i = 0; i < n; ++i)
      require(target[i] == 0.0 || target[i] == 1.0, ErrorCode::DomainError,
              "logistic boosting needs 0/1 targets");
    const double p = std::clamp(mean, 1e-6, 1.0 - 1e-6);
    model.base_ = std::log(p / (1.0 - p));
  }

  const auto d = static_cast<int>(features.cols());
  std::vector<std::vector<int>> presorted(d, std::vector<int>(n));
  for (int f = 0; f < d; ++f) {
    auto& rows = presorted[f];
    std::iota(rows.begin(), rows.end(), 0);
    std::stable_sort(rows.begin(), rows.end(),
                     [&](int a, int b) { return features(a, f) < features(b, f); });
  }

  std::vector<double> score(n, model.base_), g(n), h(n);
  std::vector<char> in_sample(n, 1);
  Rng rng(derive_seed(cfg.seed, "boosting"));
  std::bernoulli_distribution keep(cfg.subsample);
  TreeBuilder builder(features, g, h, cfg);

  for (int m = 0; m < cfg.trees; ++m) {
    for (Index i = 0; i < n; ++i) {
      if (loss == BoostLoss::Squared) {
        g[i] = score[i] - target[i];
        h[i] = 1.0;
      } else {
        const double p = sigmoid(score[i]);
        g[i] = p - target[i];
        h[i] = std::max(p * (1.0 - p), 1e-12);
      }
    }
    if (cfg.subsample < 1.0)
      for (Index i = 0; i < n; ++i) in_sample[i] = keep(rng) ? 1 : 0;

    Tree tree(1);
    std::vector<Leaf> leaves(1);
    Leaf& root = leaves[0];
    root.sorted.resize(d);
    for (int f = 0; f < d; ++f) {
      for (int r : presorted[f])
        if (in_sample[r]) root.sorted[f].push_back(r);
    }
    if (root.sorted[0].empty()) continue;
    for (int r : root.sorted[0]) {
      root.G += g[r];
      root.H += h[r];
    }
    builder.find_split(root);

    while (static_cast<int>(leaves.size()) < cfg.max_leaves) {
      std::size_t pick = leaves.size();
      for (std::size_t k = 0; k < leaves.size(); ++k) {
        if (leaves[k].best.feature >= 0 &&
            (pick == leaves.size() || leaves[k].best.gain > leaves[pick].best.gain))
          pick = k;
      }
      if (pick == leaves.size()) break;
      auto [left, right] = builder.split(leaves[pick]);
      const int parent = leaves[pick].node;
      tree[parent].feature = leaves[pick].best.feature;
      tree[parent].threshold = leaves[pick].best.threshold;
      tree[parent].left = static_cast<int>(tree.size());
      tree[parent].right = static_cast<int>(tree.size()) + 1;
      left.node = tree[parent].left;
      right.node = tree[parent].right;
      tree.emplace_back();
      tree.emplace_back();
      builder.find_split(left);
      builder.find_split(right);
      leaves[pick] = std::move(left);
      leaves.push_back(std::move(right));
    }
    for (const auto& leaf : leaves) tree[leaf.node].value = -cfg.learning_rate * leaf.G / leaf.H;

    for (Index i = 0; i < n; ++i) score[i] += tree_output(tree, features.row(i).data());
    model.trees_.push_back(std::move(tree));
  }
  return model;
}

double BoostedTrees::tree_output(const Tree& tree, const double* row) {
  int k = 0;
  while (tree[k].feature >= 0) k = row[tree[k].feature] <= tree[k].threshold ? tree[k].left : tree[k].right;
  return tree[k].value;
}

double BoostedTrees::predict(const double* row) const {
  double s = base_;
  for (const auto& tree : trees_) s += tree_output(tree, row);
  return loss_ == BoostLoss::Squared ? s : sigmoid(s);
}

Eigen::VectorXd BoostedTrees::predict(const RowMatrix& features) const {
  require(features.cols() == num_features_, ErrorCode::DimensionMismatch, "feature width mismatch");
  Eigen::VectorXd out(features.rows());
  for (Index i = 0; i < features.rows(); ++i) out[i] = predict(features.row(i).data());
  return out;
}

}  // namespace bnnw
