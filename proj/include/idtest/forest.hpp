#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace idtest {

struct ForestConfig {
  int num_trees = 200;
  int min_leaf = 5;
  int features_per_split = 0;  // 0: max(1, floor(p / 3))
  bool bootstrap = true;
  std::uint64_t seed = 1;
  int threads = 1;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  std::uint32_t count = 0;  // training rows (with bootstrap multiplicity)
};

class RegressionTree {
 public:
  std::vector<TreeNode> nodes;
  std::vector<bool> uses_feature;

  template <class RowValue>
  double predict(RowValue&& value_of) const {
    int node = 0;
    while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(node)];
      node = value_of(n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(node)].value;
  }

  double predict(const Eigen::MatrixXd& x, Eigen::Index row) const {
    return predict([&](int feature) { return x(row, feature); });
  }
};

struct ForestModel {
  std::vector<RegressionTree> trees;
  int num_trees = 0;
  int min_leaf = 0;
  int features_per_split = 0;
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::size_t num_features = 0;
  double response_min = 0.0;
  double response_max = 0.0;
  // inbag[t][i]: times training row i was drawn for tree t.
  std::vector<std::vector<std::uint16_t>> inbag;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
  /// Per-tree predictions, trees x rows.
  Eigen::MatrixXd predict_trees(const Eigen::MatrixXd& x) const;
};

/// Breiman regression forest: bootstrap resamples, a random subset of
/// features searched at each node for the variance-minimizing split.
ForestModel fit_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ForestConfig& config = {});

/// Mean increase in squared error on (x, y) when a column is permuted,
/// averaged over `repeats` permutations seeded by (rng_seed, column).
/// Columns the forest never split on get exactly zero.
std::vector<double> permutation_importance(const ForestModel& model, const Eigen::MatrixXd& x,
                                           const Eigen::VectorXd& y, std::uint64_t rng_seed, int repeats = 5);

/// As permutation_importance, but each row is predicted only by trees whose
/// bootstrap sample excluded it. `x`, `y` must be the training data.
std::vector<double> oob_permutation_importance(const ForestModel& model, const Eigen::MatrixXd& x,
                                               const Eigen::VectorXd& y, std::uint64_t rng_seed,
                                               int repeats = 5);

}  // namespace idtest
