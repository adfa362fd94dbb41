#include "idtest/forest.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <utility>

#include "idtest/error.hpp"
#include "idtest/parallel.hpp"
#include "idtest/rng.hpp"

namespace idtest {

namespace {

// Mean anchored at the first value, so identical inputs give that value exactly.
template <class Range>
double anchored_mean(const Range& values) {
  const double anchor = *values.begin();
  double offset = 0.0;
  std::size_t count = 0;
  for (double v : values) {
    offset += v - anchor;
    ++count;
  }
  return anchor + offset / static_cast<double>(count);
}

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Rows of the design sorted by each feature, shared by every tree.
std::vector<std::vector<std::uint32_t>> sort_rows_by_feature(const Eigen::MatrixXd& x) {
  std::vector<std::vector<std::uint32_t>> sorted(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    auto& rows = sorted[static_cast<std::size_t>(j)];
    rows.resize(static_cast<std::size_t>(x.rows()));
    std::iota(rows.begin(), rows.end(), std::uint32_t{0});
    const double* col = x.col(j).data();
    std::stable_sort(rows.begin(), rows.end(), [&](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
  }
  return sorted;
}

// Grows one tree over sample positions. Each feature keeps the positions of
// the current node range in ascending feature order, so split search is a
// linear scan and a split is a stable partition of every range.
class TreeGrower {
 public:
  TreeGrower(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<std::vector<std::uint32_t>>& sorted,
             int min_leaf, int mtry)
      : x_(x), y_(y), sorted_(sorted), min_leaf_(static_cast<std::size_t>(min_leaf)), mtry_(mtry) {}

  RegressionTree grow(std::vector<std::uint32_t> samples, Rng& rng) {
    RegressionTree tree;
    const auto p = static_cast<std::size_t>(x_.cols());
    tree.uses_feature.assign(p, false);
    samples_ = std::move(samples);
    const std::size_t m = samples_.size();
    features_.resize(p);
    response_.resize(m);
    for (std::size_t pos = 0; pos < m; ++pos) response_[pos] = y_[samples_[pos]];

    // Positions grouped by row, then laid out in each feature's row order.
    const auto n = static_cast<std::size_t>(x_.rows());
    std::vector<std::uint32_t> offset(n + 1, 0);
    for (auto row : samples_) ++offset[row + 1];
    for (std::size_t r = 0; r < n; ++r) offset[r + 1] += offset[r];
    std::vector<std::uint32_t> by_row(m);
    {
      std::vector<std::uint32_t> fill(offset.begin(), offset.end() - 1);
      for (std::size_t pos = 0; pos < m; ++pos) by_row[fill[samples_[pos]]++] = static_cast<std::uint32_t>(pos);
    }
    order_.assign(p, {});
    for (std::size_t j = 0; j < p; ++j) {
      auto& ord = order_[j];
      ord.reserve(m);
      for (auto row : sorted_[j]) {
        for (auto k = offset[row]; k < offset[row + 1]; ++k) ord.push_back(by_row[k]);
      }
    }
    positions_.resize(m);
    std::iota(positions_.begin(), positions_.end(), std::uint32_t{0});
    goes_left_.assign(m, 0);
    scratch_.resize(m);

    struct Pending {
      int node;
      std::size_t begin;
      std::size_t end;
    };
    tree.nodes.emplace_back();
    std::vector<Pending> stack{{0, 0, m}};
    while (!stack.empty()) {
      const Pending job = stack.back();
      stack.pop_back();
      const SplitChoice split = job.end - job.begin < 2 * min_leaf_ ? SplitChoice{} : best_split(job.begin, job.end, rng);
      auto& node = tree.nodes[static_cast<std::size_t>(job.node)];
      node.count = static_cast<std::uint32_t>(job.end - job.begin);
      if (split.feature < 0) {
        node.value = leaf_value(job.begin, job.end);
        continue;
      }
      const double* col = x_.col(split.feature).data();
      for (std::size_t k = job.begin; k < job.end; ++k) {
        const auto pos = positions_[k];
        goes_left_[pos] = col[samples_[pos]] <= split.threshold ? 1 : 0;
      }
      const std::size_t mid = partition(positions_, job.begin, job.end);
      for (auto& ord : order_) partition(ord, job.begin, job.end);

      const int left = static_cast<int>(tree.nodes.size());
      const int right = left + 1;
      node.feature = split.feature;
      node.threshold = split.threshold;
      node.left = left;
      node.right = right;
      tree.uses_feature[static_cast<std::size_t>(split.feature)] = true;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      stack.push_back({right, mid, job.end});
      stack.push_back({left, job.begin, mid});
    }
    return tree;
  }

 private:
  // Stable partition of range [begin, end) by goes_left_; returns the split point.
  std::size_t partition(std::vector<std::uint32_t>& range, std::size_t begin, std::size_t end) {
    std::size_t left = begin;
    std::size_t right = 0;
    for (std::size_t k = begin; k < end; ++k) {
      const auto pos = range[k];
      if (goes_left_[pos]) {
        range[left++] = pos;
      } else {
        scratch_[right++] = pos;
      }
    }
    std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(right),
              range.begin() + static_cast<std::ptrdiff_t>(left));
    return left;
  }

  double leaf_value(std::size_t begin, std::size_t end) const {
    double lo = response_[positions_[begin]];
    double hi = lo;
    const double anchor = lo;
    double offset = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const double v = response_[positions_[k]];
      offset += v - anchor;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    return std::clamp(anchor + offset / static_cast<double>(end - begin), lo, hi);
  }

  SplitChoice best_split(std::size_t begin, std::size_t end, Rng& rng) {
    const std::size_t count = end - begin;
    const double center = response_[positions_[begin]];
    double total = 0.0;
    double total_sq = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const double v = response_[positions_[k]] - center;
      total += v;
      total_sq += v * v;
    }
    const double node_sse = total_sq - total * total / static_cast<double>(count);
    SplitChoice best;
    if (!(node_sse > 0.0)) return best;

    // Partial Fisher-Yates draw of mtry distinct features.
    std::iota(features_.begin(), features_.end(), 0);
    const auto p = features_.size();
    const auto draws = std::min<std::size_t>(static_cast<std::size_t>(mtry_), p);
    for (std::size_t k = 0; k < draws; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, p - 1);
      std::swap(features_[k], features_[pick(rng)]);
    }

    const double parent_score = total * total / static_cast<double>(count);
    for (std::size_t k = 0; k < draws; ++k) {
      const int feature = features_[k];
      const double* col = x_.col(feature).data();
      const auto& ord = order_[static_cast<std::size_t>(feature)];
      double left_sum = 0.0;
      double current = col[samples_[ord[begin]]];
      for (std::size_t s = 0; s + 1 < count; ++s) {
        left_sum += response_[ord[begin + s]] - center;
        const double next = col[samples_[ord[begin + s + 1]]];
        const double here = current;
        current = next;
        const std::size_t left_n = s + 1;
        const std::size_t right_n = count - left_n;
        if (left_n < min_leaf_) continue;
        if (right_n < min_leaf_) break;
        if (here == next) continue;
        const double right_sum = total - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(left_n) +
                            right_sum * right_sum / static_cast<double>(right_n) - parent_score;
        if (gain > best.gain) {
          best.gain = gain;
          best.feature = feature;
          double threshold = 0.5 * (here + next);
          if (!(threshold < next)) threshold = here;
          best.threshold = threshold;
        }
      }
    }
    if (best.feature >= 0 && !(best.gain > 1e-12 * node_sse)) best = SplitChoice{};
    return best;
  }

  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  const std::vector<std::vector<std::uint32_t>>& sorted_;
  std::size_t min_leaf_;
  int mtry_;
  std::vector<std::uint32_t> samples_;
  std::vector<double> response_;
  std::vector<std::vector<std::uint32_t>> order_;
  std::vector<std::uint32_t> positions_;
  std::vector<std::uint8_t> goes_left_;
  std::vector<std::uint32_t> scratch_;
  std::vector<int> features_;
};

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double forest_average(const Eigen::MatrixXd& per_tree, Eigen::Index row, double lo, double hi) {
  return std::clamp(anchored_mean(per_tree.col(row)), lo, hi);
}

void check_columns(const ForestModel& model, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != model.num_features) {
    throw Error(ErrorKind::ShapeMismatch, "design has " + std::to_string(x.cols()) + " columns, forest expects " +
                                              std::to_string(model.num_features));
  }
}

std::vector<Eigen::Index> permutation_for(std::uint64_t rng_seed, std::size_t column, int repeat, Eigen::Index n) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng = make_rng(rng_seed, column, static_cast<std::uint64_t>(repeat));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

}  // namespace

Eigen::MatrixXd ForestModel::predict_trees(const Eigen::MatrixXd& x) const {
  check_columns(*this, x);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(trees.size()), x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (std::size_t t = 0; t < trees.size(); ++t) out(static_cast<Eigen::Index>(t), i) = trees[t].predict(x, i);
  }
  return out;
}

Eigen::VectorXd ForestModel::predict(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd per_tree = predict_trees(x);
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = forest_average(per_tree, i, response_min, response_max);
  return out;
}

ForestModel fit_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ForestConfig& config) {
  if (x.rows() == 0) throw Error(ErrorKind::DegenerateDesign, "no rows to fit");
  if (x.rows() != y.size()) throw Error(ErrorKind::ShapeMismatch, "design and response lengths differ");
  if (x.cols() == 0) throw Error(ErrorKind::DegenerateDesign, "no features to split on");
  if (config.num_trees < 1) throw Error(ErrorKind::InvalidArgument, "num_trees must be positive");
  if (config.min_leaf < 1) throw Error(ErrorKind::InvalidArgument, "min_leaf must be positive");
  if (x.rows() > 0xffffffffLL) throw Error(ErrorKind::InvalidArgument, "too many rows");

  const auto p = static_cast<int>(x.cols());
  int mtry = config.features_per_split > 0 ? config.features_per_split : std::max(1, p / 3);
  mtry = std::min(mtry, p);

  ForestModel model;
  model.num_trees = config.num_trees;
  model.min_leaf = config.min_leaf;
  model.features_per_split = mtry;
  model.bootstrap = config.bootstrap;
  model.seed = config.seed;
  model.num_features = static_cast<std::size_t>(p);
  model.response_min = y.minCoeff();
  model.response_max = y.maxCoeff();
  model.trees.resize(static_cast<std::size_t>(config.num_trees));
  model.inbag.resize(static_cast<std::size_t>(config.num_trees));

  const auto n = static_cast<std::size_t>(x.rows());
  const auto sorted = sort_rows_by_feature(x);
  parallel_for(static_cast<std::size_t>(config.num_trees), config.threads, [&](std::size_t t) {
    Rng rng = make_rng(config.seed, t);
    std::vector<std::uint32_t> samples(n);
    if (config.bootstrap) {
      std::uniform_int_distribution<std::uint32_t> draw(0, static_cast<std::uint32_t>(n - 1));
      for (auto& s : samples) s = draw(rng);
    } else {
      std::iota(samples.begin(), samples.end(), std::uint32_t{0});
    }
    auto& counts = model.inbag[t];
    counts.assign(n, 0);
    for (auto s : samples) {
      if (counts[s] < 0xffff) ++counts[s];
    }
    TreeGrower grower(x, y, sorted, config.min_leaf, mtry);
    model.trees[t] = grower.grow(std::move(samples), rng);
  });
  return model;
}

std::vector<double> permutation_importance(const ForestModel& model, const Eigen::MatrixXd& x,
                                           const Eigen::VectorXd& y, std::uint64_t rng_seed, int repeats) {
  check_columns(model, x);
  if (x.rows() != y.size()) throw Error(ErrorKind::ShapeMismatch, "design and response lengths differ");
  if (x.rows() == 0) throw Error(ErrorKind::DegenerateDesign, "no rows to evaluate");
  if (repeats < 1) throw Error(ErrorKind::InvalidArgument, "repeats must be positive");
  const auto n = x.rows();
  Eigen::MatrixXd base_trees = model.predict_trees(x);
  auto mse_of = [&](const Eigen::MatrixXd& per_tree) {
    double sse = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = y[i] - forest_average(per_tree, i, model.response_min, model.response_max);
      sse += r * r;
    }
    return sse / static_cast<double>(n);
  };
  const double base_mse = mse_of(base_trees);

  std::vector<double> importance(model.num_features, 0.0);
  for (std::size_t j = 0; j < model.num_features; ++j) {
    std::vector<std::size_t> affected;
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
      if (model.trees[t].uses_feature[j]) affected.push_back(t);
    }
    if (affected.empty()) continue;
    double total = 0.0;
    for (int r = 0; r < repeats; ++r) {
      const auto perm = permutation_for(rng_seed, j, r, n);
      Eigen::MatrixXd permuted = base_trees;
      const auto feature = static_cast<int>(j);
      for (std::size_t t : affected) {
        for (Eigen::Index i = 0; i < n; ++i) {
          permuted(static_cast<Eigen::Index>(t), i) = model.trees[t].predict([&](int f) {
            return f == feature ? x(perm[static_cast<std::size_t>(i)], f) : x(i, f);
          });
        }
      }
      total += mse_of(permuted) - base_mse;
    }
    importance[j] = total / repeats;
  }
  return importance;
}

std::vector<double> oob_permutation_importance(const ForestModel& model, const Eigen::MatrixXd& x,
                                               const Eigen::VectorXd& y, std::uint64_t rng_seed, int repeats) {
  check_columns(model, x);
  if (x.rows() != y.size()) throw Error(ErrorKind::ShapeMismatch, "design and response lengths differ");
  if (repeats < 1) throw Error(ErrorKind::InvalidArgument, "repeats must be positive");
  const auto n = x.rows();
  for (const auto& counts : model.inbag) {
    if (static_cast<Eigen::Index>(counts.size()) != n) {
      throw Error(ErrorKind::ShapeMismatch, "out-of-bag importance needs the training rows");
    }
  }
  const std::size_t num_trees = model.trees.size();
  // Out-of-bag rows per tree and their baseline predictions.
  std::vector<std::vector<Eigen::Index>> oob_rows(num_trees);
  std::vector<std::vector<double>> base_pred(num_trees);
  std::vector<int> oob_count(static_cast<std::size_t>(n), 0);
  // Features on each out-of-bag row's root-to-leaf path, as bit words in
  // (tree, row) order. Rows whose path avoids a feature keep their prediction.
  const std::size_t words = (model.num_features + 63) / 64;
  std::vector<std::uint64_t> path_words;
  std::vector<std::size_t> path_start(num_trees, 0);
  for (std::size_t t = 0; t < num_trees; ++t) {
    path_start[t] = path_words.size() / words;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (model.inbag[t][static_cast<std::size_t>(i)] != 0) continue;
      oob_rows[t].push_back(i);
      const auto word = path_words.size();
      path_words.resize(word + words);
      base_pred[t].push_back(model.trees[t].predict([&](int f) {
        path_words[word + static_cast<std::size_t>(f) / 64] |= std::uint64_t{1} << (static_cast<unsigned>(f) % 64);
        return x(i, f);
      }));
      ++oob_count[static_cast<std::size_t>(i)];
    }
  }
  auto mse_of = [&](const std::vector<std::vector<double>>& pred) {
    std::vector<double> sums(static_cast<std::size_t>(n), 0.0);
    for (std::size_t t = 0; t < num_trees; ++t) {
      for (std::size_t k = 0; k < oob_rows[t].size(); ++k) sums[static_cast<std::size_t>(oob_rows[t][k])] += pred[t][k];
    }
    double sse = 0.0;
    std::size_t used = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto c = oob_count[static_cast<std::size_t>(i)];
      if (c == 0) continue;
      const double r = y[i] - sums[static_cast<std::size_t>(i)] / c;
      sse += r * r;
      ++used;
    }
    if (used == 0) throw Error(ErrorKind::TooFewObservations, "no out-of-bag rows");
    return sse / static_cast<double>(used);
  };
  const double base_mse = mse_of(base_pred);

  const RowMajorMatrix rows = x;
  std::vector<double> importance(model.num_features, 0.0);
  for (std::size_t j = 0; j < model.num_features; ++j) {
    bool used_anywhere = false;
    for (const auto& tree : model.trees) used_anywhere = used_anywhere || tree.uses_feature[j];
    if (!used_anywhere) continue;
    double total = 0.0;
    const auto feature = static_cast<int>(j);
    for (int r = 0; r < repeats; ++r) {
      const auto perm = permutation_for(rng_seed, j, r, n);
      auto permuted = base_pred;
      for (std::size_t t = 0; t < num_trees; ++t) {
        if (!model.trees[t].uses_feature[j]) continue;
        for (std::size_t k = 0; k < oob_rows[t].size(); ++k) {
          const std::uint64_t bits = path_words[(path_start[t] + k) * words + j / 64];
          if (((bits >> (j % 64)) & 1U) == 0) continue;
          const Eigen::Index i = oob_rows[t][k];
          const double* row = rows.row(i).data();
          const double swapped = x(perm[static_cast<std::size_t>(i)], feature);
          permuted[t][k] = model.trees[t].predict([&](int f) { return f == feature ? swapped : row[f]; });
        }
      }
      total += mse_of(permuted) - base_mse;
    }
    importance[j] = total / repeats;
  }
  return importance;
}

}  // namespace idtest
