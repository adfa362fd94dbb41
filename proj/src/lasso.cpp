#include "idtest/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "idtest/error.hpp"
#include "idtest/rng.hpp"

namespace idtest {

namespace {

double soft_threshold(double value, double penalty) {
  if (value > penalty) return value - penalty;
  if (value < -penalty) return value + penalty;
  return 0.0;
}

double softplus(double eta) { return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

constexpr double kMinWeight = 1e-5;
constexpr double kProbClip = 1e-12;

Eigen::VectorXd predict_standardized(const Eigen::MatrixXd& x, const Eigen::VectorXd& means,
                                     const Eigen::VectorXd& scales, const Eigen::VectorXd& coefficients,
                                     double intercept) {
  if (x.cols() != coefficients.size()) throw Error(ErrorKind::ShapeMismatch, "design has the wrong column count");
  Eigen::VectorXd out = Eigen::VectorXd::Constant(x.rows(), intercept);
  for (Eigen::Index j = 0; j < coefficients.size(); ++j) {
    if (coefficients[j] == 0.0) continue;
    out.array() += (x.col(j).array() - means[j]) * (coefficients[j] / scales[j]);
  }
  return out;
}

// Linear lasso state on the covariance scale: gram = Xs'Xs/n, corr = Xs'(y-ybar)/n,
// grad = corr - gram * beta. One coordinate update costs O(p).
class LinearSolver {
 public:
  LinearSolver(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) : standardizer_(Standardizer::fit(x)) {
    if (x.rows() == 0) throw Error(ErrorKind::DegenerateDesign, "no rows to fit");
    if (x.rows() != y.size()) throw Error(ErrorKind::ShapeMismatch, "design and response lengths differ");
    const double n = static_cast<double>(x.rows());
    const Eigen::MatrixXd xs = standardizer_.apply(x);
    ybar_ = y.mean();
    const Eigen::VectorXd centered = y.array() - ybar_;
    gram_ = (xs.transpose() * xs) / n;
    corr_ = (xs.transpose() * centered) / n;
    yy_ = centered.squaredNorm() / n;
    beta_ = Eigen::VectorXd::Zero(x.cols());
    grad_ = corr_;
  }

  double lambda_max() const { return corr_.size() == 0 ? 0.0 : corr_.cwiseAbs().maxCoeff(); }

  int solve(double lambda, const LassoOptions& options, std::vector<double>* trace) {
    const auto p = beta_.size();
    int sweep = 0;
    while (sweep < options.max_sweeps) {
      ++sweep;
      double max_change = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (standardizer_.constant[static_cast<std::size_t>(j)]) continue;
        const double diag = gram_(j, j);
        const double old = beta_[j];
        const double updated = soft_threshold(grad_[j] + diag * old, lambda) / diag;
        const double change = updated - old;
        if (change != 0.0) {
          grad_ -= gram_.col(j) * change;
          beta_[j] = updated;
          max_change = std::max(max_change, std::abs(change));
        }
      }
      if (trace != nullptr) trace->push_back(objective(lambda));
      if (max_change < options.tolerance) break;
    }
    return sweep;
  }

  double objective(double lambda) const {
    return 0.5 * yy_ - 0.5 * beta_.dot(corr_ + grad_) + lambda * beta_.lpNorm<1>();
  }

  LinearLassoModel model(double lambda, int sweeps) const {
    LinearLassoModel m;
    m.intercept = ybar_;
    m.coefficients = beta_;
    m.lambda = lambda;
    m.feature_means = standardizer_.means;
    m.feature_scales = standardizer_.scales;
    m.sweeps = sweeps;
    return m;
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    return predict_standardized(x, standardizer_.means, standardizer_.scales, beta_, ybar_);
  }

 private:
  Standardizer standardizer_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd corr_;
  Eigen::VectorXd beta_;
  Eigen::VectorXd grad_;
  double ybar_ = 0.0;
  double yy_ = 0.0;
};

// Logistic lasso by IRLS: each outer step forms the weighted quadratic
// approximation of the log-likelihood and minimizes it with naive-update
// coordinate descent, cycling on the active set between full sweeps.
class LogisticSolver {
 public:
  LogisticSolver(const Eigen::MatrixXd& x, const Eigen::VectorXd& y01)
      : standardizer_(Standardizer::fit(x)), y_(y01) {
    if (x.rows() == 0) throw Error(ErrorKind::DegenerateDesign, "no rows to fit");
    if (x.rows() != y01.size()) throw Error(ErrorKind::ShapeMismatch, "design and response lengths differ");
    for (Eigen::Index i = 0; i < y01.size(); ++i) {
      if (y01[i] != 0.0 && y01[i] != 1.0) throw Error(ErrorKind::NonBinary, "logistic response must be 0/1");
    }
    xs_ = standardizer_.apply(x);
    n_ = static_cast<double>(x.rows());
    const double ybar = y01.mean();
    if (ybar <= 0.0 || ybar >= 1.0) throw Error(ErrorKind::SingleClass, "logistic response has a single class");
    intercept_ = std::log(ybar / (1.0 - ybar));
    beta_ = Eigen::VectorXd::Zero(x.cols());
    const Eigen::VectorXd centered = y01.array() - ybar;
    corr_ = (xs_.transpose() * centered) / n_;
  }

  double lambda_max() const { return corr_.size() == 0 ? 0.0 : corr_.cwiseAbs().maxCoeff(); }

  int solve(double lambda, const LogisticOptions& options) {
    const auto n = xs_.rows();
    const auto p = xs_.cols();
    Eigen::VectorXd eta = linear_predictor();
    double current = objective(eta, beta_, lambda);
    Eigen::VectorXd weights(n);
    Eigen::VectorXd resid(n);
    Eigen::VectorXd wdiag(p);
    int outer = 0;
    while (outer < options.max_outer) {
      ++outer;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double prob = sigmoid(eta[i]);
        weights[i] = std::max(prob * (1.0 - prob), kMinWeight);
        resid[i] = (y_[i] - prob) / weights[i];
      }
      const double weight_sum = weights.sum();
      for (Eigen::Index j = 0; j < p; ++j) {
        wdiag[j] = standardizer_.constant[static_cast<std::size_t>(j)]
                       ? 0.0
                       : weights.dot(xs_.col(j).cwiseAbs2()) / n_;
      }

      double next_intercept = intercept_;
      Eigen::VectorXd next_beta = beta_;
      const Eigen::VectorXd resid_start = resid;

      auto sweep = [&](bool active_only) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
          if (wdiag[j] <= 0.0) continue;
          if (active_only && next_beta[j] == 0.0) continue;
          const double old = next_beta[j];
          const double grad = (xs_.col(j).array() * weights.array() * resid.array()).sum() / n_;
          const double updated = soft_threshold(grad + wdiag[j] * old, lambda) / wdiag[j];
          const double change = updated - old;
          if (change != 0.0) {
            resid -= xs_.col(j) * change;
            next_beta[j] = updated;
            max_change = std::max(max_change, std::abs(change));
          }
        }
        const double shift = weights.dot(resid) / weight_sum;
        next_intercept += shift;
        resid.array() -= shift;
        return std::max(max_change, std::abs(shift));
      };

      for (int inner = 0; inner < options.max_inner_sweeps;) {
        ++inner;
        if (sweep(false) < options.tolerance) break;
        while (inner < options.max_inner_sweeps) {
          ++inner;
          if (sweep(true) < options.tolerance) break;
        }
      }

      // eta moves by the drop in working residual.
      Eigen::VectorXd next_eta = eta + (resid_start - resid);
      double candidate = objective(next_eta, next_beta, lambda);
      for (int halving = 0; halving < 30 && candidate > current + 1e-12 * std::abs(current); ++halving) {
        next_beta = beta_ + 0.5 * (next_beta - beta_);
        next_intercept = intercept_ + 0.5 * (next_intercept - intercept_);
        next_eta = eta + 0.5 * (next_eta - eta);
        candidate = objective(next_eta, next_beta, lambda);
      }

      const double change = std::max(std::abs(next_intercept - intercept_),
                                     p > 0 ? (next_beta - beta_).cwiseAbs().maxCoeff() : 0.0);
      intercept_ = next_intercept;
      beta_ = next_beta;
      eta = next_eta;
      current = candidate;
      if (change < options.tolerance) break;
    }
    return outer;
  }

  LogisticLassoModel model(double lambda, int outer) const {
    LogisticLassoModel m;
    m.intercept = intercept_;
    m.coefficients = beta_;
    m.lambda = lambda;
    m.feature_means = standardizer_.means;
    m.feature_scales = standardizer_.scales;
    m.outer_iterations = outer;
    return m;
  }

 private:
  Eigen::VectorXd linear_predictor() const {
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(xs_.rows(), intercept_);
    for (Eigen::Index j = 0; j < beta_.size(); ++j) {
      if (beta_[j] != 0.0) eta += xs_.col(j) * beta_[j];
    }
    return eta;
  }

  double objective(const Eigen::VectorXd& eta, const Eigen::VectorXd& beta, double lambda) const {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) loss += softplus(eta[i]) - y_[i] * eta[i];
    return loss / n_ + lambda * beta.lpNorm<1>();
  }

  Standardizer standardizer_;
  Eigen::MatrixXd xs_;
  Eigen::VectorXd y_;
  Eigen::VectorXd corr_;
  Eigen::VectorXd beta_;
  double intercept_ = 0.0;
  double n_ = 0.0;
};

std::vector<int> draw_cv_folds(const Eigen::VectorXd& y, int k, Family family, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(y.size());
  Rng rng(seed);
  std::vector<std::size_t> order;
  order.reserve(n);
  if (family == Family::Logistic) {
    // Stratify by class so every training split sees both labels when possible.
    std::vector<std::size_t> zeros;
    std::vector<std::size_t> ones;
    for (std::size_t i = 0; i < n; ++i) (y[static_cast<Eigen::Index>(i)] == 1.0 ? ones : zeros).push_back(i);
    std::shuffle(zeros.begin(), zeros.end(), rng);
    std::shuffle(ones.begin(), ones.end(), rng);
    order.insert(order.end(), zeros.begin(), zeros.end());
    order.insert(order.end(), ones.begin(), ones.end());
  } else {
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<int> fold(n);
  for (std::size_t pos = 0; pos < n; ++pos) fold[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
  return fold;
}

bool training_splits_have_both_classes(const Eigen::VectorXd& y, const std::vector<int>& fold, int k) {
  for (int f = 0; f < k; ++f) {
    bool zero = false;
    bool one = false;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (fold[static_cast<std::size_t>(i)] == f) continue;
      (y[i] == 1.0 ? one : zero) = true;
    }
    if (!zero || !one) return false;
  }
  return true;
}

double log_loss(double y, double prob) {
  prob = std::clamp(prob, 1e-15, 1.0 - 1e-15);
  return y == 1.0 ? -std::log(prob) : -std::log1p(-prob);
}

void validate_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw Error(ErrorKind::InvalidArgument, "lambda grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0) || !std::isfinite(grid[i])) {
      throw Error(ErrorKind::InvalidArgument, "lambda grid values must be positive and finite");
    }
    if (i > 0 && !(grid[i] < grid[i - 1])) {
      throw Error(ErrorKind::InvalidArgument, "lambda grid must be strictly decreasing");
    }
  }
}

}  // namespace

Standardizer Standardizer::fit(const Eigen::MatrixXd& x) {
  Standardizer s;
  const auto p = x.cols();
  s.means.resize(p);
  s.scales.resize(p);
  s.constant.assign(static_cast<std::size_t>(p), false);
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto col = x.col(j);
    const double m = x.rows() > 0 ? col.mean() : 0.0;
    const bool all_equal = x.rows() == 0 || (col.array() == col[0]).all();
    const double sd = x.rows() > 0 ? std::sqrt((col.array() - m).square().mean()) : 0.0;
    s.means[j] = m;
    if (all_equal || !(sd > 0.0)) {
      s.scales[j] = 1.0;
      s.constant[static_cast<std::size_t>(j)] = true;
    } else {
      s.scales[j] = sd;
    }
  }
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
  if (x.cols() != means.size()) throw Error(ErrorKind::ShapeMismatch, "design has the wrong column count");
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (constant[static_cast<std::size_t>(j)]) {
      out.col(j).setZero();
    } else {
      out.col(j) = (x.col(j).array() - means[j]) / scales[j];
    }
  }
  return out;
}

Eigen::VectorXd LinearLassoModel::predict(const Eigen::MatrixXd& x) const {
  return predict_standardized(x, feature_means, feature_scales, coefficients, intercept);
}

Eigen::VectorXd LinearLassoModel::raw_coefficients() const {
  return coefficients.cwiseQuotient(feature_scales);
}

double LinearLassoModel::raw_intercept() const { return intercept - raw_coefficients().dot(feature_means); }

LinearLassoModel fit_linear_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda,
                                  const LassoOptions& options) {
  if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda must be non-negative");
  LinearSolver solver(x, y);
  std::vector<double> trace;
  const int sweeps = solver.solve(lambda, options, options.record_objective ? &trace : nullptr);
  auto model = solver.model(lambda, sweeps);
  model.objective_trace = std::move(trace);
  return model;
}

double linear_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  return LinearSolver(x, y).lambda_max();
}

Eigen::VectorXd LogisticLassoModel::predict_proba(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd eta = predict_standardized(x, feature_means, feature_scales, coefficients, intercept);
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = std::clamp(sigmoid(eta[i]), kProbClip, 1.0 - kProbClip);
  return eta;
}

LogisticLassoModel fit_logistic_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y01, double lambda,
                                      const LogisticOptions& options) {
  if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda must be non-negative");
  LogisticSolver solver(x, y01);
  const int outer = solver.solve(lambda, options);
  return solver.model(lambda, outer);
}

double logistic_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y01) {
  return LogisticSolver(x, y01).lambda_max();
}

std::vector<double> default_lambda_grid(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family, int size,
                                        double min_ratio) {
  if (size < 1) throw Error(ErrorKind::InvalidArgument, "grid size must be positive");
  if (!(min_ratio > 0.0 && min_ratio < 1.0)) throw Error(ErrorKind::InvalidArgument, "min_ratio must be in (0,1)");
  const double top = family == Family::Linear ? linear_lambda_max(x, y) : logistic_lambda_max(x, y);
  if (!(top > 0.0)) return {};
  std::vector<double> grid(static_cast<std::size_t>(size));
  if (size == 1) {
    grid[0] = top;
    return grid;
  }
  const double log_top = std::log(top);
  const double log_step = std::log(min_ratio) / static_cast<double>(size - 1);
  for (int i = 0; i < size; ++i) grid[static_cast<std::size_t>(i)] = std::exp(log_top + log_step * i);
  grid[0] = top;
  return grid;
}

CvResult cross_validate_lambda(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                               const CvPlan& plan) {
  if (plan.folds < 2) throw Error(ErrorKind::InvalidArgument, "cross-validation needs at least two folds");
  if (x.rows() != y.size()) throw Error(ErrorKind::ShapeMismatch, "design and response lengths differ");
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < static_cast<std::size_t>(plan.folds)) {
    throw Error(ErrorKind::TooFewObservations,
                std::to_string(n) + " rows cannot fill " + std::to_string(plan.folds) + " folds");
  }
  if (family == Family::Logistic) {
    const double ybar = y.mean();
    if (ybar <= 0.0 || ybar >= 1.0) throw Error(ErrorKind::SingleClass, "logistic response has a single class");
  }

  CvResult result;
  result.grid = plan.lambda_grid.empty()
                    ? default_lambda_grid(x, y, family, plan.grid_size, plan.min_ratio)
                    : plan.lambda_grid;
  if (result.grid.empty()) {
    // No covariate correlates with the response: every penalty gives the
    // intercept-only fit.
    result.lambda = 0.0;
    return result;
  }
  validate_grid(result.grid);

  std::vector<int> fold = draw_cv_folds(y, plan.folds, family, plan.rng_seed);
  if (family == Family::Logistic && !training_splits_have_both_classes(y, fold, plan.folds)) {
    fold = draw_cv_folds(y, plan.folds, family, derive_seed(plan.rng_seed, 1));
    if (!training_splits_have_both_classes(y, fold, plan.folds)) {
      throw Error(ErrorKind::SingleClass, "a cross-validation training split has a single class");
    }
  }

  const std::size_t grid_size = result.grid.size();
  std::vector<double> total_loss(grid_size, 0.0);
  for (int f = 0; f < plan.folds; ++f) {
    std::vector<Eigen::Index> train;
    std::vector<Eigen::Index> valid;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? valid : train).push_back(static_cast<Eigen::Index>(i));
    const Eigen::MatrixXd x_train = x(train, Eigen::all);
    const Eigen::VectorXd y_train = y(train);
    const Eigen::MatrixXd x_valid = x(valid, Eigen::all);
    const Eigen::VectorXd y_valid = y(valid);

    if (family == Family::Linear) {
      LinearSolver solver(x_train, y_train);
      for (std::size_t g = 0; g < grid_size; ++g) {
        solver.solve(result.grid[g], LassoOptions{}, nullptr);
        total_loss[g] += (solver.predict(x_valid) - y_valid).squaredNorm();
      }
    } else {
      LogisticSolver solver(x_train, y_train);
      for (std::size_t g = 0; g < grid_size; ++g) {
        const int outer = solver.solve(result.grid[g], LogisticOptions{});
        const Eigen::VectorXd prob = solver.model(result.grid[g], outer).predict_proba(x_valid);
        for (Eigen::Index i = 0; i < prob.size(); ++i) total_loss[g] += log_loss(y_valid[i], prob[i]);
      }
    }
  }

  result.loss.resize(grid_size);
  std::size_t best = 0;
  for (std::size_t g = 0; g < grid_size; ++g) {
    result.loss[g] = total_loss[g] / static_cast<double>(n);
    if (result.loss[g] < result.loss[best]) best = g;
  }
  result.lambda = result.grid[best];
  return result;
}

double select_lambda_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family, const CvPlan& plan) {
  return cross_validate_lambda(x, y, family, plan).lambda;
}

}  // namespace idtest
