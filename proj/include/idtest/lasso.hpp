#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace idtest {

/// Column centering and scaling to unit (population) variance. Constant
/// columns keep scale 1 and are flagged so their coefficient stays at zero.
struct Standardizer {
  Eigen::VectorXd means;
  Eigen::VectorXd scales;
  std::vector<bool> constant;

  static Standardizer fit(const Eigen::MatrixXd& x);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

struct LassoOptions {
  double tolerance = 1e-7;  // max coefficient change between sweeps
  int max_sweeps = 10000;
  bool record_objective = false;
};

struct LinearLassoModel {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;  // standardized scale
  double lambda = 0.0;
  Eigen::VectorXd feature_means;
  Eigen::VectorXd feature_scales;
  int sweeps = 0;
  std::vector<double> objective_trace;  // filled when LassoOptions::record_objective

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd raw_coefficients() const;
  double raw_intercept() const;
};

/// Minimizes (1/2n)|y - a - Xs b|^2 + lambda |b|_1 over standardized Xs by
/// cyclic coordinate descent.
LinearLassoModel fit_linear_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda,
                                  const LassoOptions& options = {});

/// Smallest penalty at which every linear lasso coefficient is zero.
double linear_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

struct LogisticOptions {
  double tolerance = 1e-7;
  int max_outer = 200;
  int max_inner_sweeps = 10000;
};

struct LogisticLassoModel {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;  // standardized scale
  double lambda = 0.0;
  Eigen::VectorXd feature_means;
  Eigen::VectorXd feature_scales;
  int outer_iterations = 0;

  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const;
};

/// Penalized Bernoulli likelihood, (1/n) sum [log(1+e^eta) - y eta] + lambda |b|_1,
/// fitted by iteratively reweighted coordinate descent. Throws SingleClass
/// when y01 is constant.
LogisticLassoModel fit_logistic_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y01, double lambda,
                                      const LogisticOptions& options = {});

double logistic_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y01);

enum class Family { Linear, Logistic };

struct CvPlan {
  int folds = 5;
  std::vector<double> lambda_grid;  // empty: derive from the data
  std::uint64_t rng_seed = 1;
  int grid_size = 50;
  double min_ratio = 1e-3;
};

/// `size` log-spaced penalties from lambda_max down to lambda_max * min_ratio.
/// Empty when lambda_max is zero (the response has no linear signal at all).
std::vector<double> default_lambda_grid(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                                        int size = 50, double min_ratio = 1e-3);

struct CvResult {
  double lambda = 0.0;
  std::vector<double> grid;
  std::vector<double> loss;  // mean out-of-fold loss per grid value
};

CvResult cross_validate_lambda(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                               const CvPlan& plan);

/// Grid penalty minimizing K-fold out-of-fold loss; ties go to the larger penalty.
double select_lambda_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family, const CvPlan& plan);

}  // namespace idtest
