#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "idtest/dml.hpp"
#include "idtest/frame.hpp"

namespace idtest {

/// Y = tau D + X'beta + gamma Z + gamma_het Z 1{x1 > 0} + W + U,
/// D = 1{X'beta + pi Z + delta W + V > 0}, X ~ N(0, Sigma) with Sigma_ij = rho^|i-j|,
/// beta_i = 0.7 / i, Z ~ Bernoulli(1/2), U, V, W iid N(0, 1).
struct DgpConfig {
  std::size_t n = 1000;
  std::size_t p = 50;
  double delta = 0.0;  // confounding of D through W
  double gamma = 0.0;  // direct effect of Z on Y
  double gamma_heterogeneous = 0.0;  // extra direct effect of Z where x1 > 0
  double first_stage = 1.0;  // pi; 0 drops Z from the treatment index
  double rho = 0.5;
  double treatment_effect = 1.0;
  std::uint64_t seed = 1;
};

Eigen::MatrixXd build_covariance(std::size_t p, double rho);

/// Holds the Cholesky factor of the covariate covariance, computed once.
class Dgp {
 public:
  explicit Dgp(const DgpConfig& config);

  const DgpConfig& config() const { return config_; }
  const Eigen::VectorXd& beta() const { return beta_; }
  const Eigen::MatrixXd& covariance_factor() const { return factor_; }

  /// Sample for one replication; the stream depends only on (seed, index).
  ObservationFrame draw(std::size_t replication_index) const;

  /// E[Y | Z=z, D, X] for every row of `frame`.
  Eigen::VectorXd true_mu(const ObservationFrame& frame, int z) const;
  /// Pr(Z=1 | D, X); 1/2 when first_stage is 0.
  Eigen::VectorXd true_propensity(const ObservationFrame& frame) const;

 private:
  DgpConfig config_;
  Eigen::VectorXd beta_;
  Eigen::MatrixXd factor_;
};

ObservationFrame draw_sample(const DgpConfig& config, std::size_t replication_index);

struct McReplication {
  bool ok = false;
  double delta_hat = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
  std::string error;
};

struct McSummary {
  std::size_t replications = 0;  // successful replications
  std::size_t failures = 0;
  double mean_est = 0.0;
  double std_est = 0.0;
  double mean_se = 0.0;
  double rejection_rate = 0.0;
  double alpha = 0.05;
  std::vector<McReplication> runs;
};

/// draw_sample -> run_test(All) per replication. Failed replications are
/// counted and excluded from the summary.
McSummary run_monte_carlo(const DgpConfig& config, std::size_t replications, const DmlConfig& estimator,
                          double alpha = 0.05, int threads = 1);

}  // namespace idtest
