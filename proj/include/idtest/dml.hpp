#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "idtest/forest.hpp"
#include "idtest/frame.hpp"
#include "idtest/lasso.hpp"

namespace idtest {

enum class LearnerKind { Lasso, Forest };

std::string_view to_string(LearnerKind kind);

struct DmlConfig {
  int folds = 3;
  LearnerKind learner = LearnerKind::Lasso;
  double trim = 0.01;
  std::uint64_t seed = 1;
  CvPlan cv;                          // rng_seed is re-derived per fold and model
  std::optional<double> fixed_lambda;  // skip cross-validation for every lasso fit
  ForestConfig forest;                 // seed is re-derived per fold and model
  int threads = 1;
};

/// Cross-fitting folds, stratified by the (d, z) cell.
struct FoldAssignment {
  int k = 0;
  std::vector<int> fold_of;

  std::vector<std::size_t> fold_sizes() const;
};

/// Per-fold record of what was fitted. Penalties are NaN for forest learners.
struct FoldDiagnostics {
  std::size_t train_rows = 0;
  std::size_t heldout_rows = 0;
  double lambda_mu1 = 0.0;
  double lambda_mu0 = 0.0;
  double lambda_p = 0.0;
};

struct NuisanceFit {
  Eigen::VectorXd mu1_hat;  // E[Y | Z=1, D, X]
  Eigen::VectorXd mu0_hat;  // E[Y | Z=0, D, X]
  Eigen::VectorXd p_hat;    // Pr(Z=1 | D, X), in (0,1)
  std::vector<int> fold_of;  // -1 when not cross-fitted
  LearnerKind learner_kind = LearnerKind::Lasso;
  // training_rows[f]: rows used to fit the models that predicted fold f.
  std::vector<std::vector<std::size_t>> training_rows;
  std::vector<FoldDiagnostics> folds;
};

struct ScoreVector {
  Eigen::VectorXd phi;
  std::vector<bool> kept;
  double trim_threshold = 0.01;

  std::size_t n_kept() const;
  std::vector<double> kept_values() const;
};

struct TestResult {
  double delta_hat = 0.0;
  double std_error = 0.0;
  double t_stat = 0.0;
  double p_value = 1.0;
  std::size_t n_total = 0;
  std::size_t n_used = 0;
  ArmSelector arm = ArmSelector::All;
  bool zero_variance = false;
  std::vector<FoldDiagnostics> folds;
};

FoldAssignment assign_folds(const ObservationFrame& frame, int k, std::uint64_t seed);

/// Outcome models are fitted separately on the Z=1 and Z=0 rows of each
/// training split; the instrument propensity on the whole training split.
/// Regressors are (D, X), or X alone when D is constant in the frame.
NuisanceFit crossfit_nuisances(const ObservationFrame& frame, const FoldAssignment& folds, const DmlConfig& config);

/// phi_i = mu1 - mu0 + z (y - mu1) / p - (1 - z)(y - mu0) / (1 - p); rows with
/// p outside [trim, 1 - trim] are dropped.
ScoreVector compute_scores(const ObservationFrame& frame, const NuisanceFit& nuisance, double trim_threshold = 0.01);

TestResult estimate_delta(const ScoreVector& scores, ArmSelector arm = ArmSelector::All);

struct DmlRun {
  NuisanceFit nuisance;
  ScoreVector scores;
  TestResult result;
};

/// subset_arm -> assign_folds -> crossfit_nuisances -> compute_scores -> estimate_delta.
DmlRun run_pipeline(const ObservationFrame& frame, ArmSelector arm, const DmlConfig& config);

TestResult run_test(const ObservationFrame& frame, ArmSelector arm, const DmlConfig& config);

/// Score mean with caller-supplied nuisances, no cross-fitting.
TestResult oracle_plugin_delta(const ObservationFrame& frame, const Eigen::VectorXd& true_mu1,
                               const Eigen::VectorXd& true_mu0, const Eigen::VectorXd& true_p,
                               double trim_threshold = 0.01);

}  // namespace idtest
