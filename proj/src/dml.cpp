#include "idtest/dml.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "idtest/error.hpp"
#include "idtest/parallel.hpp"
#include "idtest/rng.hpp"
#include "idtest/stats.hpp"

namespace idtest {

namespace {

constexpr double kForestPropensityClip = 1e-6;

// Sub-stream ids for per-fold seeds.
enum Stream : std::uint64_t { kOutcomeZ1 = 1, kOutcomeZ0 = 2, kPropensity = 3 };

bool is_constant(const BinaryVector& v) {
  return std::all_of(v.begin(), v.end(), [&](std::uint8_t x) { return x == v.front(); });
}

struct FittedPrediction {
  Eigen::VectorXd values;
  double lambda = std::numeric_limits<double>::quiet_NaN();
};

FittedPrediction fit_outcome(const Eigen::MatrixXd& x_train, const Eigen::VectorXd& y_train,
                             const Eigen::MatrixXd& x_eval, const DmlConfig& config, std::uint64_t seed) {
  FittedPrediction out;
  if (config.learner == LearnerKind::Forest) {
    ForestConfig forest = config.forest;
    forest.seed = seed;
    forest.threads = 1;
    out.values = fit_forest(x_train, y_train, forest).predict(x_eval);
    return out;
  }
  if (config.fixed_lambda) {
    out.lambda = *config.fixed_lambda;
  } else {
    CvPlan plan = config.cv;
    plan.rng_seed = seed;
    out.lambda = select_lambda_cv(x_train, y_train, Family::Linear, plan);
  }
  out.values = fit_linear_lasso(x_train, y_train, out.lambda).predict(x_eval);
  return out;
}

FittedPrediction fit_propensity(const Eigen::MatrixXd& x_train, const Eigen::VectorXd& z_train,
                                const Eigen::MatrixXd& x_eval, const DmlConfig& config, std::uint64_t seed) {
  FittedPrediction out;
  if (config.learner == LearnerKind::Forest) {
    ForestConfig forest = config.forest;
    forest.seed = seed;
    forest.threads = 1;
    out.values = fit_forest(x_train, z_train, forest).predict(x_eval);
    for (auto& v : out.values) v = std::clamp(v, kForestPropensityClip, 1.0 - kForestPropensityClip);
    return out;
  }
  if (config.fixed_lambda) {
    out.lambda = *config.fixed_lambda;
  } else {
    CvPlan plan = config.cv;
    plan.rng_seed = seed;
    out.lambda = select_lambda_cv(x_train, z_train, Family::Logistic, plan);
  }
  out.values = fit_logistic_lasso(x_train, z_train, out.lambda).predict_proba(x_eval);
  return out;
}

std::size_t cv_folds_needed(const DmlConfig& config) {
  if (config.learner == LearnerKind::Forest || config.fixed_lambda) return 1;
  return static_cast<std::size_t>(std::max(config.cv.folds, 1));
}

}  // namespace

std::string_view to_string(LearnerKind kind) {
  return kind == LearnerKind::Lasso ? "lasso" : "forest";
}

std::vector<std::size_t> FoldAssignment::fold_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(std::max(k, 0)), 0);
  for (int f : fold_of) {
    if (f >= 0 && f < k) ++sizes[static_cast<std::size_t>(f)];
  }
  return sizes;
}

std::size_t ScoreVector::n_kept() const {
  return static_cast<std::size_t>(std::count(kept.begin(), kept.end(), true));
}

std::vector<double> ScoreVector::kept_values() const {
  std::vector<double> out;
  out.reserve(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i]) out.push_back(phi[static_cast<Eigen::Index>(i)]);
  }
  return out;
}

FoldAssignment assign_folds(const ObservationFrame& frame, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::InvalidArgument, "cross-fitting needs at least two folds");
  std::vector<std::size_t> cells[4];
  for (std::size_t i = 0; i < frame.n(); ++i) cells[2 * frame.d()[i] + frame.z()[i]].push_back(i);

  Rng rng(derive_seed(seed, 0xf01d));
  std::vector<std::size_t> order;
  order.reserve(frame.n());
  for (int c = 0; c < 4; ++c) {
    auto& cell = cells[c];
    if (cell.empty()) continue;
    if (cell.size() < static_cast<std::size_t>(k)) {
      throw Error(ErrorKind::TooFewObservations, "cell (d=" + std::to_string(c / 2) + ", z=" + std::to_string(c % 2) +
                                                     ") has " + std::to_string(cell.size()) + " rows, fewer than " +
                                                     std::to_string(k) + " folds");
    }
    std::shuffle(cell.begin(), cell.end(), rng);
    order.insert(order.end(), cell.begin(), cell.end());
  }
  FoldAssignment folds;
  folds.k = k;
  folds.fold_of.assign(frame.n(), 0);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    folds.fold_of[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
  }
  return folds;
}

NuisanceFit crossfit_nuisances(const ObservationFrame& frame, const FoldAssignment& folds, const DmlConfig& config) {
  if (folds.fold_of.size() != frame.n()) throw Error(ErrorKind::ShapeMismatch, "fold assignment does not match frame");
  if (folds.k < 2) throw Error(ErrorKind::InvalidArgument, "cross-fitting needs at least two folds");

  const bool with_treatment = !is_constant(frame.d());
  const Eigen::MatrixXd regressors = frame.regressors(with_treatment);
  const auto n = static_cast<Eigen::Index>(frame.n());
  const std::size_t min_stratum = cv_folds_needed(config);

  NuisanceFit fit;
  fit.learner_kind = config.learner;
  fit.fold_of = folds.fold_of;
  fit.mu1_hat.resize(n);
  fit.mu0_hat.resize(n);
  fit.p_hat.resize(n);
  fit.training_rows.resize(static_cast<std::size_t>(folds.k));
  fit.folds.resize(static_cast<std::size_t>(folds.k));

  parallel_for(static_cast<std::size_t>(folds.k), config.threads, [&](std::size_t f) {
    const std::string where = "fold " + std::to_string(f);
    std::vector<Eigen::Index> heldout;
    std::vector<Eigen::Index> train;
    std::vector<Eigen::Index> train_z1;
    std::vector<Eigen::Index> train_z0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto row = static_cast<std::size_t>(i);
      if (folds.fold_of[row] == static_cast<int>(f)) {
        heldout.push_back(i);
        continue;
      }
      train.push_back(i);
      (frame.z()[row] == 1 ? train_z1 : train_z0).push_back(i);
    }
    if (heldout.empty()) return;
    if (train_z1.empty() || train_z0.empty()) {
      throw Error(ErrorKind::DegenerateFold, where + ": training split has a constant instrument");
    }
    if (train_z1.size() < min_stratum || train_z0.size() < min_stratum) {
      throw Error(ErrorKind::TooFewObservations, where + ": an instrument stratum of the training split has fewer rows "
                                                         "than cross-validation folds");
    }

    const Eigen::MatrixXd x_eval = regressors(heldout, Eigen::all);
    const std::uint64_t fold_seed = derive_seed(config.seed, f + 1);
    try {
      const auto mu1 = fit_outcome(regressors(train_z1, Eigen::all), frame.y()(train_z1), x_eval, config,
                                   derive_seed(fold_seed, kOutcomeZ1));
      const auto mu0 = fit_outcome(regressors(train_z0, Eigen::all), frame.y()(train_z0), x_eval, config,
                                   derive_seed(fold_seed, kOutcomeZ0));
      Eigen::VectorXd z_train(static_cast<Eigen::Index>(train.size()));
      for (std::size_t t = 0; t < train.size(); ++t) {
        z_train[static_cast<Eigen::Index>(t)] = frame.z()[static_cast<std::size_t>(train[t])];
      }
      const auto prop = fit_propensity(regressors(train, Eigen::all), z_train, x_eval, config,
                                       derive_seed(fold_seed, kPropensity));
      for (std::size_t h = 0; h < heldout.size(); ++h) {
        const auto i = heldout[h];
        const auto hh = static_cast<Eigen::Index>(h);
        fit.mu1_hat[i] = mu1.values[hh];
        fit.mu0_hat[i] = mu0.values[hh];
        fit.p_hat[i] = prop.values[hh];
      }
      auto& diag = fit.folds[f];
      diag.train_rows = train.size();
      diag.heldout_rows = heldout.size();
      diag.lambda_mu1 = mu1.lambda;
      diag.lambda_mu0 = mu0.lambda;
      diag.lambda_p = prop.lambda;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::SingleClass) throw Error(ErrorKind::DegenerateFold, where + ": " + e.detail());
      throw e.with_context(where);
    }
    auto& rows = fit.training_rows[f];
    rows.reserve(train.size());
    for (auto i : train) rows.push_back(static_cast<std::size_t>(i));
  });
  return fit;
}

ScoreVector compute_scores(const ObservationFrame& frame, const NuisanceFit& nuisance, double trim_threshold) {
  if (!(trim_threshold > 0.0 && trim_threshold < 0.5)) {
    throw Error(ErrorKind::InvalidArgument, "trim threshold must lie in (0, 0.5)");
  }
  const auto n = static_cast<Eigen::Index>(frame.n());
  if (nuisance.mu1_hat.size() != n || nuisance.mu0_hat.size() != n || nuisance.p_hat.size() != n) {
    throw Error(ErrorKind::ShapeMismatch, "nuisance predictions do not match the frame");
  }
  ScoreVector scores;
  scores.trim_threshold = trim_threshold;
  scores.phi.resize(n);
  scores.kept.assign(frame.n(), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = static_cast<std::size_t>(i);
    const double p = nuisance.p_hat[i];
    const double mu1 = nuisance.mu1_hat[i];
    const double mu0 = nuisance.mu0_hat[i];
    const double y = frame.y()[i];
    const double z = frame.z()[row];
    scores.kept[row] = p >= trim_threshold && p <= 1.0 - trim_threshold;
    scores.phi[i] = scores.kept[row] ? mu1 - mu0 + z * (y - mu1) / p - (1.0 - z) * (y - mu0) / (1.0 - p)
                                     : std::numeric_limits<double>::quiet_NaN();
  }
  return scores;
}

TestResult estimate_delta(const ScoreVector& scores, ArmSelector arm) {
  const std::vector<double> kept = scores.kept_values();
  if (kept.size() < 2) {
    throw Error(ErrorKind::TooFewObservations, std::to_string(kept.size()) + " scores left after trimming");
  }
  TestResult result;
  result.arm = arm;
  result.n_total = static_cast<std::size_t>(scores.phi.size());
  result.n_used = kept.size();
  result.delta_hat = mean(kept);
  const bool all_equal = std::all_of(kept.begin(), kept.end(), [&](double v) { return v == kept.front(); });
  if (all_equal) {
    result.zero_variance = true;
    result.std_error = 0.0;
    if (result.delta_hat == 0.0) {
      result.t_stat = 0.0;
      result.p_value = 1.0;
    } else {
      result.t_stat = std::copysign(std::numeric_limits<double>::infinity(), result.delta_hat);
      result.p_value = 0.0;
    }
    return result;
  }
  result.std_error = sample_sd(kept) / std::sqrt(static_cast<double>(kept.size()));
  result.t_stat = result.delta_hat / result.std_error;
  result.p_value = two_sided_normal_p(result.t_stat);
  return result;
}

DmlRun run_pipeline(const ObservationFrame& frame, ArmSelector arm, const DmlConfig& config) {
  const std::string where = "arm " + std::string(to_string(arm));
  try {
    const ObservationFrame sample = subset_arm(frame, arm);
    const FoldAssignment folds = assign_folds(sample, config.folds, config.seed);
    DmlRun run;
    run.nuisance = crossfit_nuisances(sample, folds, config);
    run.scores = compute_scores(sample, run.nuisance, config.trim);
    run.result = estimate_delta(run.scores, arm);
    run.result.folds = run.nuisance.folds;
    return run;
  } catch (const Error& e) {
    throw e.with_context(where);
  }
}

TestResult run_test(const ObservationFrame& frame, ArmSelector arm, const DmlConfig& config) {
  return run_pipeline(frame, arm, config).result;
}

TestResult oracle_plugin_delta(const ObservationFrame& frame, const Eigen::VectorXd& true_mu1,
                               const Eigen::VectorXd& true_mu0, const Eigen::VectorXd& true_p,
                               double trim_threshold) {
  NuisanceFit fit;
  fit.mu1_hat = true_mu1;
  fit.mu0_hat = true_mu0;
  fit.p_hat = true_p;
  fit.fold_of.assign(frame.n(), -1);
  return estimate_delta(compute_scores(frame, fit, trim_threshold));
}

}  // namespace idtest
