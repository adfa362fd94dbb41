#include "idtest/subgroup.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "idtest/error.hpp"
#include "idtest/rng.hpp"
#include "idtest/stats.hpp"

namespace idtest {

namespace {

enum Stream : std::uint64_t { kSplit = 1, kFirstHalf = 2, kSecondHalf = 3, kRanking = 4, kImportance = 5 };

bool is_binary(const std::vector<double>& values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

}  // namespace

std::vector<std::size_t> SplitAssignment::first_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < second.size(); ++i) {
    if (!second[i]) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> SplitAssignment::second_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < second.size(); ++i) {
    if (second[i]) rows.push_back(i);
  }
  return rows;
}

SplitAssignment split_half(std::size_t n, std::uint64_t seed) {
  if (n < 4) throw Error(ErrorKind::TooFewObservations, "sample splitting needs at least 4 rows");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kSplit));
  std::shuffle(order.begin(), order.end(), rng);
  SplitAssignment split;
  split.second.assign(n, false);
  const std::size_t first_size = (n + 1) / 2;
  for (std::size_t pos = first_size; pos < n; ++pos) split.second[order[pos]] = true;
  return split;
}

std::vector<ImportanceEntry> rank_predictors(const ObservationFrame& frame, const ScoreVector& scores,
                                             const ForestConfig& forest, std::uint64_t seed) {
  if (scores.kept.size() != frame.n()) throw Error(ErrorKind::ShapeMismatch, "scores do not match the frame");
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < frame.n(); ++i) {
    if (scores.kept[i]) rows.push_back(static_cast<Eigen::Index>(i));
  }
  if (rows.size() < 2) throw Error(ErrorKind::TooFewObservations, "too few kept scores to rank predictors");
  const Eigen::MatrixXd x = frame.regressors(true)(rows, Eigen::all);
  const Eigen::VectorXd y = scores.phi(rows);
  ForestConfig cfg = forest;
  cfg.seed = derive_seed(seed, kRanking);
  const ForestModel model = fit_forest(x, y, cfg);
  const std::vector<double> importance = oob_permutation_importance(model, x, y, derive_seed(seed, kImportance));

  const auto names = frame.regressor_names(true);
  std::vector<ImportanceEntry> ranking;
  for (std::size_t j = 0; j < names.size(); ++j) ranking.push_back({names[j], importance[j]});
  std::stable_sort(ranking.begin(), ranking.end(),
                   [](const ImportanceEntry& a, const ImportanceEntry& b) { return a.importance > b.importance; });
  return ranking;
}

std::size_t SubgroupPartition::leaf_of(double value) const {
  return static_cast<std::size_t>(std::lower_bound(cut_points.begin(), cut_points.end(), value) - cut_points.begin());
}

std::vector<double> variable_values(const ObservationFrame& frame, const std::string& variable) {
  if (variable == frame.roles().treatment) return std::vector<double>(frame.d().begin(), frame.d().end());
  const auto& names = frame.feature_names();
  const auto it = std::find(names.begin(), names.end(), variable);
  if (it == names.end()) throw Error(ErrorKind::MissingColumn, "no treatment or covariate named '" + variable + "'");
  const Eigen::VectorXd col = frame.x().col(it - names.begin());
  return std::vector<double>(col.data(), col.data() + col.size());
}

SubgroupPartition build_quantile_partition(const ObservationFrame& frame, const std::string& variable, int num_bins) {
  if (num_bins < 2) throw Error(ErrorKind::InvalidArgument, "a partition needs at least two bins");
  std::vector<double> values = variable_values(frame, variable);
  const std::set<double> distinct(values.begin(), values.end());
  if (distinct.size() < static_cast<std::size_t>(num_bins)) {
    throw Error(ErrorKind::DegenerateVariable, "'" + variable + "' has " + std::to_string(distinct.size()) +
                                                   " distinct values, fewer than " + std::to_string(num_bins) + " bins");
  }
  SubgroupPartition partition;
  partition.source_variable = variable;
  if (num_bins == 2 && distinct.size() == 2 && is_binary(values)) {
    partition.cut_points = {0.0};
    return partition;
  }
  std::sort(values.begin(), values.end());
  for (int b = 1; b < num_bins; ++b) {
    const double cut = quantile_type7(values, static_cast<double>(b) / num_bins);
    if (!partition.cut_points.empty() && !(cut > partition.cut_points.back())) {
      throw Error(ErrorKind::DegenerateVariable, "'" + variable + "' has tied quantiles; cut points are not distinct");
    }
    partition.cut_points.push_back(cut);
  }
  // The top bin must not be empty.
  if (!(values.back() > partition.cut_points.back())) {
    throw Error(ErrorKind::DegenerateVariable, "'" + variable + "' has no values above its top cut point");
  }
  return partition;
}

Eigen::VectorXd indicator_regression(std::span<const double> values, std::span<const std::size_t> leaf,
                                     std::size_t num_leaves) {
  if (values.size() != leaf.size()) throw Error(ErrorKind::ShapeMismatch, "values and leaf labels differ in length");
  const auto n = static_cast<Eigen::Index>(values.size());
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(num_leaves));
  Eigen::VectorXd response(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto m = leaf[static_cast<std::size_t>(i)];
    if (m >= num_leaves) throw Error(ErrorKind::ShapeMismatch, "leaf label out of range");
    design(i, static_cast<Eigen::Index>(m)) = 1.0;
    response[i] = values[static_cast<std::size_t>(i)];
  }
  return design.colPivHouseholderQr().solve(response);
}

LeafTestReport leaf_tests(const ObservationFrame& frame, const ScoreVector& scores, const SubgroupPartition& partition) {
  if (scores.kept.size() != frame.n()) throw Error(ErrorKind::ShapeMismatch, "scores do not match the frame");
  const std::vector<double> values = variable_values(frame, partition.source_variable);
  const std::size_t num_leaves = partition.num_leaves();

  std::vector<std::vector<double>> per_leaf(num_leaves);
  std::vector<double> kept_phi;
  std::vector<std::size_t> kept_leaf;
  for (std::size_t i = 0; i < frame.n(); ++i) {
    if (!scores.kept[i]) continue;
    const std::size_t m = partition.leaf_of(values[i]);
    const double phi = scores.phi[static_cast<Eigen::Index>(i)];
    per_leaf[m].push_back(phi);
    kept_phi.push_back(phi);
    kept_leaf.push_back(m);
  }

  LeafTestReport report;
  std::vector<double> raw_p;
  for (std::size_t m = 0; m < num_leaves; ++m) {
    const auto& leaf = per_leaf[m];
    if (leaf.size() < 2) {
      throw Error(ErrorKind::EmptyLeaf, "leaf " + std::to_string(m + 1) + " of '" + partition.source_variable +
                                            "' has " + std::to_string(leaf.size()) + " kept rows");
    }
    LeafResult r;
    r.n = leaf.size();
    r.delta_hat = mean(leaf);
    const bool all_equal = std::all_of(leaf.begin(), leaf.end(), [&](double v) { return v == leaf.front(); });
    if (all_equal) {
      r.zero_variance = true;
      r.std_error = 0.0;
      r.t_stat = r.delta_hat == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.delta_hat);
      r.p_value = r.delta_hat == 0.0 ? 1.0 : 0.0;
    } else {
      r.std_error = sample_sd(leaf) / std::sqrt(static_cast<double>(leaf.size()));
      r.t_stat = r.delta_hat / r.std_error;
      r.p_value = two_sided_normal_p(r.t_stat);
    }
    raw_p.push_back(r.p_value);
    report.leaves.push_back(r);
  }
  const auto adjusted = benjamini_hochberg(raw_p);
  for (std::size_t m = 0; m < num_leaves; ++m) report.leaves[m].p_adjusted = adjusted[m];

  const Eigen::VectorXd coef = indicator_regression(kept_phi, kept_leaf, num_leaves);
  report.regression_coefficients.assign(coef.data(), coef.data() + coef.size());
  for (std::size_t m = 0; m < num_leaves; ++m) {
    const double gap = std::abs(report.regression_coefficients[m] - report.leaves[m].delta_hat);
    if (gap > 1e-10 * std::max(1.0, std::abs(report.leaves[m].delta_hat))) {
      throw std::logic_error("indicator regression disagrees with the leaf mean");
    }
  }
  return report;
}

JointTest joint_wald(const LeafTestReport& report) {
  if (report.leaves.empty()) throw Error(ErrorKind::InvalidArgument, "no leaves to test");
  JointTest joint;
  joint.df = static_cast<int>(report.leaves.size());
  for (std::size_t m = 0; m < report.leaves.size(); ++m) {
    const auto& leaf = report.leaves[m];
    if (!(leaf.std_error > 0.0)) {
      throw Error(ErrorKind::ZeroVariance, "leaf " + std::to_string(m + 1) + " has zero standard error");
    }
    const double t = leaf.delta_hat / leaf.std_error;
    joint.wald_stat += t * t;
  }
  joint.p_value = chi_square_sf(joint.wald_stat, joint.df);
  return joint;
}

SubgroupReport run_subgroup_analysis(const ObservationFrame& frame, const SubgroupConfig& config) {
  SubgroupReport report;
  const SplitAssignment split = split_half(frame.n(), config.seed);
  const auto first_rows = split.first_rows();
  const auto second_rows = split.second_rows();
  const ObservationFrame first = take_rows(frame, first_rows);
  const ObservationFrame second = take_rows(frame, second_rows);
  report.n_first = first.n();
  report.n_second = second.n();

  auto score_half = [&](const ObservationFrame& half, std::uint64_t stream, const char* label) {
    DmlConfig dml = config.dml;
    dml.seed = derive_seed(config.seed, stream);
    try {
      return run_pipeline(half, ArmSelector::All, dml);
    } catch (const Error& e) {
      throw e.with_context(label);
    }
  };

  const DmlRun first_run = score_half(first, kFirstHalf, "first subsample");
  report.first_result = first_run.result;
  try {
    report.ranking = rank_predictors(first, first_run.scores, config.ranking_forest, config.seed);
  } catch (const Error& e) {
    throw e.with_context("predictor ranking");
  }
  const DmlRun second_run = score_half(second, kSecondHalf, "second subsample");
  report.second_result = second_run.result;

  for (int bins : config.bins) {
    BinAnalysis analysis;
    analysis.num_bins = bins;
    // Top-ranked variable that supports this many bins.
    std::string last_error;
    for (const auto& entry : report.ranking) {
      try {
        analysis.partition = build_quantile_partition(first, entry.variable, bins);
        break;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateVariable) throw;
        if (last_error.empty()) last_error = e.what();
      }
    }
    if (!analysis.partition) {
      analysis.error = "partition: " + last_error;
      report.analyses.push_back(std::move(analysis));
      continue;
    }
    try {
      analysis.leaves = leaf_tests(second, second_run.scores, *analysis.partition);
      analysis.joint = joint_wald(*analysis.leaves);
    } catch (const Error& e) {
      analysis.error = std::string("leaf tests: ") + e.what();
    }
    report.analyses.push_back(std::move(analysis));
  }
  return report;
}

}  // namespace idtest
