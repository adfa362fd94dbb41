#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "idtest/dml.hpp"
#include "idtest/forest.hpp"
#include "idtest/frame.hpp"

namespace idtest {

/// second[i] is true when row i belongs to the second (testing) subsample.
struct SplitAssignment {
  std::vector<bool> second;

  std::vector<std::size_t> first_rows() const;
  std::vector<std::size_t> second_rows() const;
};

SplitAssignment split_half(std::size_t n, std::uint64_t seed);

struct ImportanceEntry {
  std::string variable;
  double importance = 0.0;
};

/// Forest of the kept scores on (D, X), ranked by out-of-bag permutation
/// importance, descending; ties keep column order.
std::vector<ImportanceEntry> rank_predictors(const ObservationFrame& frame, const ScoreVector& scores,
                                             const ForestConfig& forest, std::uint64_t seed);

/// Leaves (-inf, c1], (c1, c2], ..., (c_{M-1}, inf) over one variable.
struct SubgroupPartition {
  std::string source_variable;
  std::vector<double> cut_points;

  std::size_t num_leaves() const { return cut_points.size() + 1; }
  std::size_t leaf_of(double value) const;
};

/// Values of a treatment or covariate column by name.
std::vector<double> variable_values(const ObservationFrame& frame, const std::string& variable);

/// Type-7 quantile cut points of `variable` in `frame`; a 0/1 variable with
/// two bins gives the leaves {0} and {1}.
SubgroupPartition build_quantile_partition(const ObservationFrame& frame, const std::string& variable, int num_bins);

struct LeafResult {
  std::size_t n = 0;
  double delta_hat = 0.0;
  double std_error = 0.0;
  double t_stat = 0.0;
  double p_value = 1.0;
  double p_adjusted = 1.0;
  bool zero_variance = false;
};

struct LeafTestReport {
  std::vector<LeafResult> leaves;
  std::vector<double> regression_coefficients;  // no-intercept indicator regression
};

/// Least-squares coefficients of `values` on leaf indicators without intercept,
/// solved by column-pivoted QR.
Eigen::VectorXd indicator_regression(std::span<const double> values, std::span<const std::size_t> leaf, std::size_t num_leaves);

LeafTestReport leaf_tests(const ObservationFrame& frame, const ScoreVector& scores, const SubgroupPartition& partition);

struct JointTest {
  double wald_stat = 0.0;
  int df = 0;
  double p_value = 1.0;
};

JointTest joint_wald(const LeafTestReport& report);

struct SubgroupConfig {
  DmlConfig dml;
  ForestConfig ranking_forest;
  std::vector<int> bins{2, 4};
  std::uint64_t seed = 1;
};

struct BinAnalysis {
  int num_bins = 0;
  std::optional<SubgroupPartition> partition;
  std::optional<LeafTestReport> leaves;
  std::optional<JointTest> joint;
  std::string error;  // empty on success
};

struct SubgroupReport {
  std::size_t n_first = 0;
  std::size_t n_second = 0;
  TestResult first_result;
  TestResult second_result;
  std::vector<ImportanceEntry> ranking;
  std::vector<BinAnalysis> analyses;
};

/// split_half -> scores on the first half -> rank_predictors -> quantile
/// partition -> scores on the second half -> leaf_tests -> joint_wald, once per
/// entry of config.bins.
SubgroupReport run_subgroup_analysis(const ObservationFrame& frame, const SubgroupConfig& config);

}  // namespace idtest
