#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "idtest/error.hpp"
#include "idtest/rng.hpp"
#include "idtest/simulation.hpp"
#include "idtest/stats.hpp"
#include "idtest/subgroup.hpp"

using namespace idtest;

namespace {

ObservationFrame frame_with_x(const std::vector<std::vector<double>>& x, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal;
  const std::size_t n = x.front().size();
  RawTable t;
  ColumnRoles roles{"y", "d", "z", {}};
  t.names = {"y", "d", "z"};
  t.columns.resize(3);
  for (std::size_t i = 0; i < n; ++i) {
    t.columns[0].push_back(normal(rng));
    t.columns[1].push_back(coin(rng) ? 1.0 : 0.0);
    t.columns[2].push_back(coin(rng) ? 1.0 : 0.0);
  }
  for (std::size_t j = 0; j < x.size(); ++j) {
    t.names.push_back("x" + std::to_string(j + 1));
    roles.covariates.push_back(t.names.back());
    t.columns.push_back(x[j]);
  }
  return validate_frame(t, roles);
}

ScoreVector scores_of(const std::vector<double>& phi) {
  ScoreVector s;
  s.phi = Eigen::Map<const Eigen::VectorXd>(phi.data(), static_cast<Eigen::Index>(phi.size()));
  s.kept.assign(phi.size(), true);
  return s;
}

std::vector<std::vector<double>> normal_columns(Rng& rng, std::size_t n, std::size_t p) {
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> x(p, std::vector<double>(n));
  for (auto& col : x) {
    for (auto& v : col) v = normal(rng);
  }
  return x;
}

}  // namespace

TEST_CASE("split_half sizes, determinism and complement") {
  const auto a = split_half(10, 3);
  CHECK(a.first_rows().size() == 5);
  CHECK(a.second_rows().size() == 5);
  const auto b = split_half(11, 3);
  CHECK(b.first_rows().size() + b.second_rows().size() == 11);
  CHECK(std::max(b.first_rows().size(), b.second_rows().size()) == 6);
  CHECK(split_half(10, 3).second == a.second);
  for (std::uint64_t seed = 1; seed < 30; ++seed) {
    const auto s = split_half(4 + seed, seed);
    std::set<std::size_t> all;
    for (auto r : s.first_rows()) all.insert(r);
    for (auto r : s.second_rows()) CHECK(all.insert(r).second);
    CHECK(all.size() == 4 + seed);
  }
  try {
    split_half(3, 1);
    FAIL("expected TooFewObservations");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooFewObservations);
  }
}

TEST_CASE("quantile partition") {
  const auto f = frame_with_x({{1, 2, 3, 4}, {0, 1, 1, 0}, {5, 5, 5, 5}}, 1);
  const auto median = build_quantile_partition(f, "x1", 2);
  CHECK(median.cut_points == std::vector<double>{2.5});
  CHECK(median.leaf_of(2.5) == 0);
  CHECK(median.leaf_of(2.6) == 1);
  const auto binary = build_quantile_partition(f, "x2", 2);
  CHECK(binary.cut_points == std::vector<double>{0.0});
  CHECK(binary.leaf_of(0.0) == 0);
  CHECK(binary.leaf_of(1.0) == 1);
  const auto treatment = build_quantile_partition(f, "d", 2);
  CHECK(treatment.num_leaves() == 2);
  for (const char* bad : {"x3"}) {
    try {
      build_quantile_partition(f, bad, 2);
      FAIL("expected DegenerateVariable");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DegenerateVariable);
    }
  }
  try {
    build_quantile_partition(f, "x2", 4);
    FAIL("expected DegenerateVariable");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateVariable);
  }
  const auto quarters = build_quantile_partition(f, "x1", 4);
  CHECK(quarters.cut_points == std::vector<double>{1.75, 2.5, 3.25});
}

TEST_CASE("leaf tests: means of two leaves") {
  const auto f = frame_with_x({{1, 2, 3, 4}}, 2);
  SubgroupPartition partition{"x1", {2.5}};
  const auto report = leaf_tests(f, scores_of({1, 3, -2, 0}), partition);
  REQUIRE(report.leaves.size() == 2);
  CHECK(report.leaves[0].delta_hat == 2.0);
  CHECK(report.leaves[1].delta_hat == -1.0);
  CHECK(report.regression_coefficients[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(report.regression_coefficients[1] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(report.leaves[0].std_error == doctest::Approx(1.0));
  CHECK(report.leaves[0].n + report.leaves[1].n == 4);
  for (const auto& leaf : report.leaves) {
    CHECK(leaf.p_adjusted >= leaf.p_value);
    CHECK(leaf.p_adjusted <= 1.0);
  }
}

TEST_CASE("leaf tests: empty leaf and trimmed rows") {
  const auto f = frame_with_x({{1, 2, 3, 4, 5, 6}}, 3);
  auto scores = scores_of({1, 2, 3, 4, 5, 6});
  scores.kept[3] = false;
  scores.kept[4] = false;
  scores.kept[5] = false;
  try {
    leaf_tests(f, scores, SubgroupPartition{"x1", {3.5}});
    FAIL("expected EmptyLeaf");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyLeaf);
    CHECK(std::string(e.what()).find("leaf 2") != std::string::npos);
  }
  scores.kept[5] = true;
  const auto report = leaf_tests(f, scores, SubgroupPartition{"x1", {2.5}});
  CHECK(report.leaves[0].n + report.leaves[1].n == scores.n_kept());
}

TEST_CASE("indicator regression equals leaf means on random instances") {
  Rng rng(4);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> leaves(2, 6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = static_cast<std::size_t>(leaves(rng));
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    const std::size_t n = 10 + static_cast<std::size_t>(trial);
    std::vector<double> values(n);
    std::vector<std::size_t> leaf(n);
    for (std::size_t i = 0; i < n; ++i) {
      leaf[i] = i < m ? i : pick(rng);
      values[i] = 5.0 * normal(rng) + static_cast<double>(leaf[i]);
    }
    const Eigen::VectorXd coef = indicator_regression(values, leaf, m);
    for (std::size_t k = 0; k < m; ++k) {
      double sum = 0.0;
      double count = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (leaf[i] == k) {
          sum += values[i];
          count += 1.0;
        }
      }
      CHECK(std::abs(coef[static_cast<Eigen::Index>(k)] - sum / count) <= 1e-10);
    }
  }
}

TEST_CASE("joint Wald test") {
  LeafTestReport zero;
  zero.leaves.resize(3);
  for (auto& leaf : zero.leaves) leaf.std_error = 1.0;
  const auto z = joint_wald(zero);
  CHECK(z.wald_stat == 0.0);
  CHECK(z.p_value == 1.0);
  CHECK(z.df == 3);

  LeafTestReport one;
  one.leaves.push_back({10, 1.96, 1.0, 1.96, 0.05, 0.05, false});
  CHECK(joint_wald(one).p_value == doctest::Approx(0.0500).epsilon(1e-3));

  LeafTestReport two;
  two.leaves.push_back({10, 2.19, 1.0, 2.19, 0.0, 0.0, false});
  two.leaves.push_back({10, 0.24, 1.0, 0.24, 0.0, 0.0, false});
  const auto j = joint_wald(two);
  CHECK(j.wald_stat == doctest::Approx(4.854).epsilon(1e-4));
  CHECK(j.p_value == doctest::Approx(0.088).epsilon(0.01));
  CHECK(j.df == 2);

  LeafTestReport degenerate;
  degenerate.leaves.push_back({10, 0.0, 0.0, 0.0, 1.0, 1.0, true});
  try {
    joint_wald(degenerate);
    FAIL("expected ZeroVariance");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ZeroVariance);
  }
}

TEST_CASE("rank_predictors: output shape and a planted signal") {
  int first = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(40 + s);
    std::normal_distribution<double> normal;
    const auto x = normal_columns(rng, 300, 6);
    const auto f = frame_with_x(x, 50 + s);
    std::vector<double> phi(300);
    for (std::size_t i = 0; i < 300; ++i) phi[i] = (x[0][i] > 0 ? 1.0 : 0.0) + 0.1 * normal(rng);
    ForestConfig cfg;
    cfg.num_trees = 60;
    const auto ranking = rank_predictors(f, scores_of(phi), cfg, static_cast<std::uint64_t>(s));
    CHECK(ranking.size() == 7);
    for (std::size_t k = 1; k < ranking.size(); ++k) CHECK(ranking[k].importance <= ranking[k - 1].importance);
    if (ranking.front().variable == "x1") ++first;
  }
  CHECK(first >= 19);
}

TEST_CASE("rank_predictors: pure noise has no standout predictor") {
  const int seeds = 30;
  std::vector<double> all;
  std::vector<double> top;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(900 + s);
    std::normal_distribution<double> normal;
    const auto x = normal_columns(rng, 200, 4);
    const auto f = frame_with_x(x, 60 + s);
    std::vector<double> phi(200);
    for (auto& v : phi) v = normal(rng);
    ForestConfig cfg;
    cfg.num_trees = 60;
    const auto ranking = rank_predictors(f, scores_of(phi), cfg, static_cast<std::uint64_t>(s));
    for (const auto& e : ranking) all.push_back(e.importance);
    top.push_back(ranking.front().importance);
  }
  // Monte Carlo standard error of a single importance, pooled over variables and seeds.
  const double mc_se = sample_sd(all);
  int within = 0;
  for (double t : top) within += std::abs(t) <= 3.0 * mc_se ? 1 : 0;
  CHECK(within >= seeds * 9 / 10);
  CHECK(std::abs(mean(all)) <= 3.0 * mc_se / std::sqrt(static_cast<double>(all.size())));
}

TEST_CASE("subgroup analysis: partition learned only from the first half") {
  DgpConfig dgp;
  dgp.n = 600;
  dgp.p = 6;
  dgp.gamma_heterogeneous = 0.4;
  const auto f = draw_sample(dgp, 0);
  SubgroupConfig cfg;
  cfg.ranking_forest.num_trees = 40;
  const auto report = run_subgroup_analysis(f, cfg);

  // Perturb only second-half outcomes; ranking and cut points must not move.
  const auto split = split_half(f.n(), cfg.seed);
  RawTable t = f.to_table();
  for (auto row : split.second_rows()) t.columns[0][row] += 100.0;
  const auto perturbed = run_subgroup_analysis(validate_frame(t, f.roles()), cfg);
  REQUIRE(report.ranking.size() == perturbed.ranking.size());
  for (std::size_t k = 0; k < report.ranking.size(); ++k) {
    CHECK(report.ranking[k].variable == perturbed.ranking[k].variable);
    CHECK(report.ranking[k].importance == perturbed.ranking[k].importance);
  }
  REQUIRE(report.analyses.size() == 2);
  for (std::size_t a = 0; a < 2; ++a) {
    REQUIRE(report.analyses[a].partition);
    CHECK(report.analyses[a].partition->cut_points == perturbed.analyses[a].partition->cut_points);
    std::size_t total = 0;
    for (const auto& leaf : report.analyses[a].leaves->leaves) total += leaf.n;
    CHECK(total == report.second_result.n_used);
  }
  CHECK(report.analyses[0].num_bins == 2);
  CHECK(report.analyses[1].partition->num_leaves() == 4);
  CHECK(report.n_first == 300);
  CHECK(report.n_second == 300);
}

TEST_CASE("subgroup analysis: deterministic") {
  DgpConfig dgp;
  dgp.n = 400;
  dgp.p = 4;
  const auto f = draw_sample(dgp, 1);
  SubgroupConfig cfg;
  cfg.ranking_forest.num_trees = 20;
  const auto a = run_subgroup_analysis(f, cfg);
  cfg.ranking_forest.threads = 3;
  cfg.dml.threads = 2;
  const auto b = run_subgroup_analysis(f, cfg);
  for (std::size_t k = 0; k < a.analyses.size(); ++k) {
    CHECK(a.analyses[k].joint->wald_stat == b.analyses[k].joint->wald_stat);
    CHECK(a.analyses[k].partition->source_variable == b.analyses[k].partition->source_variable);
  }
}
