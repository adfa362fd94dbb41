#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "idtest/dml.hpp"
#include "idtest/error.hpp"
#include "idtest/rng.hpp"
#include "idtest/simulation.hpp"
#include "idtest/stats.hpp"

using namespace idtest;

namespace {

ObservationFrame frame_from(const std::vector<double>& y, const std::vector<double>& d, const std::vector<double>& z,
                            const std::vector<std::vector<double>>& x) {
  RawTable t;
  ColumnRoles roles{"y", "d", "z", {}};
  t.names = {"y", "d", "z"};
  t.columns = {y, d, z};
  for (std::size_t j = 0; j < x.size(); ++j) {
    t.names.push_back("x" + std::to_string(j + 1));
    roles.covariates.push_back(t.names.back());
    t.columns.push_back(x[j]);
  }
  return validate_frame(t, roles);
}

NuisanceFit constant_nuisance(std::size_t n, double mu1, double mu0, double p) {
  NuisanceFit fit;
  fit.mu1_hat = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), mu1);
  fit.mu0_hat = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), mu0);
  fit.p_hat = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), p);
  fit.fold_of.assign(n, -1);
  return fit;
}

ObservationFrame balanced_frame(std::size_t per_cell, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> y, d, z;
  std::vector<std::vector<double>> x(2);
  for (int cell = 0; cell < 4; ++cell) {
    for (std::size_t i = 0; i < per_cell; ++i) {
      d.push_back(cell / 2);
      z.push_back(cell % 2);
      x[0].push_back(normal(rng));
      x[1].push_back(normal(rng));
      y.push_back(x[0].back() + d.back() + normal(rng));
    }
  }
  return frame_from(y, d, z, x);
}

}  // namespace

TEST_CASE("scores: four-row hand computation") {
  const auto f = frame_from({1, 2, 3, 4}, {0, 1, 0, 1}, {1, 0, 1, 0}, {{0.1, 0.2, 0.3, 0.4}});
  const auto scores = compute_scores(f, constant_nuisance(4, 2.0, 2.0, 0.5));
  CHECK(scores.phi[0] == -2.0);
  CHECK(scores.phi[1] == 0.0);
  CHECK(scores.phi[2] == 2.0);
  CHECK(scores.phi[3] == -4.0);
  const auto r = estimate_delta(scores);
  CHECK(r.delta_hat == -1.0);
  CHECK(r.std_error == doctest::Approx(std::sqrt(20.0 / 3.0) / 2.0).epsilon(1e-14));
  CHECK(r.std_error == doctest::Approx(1.29099).epsilon(1e-5));
  CHECK(r.t_stat == doctest::Approx(r.delta_hat / r.std_error).epsilon(1e-15));
  CHECK(r.p_value == doctest::Approx(2.0 * (1.0 - normal_cdf(std::abs(r.t_stat)))).epsilon(1e-12));
  CHECK(r.n_used == 4);
}

TEST_CASE("scores: reduce to 2 y (2z - 1) at p = 1/2 and zero outcome models") {
  const auto f = frame_from({1.5, -2, 3, 0.25}, {0, 1, 0, 1}, {1, 0, 0, 1}, {{0, 0, 0, 0}});
  const auto scores = compute_scores(f, constant_nuisance(4, 0.0, 0.0, 0.5));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(scores.phi[static_cast<Eigen::Index>(i)] == 2.0 * f.y()[static_cast<Eigen::Index>(i)] * (2.0 * f.z()[i] - 1.0));
  }
}

TEST_CASE("scores: two-sided trimming") {
  const auto f = frame_from({1, 2, 3, 4, 5}, {0, 1, 0, 1, 0}, {1, 0, 1, 0, 1}, {{0, 0, 0, 0, 0}});
  auto fit = constant_nuisance(5, 0.0, 0.0, 0.5);
  fit.p_hat << 0.005, 0.01, 0.5, 0.99, 0.995;
  const auto scores = compute_scores(f, fit, 0.01);
  CHECK(scores.kept == std::vector<bool>{false, true, true, true, false});
  CHECK(scores.n_kept() == 3);
  CHECK(std::isnan(scores.phi[0]));
  for (Eigen::Index i = 1; i < 4; ++i) CHECK(std::isfinite(scores.phi[i]));
  const auto r = estimate_delta(scores);
  CHECK(r.n_total == 5);
  CHECK(r.n_used == 3);
  const auto kept = scores.kept_values();
  CHECK(r.delta_hat == mean(kept));
}

TEST_CASE("estimate_delta: degenerate inputs") {
  const auto f = frame_from({0, 0, 0}, {0, 1, 0}, {1, 0, 1}, {{0, 1, 2}});
  const auto r = estimate_delta(compute_scores(f, constant_nuisance(3, 0.0, 0.0, 0.5)));
  CHECK(r.delta_hat == 0.0);
  CHECK(r.zero_variance);
  CHECK(r.p_value == 1.0);

  const auto g = frame_from({1, 1, 1}, {0, 1, 0}, {1, 1, 1}, {{0, 1, 2}});
  const auto nonzero = estimate_delta(compute_scores(g, constant_nuisance(3, 0.0, 0.0, 0.5)));
  CHECK(nonzero.zero_variance);
  CHECK(nonzero.delta_hat == 2.0);
  CHECK(nonzero.p_value == 0.0);

  auto fit = constant_nuisance(3, 0.0, 0.0, 0.5);
  fit.p_hat << 0.5, 0.001, 0.001;
  try {
    estimate_delta(compute_scores(f, fit));
    FAIL("expected TooFewObservations");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooFewObservations);
  }
}

TEST_CASE("assign_folds: stratified sizes") {
  const auto f = balanced_frame(25, 1);
  const auto folds = assign_folds(f, 2, 7);
  CHECK(folds.fold_sizes() == std::vector<std::size_t>{50, 50});
  for (int cell = 0; cell < 4; ++cell) {
    std::size_t in_zero = 0;
    for (std::size_t i = 0; i < f.n(); ++i) {
      if (f.d()[i] * 2 + f.z()[i] == cell && folds.fold_of[i] == 0) ++in_zero;
    }
    CHECK(in_zero >= 12);
    CHECK(in_zero <= 13);
  }
  CHECK(assign_folds(f, 2, 7).fold_of == folds.fold_of);

  const auto small = frame_from({1, 2, 3, 4, 5, 6, 7, 8, 9}, {0, 0, 0, 1, 1, 1, 1, 1, 1}, {0, 0, 0, 0, 0, 0, 1, 1, 1},
                                {{1, 2, 3, 4, 5, 6, 7, 8, 9}});
  CHECK(assign_folds(small, 3, 1).fold_sizes() == std::vector<std::size_t>{3, 3, 3});
}

TEST_CASE("assign_folds: random frames keep every stratum balanced") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const auto f = balanced_frame(5 + seed % 7, seed);
    const int k = 2 + static_cast<int>(seed % 4);
    const auto folds = assign_folds(f, k, seed);
    const auto sizes = folds.fold_sizes();
    CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
    for (int cell = 0; cell < 4; ++cell) {
      std::vector<int> counts(static_cast<std::size_t>(k), 0);
      for (std::size_t i = 0; i < f.n(); ++i) {
        if (f.d()[i] * 2 + f.z()[i] == cell) ++counts[static_cast<std::size_t>(folds.fold_of[i])];
      }
      CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
    }
  }
}

TEST_CASE("assign_folds: too few rows in a cell") {
  const auto f = frame_from({1, 2, 3, 4, 5}, {0, 0, 0, 1, 1}, {0, 0, 0, 0, 1}, {{1, 2, 3, 4, 5}});
  try {
    assign_folds(f, 3, 1);
    FAIL("expected TooFewObservations");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooFewObservations);
  }
}

TEST_CASE("crossfit: constant outcome is predicted exactly") {
  const auto base = balanced_frame(20, 3);
  RawTable t = base.to_table();
  std::fill(t.columns[0].begin(), t.columns[0].end(), 3.0);
  const auto f = validate_frame(t, base.roles());
  const DmlConfig cfg;
  const auto fit = crossfit_nuisances(f, assign_folds(f, 3, 1), cfg);
  CHECK((fit.mu1_hat.array() - 3.0).abs().maxCoeff() < 1e-6);
  CHECK((fit.mu0_hat.array() - 3.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("crossfit: no row is predicted by a model trained on it") {
  const auto f = balanced_frame(30, 4);
  for (LearnerKind kind : {LearnerKind::Lasso, LearnerKind::Forest}) {
    DmlConfig cfg;
    cfg.learner = kind;
    cfg.forest.num_trees = 10;
    const auto folds = assign_folds(f, 3, 2);
    const auto fit = crossfit_nuisances(f, folds, cfg);
    CHECK(fit.fold_of == folds.fold_of);
    REQUIRE(fit.training_rows.size() == 3);
    for (int k = 0; k < 3; ++k) {
      const auto& train = fit.training_rows[static_cast<std::size_t>(k)];
      CHECK(train.size() == f.n() - folds.fold_sizes()[static_cast<std::size_t>(k)]);
      for (auto row : train) CHECK(folds.fold_of[row] != k);
    }
    CHECK((fit.p_hat.array() > 0.0).all());
    CHECK((fit.p_hat.array() < 1.0).all());
  }
}

TEST_CASE("crossfit: instrument propensity near one half for a fair coin") {
  DgpConfig dgp;
  dgp.n = 4000;
  dgp.p = 10;
  const auto f = draw_sample(dgp, 0);
  const DmlConfig cfg;
  const auto fit = crossfit_nuisances(f, assign_folds(f, 3, 1), cfg);
  CHECK(std::abs(fit.p_hat.mean() - 0.5) <= 3.0 * std::sqrt(0.25 / 4000.0));
}

TEST_CASE("run_test: constant instrument within an arm") {
  std::vector<double> y, d, z;
  std::vector<std::vector<double>> x(1);
  Rng rng(5);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 60; ++i) {
    d.push_back(i % 2);
    z.push_back(i % 2 == 1 ? 1.0 : static_cast<double>((i / 2) % 2));
    x[0].push_back(normal(rng));
    y.push_back(normal(rng));
  }
  const auto f = frame_from(y, d, z, x);
  try {
    run_test(f, ArmSelector::Treated, DmlConfig{});
    FAIL("expected DegenerateFold");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateFold);
    CHECK(std::string(e.what()).find("treated") != std::string::npos);
  }
  CHECK_NOTHROW(run_test(f, ArmSelector::Control, DmlConfig{}));
}

TEST_CASE("run_test: row permutation with folds carried along") {
  DgpConfig dgp;
  dgp.n = 600;
  dgp.p = 8;
  dgp.gamma = 0.3;
  const auto f = draw_sample(dgp, 2);
  DmlConfig cfg;
  cfg.fixed_lambda = 0.01;
  const auto folds = assign_folds(f, 3, 9);

  std::vector<std::size_t> perm(f.n());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(12);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto g = take_rows(f, perm);
  FoldAssignment moved{folds.k, {}};
  for (auto row : perm) moved.fold_of.push_back(folds.fold_of[row]);

  const auto a = estimate_delta(compute_scores(f, crossfit_nuisances(f, folds, cfg)));
  const auto b = estimate_delta(compute_scores(g, crossfit_nuisances(g, moved, cfg)));
  CHECK(std::abs(a.delta_hat - b.delta_hat) < 1e-12);
}

TEST_CASE("run_test: scaling the outcome scales the estimate") {
  DgpConfig dgp;
  dgp.n = 500;
  dgp.p = 5;
  dgp.gamma = 0.2;
  const auto f = draw_sample(dgp, 3);
  RawTable t = f.to_table();
  const double c = 3.5;
  for (auto& v : t.columns[0]) v *= c;
  const auto g = validate_frame(t, f.roles());
  DmlConfig cfg;
  cfg.fixed_lambda = 0.0;
  const auto a = run_test(f, ArmSelector::All, cfg);
  const auto b = run_test(g, ArmSelector::All, cfg);
  // Exact up to the coordinate-descent stopping tolerance.
  CHECK(b.delta_hat == doctest::Approx(c * a.delta_hat).epsilon(1e-7));
  CHECK(b.std_error == doctest::Approx(c * a.std_error).epsilon(1e-7));
}

TEST_CASE("run_test: deterministic and thread-invariant") {
  DgpConfig dgp;
  dgp.n = 400;
  dgp.p = 6;
  const auto f = draw_sample(dgp, 1);
  DmlConfig cfg;
  const auto a = run_test(f, ArmSelector::All, cfg);
  cfg.threads = 3;
  const auto b = run_test(f, ArmSelector::All, cfg);
  CHECK(a.delta_hat == b.delta_hat);
  CHECK(a.std_error == b.std_error);
  CHECK(a.folds.size() == 3);
  for (const auto& fold : a.folds) CHECK(fold.lambda_mu1 >= 0.0);

  cfg.learner = LearnerKind::Forest;
  cfg.forest.num_trees = 20;
  const auto c = run_test(f, ArmSelector::Treated, cfg);
  CHECK(std::isnan(c.folds.front().lambda_p));
  CHECK(c.arm == ArmSelector::Treated);
}

TEST_CASE("oracle plug-in: double robustness on the simulated design") {
  DgpConfig dgp;
  dgp.n = 20000;
  const Dgp design(dgp);
  const auto f = design.draw(0);
  const Eigen::VectorXd mu1 = design.true_mu(f, 1);
  const Eigen::VectorXd mu0 = design.true_mu(f, 0);
  const Eigen::VectorXd p = design.true_propensity(f);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f.n()));
  const auto both = oracle_plugin_delta(f, mu1, mu0, p);
  const auto wrong_p = oracle_plugin_delta(f, mu1, mu0, Eigen::VectorXd::Constant(zero.size(), 0.5));
  const auto wrong_mu = oracle_plugin_delta(f, zero, zero, p);
  CHECK(std::abs(both.t_stat) < 3.0);
  CHECK(std::abs(wrong_p.t_stat) < 3.0);
  CHECK(std::abs(wrong_mu.t_stat) < 3.0);
  CHECK(wrong_mu.std_error > both.std_error);
}
