#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "idtest/error.hpp"
#include "idtest/frame.hpp"
#include "idtest/rng.hpp"

using namespace idtest;

namespace {

RawTable small_table(std::vector<double> y, std::vector<double> d, std::vector<double> z, std::vector<double> x) {
  RawTable t;
  t.names = {"y", "d", "z", "x1"};
  t.columns = {std::move(y), std::move(d), std::move(z), std::move(x)};
  return t;
}

const ColumnRoles kRoles{"y", "d", "z", {"x1"}};

ErrorKind kind_of(const RawTable& t, const ColumnRoles& roles) {
  try {
    validate_frame(t, roles);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

ObservationFrame random_frame(std::uint64_t seed, std::size_t n, std::size_t p) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(0.5);
  RawTable t;
  ColumnRoles roles{"y", "d", "z", {}};
  t.names = {"y", "d", "z"};
  t.columns.resize(3);
  for (std::size_t i = 0; i < n; ++i) {
    t.columns[0].push_back(normal(rng));
    t.columns[1].push_back(coin(rng) ? 1.0 : 0.0);
    t.columns[2].push_back(coin(rng) ? 1.0 : 0.0);
  }
  for (std::size_t j = 0; j < p; ++j) {
    t.names.push_back("x" + std::to_string(j + 1));
    roles.covariates.push_back(t.names.back());
    std::vector<double> col;
    for (std::size_t i = 0; i < n; ++i) col.push_back(normal(rng));
    t.columns.push_back(col);
  }
  return validate_frame(t, roles);
}

}  // namespace

TEST_CASE("validate_frame accepts a minimal frame") {
  const auto f = validate_frame(small_table({1.0, 2.0}, {0, 1}, {1, 0}, {0.5, -0.5}), kRoles);
  CHECK(f.n() == 2);
  CHECK(f.p() == 1);
  CHECK(f.d()[1] == 1);
  CHECK(f.z()[0] == 1);
  CHECK(f.x()(1, 0) == -0.5);
  CHECK(f.feature_names() == std::vector<std::string>{"x1"});
}

TEST_CASE("validate_frame error kinds") {
  CHECK(kind_of(small_table({1, 2}, {0, 2}, {1, 0}, {0, 0}), kRoles) == ErrorKind::NonBinary);
  CHECK(kind_of(small_table({1, 2}, {0, 1}, {0.5, 0}, {0, 0}), kRoles) == ErrorKind::NonBinary);
  CHECK(kind_of(small_table({1, std::nan("")}, {0, 1}, {1, 0}, {0, 0}), kRoles) == ErrorKind::NonFinite);
  CHECK(kind_of(small_table({1, 2}, {0, 1}, {1, 0}, {0, std::numeric_limits<double>::infinity()}), kRoles) ==
        ErrorKind::NonFinite);
  CHECK(kind_of(small_table({}, {}, {}, {}), kRoles) == ErrorKind::EmptyData);
  CHECK(kind_of(small_table({1}, {0}, {1}, {0}), ColumnRoles{"y", "d", "w", {"x1"}}) == ErrorKind::MissingColumn);
  CHECK(kind_of(small_table({1}, {0}, {1}, {0}), ColumnRoles{"y", "d", "z", {"x9"}}) == ErrorKind::MissingColumn);
  CHECK(kind_of(small_table({1}, {0}, {1}, {0}), ColumnRoles{"y", "d", "z", {}}) == ErrorKind::MissingColumn);
}

TEST_CASE("subset_arm selects rows by treatment") {
  const auto f = validate_frame(small_table({1, 2, 3}, {0, 1, 1}, {1, 0, 1}, {0.1, 0.2, 0.3}), kRoles);
  const auto treated = subset_arm(f, ArmSelector::Treated);
  CHECK(treated.n() == 2);
  CHECK(treated.d() == BinaryVector{1, 1});
  CHECK(treated.y()[0] == 2.0);
  CHECK(subset_arm(f, ArmSelector::All) == f);
  const auto only_treated = validate_frame(small_table({1, 2}, {1, 1}, {1, 0}, {0, 1}), kRoles);
  try {
    subset_arm(only_treated, ArmSelector::Control);
    FAIL("expected EmptyArm");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyArm);
  }
}

TEST_CASE("arm sizes add up and validation is idempotent") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto f = random_frame(seed, 5 + seed, 1 + seed % 4);
    std::size_t treated = 0;
    std::size_t control = 0;
    try {
      treated = subset_arm(f, ArmSelector::Treated).n();
    } catch (const Error&) {
    }
    try {
      control = subset_arm(f, ArmSelector::Control).n();
    } catch (const Error&) {
    }
    CHECK(treated + control == f.n());
    CHECK(validate_frame(f.to_table(), f.roles()) == f);
  }
}

TEST_CASE("regressors place the treatment first") {
  const auto f = validate_frame(small_table({1, 2}, {0, 1}, {1, 0}, {0.5, -0.5}), kRoles);
  const auto r = f.regressors(true);
  CHECK(r.cols() == 2);
  CHECK(r(1, 0) == 1.0);
  CHECK(r(1, 1) == -0.5);
  CHECK(f.regressor_names(true) == std::vector<std::string>{"d", "x1"});
  CHECK(f.regressors(false).cols() == 1);
}

TEST_CASE("take_rows keeps order and repeats") {
  const auto f = validate_frame(small_table({1, 2, 3}, {0, 1, 1}, {1, 0, 1}, {0.1, 0.2, 0.3}), kRoles);
  const std::vector<std::size_t> rows{2, 0, 2};
  const auto g = take_rows(f, rows);
  CHECK(g.n() == 3);
  CHECK(g.y()[0] == 3.0);
  CHECK(g.y()[1] == 1.0);
  CHECK(g.x()(2, 0) == 0.3);
}
