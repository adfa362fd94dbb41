#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace idtest {

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double value) {
    const double t = sum_ + value;
    if (std::abs(sum_) >= std::abs(value)) {
      compensation_ += (sum_ - t) + value;
    } else {
      compensation_ += (value - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

double normal_cdf(double x);

/// Two-sided p-value of a standard normal test statistic, 2(1 - Phi(|t|)).
double two_sided_normal_p(double t_stat);

/// Upper tail probability of a chi-square variable with `df` degrees of freedom.
double chi_square_sf(double statistic, int df);

double mean(std::span<const double> values);

/// Sample standard deviation with the n - 1 denominator.
double sample_sd(std::span<const double> values);

/// Type-7 (linear interpolation) empirical quantile. `sorted` must be ascending.
double quantile_type7(std::span<const double> sorted, double prob);

/// Benjamini-Hochberg step-up adjusted p-values, returned in input order.
std::vector<double> benjamini_hochberg(std::span<const double> p_values);

}  // namespace idtest
