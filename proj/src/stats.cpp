#include "idtest/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/gamma.hpp>

#include "idtest/error.hpp"

namespace idtest {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double two_sided_normal_p(double t_stat) {
  if (std::isnan(t_stat)) return 1.0;
  return std::min(1.0, std::erfc(std::abs(t_stat) / std::sqrt(2.0)));
}

double chi_square_sf(double statistic, int df) {
  if (df < 1) throw Error(ErrorKind::InvalidArgument, "chi-square needs df >= 1");
  if (statistic <= 0.0) return 1.0;
  if (std::isinf(statistic)) return 0.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * statistic);
}

double mean(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::TooFewObservations, "mean of an empty sample");
  CompensatedSum sum;
  for (double v : values) sum.add(v);
  return sum.value() / static_cast<double>(values.size());
}

double sample_sd(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorKind::TooFewObservations, "standard deviation needs two values");
  const double m = mean(values);
  CompensatedSum ss;
  for (double v : values) ss.add((v - m) * (v - m));
  return std::sqrt(ss.value() / static_cast<double>(values.size() - 1));
}

double quantile_type7(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw Error(ErrorKind::TooFewObservations, "quantile of an empty sample");
  if (prob < 0.0 || prob > 1.0) throw Error(ErrorKind::InvalidArgument, "quantile probability outside [0,1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<double> benjamini_hochberg(std::span<const double> p_values) {
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Stable on ties so the result does not depend on input order.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::vector<double> adjusted(m);
  double running_min = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const std::size_t idx = order[r];
    const double scaled = static_cast<double>(m) * p_values[idx] / static_cast<double>(r + 1);
    running_min = std::min(running_min, scaled);
    adjusted[idx] = std::max(running_min, p_values[idx]);
  }
  return adjusted;
}

}  // namespace idtest
