#include "idtest/simulation.hpp"

#include <cmath>
#include <random>

#include "idtest/error.hpp"
#include "idtest/parallel.hpp"
#include "idtest/rng.hpp"
#include "idtest/stats.hpp"

namespace idtest {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

}  // namespace

Eigen::MatrixXd build_covariance(std::size_t p, double rho) {
  if (p < 1) throw Error(ErrorKind::InvalidArgument, "covariance needs p >= 1");
  if (!(rho >= 0.0 && rho < 1.0)) throw Error(ErrorKind::InvalidArgument, "rho must lie in [0, 1)");
  const auto dim = static_cast<Eigen::Index>(p);
  Eigen::MatrixXd sigma(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) sigma(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
  }
  return sigma;
}

Dgp::Dgp(const DgpConfig& config) : config_(config) {
  if (config.n < 1) throw Error(ErrorKind::InvalidArgument, "sample size must be positive");
  const auto p = static_cast<Eigen::Index>(config.p);
  const Eigen::MatrixXd sigma = build_covariance(config.p, config.rho);
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::InvalidArgument, "covariance is not positive definite");
  factor_ = llt.matrixL();
  beta_.resize(p);
  for (Eigen::Index i = 0; i < p; ++i) beta_[i] = 0.7 / static_cast<double>(i + 1);
}

ObservationFrame Dgp::draw(std::size_t replication_index) const {
  const auto n = static_cast<Eigen::Index>(config_.n);
  const auto p = static_cast<Eigen::Index>(config_.p);
  Rng rng = make_rng(config_.seed, replication_index);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  Eigen::MatrixXd xi(n, p);
  std::vector<double> z(static_cast<std::size_t>(n));
  Eigen::VectorXd u(n);
  Eigen::VectorXd v(n);
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) xi(i, j) = normal(rng);
    z[static_cast<std::size_t>(i)] = coin(rng) ? 1.0 : 0.0;
    u[i] = normal(rng);
    v[i] = normal(rng);
    w[i] = normal(rng);
  }
  const Eigen::MatrixXd x = xi * factor_.transpose();
  const Eigen::VectorXd index = x * beta_;

  RawTable table;
  std::vector<double> y(static_cast<std::size_t>(n));
  std::vector<double> d(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = static_cast<std::size_t>(i);
    d[row] = index[i] + config_.first_stage * z[row] + config_.delta * w[i] + v[i] > 0.0 ? 1.0 : 0.0;
    const double direct = config_.gamma + (x(i, 0) > 0.0 ? config_.gamma_heterogeneous : 0.0);
    y[row] = config_.treatment_effect * d[row] + index[i] + direct * z[row] + w[i] + u[i];
  }
  ColumnRoles roles{"y", "d", "z", {}};
  table.names = {"y", "d", "z"};
  table.columns = {std::move(y), std::move(d), std::move(z)};
  for (Eigen::Index j = 0; j < p; ++j) {
    const std::string name = "x" + std::to_string(j + 1);
    roles.covariates.push_back(name);
    table.names.push_back(name);
    const Eigen::VectorXd col = x.col(j);
    table.columns.emplace_back(col.data(), col.data() + col.size());
  }
  return validate_frame(table, roles);
}

Eigen::VectorXd Dgp::true_mu(const ObservationFrame& frame, int z) const {
  if (frame.p() != config_.p) throw Error(ErrorKind::ShapeMismatch, "frame does not come from this design");
  const Eigen::VectorXd index = frame.x() * beta_;
  const double scale = std::sqrt(1.0 + config_.delta * config_.delta);
  Eigen::VectorXd mu(index.size());
  for (Eigen::Index i = 0; i < index.size(); ++i) {
    const double d = frame.d()[static_cast<std::size_t>(i)];
    // E[W | D, X]: W enters the treatment index with weight delta.
    double w_mean = 0.0;
    if (config_.delta != 0.0) {
      const double a = (index[i] + config_.first_stage * z) / scale;
      const double ratio = d == 1.0 ? normal_pdf(a) / normal_cdf(a) : -normal_pdf(a) / normal_cdf(-a);
      w_mean = config_.delta / scale * ratio;
    }
    const double direct = config_.gamma + (frame.x()(i, 0) > 0.0 ? config_.gamma_heterogeneous : 0.0);
    mu[i] = config_.treatment_effect * d + index[i] + direct * z + w_mean;
  }
  return mu;
}

Eigen::VectorXd Dgp::true_propensity(const ObservationFrame& frame) const {
  if (frame.p() != config_.p) throw Error(ErrorKind::ShapeMismatch, "frame does not come from this design");
  const Eigen::VectorXd index = frame.x() * beta_;
  const double scale = std::sqrt(1.0 + config_.delta * config_.delta);
  Eigen::VectorXd p(index.size());
  for (Eigen::Index i = 0; i < index.size(); ++i) {
    const bool treated = frame.d()[static_cast<std::size_t>(i)] == 1.0;
    const double t1 = (index[i] + config_.first_stage) / scale;
    const double t0 = index[i] / scale;
    const double like1 = treated ? normal_cdf(t1) : normal_cdf(-t1);
    const double like0 = treated ? normal_cdf(t0) : normal_cdf(-t0);
    p[i] = like1 / (like1 + like0);
  }
  return p;
}

ObservationFrame draw_sample(const DgpConfig& config, std::size_t replication_index) {
  return Dgp(config).draw(replication_index);
}

McSummary run_monte_carlo(const DgpConfig& config, std::size_t replications, const DmlConfig& estimator,
                          double alpha, int threads) {
  if (replications < 1) throw Error(ErrorKind::InvalidArgument, "replications must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1)");
  const Dgp dgp(config);
  McSummary summary;
  summary.alpha = alpha;
  summary.runs.resize(replications);
  parallel_for(replications, threads, [&](std::size_t r) {
    auto& run = summary.runs[r];
    try {
      const ObservationFrame sample = dgp.draw(r);
      DmlConfig cfg = estimator;
      cfg.seed = derive_seed(estimator.seed, r);
      cfg.threads = 1;
      const TestResult result = run_test(sample, ArmSelector::All, cfg);
      run.ok = true;
      run.delta_hat = result.delta_hat;
      run.std_error = result.std_error;
      run.p_value = result.p_value;
    } catch (const Error& e) {
      run.ok = false;
      run.error = e.what();
    }
  });

  CompensatedSum est_sum;
  CompensatedSum se_sum;
  std::size_t rejections = 0;
  std::vector<double> estimates;
  for (const auto& run : summary.runs) {
    if (!run.ok) {
      ++summary.failures;
      continue;
    }
    estimates.push_back(run.delta_hat);
    est_sum.add(run.delta_hat);
    se_sum.add(run.std_error);
    if (run.p_value < alpha) ++rejections;
  }
  summary.replications = estimates.size();
  if (summary.replications == 0) return summary;
  const double count = static_cast<double>(summary.replications);
  summary.mean_est = est_sum.value() / count;
  summary.mean_se = se_sum.value() / count;
  summary.std_est = estimates.size() >= 2 ? sample_sd(estimates) : 0.0;
  summary.rejection_rate = static_cast<double>(rejections) / count;
  return summary;
}

}  // namespace idtest
