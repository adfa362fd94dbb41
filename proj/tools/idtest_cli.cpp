#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "idtest/error.hpp"
#include "idtest/report.hpp"

int main(int argc, char** argv) {
  idtest::RunConfig config;
  CLI::App app{"Tests instrument validity and unconfoundedness via conditional mean independence"};
  app.set_version_flag("--version", std::string(IDTEST_VERSION));
  app.set_config("--config", "", "Key-value config file; command-line flags take precedence");

  std::string learner = "lasso";
  std::string covariates = "rest";
  int bins = 0;
  std::size_t n = 0;
  double delta = 0.0;
  double gamma = 0.0;

  app.add_option("command", config.command, "test | subgroup | simulate")
      ->required()
      ->check(CLI::IsMember({"test", "subgroup", "simulate"}));
  app.add_option("--input", config.input_path, "Comma-delimited table with a header line");
  app.add_option("--outcome", config.outcome, "Outcome column")->capture_default_str();
  app.add_option("--treatment", config.treatment, "Binary treatment column")->capture_default_str();
  app.add_option("--instrument", config.instrument, "Binary instrument column")->capture_default_str();
  app.add_option("--covariates", covariates, "Comma list of covariate columns, or 'rest'")->capture_default_str();
  app.add_option("--learner", learner, "Nuisance learner")
      ->check(CLI::IsMember({"lasso", "forest"}))
      ->capture_default_str();
  app.add_option("--folds", config.folds, "Cross-fitting folds")->capture_default_str();
  app.add_option("--cv-folds", config.cv_folds, "Folds for penalty selection")->capture_default_str();
  app.add_option("--trim", config.trim, "Drop rows with instrument propensity outside [trim, 1-trim]")
      ->capture_default_str();
  app.add_option("--seed", config.seed, "Master seed")->capture_default_str();
  auto* bins_opt = app.add_option("--bins", bins, "Subgroup bin count (default: 2 and 4)");
  auto* n_opt = app.add_option("--n", n, "Simulation sample size");
  app.add_option("--p", config.p, "Simulation covariate count")->capture_default_str();
  app.add_option("--first-stage", config.first_stage, "Simulation: coefficient of the instrument in the treatment index")
      ->capture_default_str();
  auto* delta_opt = app.add_option("--delta", delta, "Confounding strength");
  auto* gamma_opt = app.add_option("--gamma", gamma, "Direct effect of the instrument");
  app.add_option("--reps", config.reps, "Monte Carlo replications")->capture_default_str();
  app.add_option("--alpha", config.alpha, "Test level")->capture_default_str();
  app.add_option("--threads", config.threads, "Worker threads (0: all cores)")->capture_default_str();
  app.add_option("--output", config.output_path, "Report path (default: standard output)");
  app.add_option("--emit-data", config.emit_data_path, "simulate: write the first regime's first sample");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (auto* cfg = app.get_config_ptr(); cfg && cfg->count() > 0) config.config_path = cfg->as<std::string>();
  config.learner = learner == "forest" ? idtest::LearnerKind::Forest : idtest::LearnerKind::Lasso;
  config.covariates.clear();
  for (std::size_t start = 0;;) {
    const std::size_t comma = covariates.find(',', start);
    config.covariates.push_back(covariates.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (bins_opt->count() > 0) config.bins = {bins};
  if (n_opt->count() > 0) config.n = n;
  if (delta_opt->count() > 0) config.delta = delta;
  if (gamma_opt->count() > 0) config.gamma = gamma;

  try {
    const idtest::Report report = idtest::run_command(config);
    const std::string text = report.render();
    if (config.output_path.empty()) {
      std::cout << text;
    } else {
      std::ofstream out(config.output_path, std::ios::binary);
      if (!out) throw idtest::Error(idtest::ErrorKind::InvalidArgument, "cannot write '" + config.output_path + "'");
      out << text;
    }
    return report.has_results() ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "idtest: " << e.what() << "\n";
    return 1;
  }
}
