#include "idtest/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "idtest/error.hpp"
#include "idtest/stats.hpp"

namespace idtest {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim_spaces(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
  return text;
}

bool parse_number(std::string_view field, double& value) {
  field = trim_spaces(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  if (field.empty()) return false;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  return ec == std::errc() && ptr == field.data() + field.size();
}

std::string quote(const std::string& text) {
  std::string out = "\"";
  for (const char c : text) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string fixed3(double value) {
  if (!std::isfinite(value)) return format_number(value);
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.3f", value);
  std::string text = buffer;
  if (text == "-0.000") text = "0.000";
  return text;
}

std::string pad(const std::string& text, std::size_t width) {
  if (text.size() >= width) return text + " ";
  return std::string(width - text.size(), ' ') + text;
}

std::string left(const std::string& text, std::size_t width) {
  if (text.size() >= width) return text + " ";
  return text + std::string(width - text.size(), ' ');
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void echo_config(Report& report, const RunConfig& config) {
  const std::string s = "config";
  report.set(s, "command", config.command);
  report.set(s, "config_file", config.config_path);
  if (config.command != "simulate") {
    report.set(s, "input", config.input_path);
    report.set(s, "outcome", config.outcome);
    report.set(s, "treatment", config.treatment);
    report.set(s, "instrument", config.instrument);
    std::string covs;
    for (std::size_t i = 0; i < config.covariates.size(); ++i) covs += (i ? "," : "") + config.covariates[i];
    report.set(s, "covariates", covs);
  }
  report.set(s, "learner", std::string(to_string(config.learner)));
  report.set(s, "folds", config.folds);
  report.set(s, "cv_folds", config.cv_folds);
  report.set(s, "trim", config.trim);
  report.set(s, "seed", static_cast<std::int64_t>(config.seed));
  if (config.command == "subgroup") {
    std::vector<std::size_t> bins(config.bins.begin(), config.bins.end());
    report.set_list(s, "bins", bins);
  }
  if (config.command == "simulate") {
    report.set(s, "p", config.p);
    report.set(s, "first_stage", config.first_stage);
    report.set(s, "reps", config.reps);
    report.set(s, "alpha", config.alpha);
  }
}

void fold_diagnostics(Report& report, const std::string& section, const std::vector<FoldDiagnostics>& folds) {
  std::vector<std::size_t> train;
  std::vector<std::size_t> heldout;
  std::vector<double> l1;
  std::vector<double> l0;
  std::vector<double> lp;
  for (const auto& f : folds) {
    train.push_back(f.train_rows);
    heldout.push_back(f.heldout_rows);
    l1.push_back(f.lambda_mu1);
    l0.push_back(f.lambda_mu0);
    lp.push_back(f.lambda_p);
  }
  report.set_list(section, "fold_train_rows", train);
  report.set_list(section, "fold_heldout_rows", heldout);
  report.set_list(section, "lambda_mu1", l1);
  report.set_list(section, "lambda_mu0", l0);
  report.set_list(section, "lambda_p", lp);
}

void put_result(Report& report, const std::string& section, const TestResult& r) {
  report.set(section, "status", "ok");
  report.set(section, "delta_hat", r.delta_hat);
  report.set(section, "std_error", r.std_error);
  report.set(section, "t_stat", r.t_stat);
  report.set(section, "p_value", r.p_value);
  report.set(section, "n_total", r.n_total);
  report.set(section, "n_used", r.n_used);
  report.set(section, "n_trimmed", r.n_total - r.n_used);
  report.set(section, "zero_variance", r.zero_variance);
  fold_diagnostics(report, section, r.folds);
}

ObservationFrame load_input(const RunConfig& config, Report& report) {
  if (config.input_path.empty()) throw Error(ErrorKind::InvalidArgument, "--input is required for " + config.command);
  ObservationFrame frame =
      ingest_table(config.input_path, config.outcome, config.treatment, config.instrument, config.covariates);
  report.set("data", "rows", frame.n());
  report.set("data", "covariates", frame.p());
  report.set("data", "rejected_rows", std::size_t{0});
  return frame;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

RawTable read_table(std::istream& in) {
  RawTable table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim_spaces(line).empty()) continue;
    const auto fields = split_fields(line);
    if (!have_header) {
      std::set<std::string> seen;
      for (const auto field : fields) {
        std::string name(trim_spaces(field));
        if (name.empty()) throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": empty column name");
        if (!seen.insert(name).second) {
          throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": duplicate column name '" + name + "'");
        }
        table.names.push_back(std::move(name));
      }
      table.columns.resize(table.names.size());
      have_header = true;
      continue;
    }
    if (fields.size() != table.names.size()) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected " +
                                             std::to_string(table.names.size()) + " fields, found " +
                                             std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      double value = 0.0;
      if (!parse_number(fields[j], value)) {
        throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": column '" + table.names[j] +
                                               "': not a number: '" + std::string(fields[j]) + "'");
      }
      table.columns[j].push_back(value);
    }
  }
  if (!have_header) throw Error(ErrorKind::ParseError, "line 1: missing header");
  return table;
}

RawTable read_table_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::ParseError, "cannot open '" + path + "'");
  return read_table(in);
}

ColumnRoles resolve_roles(const RawTable& table, const std::string& outcome, const std::string& treatment,
                          const std::string& instrument, const std::vector<std::string>& covariates) {
  ColumnRoles roles{outcome, treatment, instrument, covariates};
  if (covariates.size() == 1 && covariates.front() == "rest") {
    roles.covariates.clear();
    for (const auto& name : table.names) {
      if (name != outcome && name != treatment && name != instrument) roles.covariates.push_back(name);
    }
  }
  return roles;
}

ObservationFrame ingest_table(const std::string& path, const std::string& outcome, const std::string& treatment,
                              const std::string& instrument, const std::vector<std::string>& covariates) {
  const RawTable table = read_table_file(path);
  return validate_frame(table, resolve_roles(table, outcome, treatment, instrument, covariates));
}

void write_table(std::ostream& out, const ObservationFrame& frame) {
  const RawTable table = frame.to_table();
  for (std::size_t j = 0; j < table.names.size(); ++j) out << (j ? "," : "") << table.names[j];
  out << '\n';
  const std::size_t n = table.columns.empty() ? 0 : table.columns.front().size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < table.columns.size(); ++j) out << (j ? "," : "") << format_number(table.columns[j][i]);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.17g", value);
  return buffer;
}

void Report::put(const std::string& section, const std::string& key, std::string text) {
  auto it = std::find_if(sections_.begin(), sections_.end(), [&](const Section& s) { return s.name == section; });
  if (it == sections_.end()) {
    sections_.push_back({section, {}});
    it = sections_.end() - 1;
  }
  for (auto& entry : it->entries) {
    if (entry.first == key) {
      entry.second = std::move(text);
      return;
    }
  }
  it->entries.emplace_back(key, std::move(text));
}

void Report::set(const std::string& section, const std::string& key, double value) {
  put(section, key, format_number(value));
}
void Report::set(const std::string& section, const std::string& key, std::int64_t value) {
  put(section, key, std::to_string(value));
}
void Report::set(const std::string& section, const std::string& key, std::size_t value) {
  put(section, key, std::to_string(value));
}
void Report::set(const std::string& section, const std::string& key, int value) {
  put(section, key, std::to_string(value));
}
void Report::set(const std::string& section, const std::string& key, bool value) {
  put(section, key, value ? "true" : "false");
}
void Report::set(const std::string& section, const std::string& key, const std::string& value) {
  put(section, key, quote(value));
}
void Report::set(const std::string& section, const std::string& key, const char* value) {
  put(section, key, quote(value));
}

void Report::set_list(const std::string& section, const std::string& key, const std::vector<double>& values) {
  std::string text = "[";
  for (std::size_t i = 0; i < values.size(); ++i) text += (i ? ", " : "") + format_number(values[i]);
  put(section, key, text + "]");
}

void Report::set_list(const std::string& section, const std::string& key, const std::vector<std::size_t>& values) {
  std::string text = "[";
  for (std::size_t i = 0; i < values.size(); ++i) text += (i ? ", " : "") + std::to_string(values[i]);
  put(section, key, text + "]");
}

std::optional<std::string> Report::get(const std::string& section, const std::string& key) const {
  for (const auto& s : sections_) {
    if (s.name != section) continue;
    for (const auto& entry : s.entries) {
      if (entry.first == key) return entry.second;
    }
  }
  return std::nullopt;
}

std::string Report::body() const {
  std::ostringstream out;
  out << "# idtest report\n";
  out << "tool_version = " << quote(IDTEST_VERSION) << "\n";
  for (const auto& s : sections_) {
    out << "\n[" << s.name << "]\n";
    for (const auto& [key, value] : s.entries) out << key << " = " << value << "\n";
  }
  if (!table_.empty()) {
    out << "\n[table]\n";
    for (const auto& line : table_) out << line << "\n";
  }
  return out.str();
}

std::string Report::render() const {
  std::ostringstream out;
  out << body();
  out << "\n[timings]\n";
  for (const auto& [key, seconds] : timings_) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.3f", seconds);
    out << key << "_seconds = " << buffer << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  if (command != "test" && command != "subgroup" && command != "simulate") {
    throw Error(ErrorKind::InvalidArgument, "unknown command '" + command + "'");
  }
  if (!(trim > 0.0 && trim < 0.5)) throw Error(ErrorKind::InvalidArgument, "trim must lie in (0, 0.5)");
  if (folds < 2) throw Error(ErrorKind::InvalidArgument, "folds must be at least 2");
  if (cv_folds < 2) throw Error(ErrorKind::InvalidArgument, "cv folds must be at least 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1)");
  for (const int b : bins) {
    if (b < 2) throw Error(ErrorKind::InvalidArgument, "bins must be at least 2");
  }
  if (command == "simulate") {
    if (p < 1) throw Error(ErrorKind::InvalidArgument, "p must be positive");
    if (reps < 1) throw Error(ErrorKind::InvalidArgument, "reps must be positive");
    if (n && *n < 1) throw Error(ErrorKind::InvalidArgument, "n must be positive");
    return;
  }
  std::set<std::string> used{outcome};
  for (const auto* name : {&treatment, &instrument}) {
    if (!used.insert(*name).second) throw Error(ErrorKind::InvalidArgument, "column '" + *name + "' has two roles");
  }
  const bool rest = covariates.size() == 1 && covariates.front() == "rest";
  if (!rest) {
    if (covariates.empty()) throw Error(ErrorKind::InvalidArgument, "at least one covariate is required");
    for (const auto& name : covariates) {
      if (!used.insert(name).second) throw Error(ErrorKind::InvalidArgument, "column '" + name + "' has two roles");
    }
  }
}

DmlConfig RunConfig::dml() const {
  DmlConfig cfg;
  cfg.folds = folds;
  cfg.learner = learner;
  cfg.trim = trim;
  cfg.seed = seed;
  cfg.cv.folds = cv_folds;
  cfg.threads = threads;
  cfg.forest.threads = 1;
  return cfg;
}

std::vector<DgpConfig> default_simulation_grid(const RunConfig& config) {
  std::vector<DgpConfig> grid;
  const std::vector<std::pair<double, double>> regimes{{0.0, 0.0}, {0.5, 0.0}, {0.0, 0.2}};
  const bool explicit_regime = config.n || config.delta || config.gamma;
  if (explicit_regime) {
    DgpConfig dgp;
    dgp.n = config.n.value_or(1000);
    dgp.p = config.p;
    dgp.delta = config.delta.value_or(0.0);
    dgp.gamma = config.gamma.value_or(0.0);
    dgp.first_stage = config.first_stage;
    dgp.seed = config.seed;
    grid.push_back(dgp);
    return grid;
  }
  for (const auto& [delta, gamma] : regimes) {
    for (const std::size_t n : {std::size_t{1000}, std::size_t{4000}}) {
      DgpConfig dgp;
      dgp.n = n;
      dgp.p = config.p;
      dgp.delta = delta;
      dgp.gamma = gamma;
      dgp.first_stage = config.first_stage;
      dgp.seed = config.seed;
      grid.push_back(dgp);
    }
  }
  return grid;
}

Report command_test(const RunConfig& config) {
  const auto start = Clock::now();
  Report report;
  echo_config(report, config);
  const ObservationFrame frame = load_input(config, report);
  const DmlConfig dml = config.dml();

  const ArmSelector arms[] = {ArmSelector::All, ArmSelector::Treated, ArmSelector::Control};
  std::optional<TestResult> results[3];
  std::string errors[3];
  for (int a = 0; a < 3; ++a) {
    const auto arm_start = Clock::now();
    try {
      results[a] = run_test(frame, arms[a], dml);
    } catch (const Error& e) {
      errors[a] = e.what();
    }
    report.set_timing("arm_" + std::string(to_string(arms[a])), seconds_since(arm_start));
  }

  // BH over the arm-specific hypotheses that could be estimated.
  std::vector<double> arm_p;
  for (int a = 1; a < 3; ++a) {
    if (results[a]) arm_p.push_back(results[a]->p_value);
  }
  const std::vector<double> adjusted = benjamini_hochberg(arm_p);
  std::optional<double> adj[3];
  for (int a = 1, k = 0; a < 3; ++a) {
    if (results[a]) adj[a] = adjusted[static_cast<std::size_t>(k++)];
  }

  report.add_table_line(left("arm", 9) + pad("est", 9) + pad("se", 9) + pad("tstat", 9) + pad("pval", 9) +
                        pad("adj", 9) + pad("n_used", 8));
  for (int a = 0; a < 3; ++a) {
    const std::string name(to_string(arms[a]));
    const std::string section = "result." + name;
    if (!results[a]) {
      report.set(section, "status", "error");
      report.set(section, "error", errors[a]);
      report.add_table_line(left(name, 9) + "  error: " + errors[a]);
      continue;
    }
    report.mark_results();
    put_result(report, section, *results[a]);
    if (adj[a]) report.set(section, "p_adjusted", *adj[a]);
    const auto& r = *results[a];
    report.add_table_line(left(name, 9) + pad(fixed3(r.delta_hat), 9) + pad(fixed3(r.std_error), 9) +
                          pad(fixed3(r.t_stat), 9) + pad(fixed3(r.p_value), 9) +
                          pad(adj[a] ? fixed3(*adj[a]) : "-", 9) + pad(std::to_string(r.n_used), 8));
  }
  report.set_timing("total", seconds_since(start));
  return report;
}

Report command_subgroup(const RunConfig& config) {
  const auto start = Clock::now();
  Report report;
  echo_config(report, config);
  const ObservationFrame frame = load_input(config, report);

  SubgroupConfig sub;
  sub.dml = config.dml();
  sub.ranking_forest.threads = config.threads;
  sub.bins = config.bins;
  sub.seed = config.seed;
  const SubgroupReport result = run_subgroup_analysis(frame, sub);
  report.mark_results();

  report.set("subgroup", "n_first", result.n_first);
  report.set("subgroup", "n_second", result.n_second);
  put_result(report, "subgroup.first_half", result.first_result);
  put_result(report, "subgroup.second_half", result.second_result);
  for (const auto& entry : result.ranking) report.set("subgroup.ranking", entry.variable, entry.importance);

  for (const auto& analysis : result.analyses) {
    const std::string section = "subgroup.bins" + std::to_string(analysis.num_bins);
    report.add_table_line("bins = " + std::to_string(analysis.num_bins));
    if (!analysis.error.empty()) {
      report.set(section, "status", "error");
      report.set(section, "error", analysis.error);
      report.add_table_line("  error: " + analysis.error);
      continue;
    }
    report.set(section, "status", "ok");
    const auto& partition = *analysis.partition;
    report.set(section, "variable", partition.source_variable);
    report.set_list(section, "cut_points", partition.cut_points);
    const auto& leaves = analysis.leaves->leaves;
    report.set_list(section, "regression_coefficients", analysis.leaves->regression_coefficients);
    report.add_table_line("  variable = " + partition.source_variable);
    report.add_table_line(left("  leaf", 24) + pad("est", 9) + pad("se", 9) + pad("pval", 9) + pad("adj", 9) +
                          pad("n", 7));
    for (std::size_t m = 0; m < leaves.size(); ++m) {
      const std::string prefix = "leaf" + std::to_string(m + 1) + ".";
      const auto& leaf = leaves[m];
      report.set(section, prefix + "n", leaf.n);
      report.set(section, prefix + "delta_hat", leaf.delta_hat);
      report.set(section, prefix + "std_error", leaf.std_error);
      report.set(section, prefix + "t_stat", leaf.t_stat);
      report.set(section, prefix + "p_value", leaf.p_value);
      report.set(section, prefix + "p_adjusted", leaf.p_adjusted);
      const std::string lo = m == 0 ? "-inf" : fixed3(partition.cut_points[m - 1]);
      const std::string hi = m + 1 == leaves.size() ? "inf" : fixed3(partition.cut_points[m]);
      report.add_table_line(left("  (" + lo + ", " + hi + "]", 24) + pad(fixed3(leaf.delta_hat), 9) +
                            pad(fixed3(leaf.std_error), 9) + pad(fixed3(leaf.p_value), 9) +
                            pad(fixed3(leaf.p_adjusted), 9) + pad(std::to_string(leaf.n), 7));
    }
    if (analysis.joint) {
      report.set(section, "wald_stat", analysis.joint->wald_stat);
      report.set(section, "wald_df", analysis.joint->df);
      report.set(section, "wald_p_value", analysis.joint->p_value);
      report.add_table_line("  joint: stat = " + fixed3(analysis.joint->wald_stat) +
                            ", df = " + std::to_string(analysis.joint->df) +
                            ", pval = " + fixed3(analysis.joint->p_value));
    } else {
      report.set(section, "wald_status", "unavailable");
      report.add_table_line("  joint: unavailable");
    }
  }
  report.set_timing("total", seconds_since(start));
  return report;
}

Report command_simulate(const RunConfig& config) {
  const auto start = Clock::now();
  Report report;
  echo_config(report, config);
  const std::vector<DgpConfig> grid = default_simulation_grid(config);
  const DmlConfig dml = [&] {
    DmlConfig cfg = config.dml();
    cfg.threads = 1;
    return cfg;
  }();

  if (!config.emit_data_path.empty()) {
    std::ofstream out(config.emit_data_path, std::ios::binary);
    if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write '" + config.emit_data_path + "'");
    write_table(out, draw_sample(grid.front(), 0));
  }

  report.add_table_line(left("n", 7) + pad("delta", 7) + pad("gamma", 7) + pad("est", 9) + pad("std", 9) +
                        pad("mean_se", 9) + pad("rej", 9) + pad("failed", 8));
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto& dgp = grid[g];
    const auto regime_start = Clock::now();
    const McSummary summary = run_monte_carlo(dgp, config.reps, dml, config.alpha, config.threads);
    const std::string section = "simulate.regime" + std::to_string(g + 1);
    report.set(section, "n", dgp.n);
    report.set(section, "p", dgp.p);
    report.set(section, "delta", dgp.delta);
    report.set(section, "gamma", dgp.gamma);
    report.set(section, "first_stage", dgp.first_stage);
    report.set(section, "alpha", summary.alpha);
    report.set(section, "replications", summary.replications);
    report.set(section, "failures", summary.failures);
    report.set(section, "mean_est", summary.mean_est);
    report.set(section, "std_est", summary.std_est);
    report.set(section, "mean_se", summary.mean_se);
    report.set(section, "rejection_rate", summary.rejection_rate);
    for (std::size_t r = 0; r < summary.runs.size(); ++r) {
      if (!summary.runs[r].ok) report.set(section, "failure" + std::to_string(r), summary.runs[r].error);
    }
    if (summary.replications > 0) report.mark_results();
    report.add_table_line(left(std::to_string(dgp.n), 7) + pad(fixed3(dgp.delta), 7) + pad(fixed3(dgp.gamma), 7) +
                          pad(fixed3(summary.mean_est), 9) + pad(fixed3(summary.std_est), 9) +
                          pad(fixed3(summary.mean_se), 9) + pad(fixed3(summary.rejection_rate), 9) +
                          pad(std::to_string(summary.failures), 8));
    report.set_timing("regime" + std::to_string(g + 1), seconds_since(regime_start));
  }
  report.set_timing("total", seconds_since(start));
  return report;
}

Report run_command(const RunConfig& config) {
  config.validate();
  if (config.command == "test") return command_test(config);
  if (config.command == "subgroup") return command_subgroup(config);
  return command_simulate(config);
}

}  // namespace idtest
