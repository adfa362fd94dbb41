#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "idtest/dml.hpp"
#include "idtest/frame.hpp"
#include "idtest/simulation.hpp"
#include "idtest/subgroup.hpp"

namespace idtest {

// ---------------------------------------------------------------------------
// Tables: comma-delimited, header line of unique names, numeric fields.
// ---------------------------------------------------------------------------

RawTable read_table(std::istream& in);
RawTable read_table_file(const std::string& path);

/// Covariates may be the single entry "rest": every column not used as
/// outcome, treatment or instrument, in file order.
ColumnRoles resolve_roles(const RawTable& table, const std::string& outcome, const std::string& treatment,
                          const std::string& instrument, const std::vector<std::string>& covariates);

ObservationFrame ingest_table(const std::string& path, const std::string& outcome, const std::string& treatment,
                              const std::string& instrument, const std::vector<std::string>& covariates);

/// Writes the frame with 17 significant digits, so re-reading is exact.
void write_table(std::ostream& out, const ObservationFrame& frame);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::string format_number(double value);

/// Ordered sections of key = value lines, a human-readable table block and a
/// trailing timings section. Everything before the timings is reproducible
/// from the inputs and the resolved configuration.
class Report {
 public:
  void set(const std::string& section, const std::string& key, double value);
  void set(const std::string& section, const std::string& key, std::int64_t value);
  void set(const std::string& section, const std::string& key, std::size_t value);
  void set(const std::string& section, const std::string& key, int value);
  void set(const std::string& section, const std::string& key, bool value);
  void set(const std::string& section, const std::string& key, const std::string& value);
  void set(const std::string& section, const std::string& key, const char* value);
  void set_list(const std::string& section, const std::string& key, const std::vector<double>& values);
  void set_list(const std::string& section, const std::string& key, const std::vector<std::size_t>& values);

  void add_table_line(std::string line) { table_.push_back(std::move(line)); }
  void set_timing(const std::string& key, double seconds) { timings_.emplace_back(key, seconds); }
  void mark_results() { has_results_ = true; }
  bool has_results() const { return has_results_; }

  /// Value text of a key, if present.
  std::optional<std::string> get(const std::string& section, const std::string& key) const;

  std::string body() const;
  std::string render() const;

 private:
  void put(const std::string& section, const std::string& key, std::string text);

  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  std::vector<Section> sections_;
  std::vector<std::string> table_;
  std::vector<std::pair<std::string, double>> timings_;
  bool has_results_ = false;
};

struct RunConfig {
  std::string command;
  std::string input_path;
  std::string outcome = "y";
  std::string treatment = "d";
  std::string instrument = "z";
  std::vector<std::string> covariates{"rest"};
  LearnerKind learner = LearnerKind::Lasso;
  int folds = 3;
  int cv_folds = 5;
  double trim = 0.01;
  std::uint64_t seed = 1;
  std::vector<int> bins{2, 4};
  std::optional<std::size_t> n;
  std::size_t p = 50;
  double first_stage = 1.0;
  std::optional<double> delta;
  std::optional<double> gamma;
  std::size_t reps = 1000;
  double alpha = 0.05;
  int threads = 0;  // 0: all cores
  std::string output_path;
  std::string config_path;
  std::string emit_data_path;

  /// Throws InvalidArgument when an invariant is broken.
  void validate() const;
  DmlConfig dml() const;
};

/// The six (n, delta, gamma) regimes simulated by default.
std::vector<DgpConfig> default_simulation_grid(const RunConfig& config);

Report command_test(const RunConfig& config);
Report command_subgroup(const RunConfig& config);
Report command_simulate(const RunConfig& config);
Report run_command(const RunConfig& config);

}  // namespace idtest
