#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "idtest/dml.hpp"
#include "idtest/error.hpp"
#include "idtest/report.hpp"
#include "idtest/simulation.hpp"
#include "idtest/stats.hpp"
#include "idtest/subgroup.hpp"

namespace py = pybind11;
using namespace idtest;

namespace {

ObservationFrame make_frame(const Eigen::VectorXd& y, const Eigen::VectorXd& d, const Eigen::VectorXd& z,
                            const Eigen::MatrixXd& x) {
  RawTable table;
  ColumnRoles roles{"y", "d", "z", {}};
  auto as_vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  table.names = {"y", "d", "z"};
  table.columns = {as_vec(y), as_vec(d), as_vec(z)};
  if (x.rows() != y.size()) throw Error(ErrorKind::ShapeMismatch, "x must have one row per observation");
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const std::string name = "x" + std::to_string(j + 1);
    table.names.push_back(name);
    roles.covariates.push_back(name);
    table.columns.push_back(as_vec(x.col(j)));
  }
  return validate_frame(table, roles);
}

ArmSelector parse_arm(const std::string& arm) {
  if (arm == "all") return ArmSelector::All;
  if (arm == "treated") return ArmSelector::Treated;
  if (arm == "control") return ArmSelector::Control;
  throw Error(ErrorKind::InvalidArgument, "arm must be all, treated or control");
}

DmlConfig make_config(const std::string& learner, int folds, double trim, std::uint64_t seed) {
  DmlConfig cfg;
  cfg.learner = learner == "forest" ? LearnerKind::Forest : LearnerKind::Lasso;
  cfg.folds = folds;
  cfg.trim = trim;
  cfg.seed = seed;
  return cfg;
}

py::dict result_dict(const TestResult& r) {
  py::dict out;
  out["delta_hat"] = r.delta_hat;
  out["std_error"] = r.std_error;
  out["t_stat"] = r.t_stat;
  out["p_value"] = r.p_value;
  out["n_total"] = r.n_total;
  out["n_used"] = r.n_used;
  out["arm"] = std::string(to_string(r.arm));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Identification tests for instrument validity and unconfoundedness";
  m.attr("__version__") = IDTEST_VERSION;

  static py::exception<Error> error_type(m, "IdtestError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error_type, e.what());
    }
  });

  m.def(
      "run_test",
      [](const Eigen::VectorXd& y, const Eigen::VectorXd& d, const Eigen::VectorXd& z, const Eigen::MatrixXd& x,
         const std::string& arm, const std::string& learner, int folds, double trim, std::uint64_t seed) {
        const ObservationFrame frame = make_frame(y, d, z, x);
        const DmlConfig cfg = make_config(learner, folds, trim, seed);
        const ArmSelector selector = parse_arm(arm);
        TestResult r;
        {
          py::gil_scoped_release release;
          r = run_test(frame, selector, cfg);
        }
        return result_dict(r);
      },
      py::arg("y"), py::arg("d"), py::arg("z"), py::arg("x"), py::arg("arm") = "all", py::arg("learner") = "lasso",
      py::arg("folds") = 3, py::arg("trim") = 0.01, py::arg("seed") = 1);

  m.def(
      "draw_sample",
      [](std::size_t n, std::size_t p, double delta, double gamma, std::uint64_t seed, std::size_t replication,
         double first_stage) {
        DgpConfig cfg;
        cfg.first_stage = first_stage;
        cfg.n = n;
        cfg.p = p;
        cfg.delta = delta;
        cfg.gamma = gamma;
        cfg.seed = seed;
        const ObservationFrame f = draw_sample(cfg, replication);
        Eigen::VectorXd d(static_cast<Eigen::Index>(f.n()));
        Eigen::VectorXd z(static_cast<Eigen::Index>(f.n()));
        for (std::size_t i = 0; i < f.n(); ++i) {
          d[static_cast<Eigen::Index>(i)] = f.d()[i];
          z[static_cast<Eigen::Index>(i)] = f.z()[i];
        }
        py::dict out;
        out["y"] = f.y();
        out["d"] = d;
        out["z"] = z;
        out["x"] = f.x();
        return out;
      },
      py::arg("n") = 1000, py::arg("p") = 50, py::arg("delta") = 0.0, py::arg("gamma") = 0.0, py::arg("seed") = 1,
      py::arg("replication") = 0, py::arg("first_stage") = 1.0);

  m.def(
      "benjamini_hochberg",
      [](const std::vector<double>& p) { return benjamini_hochberg(p); }, py::arg("p_values"));

  m.def(
      "monte_carlo",
      [](std::size_t n, std::size_t p, double delta, double gamma, std::size_t reps, double alpha, std::uint64_t seed,
         int threads, double first_stage) {
        DgpConfig cfg;
        cfg.first_stage = first_stage;
        cfg.n = n;
        cfg.p = p;
        cfg.delta = delta;
        cfg.gamma = gamma;
        cfg.seed = seed;
        DmlConfig dml;
        dml.seed = seed;
        McSummary s;
        {
          py::gil_scoped_release release;
          s = run_monte_carlo(cfg, reps, dml, alpha, threads);
        }
        py::dict out;
        out["replications"] = s.replications;
        out["failures"] = s.failures;
        out["mean_est"] = s.mean_est;
        out["std_est"] = s.std_est;
        out["mean_se"] = s.mean_se;
        out["rejection_rate"] = s.rejection_rate;
        out["alpha"] = s.alpha;
        return out;
      },
      py::arg("n") = 1000, py::arg("p") = 50, py::arg("delta") = 0.0, py::arg("gamma") = 0.0, py::arg("reps") = 10,
      py::arg("alpha") = 0.05, py::arg("seed") = 1, py::arg("threads") = 1, py::arg("first_stage") = 1.0);

  m.def(
      "run_command",
      [](const std::string& command, const std::string& input, std::uint64_t seed, const std::string& learner,
         std::size_t reps, std::optional<std::size_t> n, std::size_t p) {
        RunConfig cfg;
        cfg.command = command;
        cfg.input_path = input;
        cfg.seed = seed;
        cfg.learner = learner == "forest" ? LearnerKind::Forest : LearnerKind::Lasso;
        cfg.reps = reps;
        cfg.n = n;
        cfg.p = p;
        cfg.threads = 1;
        std::string body;
        {
          py::gil_scoped_release release;
          body = run_command(cfg).body();
        }
        return body;
      },
      py::arg("command"), py::arg("input") = "", py::arg("seed") = 1, py::arg("learner") = "lasso",
      py::arg("reps") = 1000, py::arg("n") = std::nullopt, py::arg("p") = 50);
}
