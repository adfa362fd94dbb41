#include "idtest/frame.hpp"

#include <cmath>
#include <set>

#include "idtest/error.hpp"

namespace idtest {

std::string_view to_string(ArmSelector arm) {
  switch (arm) {
    case ArmSelector::All: return "all";
    case ArmSelector::Treated: return "treated";
    case ArmSelector::Control: return "control";
  }
  return "unknown";
}

const std::vector<double>* RawTable::find(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return &columns[i];
  }
  return nullptr;
}

namespace {

const std::vector<double>& require_column(const RawTable& table, const std::string& name, std::string_view role) {
  if (name.empty()) throw Error(ErrorKind::MissingColumn, "no column named for role " + std::string(role));
  const auto* column = table.find(name);
  if (column == nullptr) {
    throw Error(ErrorKind::MissingColumn, std::string(role) + " column '" + name + "' not found");
  }
  return *column;
}

void require_finite(const std::vector<double>& column, const std::string& name) {
  for (std::size_t i = 0; i < column.size(); ++i) {
    if (!std::isfinite(column[i])) {
      throw Error(ErrorKind::NonFinite, "column '" + name + "' row " + std::to_string(i + 1) + " is not finite");
    }
  }
}

BinaryVector require_binary(const std::vector<double>& column, const std::string& name) {
  require_finite(column, name);
  BinaryVector out(column.size());
  for (std::size_t i = 0; i < column.size(); ++i) {
    if (column[i] == 0.0) {
      out[i] = 0;
    } else if (column[i] == 1.0) {
      out[i] = 1;
    } else {
      throw Error(ErrorKind::NonBinary, "column '" + name + "' row " + std::to_string(i + 1) + " has value " +
                                            std::to_string(column[i]) + " outside {0,1}");
    }
  }
  return out;
}

}  // namespace

ObservationFrame validate_frame(const RawTable& table, const ColumnRoles& roles) {
  if (table.names.size() != table.columns.size()) {
    throw Error(ErrorKind::ShapeMismatch, "table has mismatched names and columns");
  }
  if (roles.covariates.empty()) throw Error(ErrorKind::MissingColumn, "at least one covariate column is required");

  std::set<std::string> seen;
  auto claim = [&](const std::string& name) {
    if (!seen.insert(name).second) {
      throw Error(ErrorKind::InvalidArgument, "column '" + name + "' is assigned to more than one role");
    }
  };
  claim(roles.outcome);
  claim(roles.treatment);
  claim(roles.instrument);
  for (const auto& c : roles.covariates) claim(c);

  const auto& y = require_column(table, roles.outcome, "outcome");
  const auto& d = require_column(table, roles.treatment, "treatment");
  const auto& z = require_column(table, roles.instrument, "instrument");
  std::vector<const std::vector<double>*> xs;
  for (const auto& c : roles.covariates) xs.push_back(&require_column(table, c, "covariate"));

  const std::size_t n = y.size();
  auto check_len = [&](const std::vector<double>& col, const std::string& name) {
    if (col.size() != n) throw Error(ErrorKind::ShapeMismatch, "column '" + name + "' has a different length");
  };
  check_len(d, roles.treatment);
  check_len(z, roles.instrument);
  for (std::size_t j = 0; j < xs.size(); ++j) check_len(*xs[j], roles.covariates[j]);
  if (n == 0) throw Error(ErrorKind::EmptyData, "the table has no rows");

  require_finite(y, roles.outcome);
  for (std::size_t j = 0; j < xs.size(); ++j) require_finite(*xs[j], roles.covariates[j]);

  ObservationFrame frame;
  frame.d_ = require_binary(d, roles.treatment);
  frame.z_ = require_binary(z, roles.instrument);
  frame.y_ = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));
  frame.x_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(xs.size()));
  for (std::size_t j = 0; j < xs.size(); ++j) {
    frame.x_.col(static_cast<Eigen::Index>(j)) =
        Eigen::Map<const Eigen::VectorXd>(xs[j]->data(), static_cast<Eigen::Index>(n));
  }
  frame.roles_ = roles;
  return frame;
}

ObservationFrame take_rows(const ObservationFrame& frame, std::span<const std::size_t> rows) {
  if (rows.empty()) throw Error(ErrorKind::EmptyData, "row selection is empty");
  ObservationFrame out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.y_.resize(m);
  out.x_.resize(m, frame.x_.cols());
  out.d_.resize(rows.size());
  out.z_.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = rows[i];
    if (src >= frame.n()) throw Error(ErrorKind::ShapeMismatch, "row index out of range");
    const auto dst = static_cast<Eigen::Index>(i);
    out.y_[dst] = frame.y_[static_cast<Eigen::Index>(src)];
    out.x_.row(dst) = frame.x_.row(static_cast<Eigen::Index>(src));
    out.d_[i] = frame.d_[src];
    out.z_[i] = frame.z_[src];
  }
  out.roles_ = frame.roles_;
  return out;
}

std::vector<std::size_t> arm_rows(const ObservationFrame& frame, ArmSelector arm) {
  std::vector<std::size_t> rows;
  rows.reserve(frame.n());
  for (std::size_t i = 0; i < frame.n(); ++i) {
    const bool take = arm == ArmSelector::All || (arm == ArmSelector::Treated && frame.d()[i] == 1) ||
                      (arm == ArmSelector::Control && frame.d()[i] == 0);
    if (take) rows.push_back(i);
  }
  return rows;
}

ObservationFrame subset_arm(const ObservationFrame& frame, ArmSelector arm) {
  const auto rows = arm_rows(frame, arm);
  if (rows.empty()) throw Error(ErrorKind::EmptyArm, "arm '" + std::string(to_string(arm)) + "' has no rows");
  if (rows.size() == frame.n()) return frame;
  return take_rows(frame, rows);
}

Eigen::MatrixXd ObservationFrame::regressors(bool with_treatment) const {
  if (!with_treatment) return x_;
  Eigen::MatrixXd out(x_.rows(), x_.cols() + 1);
  for (Eigen::Index i = 0; i < x_.rows(); ++i) out(i, 0) = d_[static_cast<std::size_t>(i)];
  out.rightCols(x_.cols()) = x_;
  return out;
}

std::vector<std::string> ObservationFrame::regressor_names(bool with_treatment) const {
  std::vector<std::string> names;
  if (with_treatment) names.push_back(roles_.treatment);
  names.insert(names.end(), roles_.covariates.begin(), roles_.covariates.end());
  return names;
}

RawTable ObservationFrame::to_table() const {
  RawTable table;
  auto add = [&](const std::string& name, std::vector<double> column) {
    table.names.push_back(name);
    table.columns.push_back(std::move(column));
  };
  add(roles_.outcome, std::vector<double>(y_.data(), y_.data() + y_.size()));
  add(roles_.treatment, std::vector<double>(d_.begin(), d_.end()));
  add(roles_.instrument, std::vector<double>(z_.begin(), z_.end()));
  for (Eigen::Index j = 0; j < x_.cols(); ++j) {
    const Eigen::VectorXd col = x_.col(j);
    add(roles_.covariates[static_cast<std::size_t>(j)], std::vector<double>(col.data(), col.data() + col.size()));
  }
  return table;
}

bool ObservationFrame::operator==(const ObservationFrame& other) const {
  return y_.size() == other.y_.size() && y_ == other.y_ && d_ == other.d_ && z_ == other.z_ && x_.rows() == other.x_.rows() &&
         x_.cols() == other.x_.cols() && x_ == other.x_ && roles_.outcome == other.roles_.outcome &&
         roles_.treatment == other.roles_.treatment && roles_.instrument == other.roles_.instrument &&
         roles_.covariates == other.roles_.covariates;
}

}  // namespace idtest
