#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace idtest {

using BinaryVector = std::vector<std::uint8_t>;

enum class ArmSelector { All, Treated, Control };

std::string_view to_string(ArmSelector arm);

/// Named numeric columns in file order, as read from a table.
struct RawTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  const std::vector<double>* find(std::string_view name) const;
};

/// Which raw columns play which role.
struct ColumnRoles {
  std::string outcome;
  std::string treatment;
  std::string instrument;
  std::vector<std::string> covariates;
};

/// The (Y, D, Z, X) dataset. Only `validate_frame`, `subset_arm` and
/// `take_rows` produce frames, so every instance satisfies:
/// equal lengths, binary d and z, finite y and x, n >= 1, p >= 1.
class ObservationFrame {
 public:
  std::size_t n() const { return static_cast<std::size_t>(y_.size()); }
  std::size_t p() const { return static_cast<std::size_t>(x_.cols()); }

  const Eigen::VectorXd& y() const { return y_; }
  const BinaryVector& d() const { return d_; }
  const BinaryVector& z() const { return z_; }
  const Eigen::MatrixXd& x() const { return x_; }
  const ColumnRoles& roles() const { return roles_; }
  const std::vector<std::string>& feature_names() const { return roles_.covariates; }

  /// Regressor matrix for nuisance models: [D, X] when `with_treatment`, else X.
  Eigen::MatrixXd regressors(bool with_treatment) const;
  std::vector<std::string> regressor_names(bool with_treatment) const;

  /// Inverse of validate_frame: the frame as named raw columns.
  RawTable to_table() const;

  bool operator==(const ObservationFrame& other) const;

 private:
  ObservationFrame() = default;

  Eigen::VectorXd y_;
  BinaryVector d_;
  BinaryVector z_;
  Eigen::MatrixXd x_;
  ColumnRoles roles_;

  friend ObservationFrame validate_frame(const RawTable& table, const ColumnRoles& roles);
  friend ObservationFrame take_rows(const ObservationFrame& frame, std::span<const std::size_t> rows);
};

ObservationFrame validate_frame(const RawTable& table, const ColumnRoles& roles);

/// Rows of `frame` in the given order (indices may repeat).
ObservationFrame take_rows(const ObservationFrame& frame, std::span<const std::size_t> rows);

/// Row indices of `frame` selected by `arm`, ascending.
std::vector<std::size_t> arm_rows(const ObservationFrame& frame, ArmSelector arm);

ObservationFrame subset_arm(const ObservationFrame& frame, ArmSelector arm);

}  // namespace idtest
