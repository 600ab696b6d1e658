#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace lfctl {

// A sampled multichannel time series: one row per sample, one column per channel.
struct Trajectory {
  double dt = 0.2;
  std::vector<std::string> names;
  Eigen::MatrixXd values;

  Eigen::Index rows() const { return values.rows(); }
  // Throws std::out_of_range for an unknown channel.
  int column(std::string_view name) const;
  bool has(std::string_view name) const;
  Eigen::VectorXd channel(std::string_view name) const;
  // Columns for `names`, in that order.
  Eigen::MatrixXd select(const std::vector<std::string>& names) const;
};

// Shortest round-trip decimal representation used in every CSV this project writes.
std::string format_double(double v);

void write_csv_header(std::ostream& out, const std::vector<std::string>& names);
void write_csv_row(std::ostream& out, const std::vector<double>& values);

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);
// dt is recovered from a `t` column when present.
Trajectory read_trajectory_csv(const std::filesystem::path& path);

}  // namespace lfctl
