#include "lfctl/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lfctl/plant.hpp"

namespace lfctl {

int Trajectory::column(std::string_view name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("unknown channel: " + std::string(name));
  return static_cast<int>(it - names.begin());
}

bool Trajectory::has(std::string_view name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

Eigen::VectorXd Trajectory::channel(std::string_view name) const {
  return values.col(column(name));
}

Eigen::MatrixXd Trajectory::select(const std::vector<std::string>& wanted) const {
  Eigen::MatrixXd out(values.rows(), static_cast<Eigen::Index>(wanted.size()));
  for (std::size_t j = 0; j < wanted.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = values.col(column(wanted[j]));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_csv_header(std::ostream& out, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out << ',';
    out << names[i];
  }
  out << '\n';
}

void write_csv_row(std::ostream& out, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ',';
    out << format_double(values[i]);
  }
  out << '\n';
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_csv_header(out, traj.names);
  std::vector<double> row(traj.names.size());
  for (Eigen::Index i = 0; i < traj.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < traj.values.cols(); ++j) row[j] = traj.values(i, j);
    write_csv_row(out, row);
  }
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trajectory file: " + path.string());
  Trajectory traj;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty trajectory file: " + path.string());
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) traj.names.push_back(cell);
  }
  std::vector<double> flat;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t cols = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      double v = 0.0;
      const auto res = std::from_chars(p, comma, v);
      if (res.ec != std::errc()) {
        throw ConfigError("malformed number in " + path.string() + " row " + std::to_string(rows + 2));
      }
      flat.push_back(v);
      ++cols;
      p = comma + 1;
    }
    if (cols != traj.names.size()) {
      throw ConfigError("column count mismatch in " + path.string() + " row " + std::to_string(rows + 2));
    }
    ++rows;
  }
  traj.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(traj.names.size()));
  if (traj.has("t") && rows >= 2) {
    const double raw = traj.values(1, traj.column("t")) - traj.values(0, traj.column("t"));
    traj.dt = std::round(raw * 1e9) / 1e9;
  }
  return traj;
}

}  // namespace lfctl
