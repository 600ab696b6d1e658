#pragma once

// Dynamic Mode Decomposition with Control: identifies x' = A x + B u from
// snapshot pairs via a rank-truncated SVD pseudoinverse.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lfctl/trajectory.hpp"

namespace lfctl {

// Affine map between engineering units and model coordinates:
// z = (value - center) / scale.
struct ChannelScaling {
  Eigen::VectorXd center;
  Eigen::VectorXd scale;

  Eigen::VectorXd normalize(const Eigen::VectorXd& v) const;
  Eigen::VectorXd denormalize(const Eigen::VectorXd& z) const;
  Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd denormalize_rows(const Eigen::MatrixXd& rows) const;
};

struct SnapshotOptions {
  // Centering reference per channel; the per-channel mean when absent.
  std::optional<Eigen::VectorXd> state_center;
  std::optional<Eigen::VectorXd> input_center;
};

struct SnapshotSet {
  Eigen::MatrixXd x;       // n x L
  Eigen::MatrixXd x_next;  // n x L
  Eigen::MatrixXd u;       // m x L
  double dt = 0.0;
  std::vector<std::string> state_names;
  std::vector<std::string> input_names;
  ChannelScaling state_scaling;
  ChannelScaling input_scaling;
};

// Pairs consecutive samples within each trajectory (never across two).
// Throws std::out_of_range for unknown channels and std::invalid_argument
// for trajectories shorter than two samples.
SnapshotSet assemble_snapshots(const std::vector<Trajectory>& trajectories,
                               const std::vector<std::string>& state_names,
                               const std::vector<std::string>& input_names,
                               const SnapshotOptions& opts = {});

struct StateSpaceModel {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
  Eigen::MatrixXd c;
  Eigen::MatrixXd d;
  Eigen::VectorXd b_w;
  Eigen::VectorXd d_w;
  double dt = 0.0;
  std::vector<std::string> state_names;
  std::vector<std::string> input_names;
  std::vector<std::string> output_names;
  ChannelScaling state_scaling;
  ChannelScaling input_scaling;
  ChannelScaling output_scaling;
  int rank = 0;
  Eigen::VectorXd singular_values;

  int states() const { return static_cast<int>(a.rows()); }
  int inputs() const { return static_cast<int>(b.cols()); }
  int outputs() const { return static_cast<int>(c.rows()); }
  double spectral_radius() const;
  int state_index(const std::string& name) const;
  int output_index(const std::string& name) const;
  void validate() const;

  // Unit scalings and zero disturbance matrices for a model given directly
  // in engineering coordinates.
  static StateSpaceModel from_matrices(Eigen::MatrixXd a, Eigen::MatrixXd b, Eigen::MatrixXd c,
                                       Eigen::MatrixXd d, double dt = 1.0);
};

struct FitOptions {
  int rank = 0;                         // 0 selects by energy threshold
  double energy_threshold = 0.9999;     // fraction of sum(sigma^2) retained
  double rank_tolerance = 1e-12;        // relative to sigma_max
};

struct FitReport {
  int requested_rank = 0;
  int used_rank = 0;
  bool rank_reduced = false;
  Eigen::VectorXd singular_values;
};

// G = X' Omega^+, A = G(:, 0:n), B = G(:, n:). C = I, D = 0.
StateSpaceModel fit(const SnapshotSet& snapshots, const FitOptions& opts = {},
                    FitReport* report = nullptr);

// Open-loop rollout in engineering units. Row k holds x_{k+1}.
Eigen::MatrixXd predict(const StateSpaceModel& model, const Eigen::VectorXd& x0,
                        const Eigen::MatrixXd& inputs);

// Rollout in model coordinates; row k holds z_{k+1}.
Eigen::MatrixXd predict_normalized(const StateSpaceModel& model, const Eigen::VectorXd& z0,
                                   const Eigen::MatrixXd& inputs_normalized);

struct ChannelScore {
  std::string name;
  double mse = 0.0;  // model coordinates
  double r2 = 0.0;
  bool defined = true;  // false for zero-variance channels
};

struct ScoreReport {
  std::vector<ChannelScore> channels;
  double mean_r2() const;  // over defined channels
  double min_r2() const;
};

// Rollout from the first sample driven by the recorded inputs, compared
// against samples 1..L-1.
ScoreReport score(const StateSpaceModel& model, const Trajectory& trajectory);

// Coefficient of determination of `predicted` against `actual`.
double r_squared(const Eigen::VectorXd& actual, const Eigen::VectorXd& predicted);

nlohmann::json model_to_json(const StateSpaceModel& model);
StateSpaceModel model_from_json(const nlohmann::json& j);
void save_model(const std::string& path, const StateSpaceModel& model);
StateSpaceModel load_model(const std::string& path);

}  // namespace lfctl
