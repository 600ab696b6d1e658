#pragma once

// Scalar reference governor over a finite-horizon output admissible set:
// v_k = v_{k-1} + kappa (r_k - v_{k-1}), kappa in [0, 1].

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lfctl/dmdc.hpp"

namespace lfctl {

enum class Sense { kMax, kMin };  // y <= bound, y >= bound

struct Breakpoint {
  double t = 0.0;  // bound applies for times strictly after t
  double bound = 0.0;
};

// A bound on one model output, piecewise constant in time. The first
// breakpoint's bound applies from the start regardless of its time.
struct OutputConstraint {
  std::string name;    // constraint label
  std::string output;  // model output channel
  Sense sense = Sense::kMax;
  std::vector<Breakpoint> schedule;
  bool enabled = true;

  double bound_at(double t) const;
  // Replace the schedule from `t` on with a constant `bound`.
  void set_bound_from(double t, double bound);
  void validate() const;
};

struct ConstraintSet {
  std::vector<OutputConstraint> outputs;
  double rate_limit_mw_per_min = 16.0;

  // Active bounds at `t` (disabled constraints are omitted).
  std::vector<double> bounds_at(double t) const;
  const OutputConstraint* find(const std::string& name) const;
  OutputConstraint* find(const std::string& name);
  void validate() const;
};

// One linear output constraint in model coordinates: sign * y <= bound.
struct OutputRow {
  int output = 0;
  double sign = 1.0;
  double bound = 0.0;
  int tag = 0;  // caller's label, copied into the row provenance
};

struct RowTag {
  int constraint = 0;  // OutputRow::tag
  int step = 0;        // prediction step; -1 for the steady-state row
};

// H_x x + H_v v <= h for a held input v, rows for k = 0..T plus one
// steady-state row per constraint.
struct AdmissibleSet {
  Eigen::MatrixXd hx;
  Eigen::VectorXd hv;
  Eigen::VectorXd h;
  std::vector<RowTag> tags;
  int horizon = 0;
  double epsilon = 0.0;

  Eigen::Index rows() const { return h.size(); }
  bool contains(const Eigen::VectorXd& x, double v, double tol = 0.0) const;
};

class InfeasibleSetError : public std::runtime_error {
 public:
  InfeasibleSetError(const std::string& what, RowTag row)
      : std::runtime_error(what), row_(row) {}
  RowTag row() const { return row_; }

 private:
  RowTag row_;
};

// Rows depend only on (model, outputs, horizon). Tightening for |w| <= w_max:
// step k bound shrinks by w_max (sum_{j<k} |c A^j B_w| + |D_w|); the steady
// state row shrinks by the horizon-T amount plus epsilon. Requires a single
// input and spectral radius < 1. Throws InfeasibleSetError when no constant
// input satisfies every steady-state row.
AdmissibleSet build_admissible_set(const StateSpaceModel& model,
                                   const std::vector<OutputRow>& constraints, int horizon,
                                   double epsilon, double disturbance_bound = 1.0);

enum class Binding { kNone, kRate, kOutput, kInfeasible, kBypass };

const char* binding_name(Binding b);

struct KappaResult {
  double kappa = 1.0;
  Binding binding = Binding::kNone;
  Eigen::Index row = -1;
};

// Largest kappa in [0, 1] such that (x, v_prev + kappa (r - v_prev)) meets
// every row and |kappa (r - v_prev)| <= rate_bound. All quantities in model
// coordinates. A current state outside the set (by more than 1e-9 relative
// round-off) yields kappa = 0.
KappaResult compute_kappa(const AdmissibleSet& set, const Eigen::VectorXd& x, double v_prev,
                          double r, double rate_bound);

// Interval of held inputs admissible from x (ignores the rate bound).
std::pair<double, double> admissible_band(const AdmissibleSet& set, const Eigen::VectorXd& x);

struct GovernorConfig {
  int horizon = 2500;
  double epsilon = 1e-4;
  double disturbance_bound = 1.0;
  bool enabled = true;

  void validate() const;
};

struct GovernorDecision {
  double t = 0.0;
  double r = 0.0;  // MW
  double v = 0.0;  // MW
  double kappa = 1.0;
  Binding binding = Binding::kNone;
  std::string binding_constraint;
  int binding_step = 0;
  bool alarm = false;
  double band_lo = 0.0;  // MW
  double band_hi = 0.0;
  double micros = 0.0;
};

class Governor {
 public:
  Governor(StateSpaceModel model, ConstraintSet constraints, GovernorConfig cfg);

  void reset(double v0_mw);

  // x holds the model states in engineering units, in model order.
  GovernorDecision tick(const Eigen::VectorXd& x, double r_mw, double t, double dt);

  void set_enabled(bool on) { cfg_.enabled = on; }
  bool enabled() const { return cfg_.enabled; }
  // Throws std::out_of_range for an unknown constraint name.
  void set_bound(const std::string& name, double bound, double t_from);

  double v_prev() const { return v_prev_; }
  int rebuild_count() const { return rebuilds_; }
  const StateSpaceModel& model() const { return model_; }
  const ConstraintSet& constraints() const { return constraints_; }
  const GovernorConfig& config() const { return cfg_; }
  const AdmissibleSet& admissible_set() const { return set_; }

 private:
  void refresh(double t);

  StateSpaceModel model_;
  ConstraintSet constraints_;
  GovernorConfig cfg_;
  AdmissibleSet set_;
  std::vector<int> active_;  // constraint index per OutputRow tag
  std::optional<std::vector<double>> cached_bounds_;
  double v_prev_ = 0.0;
  int rebuilds_ = 0;
};

// Output disturbance matrix for a noise model: D_w(j) = 3 sigma_j / scale_j.
Eigen::VectorXd output_disturbance(const StateSpaceModel& model,
                                   const std::vector<double>& three_sigma);

}  // namespace lfctl
