#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lfctl/plant.hpp"

namespace lfctl {

// Positional PI(D) with clamped integral. `reverse` flips the action sign
// for loops where raising the MV lowers the CV.
struct PidGains {
  double kp = 0.0;
  double ki = 0.0;
  double kd = 0.0;
  double bias = 0.0;
  double out_min = 0.0;
  double out_max = 0.0;
  double integral_limit = 0.0;  // |ki * integral| bound, engineering units of the MV
  bool reverse = false;

  void validate() const;
};

struct PidState {
  double integral = 0.0;
  double prev_error = 0.0;
  double last_output = 0.0;
};

struct PidResult {
  double action = 0.0;
  PidState state;
};

PidResult pid_step(const PidGains& g, const PidState& s, double setpoint, double measurement,
                   double dt);

// Integral value for which a zero-error step outputs `action`.
PidState pid_hold(const PidGains& g, double action);

// The three low-level loops: Q_RX -> rho_ext, T_c,out -> dP_p, T_c,in -> dP_s.
struct ControlGains {
  PidGains power;
  PidGains outlet;
  PidGains inlet;
};

struct ControlSetpoints {
  double q_rx_mw = 320.0;
  double t_c_out = 645.0;
  double t_c_in = 547.0;
};

class LowLevelControl {
 public:
  LowLevelControl(ControlGains gains, ControlSetpoints setpoints);

  // Starts all three loops balanced at `hold`.
  void initialize(const Actuation& hold);
  Actuation update(double power_ref_mw, const PlantState& s, double dt);

  const ControlGains& gains() const { return gains_; }
  const ControlSetpoints& setpoints() const { return setpoints_; }
  const PidState& power_state() const { return power_; }
  const PidState& outlet_state() const { return outlet_; }
  const PidState& inlet_state() const { return inlet_; }

 private:
  ControlGains gains_;
  ControlSetpoints setpoints_;
  PidState power_;
  PidState outlet_;
  PidState inlet_;
};

// Default gains with biases taken from the full-power equilibrium actuation.
ControlGains default_control_gains(const Plant& plant);

enum class Loop { kPower, kOutlet, kInlet };

struct TuningCandidate {
  double kp = 0.0;
  double ki = 0.0;
  double cost = 0.0;
  bool stable = false;
};

struct TuningReport {
  PidGains best;
  std::vector<TuningCandidate> candidates;
};

// Closed-loop cost of a set of gains; returns nullopt for unstable runs.
using TuningCost = std::function<std::optional<double>(const ControlGains&)>;

// Grid refinement of (kp, ki) for one loop. Ties break toward smaller kp,
// then smaller ki. Throws NumericError when no candidate is stable.
TuningReport tune_grid_search(const ControlGains& base, Loop loop,
                              const std::vector<double>& kp_grid,
                              const std::vector<double>& ki_grid, const TuningCost& cost);

struct RampCostOptions {
  double depth = 0.4;            // fraction of nominal power
  double rate_per_min = 0.05;
  double duration = 1500.0;      // s
  double dt = 0.2;
  double overshoot_weight = 50.0;
  double divergence_limit = 25.0;  // |error| beyond this marks the run unstable
};

// Integral of absolute error plus an overshoot penalty for `loop` through a
// ramp-down with all three loops closed.
TuningCost ramp_tracking_cost(const Plant& plant, Loop loop, RampCostOptions opts = {});

}  // namespace lfctl
