#include "lfctl/pid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lfctl {

void PidGains::validate() const {
  if (kd != 0.0) throw ConfigError("pid: derivative gain must be zero");
  if (!(kp >= 0.0 && ki >= 0.0)) throw ConfigError("pid: kp and ki must be >= 0");
  if (!std::isfinite(out_min) || !std::isfinite(out_max) || !(out_min < out_max)) {
    throw ConfigError("pid: output limits must be finite with min < max");
  }
  if (!(integral_limit >= 0.0) || !std::isfinite(integral_limit)) {
    throw ConfigError("pid: integral_limit must be finite and >= 0");
  }
}

PidResult pid_step(const PidGains& g, const PidState& s, double setpoint, double measurement,
                   double dt) {
  const double sign = g.reverse ? -1.0 : 1.0;
  const double error = setpoint - measurement;

  PidState next = s;
  next.integral += error * dt;
  if (g.ki > 0.0) {
    const double bound = g.integral_limit / g.ki;
    next.integral = std::clamp(next.integral, -bound, bound);
  } else {
    next.integral = 0.0;
  }

  const double derivative = dt > 0.0 ? (error - s.prev_error) / dt : 0.0;
  auto unsaturated = [&](double integral) {
    return g.bias + sign * (g.kp * error + g.ki * integral + g.kd * derivative);
  };
  double out = unsaturated(next.integral);
  // Conditional integration: hold the integral while it pushes further into saturation.
  if ((out > g.out_max && sign * error > 0.0) || (out < g.out_min && sign * error < 0.0)) {
    next.integral = s.integral;
    out = unsaturated(next.integral);
  }
  out = std::clamp(out, g.out_min, g.out_max);
  next.prev_error = error;
  next.last_output = out;
  return {out, next};
}

PidState pid_hold(const PidGains& g, double action) {
  PidState s;
  const double sign = g.reverse ? -1.0 : 1.0;
  if (g.ki > 0.0) s.integral = sign * (action - g.bias) / g.ki;
  s.last_output = action;
  return s;
}

LowLevelControl::LowLevelControl(ControlGains gains, ControlSetpoints setpoints)
    : gains_(gains), setpoints_(setpoints) {
  gains_.power.validate();
  gains_.outlet.validate();
  gains_.inlet.validate();
}

void LowLevelControl::initialize(const Actuation& hold) {
  power_ = pid_hold(gains_.power, hold.rho_ext);
  outlet_ = pid_hold(gains_.outlet, hold.head_p);
  inlet_ = pid_hold(gains_.inlet, hold.head_s);
}

Actuation LowLevelControl::update(double power_ref_mw, const PlantState& s, double dt) {
  const PidResult p = pid_step(gains_.power, power_, power_ref_mw, s.q_rx, dt);
  const PidResult o = pid_step(gains_.outlet, outlet_, setpoints_.t_c_out, s.t_c_out(), dt);
  const PidResult i = pid_step(gains_.inlet, inlet_, setpoints_.t_c_in, s.t_c_in(), dt);
  power_ = p.state;
  outlet_ = o.state;
  inlet_ = i.state;
  return {p.action, o.action, i.action};
}

ControlGains default_control_gains(const Plant& plant) {
  const auto& pp = plant.params();
  const Actuation eq = plant.equilibrium_actuation(plant.steady_state(1.0));
  const auto& lim = pp.limits;
  ControlGains g;
  g.power = {.kp = 2.0e-6, .ki = 2.0e-6, .kd = 0.0, .bias = eq.rho_ext,
             .out_min = lim.rho_ext_min, .out_max = lim.rho_ext_max,
             .integral_limit = 0.5 * (lim.rho_ext_max - lim.rho_ext_min), .reverse = false};
  g.outlet = {.kp = 20.0, .ki = 2.0, .kd = 0.0, .bias = eq.head_p,
              .out_min = lim.head_p_min, .out_max = lim.head_p_max,
              .integral_limit = lim.head_p_max - lim.head_p_min, .reverse = true};
  g.inlet = {.kp = 20.0, .ki = 2.0, .kd = 0.0, .bias = eq.head_s,
             .out_min = lim.head_s_min, .out_max = lim.head_s_max,
             .integral_limit = lim.head_s_max - lim.head_s_min, .reverse = true};
  return g;
}

namespace {

PidGains& loop_gains(ControlGains& g, Loop loop) {
  switch (loop) {
    case Loop::kPower: return g.power;
    case Loop::kOutlet: return g.outlet;
    case Loop::kInlet: return g.inlet;
  }
  return g.power;
}

}  // namespace

TuningReport tune_grid_search(const ControlGains& base, Loop loop,
                              const std::vector<double>& kp_grid,
                              const std::vector<double>& ki_grid, const TuningCost& cost) {
  TuningReport report;
  const TuningCandidate* best = nullptr;
  for (double kp : kp_grid) {
    for (double ki : ki_grid) {
      ControlGains g = base;
      loop_gains(g, loop).kp = kp;
      loop_gains(g, loop).ki = ki;
      TuningCandidate c{kp, ki, std::numeric_limits<double>::infinity(), false};
      if (const auto value = cost(g); value && std::isfinite(*value)) {
        c.cost = *value;
        c.stable = true;
      }
      report.candidates.push_back(c);
    }
  }
  for (const auto& c : report.candidates) {
    if (!c.stable) continue;
    if (best == nullptr || c.cost < best->cost ||
        (c.cost == best->cost && (c.kp < best->kp || (c.kp == best->kp && c.ki < best->ki)))) {
      best = &c;
    }
  }
  if (best == nullptr) throw NumericError("tune_grid_search: every candidate was unstable");
  ControlGains g = base;
  loop_gains(g, loop).kp = best->kp;
  loop_gains(g, loop).ki = best->ki;
  report.best = loop_gains(g, loop);
  return report;
}

TuningCost ramp_tracking_cost(const Plant& plant, Loop loop, RampCostOptions opts) {
  return [&plant, loop, opts](const ControlGains& gains) -> std::optional<double> {
    try {
      LowLevelControl ctl(gains, ControlSetpoints{});
      PlantState s = plant.steady_state(1.0);
      ctl.initialize(plant.equilibrium_actuation(s));
      const double rated = plant.params().loop.rated_power_mw;
      const int steps = static_cast<int>(std::lround(opts.duration / opts.dt));
      const double ramp_s = opts.depth / opts.rate_per_min * 60.0;
      double iae = 0.0;
      double peak = 0.0;
      double tail = 0.0;
      int tail_count = 0;
      for (int k = 0; k < steps; ++k) {
        const double t = k * opts.dt;
        const double frac = 1.0 - opts.depth * std::clamp(t / ramp_s, 0.0, 1.0);
        const Actuation a = ctl.update(frac * rated, s, opts.dt);
        s = plant.step(s, a, opts.dt);
        double e = 0.0;
        switch (loop) {
          case Loop::kPower: e = (s.q_rx - frac * rated) / rated * 100.0; break;
          case Loop::kOutlet: e = s.t_c_out() - ctl.setpoints().t_c_out; break;
          case Loop::kInlet: e = s.t_c_in() - ctl.setpoints().t_c_in; break;
        }
        if (!std::isfinite(e) || std::abs(e) > opts.divergence_limit) return std::nullopt;
        iae += std::abs(e) * opts.dt;
        peak = std::max(peak, std::abs(e));
        if (k >= steps - steps / 10) {
          tail += std::abs(e);
          ++tail_count;
        }
      }
      // A loop that has not settled by the end of the window is treated as unstable.
      if (tail_count > 0 && tail / tail_count > 0.25 * std::max(peak, 1e-3) && peak > 0.05) {
        return std::nullopt;
      }
      return iae + opts.overshoot_weight * peak;
    } catch (const NumericError&) {
      return std::nullopt;
    }
  };
}

}  // namespace lfctl
