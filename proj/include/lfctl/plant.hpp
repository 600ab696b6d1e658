#pragma once

// Lumped-parameter two-loop salt plant: 6-group point kinetics with
// temperature feedback, an 11-node thermal network, and lagged pumps.

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace lfctl {

inline constexpr int kPrecursorGroups = 6;

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KineticsParams {
  std::array<double, kPrecursorGroups> beta{};    // delayed fractions
  std::array<double, kPrecursorGroups> lambda{};  // decay constants, 1/s
  double generation_time = 5.0e-4;                // Lambda, s

  double beta_total() const;
  // C_i = beta_i n / (Lambda lambda_i)
  std::array<double, kPrecursorGroups> equilibrium_precursors(double n) const;
  void validate() const;

  static KineticsParams standard();
};

struct FeedbackParams {
  double alpha_mf = -2.5e-5;  // moderator+fuel, reactivity per degC
  double alpha_c = -1.0e-5;   // coolant, reactivity per degC
  double fuel_ref_temp = 0.0;
  double coolant_ref_temp = 0.0;

  void validate() const;
};

// Full-power operating point the thermal network is calibrated against.
struct CalibrationAnchors {
  double q_rx_mw = 320.0;
  double q_hx_mw = 313.0;
  double mdot_p = 1320.0;
  double mdot_s = 5295.0;
  double t_c_in = 547.0;
  double t_c_out = 645.0;
  double t_s_in = 430.0;
  double t_s_out = 469.0;
  double p_c_in = 1151.0;
  double p_c_out = 156.0;
};

// Free design choices that the anchors do not pin down.
struct LoopDesign {
  double fuel_delta_t = 120.0;       // fuel-to-coolant temperature rise at full power
  double fuel_time_constant = 30.0;  // s
  double cavity_temp = 40.0;         // vessel heat-loss sink temperature
  double sink_temp = 424.5;          // secondary heat-sink (steam generator) temperature
  // residence times at nominal flow, s
  double tau_core = 5.0;
  double tau_hot_leg = 10.0;
  double tau_hx_primary = 4.0;       // per cell
  double tau_cold_leg = 10.0;
  double tau_hx_secondary = 3.0;     // per cell
  double tau_secondary_hot_leg = 20.0;
  double tau_sink = 20.0;
  double tau_secondary_cold_leg = 20.0;
  double pump_lag = 2.0;             // s
  double nominal_head_p = 1000.0;    // kPa
  double nominal_head_s = 500.0;     // kPa
  double cover_pressure = 150.0;     // kPa
  double core_drop_linear_fraction = 0.5;
  // Exchanger film conductances scale as flow^exponent; the split sets the
  // primary film's share of the full-power thermal resistance.
  double hx_film_exponent = 0.8;
  double hx_primary_resistance_fraction = 0.5;
};

struct LoopParams {
  double cp_p = 0.0;  // J/(kg degC)
  double cp_s = 0.0;
  // heat capacities, J/degC
  double cap_fuel = 0.0;
  double cap_core = 0.0;
  double cap_hot_leg = 0.0;
  double cap_hx_p = 0.0;
  double cap_cold_leg = 0.0;
  double cap_hx_s = 0.0;
  double cap_s_hot_leg = 0.0;
  double cap_sink = 0.0;
  double cap_s_cold_leg = 0.0;
  // conductances, W/degC
  double ua_fuel = 0.0;
  double ua_hx = 0.0;  // at anchor flows
  double hx_film_p = 0.0;
  double hx_film_s = 0.0;
  double hx_film_exponent = 0.0;
  double mdot_p_ref = 0.0;
  double mdot_s_ref = 0.0;
  double ua_sink = 0.0;
  double ua_vessel = 0.0;
  double cavity_temp = 0.0;
  double sink_temp = 0.0;
  // pumps: mdot_target = gain * head + offset
  double pump_gain_p = 0.0;  // kg/s per kPa
  double pump_gain_s = 0.0;
  double pump_offset_p = 0.0;
  double pump_offset_s = 0.0;
  double pump_lag = 0.0;
  // pressures: P_out = cover + k_out mdot, P_in = P_out + a mdot + b mdot^2
  double cover_pressure = 0.0;
  double k_outlet = 0.0;
  double core_drop_a = 0.0;
  double core_drop_b = 0.0;
  double rated_power_mw = 320.0;

  double hx_conductance(double mdot_p, double mdot_s) const;
  void validate() const;
};

LoopParams calibrate_loop(const CalibrationAnchors& anchors, const LoopDesign& design);

struct ActuatorLimits {
  double rho_ext_min = -0.01;
  double rho_ext_max = 0.01;
  double head_p_min = 0.0;
  double head_p_max = 1500.0;
  double head_s_min = 0.0;
  double head_s_max = 1000.0;
};

struct PlantParams {
  KineticsParams kinetics = KineticsParams::standard();
  FeedbackParams feedback;
  CalibrationAnchors anchors;
  LoopDesign design;
  LoopParams loop;
  ActuatorLimits limits;
  int thermal_substeps = 10;

  // Recomputes loop params and feedback reference temperatures from anchors.
  void calibrate();
  static PlantParams defaults();
};

enum Node : int {
  kFuel = 0,
  kCore,        // core coolant, = T_c,out
  kHotLeg,
  kHxP1,
  kHxP2,
  kColdLeg,     // = T_c,in
  kHxS1,
  kHxS2,        // = T_s,out
  kSHotLeg,
  kSink,
  kSColdLeg,    // = T_s,in
  kNodeCount
};

struct Actuation {
  double rho_ext = 0.0;
  double head_p = 0.0;  // kPa
  double head_s = 0.0;  // kPa

  Actuation clamped(const ActuatorLimits& lim) const;
};

struct PlantState {
  double t = 0.0;
  double n = 1.0;
  std::array<double, kPrecursorGroups> c{};
  double rho_ext = 0.0;
  double rho_m = 0.0;
  double rho_c = 0.0;
  double rho_total = 0.0;
  std::array<double, kNodeCount> temp{};
  double mdot_p = 0.0;
  double mdot_s = 0.0;
  double p_c_in = 0.0;
  double p_c_out = 0.0;
  double q_rx = 0.0;  // MW
  double q_hx = 0.0;
  double q_sg = 0.0;
  double q_loss = 0.0;

  double t_c_in() const { return temp[kColdLeg]; }
  double t_c_out() const { return temp[kCore]; }
  double t_s_in() const { return temp[kSColdLeg]; }
  double t_s_out() const { return temp[kHxS2]; }

  // Named lookup over every logged field (the CSV column names).
  double value(std::string_view name) const;
  static const std::vector<std::string>& field_names();
  std::vector<double> field_values() const;
};

// Time derivatives of the dynamic part of the state at fixed actuation.
struct PlantDerivatives {
  double dn = 0.0;
  std::array<double, kPrecursorGroups> dc{};
  std::array<double, kNodeCount> dtemp{};
  double dmdot_p = 0.0;
  double dmdot_s = 0.0;

  double max_abs_normalized(const PlantState& s) const;
};

class Plant {
 public:
  explicit Plant(PlantParams params);

  const PlantParams& params() const { return params_; }

  // Equilibrium with core inlet/outlet temperatures at their anchor values.
  PlantState steady_state(double load_fraction) const;
  // Actuation that holds `s` in equilibrium (valid for states from steady_state).
  Actuation equilibrium_actuation(const PlantState& s) const;

  PlantState step(const PlantState& s, const Actuation& a, double dt) const;
  PlantDerivatives derivatives(const PlantState& s, const Actuation& a) const;

  double feedback_rho_m(const PlantState& s) const;
  double feedback_rho_c(const PlantState& s) const;

 private:
  void refresh_algebraic(PlantState& s) const;

  PlantParams params_;
};

// The 13 supervisory states plus n, in this fixed order.
const std::vector<std::string>& measured_channel_names();

struct NoiseSpec {
  // 3-sigma amplitudes
  double flow_3sigma = 15.0;        // kg/s
  double temp_3sigma = 0.5;         // degC
  double pressure_3sigma = 0.1;     // kPa
  double heat_rate_3sigma = 1.0e-3; // MW (1 kW)
  double n_3sigma = 0.003;
  std::uint64_t seed = 1;

  static NoiseSpec zero();
  double sigma_for(std::string_view channel) const;
  void validate() const;
};

using OutputVector = Eigen::VectorXd;

OutputVector project_outputs(const PlantState& s);
OutputVector measure(const PlantState& s, const NoiseSpec& noise, std::mt19937_64& rng);

}  // namespace lfctl
