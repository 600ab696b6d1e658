#include "lfctl/plant.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <unsupported/Eigen/MatrixFunctions>

namespace lfctl {

namespace {

constexpr double kMW = 1.0e6;

using KineticsMatrix = Eigen::Matrix<double, 1 + kPrecursorGroups, 1 + kPrecursorGroups>;
using KineticsVector = Eigen::Matrix<double, 1 + kPrecursorGroups, 1>;

KineticsMatrix kinetics_matrix(const KineticsParams& k, double rho) {
  KineticsMatrix m = KineticsMatrix::Zero();
  const double lam = k.generation_time;
  m(0, 0) = (rho - k.beta_total()) / lam;
  for (int i = 0; i < kPrecursorGroups; ++i) {
    m(0, i + 1) = k.lambda[i];
    m(i + 1, 0) = k.beta[i] / lam;
    m(i + 1, i + 1) = -k.lambda[i];
  }
  return m;
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string(what) + " must be finite and > 0");
  }
}

}  // namespace

double KineticsParams::beta_total() const {
  return std::accumulate(beta.begin(), beta.end(), 0.0);
}

std::array<double, kPrecursorGroups> KineticsParams::equilibrium_precursors(double n) const {
  std::array<double, kPrecursorGroups> c{};
  for (int i = 0; i < kPrecursorGroups; ++i) {
    c[i] = beta[i] * n / (generation_time * lambda[i]);
  }
  return c;
}

void KineticsParams::validate() const {
  for (int i = 0; i < kPrecursorGroups; ++i) {
    require_positive(beta[i], "kinetics.beta");
    require_positive(lambda[i], "kinetics.lambda");
  }
  require_positive(generation_time, "kinetics.generation_time");
}

// Keepin-type thermal U-235 group constants.
KineticsParams KineticsParams::standard() {
  KineticsParams k;
  k.beta = {0.000215, 0.001424, 0.001274, 0.002568, 0.000748, 0.000273};
  k.lambda = {0.0124, 0.0305, 0.111, 0.301, 1.14, 3.01};
  k.generation_time = 5.0e-4;
  return k;
}

void FeedbackParams::validate() const {
  if (!(alpha_mf < 0.0) || !(alpha_c < 0.0)) {
    throw ConfigError("feedback coefficients must be strictly negative");
  }
}

void LoopParams::validate() const {
  for (double v : {cp_p, cp_s, cap_fuel, cap_core, cap_hot_leg, cap_hx_p, cap_cold_leg, cap_hx_s,
                   cap_s_hot_leg, cap_sink, cap_s_cold_leg, ua_fuel, ua_hx, ua_sink, ua_vessel,
                   pump_gain_p, pump_gain_s, pump_lag}) {
    require_positive(v, "loop parameter");
  }
}

double LoopParams::hx_conductance(double mdot_p, double mdot_s) const {
  const double hp = hx_film_p * std::pow(std::max(mdot_p, 0.0) / mdot_p_ref, hx_film_exponent);
  const double hs = hx_film_s * std::pow(std::max(mdot_s, 0.0) / mdot_s_ref, hx_film_exponent);
  if (hp <= 0.0 || hs <= 0.0) return 0.0;
  return hp * hs / (hp + hs);
}

LoopParams calibrate_loop(const CalibrationAnchors& a, const LoopDesign& d) {
  const double q_rx = a.q_rx_mw * kMW;
  const double q_hx = a.q_hx_mw * kMW;
  if (!(q_hx < q_rx)) throw ConfigError("anchors: Q_HX must be below Q_RX (vessel loss > 0)");
  if (!(a.t_c_out > a.t_c_in && a.t_s_out > a.t_s_in && a.t_c_in > a.t_s_out)) {
    throw ConfigError("anchors: temperature ordering T_c,out > T_c,in > T_s,out > T_s,in required");
  }
  if (!(a.t_s_in > d.sink_temp)) throw ConfigError("design: sink_temp must be below T_s,in");

  LoopParams p;
  p.rated_power_mw = a.q_rx_mw;
  p.cavity_temp = d.cavity_temp;
  p.sink_temp = d.sink_temp;
  p.ua_vessel = (q_rx - q_hx) / (a.t_c_out - d.cavity_temp);

  const double w_p = q_hx / (a.t_c_out - a.t_c_in);
  const double w_s = q_hx / (a.t_s_out - a.t_s_in);
  p.cp_p = w_p / a.mdot_p;
  p.cp_s = w_s / a.mdot_s;

  // Two-cell counter-flow exchanger: find the hot-end duty q1 for which both
  // cells share one conductance, then back out UA.
  auto imbalance = [&](double q1) {
    return q1 * (a.t_c_in - a.t_s_out + q1 / w_s) -
           (q_hx - q1) * (a.t_c_out - a.t_s_out - q1 / w_p);
  };
  double lo = 0.0;
  double hi = q_hx;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (imbalance(mid) > 0.0 ? hi : lo) = mid;
  }
  const double q1 = 0.5 * (lo + hi);
  const double t_p1 = a.t_c_out - q1 / w_p;
  p.ua_hx = 2.0 * q1 / (t_p1 - a.t_s_out);
  const double frac = d.hx_primary_resistance_fraction;
  if (!(frac > 0.0 && frac < 1.0)) throw ConfigError("design: hx_primary_resistance_fraction in (0,1)");
  p.hx_film_p = p.ua_hx / frac;
  p.hx_film_s = p.ua_hx / (1.0 - frac);
  p.hx_film_exponent = d.hx_film_exponent;
  p.mdot_p_ref = a.mdot_p;
  p.mdot_s_ref = a.mdot_s;

  p.ua_sink = q_hx / (a.t_s_in - d.sink_temp);
  p.ua_fuel = q_rx / d.fuel_delta_t;
  p.cap_fuel = d.fuel_time_constant * p.ua_fuel;

  p.cap_core = d.tau_core * w_p;
  p.cap_hot_leg = d.tau_hot_leg * w_p;
  p.cap_hx_p = d.tau_hx_primary * w_p;
  p.cap_cold_leg = d.tau_cold_leg * w_p;
  p.cap_hx_s = d.tau_hx_secondary * w_s;
  p.cap_s_hot_leg = d.tau_secondary_hot_leg * w_s;
  p.cap_sink = d.tau_sink * w_s;
  p.cap_s_cold_leg = d.tau_secondary_cold_leg * w_s;

  p.pump_gain_p = a.mdot_p / d.nominal_head_p;
  p.pump_gain_s = a.mdot_s / d.nominal_head_s;
  p.pump_lag = d.pump_lag;

  p.cover_pressure = d.cover_pressure;
  p.k_outlet = (a.p_c_out - d.cover_pressure) / a.mdot_p;
  const double drop = a.p_c_in - a.p_c_out;
  p.core_drop_a = d.core_drop_linear_fraction * drop / a.mdot_p;
  p.core_drop_b = (1.0 - d.core_drop_linear_fraction) * drop / (a.mdot_p * a.mdot_p);
  p.validate();
  return p;
}

void PlantParams::calibrate() {
  kinetics.validate();
  loop = calibrate_loop(anchors, design);
  feedback.fuel_ref_temp = anchors.t_c_out + design.fuel_delta_t;
  feedback.coolant_ref_temp = 0.5 * (anchors.t_c_in + anchors.t_c_out);
  feedback.validate();
  if (thermal_substeps < 1) throw ConfigError("thermal_substeps must be >= 1");
}

PlantParams PlantParams::defaults() {
  PlantParams p;
  p.calibrate();
  return p;
}

Actuation Actuation::clamped(const ActuatorLimits& lim) const {
  return {std::clamp(rho_ext, lim.rho_ext_min, lim.rho_ext_max),
          std::clamp(head_p, lim.head_p_min, lim.head_p_max),
          std::clamp(head_s, lim.head_s_min, lim.head_s_max)};
}

// ---------------------------------------------------------------------------

namespace {

const std::array<const char*, kNodeCount> kNodeNames = {
    "T_fuel", "T_c_out", "T_hot_leg", "T_hx_p1", "T_hx_p2", "T_c_in",
    "T_hx_s1", "T_s_out", "T_s_hot_leg", "T_sink", "T_s_in"};

}  // namespace

const std::vector<std::string>& PlantState::field_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v = {"t", "n"};
    for (int i = 0; i < kPrecursorGroups; ++i) v.push_back("C" + std::to_string(i + 1));
    for (const char* s : {"rho_ext", "rho_m", "rho_c", "rho_total"}) v.emplace_back(s);
    for (const char* s : kNodeNames) v.emplace_back(s);
    for (const char* s : {"mdot_p", "mdot_s", "P_c_in", "P_c_out", "Q_RX", "Q_HX", "Q_SG", "Q_loss"}) {
      v.emplace_back(s);
    }
    return v;
  }();
  return names;
}

std::vector<double> PlantState::field_values() const {
  std::vector<double> v = {t, n};
  v.insert(v.end(), c.begin(), c.end());
  v.insert(v.end(), {rho_ext, rho_m, rho_c, rho_total});
  v.insert(v.end(), temp.begin(), temp.end());
  v.insert(v.end(), {mdot_p, mdot_s, p_c_in, p_c_out, q_rx, q_hx, q_sg, q_loss});
  return v;
}

double PlantState::value(std::string_view name) const {
  static const std::unordered_map<std::string, std::size_t> index = [] {
    std::unordered_map<std::string, std::size_t> m;
    const auto& names = field_names();
    for (std::size_t i = 0; i < names.size(); ++i) m.emplace(names[i], i);
    return m;
  }();
  const auto it = index.find(std::string(name));
  if (it == index.end()) throw std::out_of_range("unknown plant field: " + std::string(name));
  return field_values()[it->second];
}

double PlantDerivatives::max_abs_normalized(const PlantState& s) const {
  double m = std::abs(dn) / std::max(std::abs(s.n), 1e-12);
  for (int i = 0; i < kPrecursorGroups; ++i) {
    m = std::max(m, std::abs(dc[i]) / std::max(std::abs(s.c[i]), 1e-12));
  }
  for (int i = 0; i < kNodeCount; ++i) {
    m = std::max(m, std::abs(dtemp[i]) / std::max(std::abs(s.temp[i]), 1.0));
  }
  m = std::max(m, std::abs(dmdot_p) / std::max(s.mdot_p, 1e-12));
  m = std::max(m, std::abs(dmdot_s) / std::max(s.mdot_s, 1e-12));
  return m;
}

// ---------------------------------------------------------------------------

Plant::Plant(PlantParams params) : params_(std::move(params)) {
  params_.kinetics.validate();
  params_.feedback.validate();
  params_.loop.validate();
}

double Plant::feedback_rho_m(const PlantState& s) const {
  return params_.feedback.alpha_mf * (s.temp[kFuel] - params_.feedback.fuel_ref_temp);
}

double Plant::feedback_rho_c(const PlantState& s) const {
  const double avg = 0.5 * (s.temp[kColdLeg] + s.temp[kCore]);
  return params_.feedback.alpha_c * (avg - params_.feedback.coolant_ref_temp);
}

namespace {

struct ThermalRates {
  std::array<double, kNodeCount> dtemp{};
  double q_hx = 0.0;
  double q_sg = 0.0;
  double q_loss = 0.0;
};

ThermalRates thermal_rates(const LoopParams& p, double power_w, double mdot_p, double mdot_s,
                           const std::array<double, kNodeCount>& T) {
  const double wp = mdot_p * p.cp_p;
  const double ws = mdot_s * p.cp_s;
  const double ua_hx = p.hx_conductance(mdot_p, mdot_s);
  const double q1 = 0.5 * ua_hx * (T[kHxP1] - T[kHxS2]);
  const double q2 = 0.5 * ua_hx * (T[kHxP2] - T[kHxS1]);
  const double q_fc = p.ua_fuel * (T[kFuel] - T[kCore]);
  const double loss = p.ua_vessel * (T[kCore] - p.cavity_temp);
  const double q_sg = p.ua_sink * (T[kSink] - p.sink_temp);

  ThermalRates r;
  auto& d = r.dtemp;
  d[kFuel] = (power_w - q_fc) / p.cap_fuel;
  d[kCore] = (q_fc + wp * (T[kColdLeg] - T[kCore]) - loss) / p.cap_core;
  d[kHotLeg] = wp * (T[kCore] - T[kHotLeg]) / p.cap_hot_leg;
  d[kHxP1] = (wp * (T[kHotLeg] - T[kHxP1]) - q1) / p.cap_hx_p;
  d[kHxP2] = (wp * (T[kHxP1] - T[kHxP2]) - q2) / p.cap_hx_p;
  d[kColdLeg] = wp * (T[kHxP2] - T[kColdLeg]) / p.cap_cold_leg;
  d[kHxS1] = (ws * (T[kSColdLeg] - T[kHxS1]) + q2) / p.cap_hx_s;
  d[kHxS2] = (ws * (T[kHxS1] - T[kHxS2]) + q1) / p.cap_hx_s;
  d[kSHotLeg] = ws * (T[kHxS2] - T[kSHotLeg]) / p.cap_s_hot_leg;
  d[kSink] = (ws * (T[kSHotLeg] - T[kSink]) - q_sg) / p.cap_sink;
  d[kSColdLeg] = ws * (T[kSink] - T[kSColdLeg]) / p.cap_s_cold_leg;
  r.q_hx = q1 + q2;
  r.q_sg = q_sg;
  r.q_loss = loss;
  return r;
}

// Solves the thermal network for its equilibrium at fixed power and flows.
std::array<double, kNodeCount> thermal_equilibrium(const LoopParams& p, double power_w,
                                                   double mdot_p, double mdot_s) {
  std::array<double, kNodeCount> zero{};
  const ThermalRates base = thermal_rates(p, power_w, mdot_p, mdot_s, zero);
  Eigen::Matrix<double, kNodeCount, kNodeCount> m;
  Eigen::Matrix<double, kNodeCount, 1> b;
  for (int i = 0; i < kNodeCount; ++i) b(i) = base.dtemp[i];
  for (int j = 0; j < kNodeCount; ++j) {
    std::array<double, kNodeCount> e{};
    e[j] = 1.0;
    const ThermalRates r = thermal_rates(p, power_w, mdot_p, mdot_s, e);
    for (int i = 0; i < kNodeCount; ++i) m(i, j) = r.dtemp[i] - base.dtemp[i];
  }
  const auto lu = m.fullPivLu();
  Eigen::Matrix<double, kNodeCount, 1> t = lu.solve(-b);
  t -= lu.solve(m * t + b);  // one refinement pass
  std::array<double, kNodeCount> out{};
  for (int i = 0; i < kNodeCount; ++i) out[i] = t(i);
  return out;
}

}  // namespace

void Plant::refresh_algebraic(PlantState& s) const {
  const auto& lp = params_.loop;
  s.rho_m = feedback_rho_m(s);
  s.rho_c = feedback_rho_c(s);
  s.rho_total = s.rho_ext + s.rho_m + s.rho_c;
  s.p_c_out = lp.cover_pressure + lp.k_outlet * s.mdot_p;
  s.p_c_in = s.p_c_out + lp.core_drop_a * s.mdot_p + lp.core_drop_b * s.mdot_p * s.mdot_p;
  const ThermalRates r = thermal_rates(lp, s.n * lp.rated_power_mw * kMW, s.mdot_p, s.mdot_s, s.temp);
  s.q_rx = s.n * lp.rated_power_mw;
  s.q_hx = r.q_hx / kMW;
  s.q_sg = r.q_sg / kMW;
  s.q_loss = r.q_loss / kMW;
}

PlantState Plant::steady_state(double load_fraction) const {
  if (!(load_fraction >= 0.2 && load_fraction <= 1.0)) {
    throw std::domain_error("steady_state: load fraction must lie in [0.2, 1.0]");
  }
  const auto& lp = params_.loop;
  const auto& an = params_.anchors;
  PlantState s;
  s.n = load_fraction;
  s.c = params_.kinetics.equilibrium_precursors(s.n);

  const double power_w = load_fraction * lp.rated_power_mw * kMW;
  const double loss = lp.ua_vessel * (an.t_c_out - lp.cavity_temp);
  if (!(power_w > loss)) throw NumericError("steady_state: vessel loss exceeds reactor power");
  s.mdot_p = (power_w - loss) / (lp.cp_p * (an.t_c_out - an.t_c_in));

  // Secondary flow that brings the core inlet back to its setpoint.
  auto inlet_temp = [&](double mdot_s) {
    return thermal_equilibrium(lp, power_w, s.mdot_p, mdot_s)[kColdLeg];
  };
  double lo = 1e-3 * an.mdot_s;
  double hi = 20.0 * an.mdot_s;
  if (!(inlet_temp(lo) > an.t_c_in && inlet_temp(hi) < an.t_c_in)) {
    throw NumericError("steady_state: core inlet setpoint not reachable; check loop calibration");
  }
  for (int it = 0; it < 200 && (hi - lo) > 1e-13 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (inlet_temp(mid) > an.t_c_in ? lo : hi) = mid;
  }
  s.mdot_s = 0.5 * (lo + hi);
  s.temp = thermal_equilibrium(lp, power_w, s.mdot_p, s.mdot_s);

  s.rho_ext = 0.0;
  refresh_algebraic(s);
  s.rho_ext = -(s.rho_m + s.rho_c);
  s.rho_total = s.rho_ext + s.rho_m + s.rho_c;

  const PlantDerivatives d = derivatives(s, equilibrium_actuation(s));
  if (!(d.max_abs_normalized(s) < 1e-9)) {
    std::ostringstream msg;
    msg << "steady_state: equilibrium solve did not converge (residual " << d.max_abs_normalized(s)
        << ")";
    throw NumericError(msg.str());
  }
  return s;
}

Actuation Plant::equilibrium_actuation(const PlantState& s) const {
  const auto& lp = params_.loop;
  return {s.rho_ext, (s.mdot_p - lp.pump_offset_p) / lp.pump_gain_p,
          (s.mdot_s - lp.pump_offset_s) / lp.pump_gain_s};
}

PlantDerivatives Plant::derivatives(const PlantState& s, const Actuation& a_raw) const {
  const auto& lp = params_.loop;
  const auto& k = params_.kinetics;
  const Actuation a = a_raw.clamped(params_.limits);
  PlantDerivatives d;
  const double rho = a.rho_ext + feedback_rho_m(s) + feedback_rho_c(s);
  d.dn = (rho - k.beta_total()) / k.generation_time * s.n;
  for (int i = 0; i < kPrecursorGroups; ++i) {
    d.dn += k.lambda[i] * s.c[i];
    d.dc[i] = k.beta[i] / k.generation_time * s.n - k.lambda[i] * s.c[i];
  }
  d.dtemp = thermal_rates(lp, s.n * lp.rated_power_mw * kMW, s.mdot_p, s.mdot_s, s.temp).dtemp;
  d.dmdot_p = (lp.pump_gain_p * a.head_p + lp.pump_offset_p - s.mdot_p) / lp.pump_lag;
  d.dmdot_s = (lp.pump_gain_s * a.head_s + lp.pump_offset_s - s.mdot_s) / lp.pump_lag;
  return d;
}

PlantState Plant::step(const PlantState& s0, const Actuation& a_raw, double dt) const {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be > 0");
  const auto& lp = params_.loop;
  const Actuation a = a_raw.clamped(params_.limits);
  PlantState s = s0;
  s.rho_ext = a.rho_ext;

  // Reactivity is held over the step; kinetics advance by the exact
  // exponential of the linear PKE at that reactivity.
  const double rho = a.rho_ext + feedback_rho_m(s0) + feedback_rho_c(s0);
  const int substeps = params_.thermal_substeps;
  const double h = dt / substeps;
  const KineticsMatrix propagator = (kinetics_matrix(params_.kinetics, rho) * h).exp();
  KineticsVector kin;
  kin(0) = s.n;
  for (int i = 0; i < kPrecursorGroups; ++i) kin(i + 1) = s.c[i];

  const double target_p = lp.pump_gain_p * a.head_p + lp.pump_offset_p;
  const double target_s = lp.pump_gain_s * a.head_s + lp.pump_offset_s;
  const double lag = std::exp(-h / lp.pump_lag);

  for (int sub = 0; sub < substeps; ++sub) {
    kin = propagator * kin;
    const double power_w = std::max(kin(0), 0.0) * lp.rated_power_mw * kMW;
    const ThermalRates r = thermal_rates(lp, power_w, s.mdot_p, s.mdot_s, s.temp);
    for (int i = 0; i < kNodeCount; ++i) s.temp[i] += h * r.dtemp[i];
    s.mdot_p = target_p + (s.mdot_p - target_p) * lag;
    s.mdot_s = target_s + (s.mdot_s - target_s) * lag;
  }
  s.n = std::max(kin(0), 0.0);
  for (int i = 0; i < kPrecursorGroups; ++i) s.c[i] = std::max(kin(i + 1), 0.0);
  s.t = s0.t + dt;
  refresh_algebraic(s);

  for (double v : s.field_values()) {
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "plant step produced a non-finite state at t=" << s.t << " (rho=" << rho
          << ", n=" << kin(0) << ")";
      throw NumericError(msg.str());
    }
  }
  if (!(s.mdot_p > 0.0 && s.mdot_s > 0.0)) {
    throw NumericError("plant step: mass flow collapsed to zero at t=" + std::to_string(s.t));
  }
  return s;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& measured_channel_names() {
  static const std::vector<std::string> names = {
      "mdot_p", "mdot_s", "T_c_in", "T_c_out", "P_c_in", "P_c_out", "T_s_in",
      "T_s_out", "C1", "C2", "C3", "Q_HX", "Q_SG", "n"};
  return names;
}

NoiseSpec NoiseSpec::zero() {
  NoiseSpec z;
  z.flow_3sigma = z.temp_3sigma = z.pressure_3sigma = z.heat_rate_3sigma = z.n_3sigma = 0.0;
  return z;
}

double NoiseSpec::sigma_for(std::string_view ch) const {
  if (ch == "n") return n_3sigma / 3.0;
  if (ch.starts_with("mdot")) return flow_3sigma / 3.0;
  if (ch.starts_with("T_")) return temp_3sigma / 3.0;
  if (ch.starts_with("P_")) return pressure_3sigma / 3.0;
  if (ch.starts_with("Q_")) return heat_rate_3sigma / 3.0;
  return 0.0;  // precursors are not measured
}

void NoiseSpec::validate() const {
  for (double v : {flow_3sigma, temp_3sigma, pressure_3sigma, heat_rate_3sigma, n_3sigma}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("noise amplitudes must be >= 0");
  }
}

OutputVector project_outputs(const PlantState& s) {
  OutputVector y(14);
  y << s.mdot_p, s.mdot_s, s.t_c_in(), s.t_c_out(), s.p_c_in, s.p_c_out, s.t_s_in(), s.t_s_out(),
      s.c[0], s.c[1], s.c[2], s.q_hx, s.q_sg, s.n;
  return y;
}

OutputVector measure(const PlantState& s, const NoiseSpec& noise, std::mt19937_64& rng) {
  OutputVector y = project_outputs(s);
  const auto& names = measured_channel_names();
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double sigma = noise.sigma_for(names[static_cast<std::size_t>(i)]);
    if (sigma > 0.0) y(i) += sigma * gauss(rng);
  }
  return y;
}

}  // namespace lfctl
