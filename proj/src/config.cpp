#include "lfctl/config.hpp"

#include <fstream>
#include <set>

namespace lfctl {

using nlohmann::json;

namespace {

// Object view that tracks which keys were read so leftovers can be
// reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }
  ~Section() = default;

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(child(key) + ": " + e.what());
    }
  }

  const json& at(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown key '" + child(it.key()) + "'");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <std::size_t N>
void read_array(Section& s, const std::string& key, std::array<double, N>& out) {
  if (!s.has(key)) return;
  std::vector<double> v;
  try {
    v = s.at(key).get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ConfigError(s.child(key) + ": " + e.what());
  }
  if (v.size() != N) {
    throw ConfigError(s.child(key) + ": expected " + std::to_string(N) + " values");
  }
  std::copy(v.begin(), v.end(), out.begin());
}

void parse_plant(const json& j, PlantParams& p) {
  Section s(j, "plant");
  if (s.has("kinetics")) {
    Section k(s.at("kinetics"), "plant.kinetics");
    read_array(k, "beta", p.kinetics.beta);
    read_array(k, "lambda", p.kinetics.lambda);
    k.read("generation_time", p.kinetics.generation_time);
    k.finish();
  }
  if (s.has("feedback")) {
    Section f(s.at("feedback"), "plant.feedback");
    f.read("alpha_mf", p.feedback.alpha_mf);
    f.read("alpha_c", p.feedback.alpha_c);
    f.finish();
  }
  if (s.has("anchors")) {
    Section a(s.at("anchors"), "plant.anchors");
    auto& x = p.anchors;
    a.read("q_rx_mw", x.q_rx_mw);
    a.read("q_hx_mw", x.q_hx_mw);
    a.read("mdot_p", x.mdot_p);
    a.read("mdot_s", x.mdot_s);
    a.read("t_c_in", x.t_c_in);
    a.read("t_c_out", x.t_c_out);
    a.read("t_s_in", x.t_s_in);
    a.read("t_s_out", x.t_s_out);
    a.read("p_c_in", x.p_c_in);
    a.read("p_c_out", x.p_c_out);
    a.finish();
  }
  if (s.has("design")) {
    Section d(s.at("design"), "plant.design");
    auto& x = p.design;
    d.read("fuel_delta_t", x.fuel_delta_t);
    d.read("fuel_time_constant", x.fuel_time_constant);
    d.read("cavity_temp", x.cavity_temp);
    d.read("sink_temp", x.sink_temp);
    d.read("tau_core", x.tau_core);
    d.read("tau_hot_leg", x.tau_hot_leg);
    d.read("tau_hx_primary", x.tau_hx_primary);
    d.read("tau_cold_leg", x.tau_cold_leg);
    d.read("tau_hx_secondary", x.tau_hx_secondary);
    d.read("tau_secondary_hot_leg", x.tau_secondary_hot_leg);
    d.read("tau_sink", x.tau_sink);
    d.read("tau_secondary_cold_leg", x.tau_secondary_cold_leg);
    d.read("pump_lag", x.pump_lag);
    d.read("nominal_head_p", x.nominal_head_p);
    d.read("nominal_head_s", x.nominal_head_s);
    d.read("cover_pressure", x.cover_pressure);
    d.read("core_drop_linear_fraction", x.core_drop_linear_fraction);
    d.read("hx_film_exponent", x.hx_film_exponent);
    d.read("hx_primary_resistance_fraction", x.hx_primary_resistance_fraction);
    d.finish();
  }
  if (s.has("limits")) {
    Section l(s.at("limits"), "plant.limits");
    auto& x = p.limits;
    l.read("rho_ext_min", x.rho_ext_min);
    l.read("rho_ext_max", x.rho_ext_max);
    l.read("head_p_min", x.head_p_min);
    l.read("head_p_max", x.head_p_max);
    l.read("head_s_min", x.head_s_min);
    l.read("head_s_max", x.head_s_max);
    l.finish();
  }
  s.read("thermal_substeps", p.thermal_substeps);
  s.finish();
  // Feedback coefficients survive recalibration; reference temperatures do not.
  const FeedbackParams fb = p.feedback;
  p.calibrate();
  p.feedback.alpha_mf = fb.alpha_mf;
  p.feedback.alpha_c = fb.alpha_c;
  p.feedback.validate();
}

void validate_control(const json& j) {
  Section s(j, "control");
  for (const char* loop : {"power", "outlet", "inlet"}) {
    if (!s.has(loop)) continue;
    Section g(s.at(loop), std::string("control.") + loop);
    double tmp = 0.0;
    for (const char* key : {"kp", "ki", "kd", "bias", "out_min", "out_max", "integral_limit"}) {
      g.read(key, tmp);
    }
    g.finish();
  }
  s.finish();
}

void apply_gain_overrides(const json& j, PidGains& g) {
  if (j.contains("kp")) g.kp = j.at("kp").get<double>();
  if (j.contains("ki")) g.ki = j.at("ki").get<double>();
  if (j.contains("kd")) g.kd = j.at("kd").get<double>();
  if (j.contains("bias")) g.bias = j.at("bias").get<double>();
  if (j.contains("out_min")) g.out_min = j.at("out_min").get<double>();
  if (j.contains("out_max")) g.out_max = j.at("out_max").get<double>();
  if (j.contains("integral_limit")) g.integral_limit = j.at("integral_limit").get<double>();
}

Sense parse_sense(const json& j, const std::string& path) {
  const std::string s = j.is_string() ? j.get<std::string>() : "";
  if (s == "min") return Sense::kMin;
  if (s == "max") return Sense::kMax;
  throw ConfigError(path + ": sense must be \"min\" or \"max\"");
}

void parse_constraints(const json& j, ConstraintSpec& c) {
  Section s(j, "constraints");
  if (s.has("mode")) {
    const std::string mode = s.at("mode").is_string() ? s.at("mode").get<std::string>() : "";
    if (mode == "raw") {
      c.mode = ConstraintSpec::Mode::kRaw;
    } else if (mode == "scaled") {
      c.mode = ConstraintSpec::Mode::kScaled;
    } else {
      throw ConfigError("constraints.mode must be \"raw\" or \"scaled\"");
    }
  }
  s.read("reference_load", c.reference_load);
  s.read("rate_limit_mw_per_min", c.rate_limit_mw_per_min);
  if (s.has("items")) {
    const json& items = s.at("items");
    if (!items.is_array()) throw ConfigError("constraints.items must be an array");
    c.items.clear();
    for (std::size_t i = 0; i < items.size(); ++i) {
      const std::string path = "constraints.items[" + std::to_string(i) + "]";
      Section it(items[i], path);
      ScaledConstraint sc;
      it.read("name", sc.name);
      it.read("output", sc.output);
      if (it.has("sense")) sc.sense = parse_sense(it.at("sense"), it.child("sense"));
      if (!it.has("schedule") || !it.at("schedule").is_array()) {
        throw ConfigError(path + ".schedule must be an array");
      }
      const json& sched = it.at("schedule");
      for (std::size_t k = 0; k < sched.size(); ++k) {
        Section b(sched[k], path + ".schedule[" + std::to_string(k) + "]");
        Breakpoint bp;
        b.read("t", bp.t);
        b.read("value", bp.bound);
        b.finish();
        sc.fractions.push_back(bp);
      }
      it.finish();
      if (sc.name.empty()) sc.name = sc.output;
      c.items.push_back(std::move(sc));
    }
  }
  s.finish();
}

void parse_governor(const json& j, GovernorConfig& g) {
  Section s(j, "governor");
  s.read("horizon", g.horizon);
  s.read("epsilon", g.epsilon);
  s.read("disturbance_bound", g.disturbance_bound);
  s.finish();
  g.validate();
}

void parse_noise(const json& j, NoiseSpec& n) {
  Section s(j, "noise");
  s.read("flow_3sigma", n.flow_3sigma);
  s.read("temp_3sigma", n.temp_3sigma);
  s.read("pressure_3sigma", n.pressure_3sigma);
  s.read("heat_rate_3sigma", n.heat_rate_3sigma);
  s.read("n_3sigma", n.n_3sigma);
  s.finish();
  n.validate();
}

void parse_sgf(const json& j, SgfConfig& c) {
  Section s(j, "sgf");
  s.read("window", c.window);
  s.read("order", c.order);
  if (s.has("eval_point")) {
    const std::string e = s.at("eval_point").is_string() ? s.at("eval_point").get<std::string>() : "";
    if (e == "trailing") {
      c.eval_point = SgfEvalPoint::kTrailing;
    } else if (e == "centered") {
      c.eval_point = SgfEvalPoint::kCentered;
    } else {
      throw ConfigError("sgf.eval_point must be \"trailing\" or \"centered\"");
    }
  }
  s.finish();
  c.validate();
}

void parse_ukf(const json& j, UkfConfig& c) {
  Section s(j, "ukf");
  read_array(s, "process_noise", c.process_noise);
  s.read("measurement_floor", c.measurement_floor);
  s.read("initial_variance", c.initial_variance);
  if (s.has("sigma_points")) {
    Section p(s.at("sigma_points"), "ukf.sigma_points");
    p.read("alpha", c.sigma.alpha);
    p.read("beta", c.sigma.beta);
    p.read("kappa", c.sigma.kappa);
    p.finish();
  }
  s.finish();
  c.validate();
}

void parse_scenario(const json& j, ScenarioConfig& c) {
  Section s(j, "scenario");
  s.read("duration", c.duration);
  s.read("dt", c.dt);
  s.read("initial_load", c.initial_load);
  if (s.has("reference")) {
    try {
      c.reference = reference_from_json(s.at("reference"));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("scenario.reference: ") + e.what());
    }
  }
  s.read("dither_sigma_mw", c.dither_sigma_mw);
  s.read("dither_hold", c.dither_hold);
  s.read("noise_enabled", c.noise_enabled);
  s.read("governor_enabled", c.governor_enabled);
  s.read("robust_margin", c.robust_margin);
  s.read("observer_channels", c.observer_channels);
  s.read("seed", c.seed);
  s.finish();
}

void parse_training(const json& j, TrainingSpec& t) {
  Section s(j, "training");
  s.read("duration", t.duration);
  s.read("dt", t.dt);
  s.read("dither_sigma_mw", t.dither_sigma_mw);
  s.read("dither_hold", t.dither_hold);
  s.read("seed", t.seed);
  if (s.has("profiles")) {
    const json& arr = s.at("profiles");
    if (!arr.is_array()) throw ConfigError("training.profiles must be an array");
    t.profiles.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string path = "training.profiles[" + std::to_string(i) + "]";
      Section p(arr[i], path);
      TrainingProfile prof;
      p.read("name", prof.name);
      if (prof.name.empty()) throw ConfigError(path + ".name is required");
      if (!p.has("reference")) throw ConfigError(path + ".reference is required");
      prof.reference = reference_from_json(p.at("reference"));
      p.finish();
      t.profiles.push_back(std::move(prof));
    }
  }
  s.finish();
  if (!(t.duration > 0.0) || !(t.dt > 0.0)) throw ConfigError("training: duration and dt must be > 0");
}

void parse_sysid(const json& j, SysidSpec& sp) {
  Section s(j, "sysid");
  s.read("states", sp.states);
  s.read("inputs", sp.inputs);
  s.read("rank", sp.fit.rank);
  s.read("energy_threshold", sp.fit.energy_threshold);
  s.read("rank_tolerance", sp.fit.rank_tolerance);
  s.finish();
  if (sp.states.empty() || sp.inputs.empty()) throw ConfigError("sysid: states and inputs required");
  if (!(sp.fit.energy_threshold > 0.0 && sp.fit.energy_threshold <= 1.0)) {
    throw ConfigError("sysid.energy_threshold must be in (0, 1]");
  }
}

void parse_selection(const json& j, SelectionSettings& sel) {
  Section s(j, "selection");
  s.read("mandatory", sel.mandatory);
  s.read("candidates", sel.candidates);
  s.read("max_added", sel.max_added);
  s.read("folds", sel.folds);
  s.finish();
}

void parse_tuning(const json& j, TuningSettings& t) {
  Section s(j, "tuning");
  if (s.has("loop")) {
    const std::string l = s.at("loop").is_string() ? s.at("loop").get<std::string>() : "";
    if (l == "power") {
      t.loop = Loop::kPower;
    } else if (l == "outlet") {
      t.loop = Loop::kOutlet;
    } else if (l == "inlet") {
      t.loop = Loop::kInlet;
    } else {
      throw ConfigError("tuning.loop must be power, outlet or inlet");
    }
  }
  s.read("kp_grid", t.kp_grid);
  s.read("ki_grid", t.ki_grid);
  s.read("depth", t.cost.depth);
  s.read("rate_per_min", t.cost.rate_per_min);
  s.read("duration", t.cost.duration);
  s.read("overshoot_weight", t.cost.overshoot_weight);
  s.finish();
  if (t.kp_grid.empty() || t.ki_grid.empty()) throw ConfigError("tuning: empty gain grid");
}

void parse_service(const json& j, ServiceSettings& sv) {
  Section s(j, "service");
  s.read("bind", sv.bind);
  s.read("port", sv.port);
  s.read("speed", sv.speed);
  s.read("stream_buffer", sv.stream_buffer);
  s.read("history_limit", sv.history_limit);
  s.read("start_paused", sv.start_paused);
  s.finish();
  if (sv.port < 0 || sv.port > 65535) throw ConfigError("service.port out of range");
  if (sv.speed < 0.0) throw ConfigError("service.speed must be >= 0");
  if (sv.stream_buffer == 0) throw ConfigError("service.stream_buffer must be > 0");
  if (sv.history_limit < 1) throw ConfigError("service.history_limit must be >= 1");
}

}  // namespace

ConstraintSet ConstraintSpec::resolve(const Plant& plant) const {
  if (mode == Mode::kScaled) {
    return resolve_scaled_constraints(plant, reference_load, items, rate_limit_mw_per_min);
  }
  ConstraintSet cs;
  cs.rate_limit_mw_per_min = rate_limit_mw_per_min;
  for (const auto& item : items) {
    OutputConstraint c;
    c.name = item.name;
    c.output = item.output;
    c.sense = item.sense;
    c.schedule = item.fractions;
    cs.outputs.push_back(std::move(c));
  }
  cs.validate();
  return cs;
}

ControlGains AppConfig::gains(const Plant& p) const {
  ControlGains g = default_control_gains(p);
  if (control.contains("power")) apply_gain_overrides(control.at("power"), g.power);
  if (control.contains("outlet")) apply_gain_overrides(control.at("outlet"), g.outlet);
  if (control.contains("inlet")) apply_gain_overrides(control.at("inlet"), g.inlet);
  g.power.validate();
  g.outlet.validate();
  g.inlet.validate();
  return g;
}

ReferenceProfile reference_from_json(const json& j) {
  Section s(j, "reference");
  std::string type = "points";
  s.read("type", type);
  ReferenceProfile p;
  if (type == "ramp") {
    double depth = 0.4, rate = 0.05, start = 10.0;
    s.read("depth", depth);
    s.read("rate_per_min", rate);
    s.read("start", start);
    if (!(rate > 0.0)) throw ConfigError("ramp rate_per_min must be > 0");
    p = ReferenceProfile::ramp(depth, rate, start);
  } else if (type == "constant") {
    double f = 1.0;
    s.read("fraction", f);
    p = ReferenceProfile::constant(f);
  } else if (type == "points") {
    std::vector<std::pair<double, double>> pts;
    s.read("points", pts);
    if (pts.empty()) throw ConfigError("points reference needs at least one [t, fraction] pair");
    p.points = std::move(pts);
  } else if (type == "sine") {
    p.kind = ReferenceProfile::Kind::kSine;
    s.read("mean", p.mean);
    s.read("amplitude", p.amplitude);
    s.read("period", p.period);
    s.read("start", p.start);
  } else {
    throw ConfigError("unknown reference type '" + type + "'");
  }
  s.finish();
  p.validate();
  return p;
}

AppConfig default_app_config() {
  AppConfig cfg;
  cfg.sysid.fit.energy_threshold = 0.999999;
  // Table-derived margins: T_s,in may fall 1.77 of its 2.2 degC full-to-60%
  // shift, relaxed to 2.02 at 700 s; T_s,out may rise 5.43 of 6.0 degC.
  cfg.constraints.items = {
      {"T_s_in_min", "T_s_in", Sense::kMin, {{0.0, 1.77 / 2.2}, {700.0, 2.02 / 2.2}}},
      {"T_s_out_max", "T_s_out", Sense::kMax, {{0.0, 5.43 / 6.0}}}};
  cfg.scenario.constraints = cfg.constraints.resolve(Plant(cfg.plant));
  return cfg;
}

AppConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  AppConfig cfg = default_app_config();
  Section s(j, "");
  if (s.has("schema_version")) {
    int v = 0;
    s.read("schema_version", v);
    if (v != kConfigSchemaVersion) {
      throw ConfigError("unsupported schema_version " + std::to_string(v));
    }
  }
  if (s.has("description")) {
    std::string ignored;
    s.read("description", ignored);
  }
  if (s.has("plant")) parse_plant(s.at("plant"), cfg.plant);
  if (s.has("control")) {
    validate_control(s.at("control"));
    cfg.control = s.at("control");
  }
  if (s.has("scenario")) parse_scenario(s.at("scenario"), cfg.scenario);
  if (s.has("constraints")) parse_constraints(s.at("constraints"), cfg.constraints);
  if (s.has("governor")) parse_governor(s.at("governor"), cfg.scenario.governor);
  if (s.has("noise")) parse_noise(s.at("noise"), cfg.scenario.noise);
  if (s.has("sgf")) parse_sgf(s.at("sgf"), cfg.scenario.sgf);
  if (s.has("ukf")) parse_ukf(s.at("ukf"), cfg.scenario.ukf);
  if (s.has("training")) parse_training(s.at("training"), cfg.training);
  if (s.has("sysid")) parse_sysid(s.at("sysid"), cfg.sysid);
  if (s.has("selection")) parse_selection(s.at("selection"), cfg.selection);
  if (s.has("tuning")) parse_tuning(s.at("tuning"), cfg.tuning);
  if (s.has("service")) parse_service(s.at("service"), cfg.service);
  if (s.has("model")) {
    std::string m;
    s.read("model", m);
    std::filesystem::path mp(m);
    cfg.model_path = mp.is_absolute() || base_dir.empty() ? mp : base_dir / mp;
  }
  s.finish();

  const Plant plant(cfg.plant);
  cfg.gains(plant);
  try {
    cfg.scenario.constraints = cfg.constraints.resolve(plant);
  } catch (const std::out_of_range& e) {
    throw ConfigError(std::string("constraints: ") + e.what());
  }
  cfg.scenario.validate();
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  try {
    return config_from_json(j, path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace lfctl
