#include "lfctl/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace lfctl {

using nlohmann::json;

namespace {

constexpr double kMinFraction = 0.2;
constexpr double kMaxFraction = 1.0;
constexpr double kViolationTolerance = 0.1;

bool on_grid(double t, double dt) {
  const double k = std::round(t / dt);
  return std::abs(k * dt - t) <= 1e-9 * std::max(1.0, std::abs(t));
}

}  // namespace

// ---------------------------------------------------------------------------
// Reference profiles

double ReferenceProfile::at(double t) const {
  if (kind == Kind::kSine) {
    if (t < start) return mean + amplitude;
    return mean + amplitude * std::cos(2.0 * std::numbers::pi * (t - start) / period);
  }
  if (t <= points.front().first) return points.front().second;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (t <= points[i].first) {
      const auto& [t0, f0] = points[i - 1];
      const auto& [t1, f1] = points[i];
      return f0 + (f1 - f0) * (t - t0) / (t1 - t0);
    }
  }
  return points.back().second;
}

void ReferenceProfile::validate() const {
  auto check = [](double f) {
    if (!(f >= kMinFraction - 1e-12 && f <= kMaxFraction + 1e-12)) {
      throw ConfigError("reference fraction " + std::to_string(f) + " outside [0.2, 1.0]");
    }
  };
  if (kind == Kind::kSine) {
    if (!(period > 0.0)) throw ConfigError("sine reference: period must be > 0");
    check(mean + std::abs(amplitude));
    check(mean - std::abs(amplitude));
    return;
  }
  if (points.empty()) throw ConfigError("reference: no points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    check(points[i].second);
    if (i > 0 && !(points[i].first > points[i - 1].first)) {
      throw ConfigError("reference: point times must increase");
    }
  }
}

ReferenceProfile ReferenceProfile::constant(double fraction) {
  ReferenceProfile p;
  p.points = {{0.0, fraction}};
  return p;
}

ReferenceProfile ReferenceProfile::ramp(double depth, double rate_per_min, double t0) {
  ReferenceProfile p;
  p.points = {{0.0, 1.0}, {t0, 1.0}, {t0 + depth / rate_per_min * 60.0, 1.0 - depth}};
  return p;
}

long ScenarioConfig::ticks() const { return std::lround(duration / dt); }

void ScenarioConfig::validate() const {
  if (!(dt > 0.0) || !(duration >= dt)) throw ConfigError("scenario: need dt > 0 and duration >= dt");
  if (!(initial_load >= kMinFraction && initial_load <= kMaxFraction)) {
    throw ConfigError("scenario: initial load outside [0.2, 1.0]");
  }
  reference.validate();
  if (reference.kind == ReferenceProfile::Kind::kPoints) {
    for (const auto& [t, f] : reference.points) {
      if (!on_grid(t, dt)) {
        throw ConfigError("scenario: reference breakpoint " + std::to_string(t) +
                          " s is not a multiple of dt");
      }
    }
  }
  constraints.validate();
  for (const auto& c : constraints.outputs) {
    for (std::size_t i = 1; i < c.schedule.size(); ++i) {
      if (!on_grid(c.schedule[i].t, dt)) {
        throw ConfigError("scenario: constraint " + c.name + " breakpoint is not a multiple of dt");
      }
    }
  }
  if (!(dither_sigma_mw >= 0.0) || !(dither_hold >= dt)) {
    throw ConfigError("scenario: dither sigma must be >= 0 and hold >= dt");
  }
  noise.validate();
  sgf.validate();
  ukf.validate();
  governor.validate();
}

// ---------------------------------------------------------------------------
// Records

std::vector<std::string> SimRecord::column_names(const std::vector<std::string>& state_channels,
                                                 const ConstraintSet& constraints) {
  std::vector<std::string> cols{"tick"};
  for (const auto& f : PlantState::field_names()) cols.push_back(f);
  for (const char* c : {"head_p", "head_s", "r", "v", "kappa", "binding", "binding_constraint",
                        "binding_step", "alarm", "band_lo", "band_hi"}) {
    cols.emplace_back(c);
  }
  for (const auto& m : measured_channel_names()) cols.push_back("meas_" + m);
  for (const auto& s : state_channels) cols.push_back("est_" + s);
  cols.emplace_back("ukf_n");
  for (int i = 0; i < kPrecursorGroups; ++i) cols.push_back("ukf_C" + std::to_string(i + 1));
  cols.emplace_back("ukf_alpha");
  cols.emplace_back("ukf_omega");
  for (const auto& c : constraints.outputs) cols.push_back("bound_" + c.name);
  return cols;
}

std::vector<double> SimRecord::values() const {
  std::vector<double> v;
  v.reserve(96);
  v.push_back(static_cast<double>(tick));
  for (double f : plant.field_values()) v.push_back(f);
  v.push_back(actuation.head_p);
  v.push_back(actuation.head_s);
  v.push_back(reference);
  v.push_back(decision.v);
  v.push_back(decision.kappa);
  v.push_back(static_cast<double>(static_cast<int>(decision.binding)));
  v.push_back(static_cast<double>(binding_index));
  v.push_back(static_cast<double>(decision.binding_step));
  v.push_back(decision.alarm ? 1.0 : 0.0);
  v.push_back(decision.band_lo);
  v.push_back(decision.band_hi);
  for (Eigen::Index i = 0; i < measured.size(); ++i) v.push_back(measured(i));
  for (Eigen::Index i = 0; i < denoised.size(); ++i) v.push_back(denoised(i));
  for (int i = 0; i < kObserverDim; ++i) v.push_back(observer(i));
  for (double b : bounds) v.push_back(b);
  return v;
}

// ---------------------------------------------------------------------------
// Async CSV writer

CsvLogWriter::CsvLogWriter(const std::filesystem::path& path, std::vector<std::string> header)
    : out_(path) {
  if (!out_) throw std::runtime_error("cannot write log " + path.string());
  write_csv_header(out_, header);
  worker_ = std::thread([this] { run(); });
}

CsvLogWriter::~CsvLogWriter() {
  try {
    close();
  } catch (...) {
  }
}

void CsvLogWriter::push(std::vector<double> row) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    queue_.push_back(std::move(row));
  }
  cv_.notify_one();
}

void CsvLogWriter::run() {
  std::deque<std::vector<double>> batch;
  for (;;) {
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [this] { return closing_ || !queue_.empty(); });
      batch.swap(queue_);
      if (batch.empty() && closing_) break;
    }
    for (const auto& row : batch) write_csv_row(out_, row);
    batch.clear();
    if (!out_) {
      std::lock_guard<std::mutex> lock(mu_);
      failed_ = true;
    }
  }
  out_.flush();
}

void CsvLogWriter::close() {
  if (!worker_.joinable()) return;
  {
    std::lock_guard<std::mutex> lock(mu_);
    closing_ = true;
  }
  cv_.notify_one();
  worker_.join();
  out_.close();
  if (failed_ || out_.fail()) throw std::runtime_error("log write failed");
}

// ---------------------------------------------------------------------------
// Commands

const char* command_kind_name(Command::Kind k) {
  switch (k) {
    case Command::Kind::kSetReference: return "set-reference";
    case Command::Kind::kUpdateConstraint: return "update-constraint";
    case Command::Kind::kToggleGovernor: return "toggle-governor";
    case Command::Kind::kPause: return "pause";
    case Command::Kind::kResume: return "resume";
    case Command::Kind::kSetSpeed: return "set-speed";
  }
  return "unknown";
}

json Command::to_json() const {
  json j{{"kind", command_kind_name(kind)}};
  switch (kind) {
    case Kind::kSetReference: j["payload"] = {{"target", value}}; break;
    case Kind::kUpdateConstraint: j["payload"] = {{"constraint", target}, {"value", value}}; break;
    case Kind::kToggleGovernor: j["payload"] = {{"enabled", enabled}}; break;
    case Kind::kSetSpeed: j["payload"] = {{"speed", value}}; break;
    default: j["payload"] = json::object(); break;
  }
  return j;
}

Command Command::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("command must be a JSON object");
  if (!j.contains("kind") || !j["kind"].is_string()) throw ConfigError("command needs a string 'kind'");
  const std::string kind = j["kind"];
  const json payload = j.value("payload", json::object());
  if (!payload.is_object()) throw ConfigError("command payload must be an object");
  auto number = [&](const char* key) {
    if (!payload.contains(key) || !payload[key].is_number()) {
      throw ConfigError(kind + ": payload needs numeric '" + key + "'");
    }
    const double v = payload[key].get<double>();
    if (!std::isfinite(v)) throw ConfigError(kind + ": '" + key + "' must be finite");
    return v;
  };
  Command c;
  if (kind == "set-reference") {
    c.kind = Kind::kSetReference;
    c.value = number("target");
    if (!(c.value >= kMinFraction && c.value <= kMaxFraction)) {
      throw ConfigError("set-reference: target must be within [0.2, 1.0]");
    }
  } else if (kind == "update-constraint") {
    c.kind = Kind::kUpdateConstraint;
    if (!payload.contains("constraint") || !payload["constraint"].is_string()) {
      throw ConfigError("update-constraint: payload needs string 'constraint'");
    }
    c.target = payload["constraint"];
    c.value = number("value");
  } else if (kind == "toggle-governor") {
    c.kind = Kind::kToggleGovernor;
    if (!payload.contains("enabled") || !payload["enabled"].is_boolean()) {
      throw ConfigError("toggle-governor: payload needs boolean 'enabled'");
    }
    c.enabled = payload["enabled"];
  } else if (kind == "pause") {
    c.kind = Kind::kPause;
  } else if (kind == "resume") {
    c.kind = Kind::kResume;
  } else if (kind == "set-speed") {
    c.kind = Kind::kSetSpeed;
    c.value = number("speed");
    if (!(c.value >= 0.0)) throw ConfigError("set-speed: speed must be >= 0 (0 = unpaced)");
  } else {
    throw ConfigError("unknown command kind: " + kind);
  }
  return c;
}

json command_log_to_json(const std::vector<LoggedCommand>& log) {
  json arr = json::array();
  for (const auto& e : log) {
    json j = e.command.to_json();
    j["tick"] = e.tick;
    j["sequence"] = e.sequence;
    j["client"] = e.client;
    arr.push_back(std::move(j));
  }
  return json{{"format", "lfctl-command-log"}, {"version", 1}, {"commands", arr}};
}

std::vector<LoggedCommand> command_log_from_json(const json& j) {
  std::vector<LoggedCommand> out;
  try {
    for (const auto& e : j.at("commands")) {
      LoggedCommand lc;
      lc.tick = e.at("tick").get<long>();
      lc.sequence = e.value("sequence", 0L);
      lc.client = e.value("client", std::string());
      lc.command = Command::from_json(e);
      out.push_back(std::move(lc));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("command log: ") + e.what());
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const LoggedCommand& a, const LoggedCommand& b) { return a.tick < b.tick; });
  return out;
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

std::vector<std::string> default_state_channels() {
  std::vector<std::string> names = measured_channel_names();
  names.pop_back();  // n feeds the observer only
  return names;
}

}  // namespace

Simulation::Simulation(Plant plant, ControlGains gains, ScenarioConfig cfg,
                       std::optional<StateSpaceModel> model)
    : plant_(std::move(plant)),
      cfg_(std::move(cfg)),
      control_(gains, {plant_.params().loop.rated_power_mw, plant_.params().anchors.t_c_out,
                       plant_.params().anchors.t_c_in}),
      ukf_(plant_.params().kinetics, cfg_.ukf),
      rng_(cfg_.seed) {
  cfg_.validate();
  if (cfg_.governor_enabled && !model) {
    throw ConfigError("governor enabled but no state-space model was given");
  }
  state_channels_ = model ? model->state_names : default_state_channels();

  const auto& meas = measured_channel_names();
  for (const auto& ch : state_channels_) {
    const bool from_observer = std::find(cfg_.observer_channels.begin(),
                                         cfg_.observer_channels.end(),
                                         ch) != cfg_.observer_channels.end();
    if (from_observer) {
      if (ch.size() != 2 || ch[0] != 'C' || ch[1] < '1' || ch[1] > '6') {
        throw ConfigError("observer channel must be one of C1..C6: " + ch);
      }
      observer_index_.push_back(1 + (ch[1] - '1'));
      measured_index_.push_back(-1);
    } else {
      const auto it = std::find(meas.begin(), meas.end(), ch);
      if (it == meas.end()) throw ConfigError("state channel is not measured: " + ch);
      measured_index_.push_back(static_cast<int>(it - meas.begin()));
      observer_index_.push_back(-1);
    }
    filters_.emplace_back(cfg_.sgf);
  }
  denoised_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(state_channels_.size()));

  UkfConfig ukf_cfg = cfg_.ukf;
  ukf_cfg.measurement_sigma = cfg_.noise.sigma_for("n");
  ukf_ = Ukf(plant_.params().kinetics, ukf_cfg);

  if (model) {
    StateSpaceModel m = *model;
    if (cfg_.noise_enabled && cfg_.robust_margin) {
      std::vector<double> three_sigma;
      for (const auto& name : m.output_names) three_sigma.push_back(3.0 * cfg_.noise.sigma_for(name));
      m.d_w = output_disturbance(m, three_sigma);
    }
    GovernorConfig gc = cfg_.governor;
    gc.enabled = cfg_.governor_enabled;
    governor_.emplace(std::move(m), cfg_.constraints, gc);
  }

  state_ = plant_.steady_state(cfg_.initial_load);
  actuation_ = plant_.equilibrium_actuation(state_);
  control_.initialize(actuation_);
  ukf_.initialize(state_.n);
  if (governor_) governor_->reset(cfg_.reference.at(0.0) * plant_.params().loop.rated_power_mw);
}

bool Simulation::governor_enabled() const { return governor_ && governor_->enabled(); }

std::vector<std::string> Simulation::column_names() const {
  return SimRecord::column_names(state_channels_, governor_ ? governor_->constraints()
                                                            : cfg_.constraints);
}

double Simulation::reference_at(double t) {
  const double rated = plant_.params().loop.rated_power_mw;
  if (reference_override_) return *reference_override_;
  double r = std::clamp(cfg_.reference.at(t), kMinFraction, kMaxFraction) * rated;
  // Identification dither rides on top of the demand and may exceed rated power.
  if (cfg_.dither_sigma_mw > 0.0) {
    const long hold = std::max(1L, std::lround(cfg_.dither_hold / cfg_.dt));
    if (next_tick_ % hold == 0) {
      std::normal_distribution<double> gauss(0.0, cfg_.dither_sigma_mw);
      dither_ = gauss(rng_);
    }
    r += dither_;
  }
  return r;
}

void Simulation::filter_stage(const Eigen::VectorXd& measured) {
  for (std::size_t i = 0; i < state_channels_.size(); ++i) {
    if (measured_index_[i] < 0) continue;
    const double raw = measured(measured_index_[i]);
    denoised_(static_cast<Eigen::Index>(i)) = cfg_.noise_enabled ? filters_[i].push(raw) : raw;
  }
}

void Simulation::observer_stage(double measured_n) {
  if (next_tick_ > 0) ukf_.step(measured_n, cfg_.dt);
  for (std::size_t i = 0; i < state_channels_.size(); ++i) {
    if (observer_index_[i] < 0) continue;
    const double est = ukf_.state().mean(observer_index_[i]);
    denoised_(static_cast<Eigen::Index>(i)) = cfg_.noise_enabled ? filters_[i].push(est) : est;
  }
}

Eigen::VectorXd Simulation::governor_state() const { return denoised_; }

const SimRecord& Simulation::step() {
  if (finished()) throw std::logic_error("simulation already finished");
  const double t = static_cast<double>(next_tick_) * cfg_.dt;
  if (next_tick_ > 0) state_ = plant_.step(state_, actuation_, cfg_.dt);

  const NoiseSpec noise = cfg_.noise_enabled ? cfg_.noise : NoiseSpec::zero();
  const Eigen::VectorXd measured = measure(state_, noise, rng_);
  const double measured_n = measured(measured.size() - 1);
  const double r = reference_at(t);

  auto decide = [&]() {
    if (governor_) return governor_->tick(governor_state(), r, t, cfg_.dt);
    GovernorDecision d;
    d.t = t;
    d.r = r;
    d.v = r;
    d.binding = Binding::kBypass;
    d.band_lo = -std::numeric_limits<double>::infinity();
    d.band_hi = std::numeric_limits<double>::infinity();
    return d;
  };

  GovernorDecision decision;
  if (cfg_.order == TickOrder::kGovernorFirst && next_tick_ > 0) {
    decision = decide();
    filter_stage(measured);
    observer_stage(measured_n);
  } else {
    filter_stage(measured);
    observer_stage(measured_n);
    decision = decide();
  }
  actuation_ = control_.update(decision.v, state_, cfg_.dt);

  SimRecord rec;
  rec.tick = next_tick_;
  rec.plant = state_;
  rec.measured = measured;
  rec.denoised = denoised_;
  rec.observer = ukf_.state().mean;
  rec.reference = r;
  rec.decision = decision;
  rec.actuation = actuation_;
  const ConstraintSet& cs = governor_ ? governor_->constraints() : cfg_.constraints;
  rec.binding_index = -1;
  for (std::size_t i = 0; i < cs.outputs.size(); ++i) {
    const auto& c = cs.outputs[i];
    rec.bounds.push_back(c.enabled ? c.bound_at(t) : std::numeric_limits<double>::quiet_NaN());
    if (c.name == decision.binding_constraint) rec.binding_index = static_cast<int>(i);
  }
  last_ = std::move(rec);
  ++next_tick_;
  return last_;
}

void Simulation::apply(const Command& c) {
  const double t_from = (static_cast<double>(next_tick_) - 0.5) * cfg_.dt;
  switch (c.kind) {
    case Command::Kind::kSetReference:
      if (!(c.value >= kMinFraction && c.value <= kMaxFraction)) {
        throw ConfigError("set-reference: target must be within [0.2, 1.0]");
      }
      reference_override_ = c.value * plant_.params().loop.rated_power_mw;
      break;
    case Command::Kind::kUpdateConstraint: {
      if (governor_) {
        if (!governor_->constraints().find(c.target)) {
          throw ConfigError("unknown constraint: " + c.target);
        }
        governor_->set_bound(c.target, c.value, t_from);
      } else {
        OutputConstraint* oc = cfg_.constraints.find(c.target);
        if (!oc) throw ConfigError("unknown constraint: " + c.target);
        oc->set_bound_from(t_from, c.value);
      }
      break;
    }
    case Command::Kind::kToggleGovernor:
      if (!governor_) throw ConfigError("toggle-governor: no state-space model loaded");
      governor_->set_enabled(c.enabled);
      break;
    case Command::Kind::kPause:
    case Command::Kind::kResume:
    case Command::Kind::kSetSpeed:
      break;  // pacing only; no effect on the simulated trajectory
  }
}

// ---------------------------------------------------------------------------
// Summaries and batch runs

json ScenarioSummary::to_json() const {
  json j{{"ticks", ticks},
         {"max_abs_T_c_in_deviation", max_abs_t_c_in_dev},
         {"max_abs_T_c_out_deviation", max_abs_t_c_out_dev},
         {"min_T_s_in", min_t_s_in},
         {"max_T_s_out", max_t_s_out},
         {"initial_T_s_in", initial_t_s_in},
         {"final_T_s_in", final_t_s_in},
         {"initial_T_s_out", initial_t_s_out},
         {"final_T_s_out", final_t_s_out},
         {"constraint_violations", violations},
         {"raw_measurement_violations", raw_violations},
         {"worst_violation", worst_violation},
         {"peak_abs_rho_ext_dollars", peak_rho_ext_dollars},
         {"peak_abs_rho_total_cents", peak_rho_total_cents},
         {"governor_alarms", alarms},
         {"wall_seconds", wall_seconds}};
  if (first_intervention_t) {
    j["first_intervention_t"] = *first_intervention_t;
    j["T_s_in_at_first_intervention"] = t_s_in_at_first_intervention;
  } else {
    j["first_intervention_t"] = nullptr;
  }
  return j;
}

ScenarioSummary summarize(const std::vector<SimRecord>& records, const ScenarioConfig& cfg,
                          const Plant& plant, double settle_after) {
  ScenarioSummary s;
  if (records.empty()) return s;
  const auto& anchors = plant.params().anchors;
  const double beta = plant.params().kinetics.beta_total();
  const auto& meas = measured_channel_names();
  s.ticks = static_cast<long>(records.size());
  s.min_t_s_in = std::numeric_limits<double>::infinity();
  s.max_t_s_out = -std::numeric_limits<double>::infinity();
  s.initial_t_s_in = records.front().plant.t_s_in();
  s.initial_t_s_out = records.front().plant.t_s_out();
  s.final_t_s_in = records.back().plant.t_s_in();
  s.final_t_s_out = records.back().plant.t_s_out();

  std::vector<int> meas_idx;
  for (const auto& c : cfg.constraints.outputs) {
    const auto it = std::find(meas.begin(), meas.end(), c.output);
    meas_idx.push_back(it == meas.end() ? -1 : static_cast<int>(it - meas.begin()));
  }

  for (const auto& r : records) {
    const PlantState& p = r.plant;
    if (p.t >= settle_after) {
      s.max_abs_t_c_in_dev = std::max(s.max_abs_t_c_in_dev, std::abs(p.t_c_in() - anchors.t_c_in));
      s.max_abs_t_c_out_dev =
          std::max(s.max_abs_t_c_out_dev, std::abs(p.t_c_out() - anchors.t_c_out));
    }
    s.min_t_s_in = std::min(s.min_t_s_in, p.t_s_in());
    s.max_t_s_out = std::max(s.max_t_s_out, p.t_s_out());
    s.peak_rho_ext_dollars = std::max(s.peak_rho_ext_dollars, std::abs(p.rho_ext) / beta);
    s.peak_rho_total_cents = std::max(s.peak_rho_total_cents, 100.0 * std::abs(p.rho_total) / beta);
    if (r.decision.alarm) ++s.alarms;
    if (!s.first_intervention_t && r.decision.binding == Binding::kOutput) {
      s.first_intervention_t = p.t;
      s.t_s_in_at_first_intervention = p.t_s_in();
    }
    for (std::size_t i = 0; i < cfg.constraints.outputs.size() && i < r.bounds.size(); ++i) {
      const double b = r.bounds[i];
      if (std::isnan(b)) continue;
      const auto& c = cfg.constraints.outputs[i];
      const double sign = c.sense == Sense::kMin ? 1.0 : -1.0;
      const double excess = sign * (b - p.value(c.output));
      s.worst_violation = std::max(s.worst_violation, excess);
      if (excess > kViolationTolerance) ++s.violations;
      if (meas_idx[i] >= 0 && sign * (b - r.measured(meas_idx[i])) > 0.0) ++s.raw_violations;
    }
  }
  return s;
}

RunOutputs run_scenario(const Plant& plant, const ControlGains& gains, const ScenarioConfig& cfg,
                        const std::optional<StateSpaceModel>& model, const RunOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  Simulation sim(plant, gains, cfg, model);
  std::unique_ptr<CsvLogWriter> log;
  if (opts.log_path) log = std::make_unique<CsvLogWriter>(*opts.log_path, sim.column_names());

  RunOutputs out;
  if (opts.keep_records) out.records.reserve(static_cast<std::size_t>(cfg.ticks()));
  std::size_t next_cmd = 0;
  while (!sim.finished()) {
    while (next_cmd < opts.commands.size() && opts.commands[next_cmd].tick <= sim.next_tick()) {
      sim.apply(opts.commands[next_cmd].command);
      ++next_cmd;
    }
    const SimRecord& rec = sim.step();
    if (log) log->push(rec.values());
    if (opts.keep_records) out.records.push_back(rec);
  }
  if (log) log->close();
  ScenarioConfig effective = sim.config();
  if (sim.governor()) effective.constraints = sim.governor()->constraints();
  out.summary = summarize(out.records, effective, plant, opts.settle_after);
  out.summary.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

Trajectory to_trajectory(const std::vector<SimRecord>& records, double dt) {
  Trajectory tr;
  tr.dt = dt;
  tr.names = PlantState::field_names();
  tr.names.emplace_back("v");
  tr.names.emplace_back("r");
  tr.values.resize(static_cast<Eigen::Index>(records.size()),
                   static_cast<Eigen::Index>(tr.names.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto f = records[i].plant.field_values();
    const auto row = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < f.size(); ++j) tr.values(row, static_cast<Eigen::Index>(j)) = f[j];
    tr.values(row, static_cast<Eigen::Index>(f.size())) = records[i].decision.v;
    tr.values(row, static_cast<Eigen::Index>(f.size() + 1)) = records[i].reference;
  }
  return tr;
}

TrainingSpec default_training_spec() {
  TrainingSpec spec;
  auto add = [&](std::string name, ReferenceProfile p) {
    spec.profiles.push_back({std::move(name), std::move(p)});
  };
  for (int i = 1; i <= 8; ++i) {
    add("ramp_" + std::to_string(5 * i), ReferenceProfile::ramp(0.05 * i, 0.05, 10.0));
  }
  for (int rate : {2, 10, 3, 8}) {
    add("rate_" + std::to_string(rate), ReferenceProfile::ramp(0.3, rate / 100.0, 50.0));
  }
  for (int depth : {20, 40, 60}) {
    const double d = depth / 100.0;
    const double down = d / 0.05 * 60.0;
    ReferenceProfile p;
    p.points = {{0.0, 1.0}, {10.0, 1.0}, {10.0 + down, 1.0 - d}, {310.0 + down, 1.0 - d},
                {310.0 + 2.0 * down, 1.0}};
    add("cycle_" + std::to_string(depth), p);
  }
  for (int period : {300, 600, 900}) {
    ReferenceProfile p;
    p.kind = ReferenceProfile::Kind::kSine;
    p.mean = 0.8;
    p.amplitude = 0.15;
    p.period = period;
    add("sine_" + std::to_string(period), p);
  }
  for (int depth : {10, 25, 50, 35}) {
    const double d = depth / 100.0;
    ReferenceProfile p;
    p.points = {{0.0, 1.0}, {20.0, 1.0}, {20.2, 1.0 - d}, {1000.0, 1.0 - d}, {1000.2, 1.0 - d / 2}};
    add("step_" + std::to_string(depth), p);
  }
  return spec;
}

TrainingResult generate_training_set(const Plant& plant, const ControlGains& gains,
                                     const TrainingSpec& spec,
                                     const std::optional<std::filesystem::path>& out_dir) {
  TrainingResult result;
  if (out_dir) std::filesystem::create_directories(*out_dir);
  for (std::size_t i = 0; i < spec.profiles.size(); ++i) {
    const auto& prof = spec.profiles[i];
    ScenarioConfig cfg;
    cfg.duration = spec.duration;
    cfg.dt = spec.dt;
    cfg.reference = prof.reference;
    cfg.dither_sigma_mw = spec.dither_sigma_mw;
    cfg.dither_hold = spec.dither_hold;
    cfg.governor_enabled = false;
    cfg.noise_enabled = false;
    cfg.seed = spec.seed + i;
    try {
      RunOutputs run = run_scenario(plant, gains, cfg, std::nullopt);
      Trajectory tr = to_trajectory(run.records, cfg.dt);
      if (out_dir) write_trajectory_csv(*out_dir / (prof.name + ".csv"), tr);
      result.trajectories.push_back(std::move(tr));
      result.names.push_back(prof.name);
    } catch (const NumericError&) {
      result.skipped.push_back(prof.name);
    }
  }
  return result;
}

StateSpaceModel fit_plant_model(const Plant& plant, const std::vector<Trajectory>& trajectories,
                                const SysidSpec& spec, FitReport* report) {
  const PlantState eq = plant.steady_state(1.0);
  SnapshotOptions opts;
  Eigen::VectorXd centre(static_cast<Eigen::Index>(spec.states.size()));
  for (std::size_t i = 0; i < spec.states.size(); ++i) {
    centre(static_cast<Eigen::Index>(i)) = eq.value(spec.states[i]);
  }
  opts.state_center = centre;
  opts.input_center = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(spec.inputs.size()),
                                                plant.params().loop.rated_power_mw);
  const SnapshotSet snap = assemble_snapshots(trajectories, spec.states, spec.inputs, opts);
  return fit(snap, spec.fit, report);
}

ConstraintSet resolve_scaled_constraints(const Plant& plant, double reference_load,
                                         const std::vector<ScaledConstraint>& items,
                                         double rate_limit_mw_per_min) {
  const PlantState full = plant.steady_state(1.0);
  const PlantState part = plant.steady_state(reference_load);
  ConstraintSet cs;
  cs.rate_limit_mw_per_min = rate_limit_mw_per_min;
  for (const auto& item : items) {
    const double base = full.value(item.output);
    const double shift = part.value(item.output) - base;
    OutputConstraint c;
    c.name = item.name;
    c.output = item.output;
    c.sense = item.sense;
    for (const auto& f : item.fractions) c.schedule.push_back({f.t, base + f.bound * shift});
    cs.outputs.push_back(std::move(c));
  }
  cs.validate();
  return cs;
}

}  // namespace lfctl
