#pragma once

// Closed-loop orchestration: plant -> measurement -> SGF -> UKF -> governor
// -> PI loops, with per-tick logging and scripted scenarios.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lfctl/dmdc.hpp"
#include "lfctl/governor.hpp"
#include "lfctl/pid.hpp"
#include "lfctl/plant.hpp"
#include "lfctl/sgf.hpp"
#include "lfctl/trajectory.hpp"
#include "lfctl/ukf.hpp"

namespace lfctl {

// Power demand as a fraction of rated power.
struct ReferenceProfile {
  enum class Kind { kPoints, kSine };
  Kind kind = Kind::kPoints;
  std::vector<std::pair<double, double>> points{{0.0, 1.0}};  // (t, fraction), linear between
  double mean = 1.0;
  double amplitude = 0.0;
  double period = 1.0;
  double start = 0.0;  // sine: held at mean + amplitude before this time

  double at(double t) const;
  void validate() const;  // fractions within [0.2, 1.0]

  static ReferenceProfile constant(double fraction);
  // Linear ramp from 1.0 down by `depth` at `rate_per_min`, starting at `t0`.
  static ReferenceProfile ramp(double depth, double rate_per_min, double t0);
};

enum class TickOrder { kStandard, kGovernorFirst };

struct ScenarioConfig {
  double duration = 2000.0;
  double dt = 0.2;
  double initial_load = 1.0;
  ReferenceProfile reference = ReferenceProfile::ramp(0.4, 0.05, 10.0);
  double dither_sigma_mw = 0.0;
  double dither_hold = 10.0;
  ConstraintSet constraints;
  NoiseSpec noise;
  bool noise_enabled = false;
  bool governor_enabled = true;
  bool robust_margin = true;  // tighten by the 3-sigma output noise when noise is on
  SgfConfig sgf;
  UkfConfig ukf;
  GovernorConfig governor;
  std::vector<std::string> observer_channels{"C1", "C2", "C3"};
  TickOrder order = TickOrder::kStandard;
  std::uint64_t seed = 1;

  long ticks() const;  // samples including t = 0
  void validate() const;
};

// One logged tick.
struct SimRecord {
  long tick = 0;
  PlantState plant;
  Eigen::VectorXd measured;  // measured_channel_names() order
  Eigen::VectorXd denoised;  // governor state order
  ObserverVector observer = ObserverVector::Zero();
  double reference = 0.0;  // r, MW
  GovernorDecision decision;
  std::vector<double> bounds;  // per constraint, NaN when disabled
  int binding_index = -1;      // constraint that limited kappa
  Actuation actuation;

  static std::vector<std::string> column_names(const std::vector<std::string>& state_channels,
                                               const ConstraintSet& constraints);
  std::vector<double> values() const;
};

// Ordered CSV writer with formatting and file IO on a background thread.
class CsvLogWriter {
 public:
  CsvLogWriter(const std::filesystem::path& path, std::vector<std::string> header);
  ~CsvLogWriter();
  CsvLogWriter(const CsvLogWriter&) = delete;
  CsvLogWriter& operator=(const CsvLogWriter&) = delete;

  void push(std::vector<double> row);
  void close();  // drains the queue; rethrows a write failure

 private:
  void run();

  std::ofstream out_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<double>> queue_;
  bool closing_ = false;
  bool failed_ = false;
  std::thread worker_;
};

// Operator command, applied at a tick boundary.
struct Command {
  enum class Kind { kSetReference, kUpdateConstraint, kToggleGovernor, kPause, kResume, kSetSpeed };
  Kind kind = Kind::kPause;
  double value = 0.0;      // reference fraction, bound, or speed
  std::string target;      // constraint name
  bool enabled = true;     // toggle-governor

  nlohmann::json to_json() const;
  static Command from_json(const nlohmann::json& j);  // throws ConfigError
};

const char* command_kind_name(Command::Kind k);

struct LoggedCommand {
  long tick = 0;  // first tick executed with the command in effect
  long sequence = 0;
  std::string client;
  Command command;
};

nlohmann::json command_log_to_json(const std::vector<LoggedCommand>& log);
std::vector<LoggedCommand> command_log_from_json(const nlohmann::json& j);

class Simulation {
 public:
  // `model` is required when the governor is enabled or may be toggled on.
  Simulation(Plant plant, ControlGains gains, ScenarioConfig cfg,
             std::optional<StateSpaceModel> model);

  // Executes the next tick (tick 0 initialises without a plant step).
  const SimRecord& step();
  bool finished() const { return next_tick_ >= cfg_.ticks(); }
  long next_tick() const { return next_tick_; }
  const SimRecord& last() const { return last_; }

  // Applies a command before the next tick. Throws ConfigError when invalid.
  void apply(const Command& c);

  const ScenarioConfig& config() const { return cfg_; }
  const Plant& plant() const { return plant_; }
  const std::vector<std::string>& state_channels() const { return state_channels_; }
  bool governor_available() const { return governor_.has_value(); }
  bool governor_enabled() const;
  const Governor* governor() const { return governor_ ? &*governor_ : nullptr; }
  std::vector<std::string> column_names() const;

 private:
  double reference_at(double t);
  void filter_stage(const Eigen::VectorXd& measured);
  void observer_stage(double measured_n);
  Eigen::VectorXd governor_state() const;

  Plant plant_;
  ScenarioConfig cfg_;
  LowLevelControl control_;
  std::optional<Governor> governor_;
  Ukf ukf_;
  std::mt19937_64 rng_;
  std::vector<std::string> state_channels_;
  std::vector<int> measured_index_;  // per state channel, -1 for observer channels
  std::vector<int> observer_index_;  // per state channel, -1 for measured channels
  std::vector<StreamingSgf> filters_;
  Eigen::VectorXd denoised_;
  PlantState state_;
  Actuation actuation_;
  std::optional<double> reference_override_;
  double dither_ = 0.0;
  long next_tick_ = 0;
  SimRecord last_;
};

struct ScenarioSummary {
  long ticks = 0;
  double max_abs_t_c_in_dev = 0.0;   // after settling
  double max_abs_t_c_out_dev = 0.0;
  double min_t_s_in = 0.0;
  double max_t_s_out = 0.0;
  double final_t_s_in = 0.0;
  double final_t_s_out = 0.0;
  double initial_t_s_in = 0.0;
  double initial_t_s_out = 0.0;
  long violations = 0;              // true output beyond bound by more than 0.1
  long raw_violations = 0;          // measured output beyond bound
  double worst_violation = 0.0;
  double peak_rho_ext_dollars = 0.0;
  double peak_rho_total_cents = 0.0;
  std::optional<double> first_intervention_t;
  double t_s_in_at_first_intervention = 0.0;
  long alarms = 0;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct RunOutputs {
  std::vector<SimRecord> records;
  ScenarioSummary summary;
};

struct RunOptions {
  std::optional<std::filesystem::path> log_path;
  std::vector<LoggedCommand> commands;  // replayed at their ticks
  bool keep_records = true;
  double settle_after = 0.0;  // core temperature deviation stats start at this time
};

RunOutputs run_scenario(const Plant& plant, const ControlGains& gains, const ScenarioConfig& cfg,
                        const std::optional<StateSpaceModel>& model, const RunOptions& opts = {});

// Summary statistics over logged records.
ScenarioSummary summarize(const std::vector<SimRecord>& records, const ScenarioConfig& cfg,
                          const Plant& plant, double settle_after);

// Plant fields plus the admitted input v as a trajectory (for identification).
Trajectory to_trajectory(const std::vector<SimRecord>& records, double dt);

struct TrainingProfile {
  std::string name;
  ReferenceProfile reference;
};

struct TrainingSpec {
  std::vector<TrainingProfile> profiles;
  double duration = 2000.0;
  double dt = 0.2;
  double dither_sigma_mw = 0.25;
  double dither_hold = 10.0;
  std::uint64_t seed = 1;
};

// The default 22-profile excitation set.
TrainingSpec default_training_spec();

struct TrainingResult {
  std::vector<Trajectory> trajectories;
  std::vector<std::string> names;
  std::vector<std::string> skipped;  // profiles that diverged
};

// Ungoverned closed-loop runs, one per profile (governor bypassed, no noise).
// Writes <out_dir>/<name>.csv when out_dir is set.
TrainingResult generate_training_set(const Plant& plant, const ControlGains& gains,
                                     const TrainingSpec& spec,
                                     const std::optional<std::filesystem::path>& out_dir = {});

struct SysidSpec {
  std::vector<std::string> states{"mdot_p", "mdot_s", "T_c_in", "T_c_out", "P_c_in",
                                  "P_c_out", "T_s_in", "T_s_out", "C1", "C2",
                                  "C3", "Q_HX", "Q_SG"};
  std::vector<std::string> inputs{"v"};
  FitOptions fit;
};

// DMDc fit in deviation coordinates about the full-power equilibrium
// (input centred on rated power).
StateSpaceModel fit_plant_model(const Plant& plant, const std::vector<Trajectory>& trajectories,
                                const SysidSpec& spec, FitReport* report = nullptr);

// A constraint whose bounds are fractions of the equilibrium shift of its
// output between full power and `reference_load`.
struct ScaledConstraint {
  std::string name;
  std::string output;
  Sense sense = Sense::kMin;
  std::vector<Breakpoint> fractions;
};

ConstraintSet resolve_scaled_constraints(const Plant& plant, double reference_load,
                                         const std::vector<ScaledConstraint>& items,
                                         double rate_limit_mw_per_min);

}  // namespace lfctl
