#pragma once

// JSON configuration for every CLI workflow. Every key is optional; absent
// keys keep the built-in defaults and unknown keys are rejected.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfctl/pid.hpp"
#include "lfctl/plant.hpp"
#include "lfctl/scenario.hpp"
#include "lfctl/sffs.hpp"

namespace lfctl {

inline constexpr int kConfigSchemaVersion = 1;

// Output bounds either in engineering units ("raw") or as fractions of the
// equilibrium shift between full power and `reference_load` ("scaled").
struct ConstraintSpec {
  enum class Mode { kRaw, kScaled };
  Mode mode = Mode::kScaled;
  double reference_load = 0.6;
  double rate_limit_mw_per_min = 16.0;
  std::vector<ScaledConstraint> items;  // bounds or fractions, per mode

  ConstraintSet resolve(const Plant& plant) const;
};

struct SelectionSettings {
  std::vector<std::string> mandatory{"mdot_p", "mdot_s", "T_c_in", "T_c_out",
                                     "P_c_in", "P_c_out", "T_s_in", "T_s_out"};
  std::vector<std::string> candidates{"C1", "C2", "C3", "C4", "C5", "C6",
                                      "Q_HX", "Q_SG", "Q_loss", "rho_m", "rho_c"};
  int max_added = 5;
  int folds = 3;
};

struct TuningSettings {
  Loop loop = Loop::kInlet;
  std::vector<double> kp_grid{5.0, 10.0, 20.0, 40.0};
  std::vector<double> ki_grid{0.5, 1.0, 2.0, 4.0};
  RampCostOptions cost;
};

struct ServiceSettings {
  std::string bind = "127.0.0.1";
  int port = 8080;
  double speed = 0.0;              // simulated seconds per wall second; 0 runs unpaced
  std::size_t stream_buffer = 256;  // frames queued per subscriber before dropping
  long history_limit = 5000;       // max rows per /history response
  bool start_paused = false;
};

struct AppConfig {
  PlantParams plant = PlantParams::defaults();
  nlohmann::json control = nlohmann::json::object();  // overrides on the default gains
  ScenarioConfig scenario;
  ConstraintSpec constraints;
  TrainingSpec training = default_training_spec();
  SysidSpec sysid;
  SelectionSettings selection;
  TuningSettings tuning;
  ServiceSettings service;
  std::optional<std::filesystem::path> model_path;  // relative to the config file

  ControlGains gains(const Plant& plant) const;
};

// Defaults plus the table-derived scaled constraints.
AppConfig default_app_config();

// Throws ConfigError naming the offending key path.
AppConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
// Throws ConfigError (with the path) when the file is missing or malformed.
AppConfig load_config(const std::filesystem::path& path);

ReferenceProfile reference_from_json(const nlohmann::json& j);

}  // namespace lfctl
