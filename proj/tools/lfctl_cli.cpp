// lfctl: simulate, generate identification data, fit, select, tune, serve.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lfctl/config.hpp"
#include "lfctl/dmdc.hpp"
#include "lfctl/scenario.hpp"
#include "lfctl/service.hpp"
#include "lfctl/sffs.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lfctl;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool no_governor = false;
  bool noise = false;
  std::string model;
  std::string data;
  std::string commands;
  bool fit_on_the_fly = false;
  std::string bind;
  int port = -1;
  double speed = -1.0;
  bool paused = false;
};

AppConfig load(const Options& o) {
  return o.config.empty() ? default_app_config() : load_config(o.config);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path out_dir(const Options& o) {
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  fs::create_directories(dir);
  return dir;
}

std::vector<Trajectory> read_training_dir(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  std::ifstream in(manifest);
  if (!in) throw ConfigError("no manifest.json in " + dir.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed " + manifest.string() + ": " + e.what());
  }
  std::vector<Trajectory> out;
  for (const auto& name : m.at("profiles")) {
    out.push_back(read_trajectory_csv(dir / (name.get<std::string>() + ".csv")));
  }
  return out;
}

std::vector<Trajectory> training_data(const AppConfig& cfg, const Options& o, const Plant& plant) {
  if (!o.data.empty()) return read_training_dir(o.data);
  TrainingSpec spec = cfg.training;
  if (o.seed) spec.seed = *o.seed;
  auto result = generate_training_set(plant, cfg.gains(plant), spec);
  for (const auto& s : result.skipped) std::cerr << "profile skipped (diverged): " << s << '\n';
  return result.trajectories;
}

StateSpaceModel fit_model(const AppConfig& cfg, const Options& o, const Plant& plant,
                          FitReport* report) {
  return fit_plant_model(plant, training_data(cfg, o, plant), cfg.sysid, report);
}

std::optional<StateSpaceModel> resolve_model(const AppConfig& cfg, const Options& o,
                                             const Plant& plant, bool needed) {
  if (!o.model.empty()) return load_model(o.model);
  if (cfg.model_path) return load_model(cfg.model_path->string());
  if (o.fit_on_the_fly && needed) {
    FitReport rep;
    return fit_model(cfg, o, plant, &rep);
  }
  if (needed) {
    throw ConfigError("governor enabled but no model given (use --model, a 'model' config key, "
                      "--fit or --no-governor)");
  }
  return std::nullopt;
}

ScenarioConfig scenario_from(const AppConfig& cfg, const Options& o) {
  ScenarioConfig sc = cfg.scenario;
  if (o.seed) sc.seed = *o.seed;
  if (o.no_governor) sc.governor_enabled = false;
  if (o.noise) sc.noise_enabled = true;
  return sc;
}

int cmd_simulate(const Options& o) {
  const AppConfig cfg = load(o);
  const Plant plant(cfg.plant);
  const ScenarioConfig sc = scenario_from(cfg, o);
  const auto model = resolve_model(cfg, o, plant, sc.governor_enabled);
  RunOptions ro;
  ro.keep_records = true;
  ro.settle_after = 0.0;
  if (!o.commands.empty()) {
    std::ifstream in(o.commands);
    if (!in) throw ConfigError("cannot open command log: " + o.commands);
    try {
      ro.commands = command_log_from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw ConfigError("malformed command log " + o.commands + ": " + e.what());
    }
  }
  const fs::path dir = out_dir(o);
  ro.log_path = dir / "log.csv";
  const RunOutputs run = run_scenario(plant, cfg.gains(plant), sc, model, ro);
  json summary = run.summary.to_json();
  summary["log"] = ro.log_path->string();
  summary["governor_enabled"] = sc.governor_enabled;
  summary["noise_enabled"] = sc.noise_enabled;
  write_json(dir / "summary.json", summary);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_gen_data(const Options& o) {
  const AppConfig cfg = load(o);
  const Plant plant(cfg.plant);
  TrainingSpec spec = cfg.training;
  if (o.seed) spec.seed = *o.seed;
  const fs::path dir = out_dir(o);
  const auto result = generate_training_set(plant, cfg.gains(plant), spec, dir);
  json manifest{{"profiles", result.names}, {"skipped", result.skipped}, {"dt", spec.dt},
                {"duration", spec.duration}, {"seed", spec.seed}};
  write_json(dir / "manifest.json", manifest);
  std::cout << manifest.dump(2) << '\n';
  return 0;
}

int cmd_fit(const Options& o) {
  const AppConfig cfg = load(o);
  const Plant plant(cfg.plant);
  FitReport rep;
  const StateSpaceModel model = fit_model(cfg, o, plant, &rep);
  const fs::path target = o.out.empty() ? fs::path("model.json") : fs::path(o.out);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  save_model(target.string(), model);

  // Held-out check against an ungoverned run of the configured reference.
  ScenarioConfig held = cfg.scenario;
  held.governor_enabled = false;
  held.noise_enabled = false;
  const RunOutputs run = run_scenario(plant, cfg.gains(plant), held, std::nullopt);
  const ScoreReport sr = score(model, to_trajectory(run.records, held.dt));
  json scores = json::object();
  for (const auto& c : sr.channels) scores[c.name] = {{"r2", c.r2}, {"mse", c.mse}};
  json report{{"model", target.string()},
              {"requested_rank", rep.requested_rank},
              {"used_rank", rep.used_rank},
              {"rank_reduced", rep.rank_reduced},
              {"spectral_radius", model.spectral_radius()},
              {"held_out", scores},
              {"held_out_min_r2", sr.min_r2()}};
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_select(const Options& o) {
  const AppConfig cfg = load(o);
  const Plant plant(cfg.plant);
  SelectionProblem p;
  p.mandatory = cfg.selection.mandatory;
  p.candidates = cfg.selection.candidates;
  p.max_added = cfg.selection.max_added;
  p.folds = cfg.selection.folds;
  p.inputs = cfg.sysid.inputs;
  p.fit = cfg.sysid.fit;
  p.trajectories = training_data(cfg, o, plant);
  const PlantState eq = plant.steady_state(1.0);
  for (const auto& name : PlantState::field_names()) p.centers[name] = eq.value(name);
  p.centers["v"] = plant.params().loop.rated_power_mw;
  const SelectionResult res = select_features(p);
  const fs::path dir = out_dir(o);
  res.write_csv((dir / "selection.csv").string());
  write_json(dir / "selection.json", res.to_json());
  std::cout << res.to_json().dump(2) << '\n';
  return 0;
}

const char* loop_name(Loop l) {
  switch (l) {
    case Loop::kPower: return "power";
    case Loop::kOutlet: return "outlet";
    case Loop::kInlet: return "inlet";
  }
  return "?";
}

int cmd_tune(const Options& o) {
  const AppConfig cfg = load(o);
  const Plant plant(cfg.plant);
  const auto& t = cfg.tuning;
  const TuningReport rep = tune_grid_search(cfg.gains(plant), t.loop, t.kp_grid, t.ki_grid,
                                            ramp_tracking_cost(plant, t.loop, t.cost));
  const fs::path dir = out_dir(o);
  std::ofstream csv(dir / "tuning.csv");
  if (!csv) throw ConfigError("cannot write " + (dir / "tuning.csv").string());
  csv << "kp,ki,cost,stable\n";
  for (const auto& c : rep.candidates) {
    csv << format_double(c.kp) << ',' << format_double(c.ki) << ','
        << (c.stable ? format_double(c.cost) : std::string("inf")) << ',' << (c.stable ? 1 : 0)
        << '\n';
  }
  json best{{"loop", loop_name(t.loop)}, {"kp", rep.best.kp}, {"ki", rep.best.ki}};
  write_json(dir / "tuning.json", best);
  std::cout << best.dump(2) << '\n';
  return 0;
}

int cmd_serve(const Options& o) {
  const AppConfig cfg = load(o);
  const Plant plant(cfg.plant);
  const ScenarioConfig sc = scenario_from(cfg, o);
  // Keep a model when available so the governor can be toggled on later.
  const auto model = resolve_model(cfg, o, plant, sc.governor_enabled);
  ServiceSettings settings = cfg.service;
  if (!o.bind.empty()) settings.bind = o.bind;
  if (o.port >= 0) settings.port = o.port;
  if (o.speed >= 0.0) settings.speed = o.speed;
  if (o.paused) settings.start_paused = true;
  ScenarioService service(plant, cfg.gains(plant), sc, model, settings);
  if (!o.out.empty()) service.log_to(out_dir(o) / "log.csv");
  std::cerr << "serving on http://" << settings.bind << ':' << settings.port << '\n';
  if (!serve_http(service, settings.bind, settings.port)) {
    throw ConfigError("cannot listen on " + settings.bind + ":" + std::to_string(settings.port));
  }
  if (!o.out.empty()) write_json(out_dir(o) / "commands.json", service.command_log());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Load-follow supervisory control: plant simulation, identification and governor"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory (fit: model file)");
    sub->add_option("--seed", o.seed, "Random seed override");
  };
  auto scenario_flags = [&](CLI::App* sub) {
    sub->add_flag("--no-governor", o.no_governor, "Bypass the reference governor");
    sub->add_flag("--noise", o.noise, "Enable measurement noise");
    sub->add_option("--model", o.model, "State-space model JSON")->check(CLI::ExistingFile);
    sub->add_flag("--fit", o.fit_on_the_fly, "Fit a model first when none is given");
    sub->add_option("--data", o.data, "Training directory written by gen-data");
  };

  auto* simulate = app.add_subcommand("simulate", "Run one closed-loop scenario");
  common(simulate);
  scenario_flags(simulate);
  simulate->add_option("--commands", o.commands, "Command log to replay")->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("gen-data", "Generate the identification training set");
  common(gen);

  auto* fitc = app.add_subcommand("fit", "Fit the DMDc model");
  common(fitc);
  fitc->add_option("--data", o.data, "Training directory written by gen-data");

  auto* sel = app.add_subcommand("select", "Run floating feature selection");
  common(sel);
  sel->add_option("--data", o.data, "Training directory written by gen-data");

  auto* tune = app.add_subcommand("tune", "Grid-search one PI loop");
  common(tune);

  auto* serve = app.add_subcommand("serve", "Run a live scenario behind HTTP");
  common(serve);
  scenario_flags(serve);
  serve->add_option("--bind", o.bind, "Bind address");
  serve->add_option("--port", o.port, "Port");
  serve->add_option("--speed", o.speed, "Simulated seconds per wall second (0 = unpaced)");
  serve->add_flag("--paused", o.paused, "Start paused");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*simulate) return cmd_simulate(o);
    if (*gen) return cmd_gen_data(o);
    if (*fitc) return cmd_fit(o);
    if (*sel) return cmd_select(o);
    if (*tune) return cmd_tune(o);
    if (*serve) return cmd_serve(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::out_of_range& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const InfeasibleSetError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitConfig;
}
