#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "lfctl/scenario.hpp"
#include "support.hpp"

using namespace lfctl;

namespace {

struct Setup {
  AppConfig app = testing::base_config();
  Plant plant{app.plant};
  ControlGains gains = app.gains(plant);
  ScenarioConfig sc = app.scenario;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("identical inputs give byte-identical logs") {
  Setup s;
  s.sc.duration = 600.0;
  s.sc.noise_enabled = true;
  const auto dir = testing::scratch_dir("scenario_repeat");
  RunOptions a, b;
  a.log_path = dir / "a.csv";
  b.log_path = dir / "b.csv";
  run_scenario(s.plant, s.gains, s.sc, testing::plant_model(), a);
  run_scenario(s.plant, s.gains, s.sc, testing::plant_model(), b);
  const std::string la = slurp(*a.log_path), lb = slurp(*b.log_path);
  CHECK(la.size() > 1000);
  CHECK(la == lb);

  s.sc.seed = 2;
  RunOptions c;
  c.log_path = dir / "c.csv";
  run_scenario(s.plant, s.gains, s.sc, testing::plant_model(), c);
  CHECK(slurp(*c.log_path) != la);
}

TEST_CASE("log round-trips through the CSV reader") {
  Setup s;
  s.sc.duration = 100.0;
  const auto dir = testing::scratch_dir("scenario_csv");
  RunOptions o;
  o.log_path = dir / "log.csv";
  const RunOutputs run = run_scenario(s.plant, s.gains, s.sc, testing::plant_model(), o);
  const Trajectory t = read_trajectory_csv(*o.log_path);
  REQUIRE(t.rows() == static_cast<Eigen::Index>(run.records.size()));
  CHECK(t.dt == doctest::Approx(0.2));
  for (std::size_t i = 0; i < run.records.size(); i += 37) {
    const auto v = run.records[i].values();
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double got = t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (std::isnan(v[j])) {
        CHECK(std::isnan(got));
      } else {
        CHECK(got == v[j]);
      }
    }
  }
}

TEST_CASE("constant full-power demand without excitation stays at equilibrium") {
  Setup s;
  s.sc.reference = ReferenceProfile::constant(1.0);
  s.sc.duration = 400.0;
  s.sc.governor_enabled = false;
  const RunOutputs run = run_scenario(s.plant, s.gains, s.sc, std::nullopt);
  const PlantState eq = s.plant.steady_state(1.0);
  for (const auto& r : run.records) {
    CHECK(std::abs(r.plant.t_s_in() - eq.t_s_in()) < 1e-6);
    CHECK(std::abs(r.plant.q_rx - 320.0) < 1e-6);
    CHECK(r.decision.v == doctest::Approx(320.0));
  }
}

TEST_CASE("running the governor before the filter changes the trajectory") {
  Setup s;
  s.sc.duration = 800.0;
  s.sc.noise_enabled = true;
  const RunOutputs std_order = run_scenario(s.plant, s.gains, s.sc, testing::plant_model());
  s.sc.order = TickOrder::kGovernorFirst;
  const RunOutputs alt = run_scenario(s.plant, s.gains, s.sc, testing::plant_model());
  REQUIRE(std_order.records.size() == alt.records.size());
  bool differs = false;
  for (std::size_t i = 0; i < alt.records.size() && !differs; ++i) {
    differs = alt.records[i].decision.v != std_order.records[i].decision.v;
  }
  CHECK(differs);
}

TEST_CASE("recorded commands replay to the same trajectory") {
  Setup s;
  s.sc.duration = 500.0;
  std::vector<LoggedCommand> cmds;
  Command setref;
  setref.kind = Command::Kind::kSetReference;
  setref.value = 0.7;
  Command bound;
  bound.kind = Command::Kind::kUpdateConstraint;
  bound.target = "T_s_in_min";
  bound.value = 427.5;
  Command off;
  off.kind = Command::Kind::kToggleGovernor;
  off.enabled = false;

  // Interactive run: commands applied by hand at chosen tick boundaries.
  Simulation sim(s.plant, s.gains, s.sc, testing::plant_model());
  std::vector<SimRecord> live;
  while (!sim.finished()) {
    const long k = sim.next_tick();
    if (k == 300) {
      sim.apply(setref);
      cmds.push_back({k, 1, "op", setref});
    }
    if (k == 900) {
      sim.apply(bound);
      cmds.push_back({k, 2, "op", bound});
    }
    if (k == 2000) {
      sim.apply(off);
      cmds.push_back({k, 3, "op", off});
    }
    live.push_back(sim.step());
  }

  const auto round = command_log_from_json(nlohmann::json::parse(command_log_to_json(cmds).dump()));
  REQUIRE(round.size() == 3);
  RunOptions o;
  o.commands = round;
  const RunOutputs replay = run_scenario(s.plant, s.gains, s.sc, testing::plant_model(), o);
  REQUIRE(replay.records.size() == live.size());
  for (std::size_t i = 0; i < live.size(); ++i) {
    const auto a = live[i].values(), b = replay.records[i].values();
    REQUIRE(a.size() == b.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (!(std::isnan(a[j]) && std::isnan(b[j]))) CHECK(a[j] == b[j]);
    }
  }
  CHECK(replay.records[2400].decision.binding == Binding::kBypass);
  CHECK(replay.records[2400].decision.v == replay.records[2400].reference);
  CHECK(replay.records[1000].bounds[0] == 427.5);
}

TEST_CASE("commands are validated") {
  Setup s;
  Simulation sim(s.plant, s.gains, s.sc, testing::plant_model());
  Command c;
  c.kind = Command::Kind::kSetReference;
  c.value = 1.5;
  CHECK_THROWS_AS(sim.apply(c), ConfigError);
  c.kind = Command::Kind::kUpdateConstraint;
  c.target = "nope";
  c.value = 1.0;
  CHECK_THROWS_AS(sim.apply(c), ConfigError);
  CHECK_THROWS_AS(Command::from_json({{"kind", "launch"}}), ConfigError);
  CHECK_THROWS_AS(Command::from_json({{"kind", "set-reference"}, {"payload", {{"target", "x"}}}}),
                  ConfigError);
  const Command back = Command::from_json(
      {{"kind", "update-constraint"}, {"payload", {{"constraint", "T_s_out_max"}, {"value", 474.0}}}});
  CHECK(back.kind == Command::Kind::kUpdateConstraint);
  CHECK(back.target == "T_s_out_max");
  CHECK(back.value == 474.0);

  Setup n;
  n.sc.governor_enabled = false;
  Simulation plain(n.plant, n.gains, n.sc, std::nullopt);
  Command t;
  t.kind = Command::Kind::kToggleGovernor;
  CHECK_THROWS_AS(plain.apply(t), ConfigError);
}

TEST_CASE("training profiles stay in range; only step profiles jump") {
  const TrainingSpec spec = default_training_spec();
  CHECK(spec.profiles.size() == 22);
  for (const auto& p : spec.profiles) {
    CAPTURE(p.name);
    CHECK_NOTHROW(p.reference.validate());
    const bool stepped = p.name.rfind("step_", 0) == 0;
    double prev = p.reference.at(0.0);
    double largest = 0.0;
    for (double t = 0.2; t <= spec.duration; t += 0.2) {
      const double f = p.reference.at(t);
      CHECK(f >= 0.2 - 1e-12);
      CHECK(f <= 1.0 + 1e-12);
      largest = std::max(largest, std::abs(f - prev));
      prev = f;
    }
    // Ramps and sines move at most 30 %/min, i.e. 1e-3 per 0.2 s sample.
    if (stepped) {
      CHECK(largest > 0.05);
    } else {
      CHECK(largest <= 1e-3);
    }
  }
}

TEST_CASE("training runs produce seamless trajectories") {
  Setup s;
  TrainingSpec spec = default_training_spec();
  spec.profiles.resize(2);
  spec.duration = 300.0;
  const TrainingResult res = generate_training_set(s.plant, s.gains, spec);
  REQUIRE(res.trajectories.size() == 2);
  for (const auto& t : res.trajectories) {
    CHECK(t.rows() == 1500);
    const Eigen::VectorXd tin = t.channel("T_s_in");
    for (Eigen::Index i = 1; i < tin.size(); ++i) CHECK(std::abs(tin(i) - tin(i - 1)) < 0.05);
    CHECK(t.channel("v")(0) == doctest::Approx(320.0).epsilon(0.01));
  }
}
