#include <doctest.h>

#include <cmath>
#include <random>

#include "lfctl/dmdc.hpp"
#include "lfctl/plant.hpp"

using namespace lfctl;

namespace {

// Simulates x' = A x + B u from x0 with random inputs; columns x0.., u0...
Trajectory simulate(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::VectorXd& x0,
                    int samples, std::mt19937_64& rng, double noise = 0.0) {
  const auto n = a.rows();
  const auto m = b.cols();
  std::normal_distribution<double> nd;
  Trajectory t;
  t.dt = 1.0;
  for (Eigen::Index i = 0; i < n; ++i) t.names.push_back("x" + std::to_string(i));
  for (Eigen::Index i = 0; i < m; ++i) t.names.push_back("u" + std::to_string(i));
  t.values.resize(samples, n + m);
  Eigen::VectorXd x = x0;
  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd u(m);
    for (Eigen::Index i = 0; i < m; ++i) u(i) = nd(rng);
    t.values.row(k).head(n) = x.transpose();
    t.values.row(k).tail(m) = u.transpose();
    x = a * x + b * u;
    if (noise > 0.0)
      for (Eigen::Index i = 0; i < n; ++i) x(i) += noise * nd(rng);
  }
  return t;
}

std::vector<std::string> names(const char* prefix, int count) {
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

SnapshotOptions zero_centered(int n, int m) {
  SnapshotOptions o;
  o.state_center = Eigen::VectorXd::Zero(n);
  o.input_center = Eigen::VectorXd::Zero(m);
  return o;
}

// A and B of a fitted model mapped back to engineering coordinates.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> engineering(const StateSpaceModel& m) {
  const Eigen::MatrixXd s = m.state_scaling.scale.asDiagonal();
  const Eigen::MatrixXd si = m.state_scaling.scale.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd ui = m.input_scaling.scale.cwiseInverse().asDiagonal();
  return {s * m.a * si, s * m.b * ui};
}

}  // namespace

TEST_CASE("snapshot pairs never cross trajectory boundaries") {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd a = 0.5 * Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd b = Eigen::MatrixXd::Ones(2, 1);
  const Trajectory t1 = simulate(a, b, Eigen::VectorXd::Zero(2), 37, rng);
  const Trajectory t2 = simulate(a, b, Eigen::VectorXd::Ones(2), 21, rng);
  const SnapshotSet s = assemble_snapshots({t1, t2}, names("x", 2), names("u", 1), zero_centered(2, 1));
  CHECK(s.x.cols() == 37 + 21 - 2);
  // The last pair of the first trajectory and the first pair of the second.
  const double s0 = s.state_scaling.scale(0);
  CHECK(s.x_next(0, 35) * s0 == doctest::Approx(t1.values(36, 0)));
  CHECK(s.x(0, 36) * s0 == doctest::Approx(t2.values(0, 0)));
  CHECK(s.x_next(0, 36) * s0 == doctest::Approx(t2.values(1, 0)));

  Trajectory short_one = t1;
  short_one.values.conservativeResize(1, Eigen::NoChange);
  CHECK_THROWS_AS(assemble_snapshots({short_one}, names("x", 2), names("u", 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(assemble_snapshots({t1}, {"missing"}, names("u", 1)), std::out_of_range);
}

TEST_CASE("exact data recovers a random system") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int n = 4, m = 2;
  Eigen::MatrixXd a(n, n), b(n, m);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = u(rng);
  a *= 0.8 / a.eigenvalues().cwiseAbs().maxCoeff();
  const Trajectory t = simulate(a, b, Eigen::VectorXd::Ones(n), 400, rng);
  FitOptions opts;
  opts.rank = n + m;
  FitReport rep;
  const StateSpaceModel model =
      fit(assemble_snapshots({t}, names("x", n), names("u", m), zero_centered(n, m)), opts, &rep);
  const auto [ae, be] = engineering(model);
  CHECK((ae - a).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((be - b).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(rep.used_rank == n + m);
  CHECK_FALSE(rep.rank_reduced);
  CHECK(model.spectral_radius() == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("integrator dynamics are recovered as the identity") {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(3, 3);
  // One input per state keeps the integrated states independent.
  Eigen::MatrixXd b(3, 3);
  b << 0.1, 0.0, 0.02, -0.2, 0.3, 0.0, 0.05, 0.0, 0.1;
  const Trajectory t = simulate(a, b, Eigen::VectorXd::Zero(3), 200, rng);
  FitOptions opts;
  opts.rank = 6;
  const auto [ae, be] =
      engineering(fit(assemble_snapshots({t}, names("x", 3), names("u", 3), zero_centered(3, 3)), opts));
  CHECK((ae - a).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((be - b).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("least-squares residual is orthogonal to the regressors") {
  std::mt19937_64 rng(9);
  Eigen::MatrixXd a(2, 2), b(2, 1);
  a << 0.9, 0.1, -0.05, 0.7;
  b << 0.3, 0.1;
  const Trajectory t = simulate(a, b, Eigen::VectorXd::Zero(2), 500, rng, 0.05);
  const SnapshotSet s = assemble_snapshots({t}, names("x", 2), names("u", 1));
  FitOptions opts;
  opts.rank = 3;
  const StateSpaceModel model = fit(s, opts);
  Eigen::MatrixXd omega(3, s.x.cols());
  omega << s.x, s.u;
  Eigen::MatrixXd g(2, 3);
  g << model.a, model.b;
  const Eigen::MatrixXd residual = s.x_next - g * omega;
  const Eigen::MatrixXd normal = residual * omega.transpose();
  CHECK(normal.cwiseAbs().maxCoeff() < 1e-9 * omega.squaredNorm());
  // Same answer as the normal equations.
  const Eigen::MatrixXd direct =
      (omega * omega.transpose()).ldlt().solve(omega * s.x_next.transpose()).transpose();
  CHECK((direct - g).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("energy threshold truncates the rank") {
  std::mt19937_64 rng(10);
  Eigen::MatrixXd a = 0.5 * Eigen::MatrixXd::Identity(3, 3);
  Eigen::MatrixXd b(3, 1);
  b << 1.0, 1.0, 1.0;
  // Three identical states: the snapshot matrix has rank 2.
  const Trajectory t = simulate(a, b, Eigen::VectorXd::Ones(3), 100, rng);
  FitReport rep;
  FitOptions opts;
  opts.rank = 4;
  fit(assemble_snapshots({t}, names("x", 3), names("u", 1)), opts, &rep);
  CHECK(rep.used_rank == 2);
  CHECK(rep.rank_reduced);
  opts.rank = 0;
  opts.energy_threshold = 0.5;
  fit(assemble_snapshots({t}, names("x", 3), names("u", 1)), opts, &rep);
  CHECK(rep.requested_rank == 1);
}

TEST_CASE("rollout is linear in the initial state and the inputs") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd a(3, 3), b(3, 1);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = 0.3 * nd(rng);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = nd(rng);
  const StateSpaceModel m = StateSpaceModel::from_matrices(a, b, Eigen::MatrixXd::Identity(3, 3),
                                                           Eigen::MatrixXd::Zero(3, 1));
  Eigen::VectorXd z1(3), z2(3);
  z1 << 1, -2, 0.5;
  z2 << -0.3, 0.1, 2;
  Eigen::MatrixXd u1(50, 1), u2(50, 1);
  for (int k = 0; k < 50; ++k) {
    u1(k, 0) = nd(rng);
    u2(k, 0) = nd(rng);
  }
  const Eigen::MatrixXd sum = predict_normalized(m, z1 + z2, u1 + u2);
  const Eigen::MatrixXd parts = predict_normalized(m, z1, u1) + predict_normalized(m, z2, u2);
  CHECK((sum - parts).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("r_squared matches its definition") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  Eigen::VectorXd y(200), p(200);
  for (int i = 0; i < 200; ++i) {
    y(i) = std::sin(0.1 * i) + 0.1 * nd(rng);
    p(i) = std::sin(0.1 * i);
  }
  double mean = 0.0;
  for (int i = 0; i < 200; ++i) mean += y(i);
  mean /= 200.0;
  double ss_res = 0.0, ss_tot = 0.0;
  for (int i = 0; i < 200; ++i) {
    ss_res += (y(i) - p(i)) * (y(i) - p(i));
    ss_tot += (y(i) - mean) * (y(i) - mean);
  }
  CHECK(std::abs(r_squared(y, p) - (1.0 - ss_res / ss_tot)) < 1e-12);
  CHECK(r_squared(y, y) == 1.0);
  CHECK(std::abs(r_squared(y, Eigen::VectorXd::Constant(200, mean))) < 1e-12);
  CHECK(r_squared(y, Eigen::VectorXd::Constant(200, mean + 1.0)) < 0.0);
  CHECK(std::isnan(r_squared(Eigen::VectorXd::Ones(5), Eigen::VectorXd::Ones(5))));
}

TEST_CASE("scaling round-trips") {
  ChannelScaling s{Eigen::Vector3d(547.0, 645.0, 1320.0), Eigen::Vector3d(0.5, 2.0, 15.0)};
  const Eigen::Vector3d v(548.0, 640.0, 1300.0);
  CHECK((s.denormalize(s.normalize(v)) - v).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::MatrixXd rows(2, 3);
  rows << 548.0, 640.0, 1300.0, 546.0, 650.0, 1340.0;
  CHECK((s.denormalize_rows(s.normalize_rows(rows)) - rows).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(s.normalize(v)(0) == doctest::Approx(2.0));
}

TEST_CASE("score of an exact model is one for every channel") {
  std::mt19937_64 rng(13);
  Eigen::MatrixXd a(2, 2), b(2, 1);
  a << 0.95, 0.02, 0.0, 0.9;
  b << 0.5, -0.2;
  const Trajectory t = simulate(a, b, Eigen::VectorXd::Zero(2), 300, rng);
  FitOptions opts;
  opts.rank = 3;
  const StateSpaceModel m =
      fit(assemble_snapshots({t}, names("x", 2), names("u", 1), zero_centered(2, 1)), opts);
  const ScoreReport rep = score(m, t);
  CHECK(rep.channels.size() == 2);
  CHECK(rep.min_r2() > 1.0 - 1e-9);
  CHECK(rep.mean_r2() > 1.0 - 1e-9);
}

TEST_CASE("model JSON round-trip is exact") {
  std::mt19937_64 rng(14);
  Eigen::MatrixXd a(2, 2), b(2, 1);
  a << 0.95, 0.02, 0.0, 0.9;
  b << 0.5, -0.2;
  const Trajectory t = simulate(a, b, Eigen::VectorXd::Zero(2), 300, rng, 0.01);
  StateSpaceModel m = fit(assemble_snapshots({t}, names("x", 2), names("u", 1)));
  m.b_w = Eigen::Vector2d(0.1, 0.2);
  m.d_w = Eigen::Vector2d(1.0 / 3.0, 0.7);
  const StateSpaceModel back = model_from_json(nlohmann::json::parse(model_to_json(m).dump()));
  CHECK(back.a == m.a);
  CHECK(back.b == m.b);
  CHECK(back.b_w == m.b_w);
  CHECK(back.d_w == m.d_w);
  CHECK(back.state_scaling.center == m.state_scaling.center);
  CHECK(back.state_scaling.scale == m.state_scaling.scale);
  CHECK(back.state_names == m.state_names);
  CHECK(back.rank == m.rank);
  CHECK_THROWS(model_from_json(nlohmann::json::object()));
}
