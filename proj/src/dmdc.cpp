#include "lfctl/dmdc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "lfctl/plant.hpp"

namespace lfctl {

using nlohmann::json;

Eigen::VectorXd ChannelScaling::normalize(const Eigen::VectorXd& v) const {
  return (v - center).cwiseQuotient(scale);
}

Eigen::VectorXd ChannelScaling::denormalize(const Eigen::VectorXd& z) const {
  return z.cwiseProduct(scale) + center;
}

Eigen::MatrixXd ChannelScaling::normalize_rows(const Eigen::MatrixXd& rows) const {
  return (rows.rowwise() - center.transpose()).array().rowwise() / scale.transpose().array();
}

Eigen::MatrixXd ChannelScaling::denormalize_rows(const Eigen::MatrixXd& rows) const {
  return (rows.array().rowwise() * scale.transpose().array()).matrix().rowwise() +
         center.transpose();
}

namespace {

ChannelScaling scaling_for(const std::vector<Eigen::MatrixXd>& blocks,
                           const std::optional<Eigen::VectorXd>& center_opt, Eigen::Index width) {
  ChannelScaling s;
  Eigen::Index total = 0;
  for (const auto& b : blocks) total += b.rows();
  if (center_opt) {
    if (center_opt->size() != width) throw std::invalid_argument("snapshot center has wrong size");
    s.center = *center_opt;
  } else {
    s.center = Eigen::VectorXd::Zero(width);
    for (const auto& b : blocks) s.center += b.colwise().sum().transpose();
    s.center /= static_cast<double>(total);
  }
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(width);
  for (const auto& b : blocks) {
    sq += (b.rowwise() - s.center.transpose()).colwise().squaredNorm().transpose();
  }
  s.scale = (sq / static_cast<double>(total)).cwiseSqrt();
  for (Eigen::Index i = 0; i < width; ++i) {
    if (!(s.scale(i) > 1e-300)) s.scale(i) = 1.0;
  }
  return s;
}

}  // namespace

SnapshotSet assemble_snapshots(const std::vector<Trajectory>& trajectories,
                               const std::vector<std::string>& state_names,
                               const std::vector<std::string>& input_names,
                               const SnapshotOptions& opts) {
  if (trajectories.empty()) throw std::invalid_argument("assemble_snapshots: no trajectories");
  std::vector<Eigen::MatrixXd> xs;
  std::vector<Eigen::MatrixXd> us;
  Eigen::Index pairs = 0;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const Trajectory& tr = trajectories[i];
    if (tr.rows() < 2) {
      throw std::invalid_argument("assemble_snapshots: trajectory " + std::to_string(i) +
                                  " has fewer than 2 samples");
    }
    xs.push_back(tr.select(state_names));
    us.push_back(tr.select(input_names));
    pairs += tr.rows() - 1;
  }

  SnapshotSet s;
  s.dt = trajectories.front().dt;
  s.state_names = state_names;
  s.input_names = input_names;
  const auto n = static_cast<Eigen::Index>(state_names.size());
  const auto m = static_cast<Eigen::Index>(input_names.size());
  s.state_scaling = scaling_for(xs, opts.state_center, n);
  s.input_scaling = scaling_for(us, opts.input_center, m);

  s.x.resize(n, pairs);
  s.x_next.resize(n, pairs);
  s.u.resize(m, pairs);
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Eigen::MatrixXd z = s.state_scaling.normalize_rows(xs[i]);
    const Eigen::MatrixXd w = s.input_scaling.normalize_rows(us[i]);
    const Eigen::Index len = z.rows() - 1;
    s.x.middleCols(col, len) = z.topRows(len).transpose();
    s.x_next.middleCols(col, len) = z.bottomRows(len).transpose();
    s.u.middleCols(col, len) = w.topRows(len).transpose();
    col += len;
  }
  return s;
}

double StateSpaceModel::spectral_radius() const {
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

int StateSpaceModel::state_index(const std::string& name) const {
  const auto it = std::find(state_names.begin(), state_names.end(), name);
  if (it == state_names.end()) throw std::out_of_range("model has no state " + name);
  return static_cast<int>(it - state_names.begin());
}

int StateSpaceModel::output_index(const std::string& name) const {
  const auto it = std::find(output_names.begin(), output_names.end(), name);
  if (it == output_names.end()) throw std::out_of_range("model has no output " + name);
  return static_cast<int>(it - output_names.begin());
}

void StateSpaceModel::validate() const {
  const auto n = a.rows();
  const auto m = b.cols();
  const auto p = c.rows();
  if (a.cols() != n || b.rows() != n || c.cols() != n || d.rows() != p || d.cols() != m ||
      b_w.size() != n || d_w.size() != p) {
    throw std::invalid_argument("state-space model: inconsistent matrix dimensions");
  }
  if (static_cast<Eigen::Index>(state_names.size()) != n ||
      static_cast<Eigen::Index>(input_names.size()) != m ||
      static_cast<Eigen::Index>(output_names.size()) != p) {
    throw std::invalid_argument("state-space model: name lists do not match dimensions");
  }
  if (state_scaling.center.size() != n || state_scaling.scale.size() != n ||
      input_scaling.center.size() != m || input_scaling.scale.size() != m ||
      output_scaling.center.size() != p || output_scaling.scale.size() != p) {
    throw std::invalid_argument("state-space model: scaling vectors do not match dimensions");
  }
}

StateSpaceModel StateSpaceModel::from_matrices(Eigen::MatrixXd a, Eigen::MatrixXd b,
                                               Eigen::MatrixXd c, Eigen::MatrixXd d, double dt) {
  StateSpaceModel m;
  const auto n = a.rows();
  const auto k = b.cols();
  const auto p = c.rows();
  m.a = std::move(a);
  m.b = std::move(b);
  m.c = std::move(c);
  m.d = std::move(d);
  m.b_w = Eigen::VectorXd::Zero(n);
  m.d_w = Eigen::VectorXd::Zero(p);
  m.dt = dt;
  for (Eigen::Index i = 0; i < n; ++i) m.state_names.push_back("x" + std::to_string(i));
  for (Eigen::Index i = 0; i < k; ++i) m.input_names.push_back("u" + std::to_string(i));
  for (Eigen::Index i = 0; i < p; ++i) m.output_names.push_back("y" + std::to_string(i));
  m.state_scaling = {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
  m.input_scaling = {Eigen::VectorXd::Zero(k), Eigen::VectorXd::Ones(k)};
  m.output_scaling = {Eigen::VectorXd::Zero(p), Eigen::VectorXd::Ones(p)};
  m.rank = static_cast<int>(n + k);
  m.validate();
  return m;
}

StateSpaceModel fit(const SnapshotSet& snap, const FitOptions& opts, FitReport* report) {
  const Eigen::Index n = snap.x.rows();
  const Eigen::Index m = snap.u.rows();
  const Eigen::Index q = n + m;
  const Eigen::Index len = snap.x.cols();
  if (len == 0 || n == 0) throw std::invalid_argument("fit: empty snapshot set");

  Eigen::MatrixXd omega(q, len);
  omega.topRows(n) = snap.x;
  omega.bottomRows(m) = snap.u;

  // Omega = W S Y^T. For long records Omega^T is first reduced by QR, so the
  // SVD only runs on the small triangular factor.
  Eigen::MatrixXd left;   // W, q x k
  Eigen::VectorXd sigma;  // k
  Eigen::MatrixXd xp_y;   // X' Y, n x k
  if (len >= q) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(omega.transpose());
    const Eigen::MatrixXd r = qr.matrixQR().topRows(q).triangularView<Eigen::Upper>();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    // Omega^T = Q R = Q U_r S V_r^T  =>  W = V_r, Y = Q U_r.
    left = svd.matrixV();
    sigma = svd.singularValues();
    const Eigen::MatrixXd qt_xp =
        (qr.householderQ().transpose() * snap.x_next.transpose()).topRows(q);
    xp_y = qt_xp.transpose() * svd.matrixU();
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(omega, Eigen::ComputeThinU | Eigen::ComputeThinV);
    left = svd.matrixU();
    sigma = svd.singularValues();
    xp_y = snap.x_next * svd.matrixV();
  }

  const Eigen::Index k = sigma.size();
  int numerical = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (sigma(i) > opts.rank_tolerance * sigma(0)) ++numerical;
  }
  int requested = opts.rank;
  if (requested <= 0) {
    const double total = sigma.squaredNorm();
    double acc = 0.0;
    requested = static_cast<int>(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      acc += sigma(i) * sigma(i);
      if (acc >= opts.energy_threshold * total) {
        requested = static_cast<int>(i + 1);
        break;
      }
    }
  }
  if (requested > static_cast<int>(q)) {
    throw std::invalid_argument("fit: requested rank exceeds n + m");
  }
  const int used = std::min(requested, numerical);
  if (used == 0) throw NumericError("fit: snapshot matrix is numerically zero");

  const Eigen::MatrixXd g = xp_y.leftCols(used) *
                            sigma.head(used).cwiseInverse().asDiagonal() *
                            left.leftCols(used).transpose();

  StateSpaceModel model;
  model.a = g.leftCols(n);
  model.b = g.rightCols(m);
  model.c = Eigen::MatrixXd::Identity(n, n);
  model.d = Eigen::MatrixXd::Zero(n, m);
  model.b_w = Eigen::VectorXd::Zero(n);
  model.d_w = Eigen::VectorXd::Zero(n);
  model.dt = snap.dt;
  model.state_names = snap.state_names;
  model.input_names = snap.input_names;
  model.output_names = snap.state_names;
  model.state_scaling = snap.state_scaling;
  model.input_scaling = snap.input_scaling;
  model.output_scaling = snap.state_scaling;
  model.rank = used;
  model.singular_values = sigma;
  if (!model.a.allFinite() || !model.b.allFinite()) throw NumericError("fit: non-finite model");
  if (report) {
    report->requested_rank = requested;
    report->used_rank = used;
    report->rank_reduced = used < requested;
    report->singular_values = sigma;
  }
  return model;
}

Eigen::MatrixXd predict_normalized(const StateSpaceModel& model, const Eigen::VectorXd& z0,
                                   const Eigen::MatrixXd& inputs) {
  if (z0.size() != model.states() || inputs.cols() != model.inputs()) {
    throw std::invalid_argument("predict: dimension mismatch");
  }
  Eigen::MatrixXd out(inputs.rows(), model.states());
  Eigen::VectorXd z = z0;
  for (Eigen::Index k = 0; k < inputs.rows(); ++k) {
    z = model.a * z + model.b * inputs.row(k).transpose();
    out.row(k) = z.transpose();
  }
  return out;
}

Eigen::MatrixXd predict(const StateSpaceModel& model, const Eigen::VectorXd& x0,
                        const Eigen::MatrixXd& inputs) {
  if (x0.size() != model.states() || inputs.cols() != model.inputs()) {
    throw std::invalid_argument("predict: dimension mismatch");
  }
  const Eigen::MatrixXd z = predict_normalized(model, model.state_scaling.normalize(x0),
                                               model.input_scaling.normalize_rows(inputs));
  return model.state_scaling.denormalize_rows(z);
}

double r_squared(const Eigen::VectorXd& actual, const Eigen::VectorXd& predicted) {
  const double mean = actual.mean();
  const double ss_tot = (actual.array() - mean).square().sum();
  const double ss_res = (actual - predicted).squaredNorm();
  if (!(ss_tot > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return 1.0 - ss_res / ss_tot;
}

double ScoreReport::mean_r2() const {
  double sum = 0.0;
  int count = 0;
  for (const auto& c : channels) {
    if (c.defined) {
      sum += c.r2;
      ++count;
    }
  }
  return count ? sum / count : std::numeric_limits<double>::quiet_NaN();
}

double ScoreReport::min_r2() const {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& c : channels) {
    if (c.defined) lo = std::min(lo, c.r2);
  }
  return lo;
}

ScoreReport score(const StateSpaceModel& model, const Trajectory& trajectory) {
  if (trajectory.rows() < 2) throw std::invalid_argument("score: trajectory needs >= 2 samples");
  const Eigen::MatrixXd x = model.state_scaling.normalize_rows(trajectory.select(model.state_names));
  const Eigen::MatrixXd u = model.input_scaling.normalize_rows(trajectory.select(model.input_names));
  const Eigen::Index len = x.rows() - 1;
  const Eigen::MatrixXd pred = predict_normalized(model, x.row(0).transpose(), u.topRows(len));
  const Eigen::MatrixXd actual = x.bottomRows(len);

  ScoreReport report;
  for (int j = 0; j < model.states(); ++j) {
    ChannelScore c;
    c.name = model.state_names[j];
    c.mse = (actual.col(j) - pred.col(j)).squaredNorm() / static_cast<double>(len);
    c.r2 = r_squared(actual.col(j), pred.col(j));
    c.defined = std::isfinite(c.r2);
    report.channels.push_back(c);
  }
  return report;
}

// ---------------------------------------------------------------------------

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j.at(i).size()) != cols) {
      throw ConfigError("model file: ragged matrix");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
  }
  return m;
}

json vector_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

json model_to_json(const StateSpaceModel& model) {
  return json{
      {"format", "lfctl-statespace"},
      {"version", 1},
      {"dt", model.dt},
      {"coordinates", "deviation from center, divided by scale"},
      {"state_names", model.state_names},
      {"input_names", model.input_names},
      {"output_names", model.output_names},
      {"state_center", vector_json(model.state_scaling.center)},
      {"state_scale", vector_json(model.state_scaling.scale)},
      {"input_center", vector_json(model.input_scaling.center)},
      {"input_scale", vector_json(model.input_scaling.scale)},
      {"output_center", vector_json(model.output_scaling.center)},
      {"output_scale", vector_json(model.output_scaling.scale)},
      {"rank", model.rank},
      {"singular_values", vector_json(model.singular_values)},
      {"spectral_radius", model.spectral_radius()},
      {"A", matrix_json(model.a)},
      {"B", matrix_json(model.b)},
      {"C", matrix_json(model.c)},
      {"D", matrix_json(model.d)},
      {"B_w", vector_json(model.b_w)},
      {"D_w", vector_json(model.d_w)},
  };
}

StateSpaceModel model_from_json(const json& j) {
  try {
    StateSpaceModel m;
    m.dt = j.at("dt").get<double>();
    m.state_names = j.at("state_names").get<std::vector<std::string>>();
    m.input_names = j.at("input_names").get<std::vector<std::string>>();
    m.output_names = j.at("output_names").get<std::vector<std::string>>();
    m.state_scaling = {vector_from(j.at("state_center")), vector_from(j.at("state_scale"))};
    m.input_scaling = {vector_from(j.at("input_center")), vector_from(j.at("input_scale"))};
    m.output_scaling = {vector_from(j.at("output_center")), vector_from(j.at("output_scale"))};
    m.rank = j.value("rank", 0);
    if (j.contains("singular_values")) m.singular_values = vector_from(j.at("singular_values"));
    m.a = matrix_from(j.at("A"));
    m.b = matrix_from(j.at("B"));
    m.c = matrix_from(j.at("C"));
    m.d = matrix_from(j.at("D"));
    m.b_w = vector_from(j.at("B_w"));
    m.d_w = vector_from(j.at("D_w"));
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model file: ") + e.what());
  }
}

void save_model(const std::string& path, const StateSpaceModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file " + path);
  out << model_to_json(model).dump(2) << '\n';
}

StateSpaceModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("model file " + path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace lfctl
