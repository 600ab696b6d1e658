#include "lfctl/ukf.hpp"

#include <cmath>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

namespace lfctl {

namespace {

using KineticsBlock = Eigen::Matrix<double, 1 + kPrecursorGroups, 1 + kPrecursorGroups>;

KineticsBlock kinetics_block(const KineticsParams& k, double rho) {
  KineticsBlock m = KineticsBlock::Zero();
  const double lam = k.generation_time;
  m(0, 0) = (rho - k.beta_total()) / lam;
  for (int i = 0; i < kPrecursorGroups; ++i) {
    m(0, i + 1) = k.lambda[i];
    m(i + 1, 0) = k.beta[i] / lam;
    m(i + 1, i + 1) = -k.lambda[i];
  }
  return m;
}

}  // namespace

ObserverVector pke_transition(const ObserverVector& x, double dt, const KineticsParams& k) {
  if (!(dt > 0.0)) throw std::invalid_argument("pke_transition: dt must be > 0");
  const double alpha = x(kIdxAlpha);
  const double omega = x(kIdxOmega);
  const KineticsBlock prop = (kinetics_block(k, alpha) * dt).exp();
  ObserverVector out;
  out.head<1 + kPrecursorGroups>() = prop * x.head<1 + kPrecursorGroups>();
  out(kIdxAlpha) = alpha + omega * dt;
  out(kIdxOmega) = omega;
  if (!out.allFinite()) throw NumericError("pke_transition: non-finite result");
  return out;
}

SigmaPoints sigma_points(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                         const SigmaParams& p) {
  const Eigen::Index n = mean.size();
  if (cov.rows() != n || cov.cols() != n) throw std::invalid_argument("sigma_points: bad shape");
  const double nd = static_cast<double>(n);
  const double lambda = p.alpha * p.alpha * (nd + p.kappa) - nd;
  const double c = nd + lambda;

  Eigen::LLT<Eigen::MatrixXd> llt(c * cov);
  if (llt.info() != Eigen::Success) {
    llt.compute(c * (cov + 1e-12 * Eigen::MatrixXd::Identity(n, n)));
    if (llt.info() != Eigen::Success) {
      throw NumericError("sigma_points: covariance is not positive definite");
    }
  }
  const Eigen::MatrixXd root = llt.matrixL();

  SigmaPoints sp;
  sp.points.resize(n, 2 * n + 1);
  sp.points.col(0) = mean;
  for (Eigen::Index i = 0; i < n; ++i) {
    sp.points.col(1 + i) = mean + root.col(i);
    sp.points.col(1 + n + i) = mean - root.col(i);
  }
  sp.wm = Eigen::VectorXd::Constant(2 * n + 1, 0.5 / c);
  sp.wc = sp.wm;
  sp.wm(0) = lambda / c;
  sp.wc(0) = lambda / c + (1.0 - p.alpha * p.alpha + p.beta);
  return sp;
}

namespace {

// Weighted mean and covariance about the central point, which keeps the
// large negative centre weight from cancelling catastrophically.
void unscented_moments(const Eigen::MatrixXd& pts, const SigmaPoints& sp, Eigen::VectorXd& mean,
                       Eigen::MatrixXd& cov) {
  const Eigen::VectorXd centre = pts.col(0);
  Eigen::VectorXd shift = Eigen::VectorXd::Zero(pts.rows());
  for (Eigen::Index i = 1; i < pts.cols(); ++i) shift += sp.wm(i) * (pts.col(i) - centre);
  mean = centre + shift;
  cov = Eigen::MatrixXd::Zero(pts.rows(), pts.rows());
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    const Eigen::VectorXd d = pts.col(i) - mean;
    cov += sp.wc(i) * d * d.transpose();
  }
}

}  // namespace

double UkfConfig::measurement_variance() const {
  return std::max(measurement_sigma * measurement_sigma, measurement_floor);
}

void UkfConfig::validate() const {
  if (!(sigma.alpha > 0.0) || !(sigma.beta >= 0.0)) {
    throw ConfigError("ukf: sigma-point alpha must be > 0 and beta >= 0");
  }
  for (double q : process_noise) {
    if (!(q >= 0.0) || !std::isfinite(q)) throw ConfigError("ukf: process noise must be >= 0");
  }
  if (!(measurement_sigma >= 0.0) || !(measurement_floor > 0.0)) {
    throw ConfigError("ukf: measurement sigma must be >= 0 and floor > 0");
  }
  if (!(initial_variance > 0.0)) throw ConfigError("ukf: initial variance must be > 0");
}

ObserverState observer_initial_state(double n0, const KineticsParams& k, const UkfConfig& cfg) {
  ObserverState s;
  s.mean(kIdxN) = n0;
  const auto c = k.equilibrium_precursors(n0);
  for (int i = 0; i < kPrecursorGroups; ++i) s.mean(1 + i) = c[i];
  s.cov = ObserverMatrix::Identity() * cfg.initial_variance;
  return s;
}

ObserverState ukf_step(const ObserverState& s, double measured_n, double dt,
                       const KineticsParams& k, const UkfConfig& cfg) {
  if (!std::isfinite(measured_n)) throw NumericError("ukf_step: measurement is not finite");

  // Predict.
  const SigmaPoints sp = sigma_points(s.mean, s.cov, cfg.sigma);
  Eigen::MatrixXd prop(kObserverDim, sp.points.cols());
  for (Eigen::Index i = 0; i < sp.points.cols(); ++i) {
    prop.col(i) = pke_transition(sp.points.col(i), dt, k);
  }
  Eigen::VectorXd x_pred;
  Eigen::MatrixXd p_pred;
  unscented_moments(prop, sp, x_pred, p_pred);
  for (int i = 0; i < kObserverDim; ++i) p_pred(i, i) += cfg.process_noise[i];
  p_pred = 0.5 * (p_pred + p_pred.transpose()).eval();

  // Update on the scalar measurement h(x) = n through fresh sigma points.
  const SigmaPoints su = sigma_points(x_pred, p_pred, cfg.sigma);
  const Eigen::RowVectorXd z = su.points.row(kIdxN);
  double z_mean = z(0);
  for (Eigen::Index i = 1; i < z.size(); ++i) z_mean += su.wm(i) * (z(i) - z(0));
  double s_zz = cfg.measurement_variance();
  Eigen::VectorXd p_xz = Eigen::VectorXd::Zero(kObserverDim);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double dz = z(i) - z_mean;
    s_zz += su.wc(i) * dz * dz;
    p_xz += su.wc(i) * (su.points.col(i) - x_pred) * dz;
  }
  const double innovation = measured_n - z_mean;
  if (!std::isfinite(innovation) || !(s_zz > 0.0)) {
    throw NumericError("ukf_step: non-finite innovation");
  }
  const Eigen::VectorXd gain = p_xz / s_zz;

  ObserverState out;
  out.mean = x_pred + gain * innovation;
  out.mean(kIdxN) = std::max(out.mean(kIdxN), 0.0);
  const Eigen::MatrixXd p_new = p_pred - gain * s_zz * gain.transpose();
  out.cov = 0.5 * (p_new + p_new.transpose());
  out.innovation = innovation;
  out.steps = s.steps + 1;
  if (!out.mean.allFinite() || !out.cov.allFinite()) {
    throw NumericError("ukf_step: non-finite state after update");
  }
  return out;
}

Ukf::Ukf(KineticsParams kinetics, UkfConfig config)
    : kinetics_(std::move(kinetics)), config_(config) {
  kinetics_.validate();
  config_.validate();
  initialize(1.0);
}

void Ukf::initialize(double n0) { state_ = observer_initial_state(n0, kinetics_, config_); }

void Ukf::step(double measured_n, double dt) {
  state_ = ukf_step(state_, measured_n, dt, kinetics_, config_);
}

}  // namespace lfctl
