#pragma once

// Unscented Kalman filter for delayed-neutron precursor estimation from a
// power measurement. State: [n, C1..C6, alpha, omega] with reactivity
// modelled as rho = alpha + omega t.

#include <array>

#include <Eigen/Dense>

#include "lfctl/plant.hpp"

namespace lfctl {

inline constexpr int kObserverDim = 3 + kPrecursorGroups;
inline constexpr int kIdxN = 0;
inline constexpr int kIdxAlpha = 1 + kPrecursorGroups;
inline constexpr int kIdxOmega = 2 + kPrecursorGroups;

using ObserverVector = Eigen::Matrix<double, kObserverDim, 1>;
using ObserverMatrix = Eigen::Matrix<double, kObserverDim, kObserverDim>;

// One step of the augmented kinetics. Reactivity is held at alpha across the
// step, the 7x7 kinetics block is advanced by its exact exponential, and
// alpha advances by omega * dt. Throws NumericError on non-finite output.
ObserverVector pke_transition(const ObserverVector& x, double dt, const KineticsParams& k);

struct SigmaParams {
  double alpha = 1e-3;
  double beta = 2.0;
  double kappa = 0.0;
};

struct SigmaPoints {
  Eigen::MatrixXd points;  // dim x (2 dim + 1), column 0 is the mean
  Eigen::VectorXd wm;
  Eigen::VectorXd wc;
};

// Van der Merwe scaled sigma points. A failed Cholesky is retried once with
// 1e-12 I added; a second failure throws NumericError.
SigmaPoints sigma_points(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                         const SigmaParams& params = {});

struct UkfConfig {
  SigmaParams sigma;
  // Diagonal Q in state units; alpha and omega absorb unmodelled reactivity.
  std::array<double, kObserverDim> process_noise{1e-10, 1e-10, 1e-10, 1e-10, 1e-10,
                                                 1e-10, 1e-10, 1e-10, 1e-14};
  double measurement_sigma = 0.0;    // std. dev. of the n measurement
  double measurement_floor = 1e-10;  // minimum R (variance)
  double initial_variance = 1e-6;

  double measurement_variance() const;
  void validate() const;
};

struct ObserverState {
  ObserverVector mean = ObserverVector::Zero();
  ObserverMatrix cov = ObserverMatrix::Zero();
  double innovation = 0.0;
  long steps = 0;
};

// Mean at the kinetics equilibrium for power n0 with zero reactivity.
ObserverState observer_initial_state(double n0, const KineticsParams& k, const UkfConfig& cfg);

// Unscented predict through pke_transition, then a scalar update on n.
ObserverState ukf_step(const ObserverState& s, double measured_n, double dt,
                       const KineticsParams& k, const UkfConfig& cfg);

class Ukf {
 public:
  Ukf(KineticsParams kinetics, UkfConfig config);

  void initialize(double n0);
  void step(double measured_n, double dt);

  const ObserverState& state() const { return state_; }
  double n() const { return state_.mean(kIdxN); }
  double precursor(int group) const { return state_.mean(1 + group); }
  double reactivity() const { return state_.mean(kIdxAlpha); }
  const KineticsParams& kinetics() const { return kinetics_; }
  const UkfConfig& config() const { return config_; }

 private:
  KineticsParams kinetics_;
  UkfConfig config_;
  ObserverState state_;
};

}  // namespace lfctl
