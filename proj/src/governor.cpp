#include "lfctl/governor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lfctl/plant.hpp"

namespace lfctl {

double OutputConstraint::bound_at(double t) const {
  if (schedule.empty()) throw std::logic_error("constraint " + name + " has an empty schedule");
  double b = schedule.front().bound;
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    if (t > schedule[i].t) b = schedule[i].bound;
  }
  return b;
}

void OutputConstraint::set_bound_from(double t, double bound) {
  if (!std::isfinite(bound)) throw std::invalid_argument("constraint bound must be finite");
  if (schedule.empty() || t <= schedule.front().t) {
    const double t0 = schedule.empty() ? t : schedule.front().t;
    schedule = {{t0, bound}};
    return;
  }
  std::vector<Breakpoint> kept;
  for (const auto& b : schedule) {
    if (b.t < t) kept.push_back(b);
  }
  kept.push_back({t, bound});
  schedule = std::move(kept);
}

void OutputConstraint::validate() const {
  if (name.empty() || output.empty()) throw ConfigError("constraint needs a name and an output");
  if (schedule.empty()) throw ConfigError("constraint " + name + ": empty schedule");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!std::isfinite(schedule[i].bound) || !std::isfinite(schedule[i].t)) {
      throw ConfigError("constraint " + name + ": non-finite schedule entry");
    }
    if (i > 0 && schedule[i].t <= schedule[i - 1].t) {
      throw ConfigError("constraint " + name + ": schedule times must increase");
    }
  }
}

std::vector<double> ConstraintSet::bounds_at(double t) const {
  std::vector<double> out;
  for (const auto& c : outputs) {
    if (c.enabled) out.push_back(c.bound_at(t));
  }
  return out;
}

const OutputConstraint* ConstraintSet::find(const std::string& name) const {
  for (const auto& c : outputs) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

OutputConstraint* ConstraintSet::find(const std::string& name) {
  for (auto& c : outputs) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

void ConstraintSet::validate() const {
  for (const auto& c : outputs) c.validate();
  if (!(rate_limit_mw_per_min > 0.0) || !std::isfinite(rate_limit_mw_per_min)) {
    throw ConfigError("rate limit must be finite and > 0");
  }
}

bool AdmissibleSet::contains(const Eigen::VectorXd& x, double v, double tol) const {
  if (rows() == 0) return true;
  const Eigen::VectorXd lhs = hx * x + hv * v;
  return ((lhs - h).array() <= tol).all();
}

AdmissibleSet build_admissible_set(const StateSpaceModel& model,
                                   const std::vector<OutputRow>& constraints, int horizon,
                                   double epsilon, double disturbance_bound) {
  if (horizon < 1) throw std::invalid_argument("admissible set: horizon must be >= 1");
  if (model.inputs() != 1) throw std::invalid_argument("admissible set: scalar input required");
  if (!(disturbance_bound >= 0.0) || !(epsilon >= 0.0)) {
    throw std::invalid_argument("admissible set: bounds must be >= 0");
  }
  if (!(model.spectral_radius() < 1.0)) {
    throw NumericError("admissible set: model is not asymptotically stable");
  }
  const Eigen::Index n = model.states();
  const Eigen::Index per = horizon + 2;
  const auto total = static_cast<Eigen::Index>(constraints.size()) * per;

  AdmissibleSet set;
  set.horizon = horizon;
  set.epsilon = epsilon;
  set.hx.resize(total, n);
  set.hv.resize(total);
  set.h.resize(total);
  set.tags.reserve(static_cast<std::size_t>(total));

  const Eigen::MatrixXd i_minus_a = Eigen::MatrixXd::Identity(n, n) - model.a;
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(i_minus_a.transpose());
  const Eigen::VectorXd b = model.b.col(0);

  Eigen::Index row = 0;
  for (const auto& oc : constraints) {
    if (oc.output < 0 || oc.output >= model.outputs()) {
      throw std::out_of_range("admissible set: output index out of range");
    }
    Eigen::RowVectorXd r = model.c.row(oc.output);  // c A^k
    double g = model.d(oc.output, 0);                 // c S_k B + d
    double tight = disturbance_bound * std::abs(model.d_w(oc.output));
    for (int k = 0; k <= horizon; ++k) {
      set.hx.row(row) = oc.sign * r;
      set.hv(row) = oc.sign * g;
      set.h(row) = oc.bound - tight;
      set.tags.push_back({oc.tag, k});
      ++row;
      if (k < horizon) {
        g += r.dot(b);
        tight += disturbance_bound * std::abs(r.dot(model.b_w));
        r = r * model.a;
      }
    }
    const Eigen::VectorXd w = lu.solve(model.c.row(oc.output).transpose());
    const double gain = w.dot(b) + model.d(oc.output, 0);
    set.hx.row(row).setZero();
    set.hv(row) = oc.sign * gain;
    set.h(row) = oc.bound - tight - epsilon;
    set.tags.push_back({oc.tag, -1});
    ++row;
  }

  // Some held input must satisfy every steady-state row.
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < set.rows(); ++i) {
    if (set.tags[i].step != -1) continue;
    const double a = set.hv(i);
    if (a > 0.0) {
      hi = std::min(hi, set.h(i) / a);
    } else if (a < 0.0) {
      lo = std::max(lo, set.h(i) / a);
    } else if (set.h(i) < 0.0) {
      throw InfeasibleSetError("admissible set: steady-state row unsatisfiable", set.tags[i]);
    }
    if (lo > hi) {
      throw InfeasibleSetError("admissible set: constraints infeasible at equilibrium",
                               set.tags[i]);
    }
  }
  return set;
}

const char* binding_name(Binding b) {
  switch (b) {
    case Binding::kNone: return "none";
    case Binding::kRate: return "rate";
    case Binding::kOutput: return "output";
    case Binding::kInfeasible: return "infeasible";
    case Binding::kBypass: return "bypass";
  }
  return "unknown";
}

constexpr double kFeasibilityTolerance = 1e-9;

KappaResult compute_kappa(const AdmissibleSet& set, const Eigen::VectorXd& x, double v_prev,
                          double r, double rate_bound) {
  KappaResult res;
  const double delta = r - v_prev;
  Eigen::VectorXd slack;
  if (set.rows() > 0) slack = set.h - set.hx * x - set.hv * v_prev;
  for (Eigen::Index i = 0; i < slack.size(); ++i) {
    // Round-off after a step that landed exactly on a row is not a violation.
    if (slack(i) < 0.0 && slack(i) >= -kFeasibilityTolerance * (1.0 + std::abs(set.h(i)))) {
      slack(i) = 0.0;
    }
    if (slack(i) < 0.0) {
      res.kappa = 0.0;
      res.binding = Binding::kInfeasible;
      res.row = i;
      return res;
    }
  }
  if (delta == 0.0) return res;
  if (std::abs(delta) > rate_bound) {
    res.kappa = rate_bound / std::abs(delta);
    res.binding = Binding::kRate;
  }
  for (Eigen::Index i = 0; i < slack.size(); ++i) {
    const double a = set.hv(i) * delta;
    if (!(a > 0.0)) continue;  // row cannot be violated moving this way
    const double k = slack(i) / a;
    if (k < res.kappa) {
      res.kappa = k;
      res.binding = Binding::kOutput;
      res.row = i;
    }
  }
  res.kappa = std::clamp(res.kappa, 0.0, 1.0);
  return res;
}

std::pair<double, double> admissible_band(const AdmissibleSet& set, const Eigen::VectorXd& x) {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  if (set.rows() == 0) return {lo, hi};
  const Eigen::VectorXd rhs = set.h - set.hx * x;
  for (Eigen::Index i = 0; i < rhs.size(); ++i) {
    const double a = set.hv(i);
    if (a > 0.0) {
      hi = std::min(hi, rhs(i) / a);
    } else if (a < 0.0) {
      lo = std::max(lo, rhs(i) / a);
    }
  }
  return {lo, hi};
}

void GovernorConfig::validate() const {
  if (horizon < 1) throw ConfigError("governor: horizon must be >= 1");
  if (!(epsilon >= 0.0)) throw ConfigError("governor: epsilon must be >= 0");
  if (!(disturbance_bound >= 0.0)) throw ConfigError("governor: disturbance bound must be >= 0");
}

Governor::Governor(StateSpaceModel model, ConstraintSet constraints, GovernorConfig cfg)
    : model_(std::move(model)), constraints_(std::move(constraints)), cfg_(cfg) {
  model_.validate();
  constraints_.validate();
  cfg_.validate();
  if (model_.inputs() != 1) throw ConfigError("governor: model must have a single input");
  for (const auto& c : constraints_.outputs) model_.output_index(c.output);
  reset(model_.input_scaling.center(0));
}

void Governor::reset(double v0_mw) {
  v_prev_ = v0_mw;
  cached_bounds_.reset();
}

void Governor::set_bound(const std::string& name, double bound, double t_from) {
  OutputConstraint* c = constraints_.find(name);
  if (!c) throw std::out_of_range("unknown constraint: " + name);
  c->set_bound_from(t_from, bound);
}

void Governor::refresh(double t) {
  std::vector<double> bounds = constraints_.bounds_at(t);
  if (cached_bounds_ && *cached_bounds_ == bounds) return;
  std::vector<OutputRow> rows;
  active_.clear();
  std::size_t bi = 0;
  for (std::size_t i = 0; i < constraints_.outputs.size(); ++i) {
    const auto& c = constraints_.outputs[i];
    if (!c.enabled) continue;
    const int j = model_.output_index(c.output);
    const double centre = model_.output_scaling.center(j);
    const double scale = model_.output_scaling.scale(j);
    const double z = (bounds[bi++] - centre) / scale;
    OutputRow r;
    r.output = j;
    r.tag = static_cast<int>(active_.size());
    if (c.sense == Sense::kMax) {
      r.sign = 1.0;
      r.bound = z;
    } else {
      r.sign = -1.0;
      r.bound = -z;
    }
    rows.push_back(r);
    active_.push_back(static_cast<int>(i));
  }
  set_ = build_admissible_set(model_, rows, cfg_.horizon, cfg_.epsilon, cfg_.disturbance_bound);
  cached_bounds_ = std::move(bounds);
  ++rebuilds_;
}

GovernorDecision Governor::tick(const Eigen::VectorXd& x, double r_mw, double t, double dt) {
  const auto start = std::chrono::steady_clock::now();
  if (x.size() != model_.states()) throw std::invalid_argument("governor: state size mismatch");
  if (!x.allFinite() || !std::isfinite(r_mw)) throw NumericError("governor: non-finite input");
  refresh(t);

  const double uc = model_.input_scaling.center(0);
  const double us = model_.input_scaling.scale(0);
  const Eigen::VectorXd z = model_.state_scaling.normalize(x);

  GovernorDecision d;
  d.t = t;
  d.r = r_mw;
  const auto band = admissible_band(set_, z);
  d.band_lo = band.first * us + uc;
  d.band_hi = band.second * us + uc;

  if (!cfg_.enabled) {
    d.v = r_mw;
    d.kappa = 1.0;
    d.binding = Binding::kBypass;
  } else {
    const double rate = constraints_.rate_limit_mw_per_min / 60.0 * dt / us;
    const KappaResult k = compute_kappa(set_, z, (v_prev_ - uc) / us, (r_mw - uc) / us, rate);
    d.kappa = k.kappa;
    d.binding = k.binding;
    d.alarm = k.binding == Binding::kInfeasible;
    if (k.row >= 0) {
      const RowTag tag = set_.tags[static_cast<std::size_t>(k.row)];
      d.binding_constraint = constraints_.outputs[active_[tag.constraint]].name;
      d.binding_step = tag.step;
    }
    d.v = v_prev_ + d.kappa * (r_mw - v_prev_);
  }
  v_prev_ = d.v;
  d.micros = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start)
                 .count();
  return d;
}

Eigen::VectorXd output_disturbance(const StateSpaceModel& model,
                                   const std::vector<double>& three_sigma) {
  if (static_cast<int>(three_sigma.size()) != model.outputs()) {
    throw std::invalid_argument("output_disturbance: size mismatch");
  }
  Eigen::VectorXd dw(model.outputs());
  for (int j = 0; j < model.outputs(); ++j) dw(j) = three_sigma[j] / model.output_scaling.scale(j);
  return dw;
}

}  // namespace lfctl
