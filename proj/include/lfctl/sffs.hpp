#pragma once

// Sequential forward floating selection of supplementary model states,
// scored by cross-validated DMDc rollout R^2.

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfctl/dmdc.hpp"
#include "lfctl/trajectory.hpp"

namespace lfctl {

struct SelectionProblem {
  std::vector<std::string> mandatory;   // always in the model
  std::vector<std::string> candidates;  // supplementary pool
  int max_added = 0;                    // k_T
  std::vector<Trajectory> trajectories;
  std::vector<std::string> inputs;
  int folds = 3;  // trajectory i belongs to fold i % folds
  FitOptions fit;
  // Snapshot centring per channel; channels not listed use their mean.
  std::map<std::string, double> centers;
  bool parallel = true;

  void validate() const;  // throws ConfigError
};

struct ObjectiveValue {
  double j = -std::numeric_limits<double>::infinity();  // -inf when a fold fit fails
  double spread = 0.0;  // std. dev. of the per-fold values
  std::vector<double> per_fold;
};

// J = mean over folds of (r_train + r_test) / 2, r = mean per-state rollout
// R^2 averaged over the fold's trajectories.
ObjectiveValue selection_objective(const SelectionProblem& problem,
                                   const std::vector<std::string>& supplementary);

struct TraceEntry {
  int iteration = 0;
  bool added = true;
  std::string feature;
  double j = 0.0;
  double spread = 0.0;
  std::vector<std::string> set;  // supplementary set after the move
};

struct CandidateEvaluation {
  int iteration = 0;
  bool removal = false;
  std::string candidate;
  double j = 0.0;
  double spread = 0.0;
};

struct SelectionResult {
  std::vector<std::string> selected;  // mandatory followed by supplementary, in order chosen
  std::vector<std::string> supplementary;
  double j = 0.0;
  std::vector<TraceEntry> trace;
  std::vector<CandidateEvaluation> evaluations;

  nlohmann::json to_json() const;
  void write_csv(const std::string& path) const;  // iteration,action,candidate,J,std
};

SelectionResult select_features(const SelectionProblem& problem);

}  // namespace lfctl
