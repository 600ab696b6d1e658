#include "lfctl/sffs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <set>
#include <thread>

#include "lfctl/plant.hpp"

namespace lfctl {

using nlohmann::json;

void SelectionProblem::validate() const {
  if (mandatory.empty() && candidates.empty()) throw ConfigError("selection: no features");
  std::set<std::string> seen(mandatory.begin(), mandatory.end());
  if (seen.size() != mandatory.size()) throw ConfigError("selection: duplicate mandatory feature");
  for (const auto& c : candidates) {
    if (!seen.insert(c).second) {
      throw ConfigError("selection: candidate '" + c + "' duplicates another feature");
    }
  }
  if (max_added < 0 || max_added > static_cast<int>(candidates.size())) {
    throw ConfigError("selection: max_added must be in [0, candidates]");
  }
  if (folds < 2) throw ConfigError("selection: at least 2 folds required");
  if (static_cast<int>(trajectories.size()) < folds) {
    throw ConfigError("selection: fewer trajectories than folds");
  }
  if (inputs.empty()) throw ConfigError("selection: no inputs");
}

namespace {

double mean_rollout_r2(const StateSpaceModel& model, const std::vector<const Trajectory*>& trajs) {
  double acc = 0.0;
  for (const Trajectory* t : trajs) {
    const double r = score(model, *t).mean_r2();
    if (!std::isfinite(r)) return -std::numeric_limits<double>::infinity();
    acc += r;
  }
  return acc / static_cast<double>(trajs.size());
}

}  // namespace

ObjectiveValue selection_objective(const SelectionProblem& problem,
                                   const std::vector<std::string>& supplementary) {
  std::vector<std::string> states = problem.mandatory;
  states.insert(states.end(), supplementary.begin(), supplementary.end());
  ObjectiveValue out;
  if (states.empty()) return out;

  SnapshotOptions opts;
  Eigen::VectorXd centre(static_cast<Eigen::Index>(states.size()));
  bool have_all = true;
  for (std::size_t i = 0; i < states.size(); ++i) {
    auto it = problem.centers.find(states[i]);
    if (it == problem.centers.end()) {
      have_all = false;
      break;
    }
    centre(static_cast<Eigen::Index>(i)) = it->second;
  }
  if (have_all) opts.state_center = centre;
  Eigen::VectorXd in_centre(static_cast<Eigen::Index>(problem.inputs.size()));
  have_all = true;
  for (std::size_t i = 0; i < problem.inputs.size(); ++i) {
    auto it = problem.centers.find(problem.inputs[i]);
    if (it == problem.centers.end()) {
      have_all = false;
      break;
    }
    in_centre(static_cast<Eigen::Index>(i)) = it->second;
  }
  if (have_all) opts.input_center = in_centre;

  for (int f = 0; f < problem.folds; ++f) {
    std::vector<Trajectory> train;
    std::vector<const Trajectory*> test;
    for (std::size_t i = 0; i < problem.trajectories.size(); ++i) {
      if (static_cast<int>(i % problem.folds) == f) {
        test.push_back(&problem.trajectories[i]);
      } else {
        train.push_back(problem.trajectories[i]);
      }
    }
    double value = -std::numeric_limits<double>::infinity();
    try {
      const SnapshotSet snap = assemble_snapshots(train, states, problem.inputs, opts);
      const StateSpaceModel model = fit(snap, problem.fit);
      std::vector<const Trajectory*> train_ptrs;
      for (const auto& t : train) train_ptrs.push_back(&t);
      const double r_tr = mean_rollout_r2(model, train_ptrs);
      const double r_te = mean_rollout_r2(model, test);
      value = 0.5 * r_tr + 0.5 * r_te;
      if (!std::isfinite(value)) value = -std::numeric_limits<double>::infinity();
    } catch (const NumericError&) {
    } catch (const std::invalid_argument&) {
    }
    out.per_fold.push_back(value);
  }
  const double n = static_cast<double>(out.per_fold.size());
  const double mean = std::accumulate(out.per_fold.begin(), out.per_fold.end(), 0.0) / n;
  if (!std::isfinite(mean)) {
    out.j = -std::numeric_limits<double>::infinity();
    out.spread = 0.0;
    return out;
  }
  double ss = 0.0;
  for (double v : out.per_fold) ss += (v - mean) * (v - mean);
  out.j = mean;
  out.spread = std::sqrt(ss / n);
  return out;
}

namespace {

std::vector<ObjectiveValue> evaluate_all(const SelectionProblem& problem,
                                         const std::vector<std::vector<std::string>>& sets) {
  std::vector<ObjectiveValue> out(sets.size());
  if (!problem.parallel || sets.size() < 2) {
    for (std::size_t i = 0; i < sets.size(); ++i) out[i] = selection_objective(problem, sets[i]);
    return out;
  }
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(sets.size(), std::thread::hardware_concurrency()));
  for (std::size_t start = 0; start < sets.size(); start += workers) {
    std::vector<std::future<ObjectiveValue>> batch;
    const std::size_t end = std::min(sets.size(), start + workers);
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(std::async(std::launch::async,
                                 [&problem, &sets, i] { return selection_objective(problem, sets[i]); }));
    }
    for (std::size_t i = start; i < end; ++i) out[i] = batch[i - start].get();
  }
  return out;
}

}  // namespace

SelectionResult select_features(const SelectionProblem& problem) {
  problem.validate();
  std::vector<std::string> pool = problem.candidates;
  std::sort(pool.begin(), pool.end());

  SelectionResult res;
  std::vector<std::string> current;
  // best_j[k]: best objective recorded for a supplementary set of size k.
  std::vector<double> best_j(problem.max_added + 1, -std::numeric_limits<double>::infinity());
  best_j[0] = selection_objective(problem, {}).j;
  double current_j = best_j[0];
  int iteration = 0;
  // Removals only happen on strict improvement of best_j, so this bounds
  // the loop far above what a terminating run needs.
  const int max_iterations = 4 * (problem.max_added + 1) * (static_cast<int>(pool.size()) + 1);

  while (static_cast<int>(current.size()) < problem.max_added && iteration < max_iterations) {
    ++iteration;
    std::vector<std::string> options;
    for (const auto& c : pool) {
      if (std::find(current.begin(), current.end(), c) == current.end()) options.push_back(c);
    }
    std::vector<std::vector<std::string>> sets;
    for (const auto& c : options) {
      auto s = current;
      s.push_back(c);
      sets.push_back(std::move(s));
    }
    const auto values = evaluate_all(problem, sets);
    std::size_t best = 0;
    for (std::size_t i = 0; i < options.size(); ++i) {
      res.evaluations.push_back({iteration, false, options[i], values[i].j, values[i].spread});
      if (values[i].j > values[best].j) best = i;
    }
    current.push_back(options[best]);
    current_j = values[best].j;
    const std::size_t k = current.size();
    best_j[k] = std::max(best_j[k], current_j);
    res.trace.push_back({iteration, true, options[best], current_j, values[best].spread, current});

    // Conditional exclusion: drop a feature (other than the one just added)
    // while that beats the best set of the smaller size.
    while (current.size() > 1 && iteration < max_iterations) {
      const std::string just_added = res.trace.back().added ? res.trace.back().feature : "";
      std::vector<std::string> removable;
      std::vector<std::vector<std::string>> reduced;
      for (const auto& c : current) {
        if (c == just_added) continue;
        removable.push_back(c);
        std::vector<std::string> s;
        for (const auto& d : current) {
          if (d != c) s.push_back(d);
        }
        reduced.push_back(std::move(s));
      }
      if (removable.empty()) break;
      ++iteration;
      const auto rv = evaluate_all(problem, reduced);
      std::size_t pick = 0;
      for (std::size_t i = 0; i < removable.size(); ++i) {
        res.evaluations.push_back({iteration, true, removable[i], rv[i].j, rv[i].spread});
        if (rv[i].j > rv[pick].j || (rv[i].j == rv[pick].j && removable[i] < removable[pick])) {
          pick = i;
        }
      }
      const std::size_t smaller = current.size() - 1;
      if (!(rv[pick].j > best_j[smaller])) break;
      current = reduced[pick];
      current_j = rv[pick].j;
      best_j[smaller] = current_j;
      res.trace.push_back({iteration, false, removable[pick], current_j, rv[pick].spread, current});
    }
  }

  res.supplementary = current;
  res.selected = problem.mandatory;
  res.selected.insert(res.selected.end(), current.begin(), current.end());
  res.j = current_j;
  return res;
}

json SelectionResult::to_json() const {
  json trace_j = json::array();
  for (const auto& e : trace) {
    trace_j.push_back({{"iteration", e.iteration},
                       {"action", e.added ? "add" : "remove"},
                       {"feature", e.feature},
                       {"J", e.j},
                       {"std", e.spread},
                       {"set", e.set}});
  }
  return {{"selected", selected}, {"supplementary", supplementary}, {"J", j}, {"trace", trace_j}};
}

void SelectionResult::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write selection report: " + path);
  write_csv_header(out, {"iteration", "action", "candidate", "J", "std"});
  for (const auto& e : evaluations) {
    out << e.iteration << ',' << (e.removal ? "remove" : "add") << ',' << e.candidate << ','
        << format_double(e.j) << ',' << format_double(e.spread) << '\n';
  }
}

}  // namespace lfctl
