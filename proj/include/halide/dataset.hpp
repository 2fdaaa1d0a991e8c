#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace halide {

// One demonstrated decision: state, action, elapsed time and the per-decision
// importance weight in (0, 1] (1 when no ranking signal is attached).
struct Step {
  double t = 0.0;
  Eigen::VectorXd x;
  int a = 0;
  double w = 1.0;
};

struct Trajectory {
  std::string id;
  std::string cohort;
  std::optional<double> pretest;
  std::optional<double> posttest;
  std::vector<Step> steps;

  int length() const { return static_cast<int>(steps.size()); }
};

struct DatasetManifest {
  int state_dim = 0;
  int num_actions = 0;
  std::vector<Trajectory> trajectories;

  int size() const { return static_cast<int>(trajectories.size()); }
  const Trajectory* find(const std::string& id) const;
};

// Stacked context window of omega consecutive states, left-padded at the
// start of a trajectory by replicating the first state.
struct Window {
  std::string owner;
  int t_index = 0;
  Eigen::VectorXd values;  // length state_dim * omega
  double dt = 0.0;         // 0 for the first window of a trajectory
};

// Checks every invariant (dims, action range, weight range, strictly
// increasing t, unique ids). Throws ValidationError naming the offender.
void validate_dataset(const DatasetManifest& d);

// JSON-lines: first line {"type":"meta",...}, one trajectory object per
// following line. Throws ValidationError with the 1-based line number.
DatasetManifest load_dataset(const std::string& path);
DatasetManifest parse_dataset(const std::string& content);

std::string format_dataset(const DatasetManifest& d);
void write_dataset(const DatasetManifest& d, const std::string& path);

// Subtracts the global per-dimension state mean in place; returns the mean so
// it can be applied to held-out data later.
Eigen::VectorXd center_states(DatasetManifest& d);

std::vector<Window> windowize(const Trajectory& traj, int omega);

}  // namespace halide
