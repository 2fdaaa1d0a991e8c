#pragma once

#include <string>
#include <vector>

#include "halide/dataset.hpp"
#include "halide/rng.hpp"

namespace builders {

inline Eigen::VectorXd vec(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (const double x : values) v[i++] = x;
  return v;
}

inline halide::Trajectory traj(const std::string& id, const std::string& cohort,
                               std::vector<halide::Step> steps) {
  halide::Trajectory t;
  t.id = id;
  t.cohort = cohort;
  t.steps = std::move(steps);
  return t;
}

inline halide::Step step(double t, Eigen::VectorXd x, int a, double w = 1.0) {
  halide::Step s;
  s.t = t;
  s.x = std::move(x);
  s.a = a;
  s.w = w;
  return s;
}

inline halide::DatasetManifest random_dataset(int n_traj, int T, int m, int A,
                                              std::uint64_t seed) {
  halide::Rng rng(seed, "test-dataset");
  halide::DatasetManifest d;
  d.state_dim = m;
  d.num_actions = A;
  for (int n = 0; n < n_traj; ++n) {
    halide::Trajectory t;
    t.id = "traj-" + std::to_string(n);
    t.cohort = "S2" + std::to_string(n % 3 + 1);
    double clock = 0.0;
    for (int s = 0; s < T; ++s) {
      clock += 1.0 + rng.uniform();
      Eigen::VectorXd x(m);
      for (int i = 0; i < m; ++i) x[i] = rng.normal();
      t.steps.push_back(step(clock, x, static_cast<int>(rng.uniform_index(A))));
    }
    d.trajectories.push_back(std::move(t));
  }
  return d;
}

}  // namespace builders
