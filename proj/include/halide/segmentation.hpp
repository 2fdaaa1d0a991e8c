#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "halide/dataset.hpp"

namespace halide {

// Zero-mean Gaussian window model with a block-Toeplitz sparse precision:
// all m x m blocks on the same block diagonal are equal.
struct ToeplitzClusterModel {
  Eigen::MatrixXd theta;
  double logdet = 0.0;
  bool converged = true;

  // max abs difference between entries tied by the block-Toeplitz structure
  double toeplitz_violation(int block_size) const;
};

struct SegmentationConfig {
  int Q = 3;
  int omega = 3;
  double lambda_seg = 0.11;
  // switch penalty; rmt_ticc_fit rescales it by the mean window NLL
  // magnitude under the initial models, with 200 as the neutral point
  double beta = 200.0;
  double tau = 0.0;  // time-decay constant in seconds; <= 0 means median dt
  double admm_rho = 1.0;
  double admm_tol = 1e-5;
  int admm_max_iter = 1000;
  int max_ticc_iter = 50;
  std::uint64_t seed = 0;
};

// One cluster id per window of a trajectory.
using Assignment = std::vector<int>;

struct SubTrajectory {
  std::string owner;
  int start = 0;  // step range [start, end)
  int end = 0;
  int high_state = 0;  // q
  std::vector<Step> steps;
};

// S = (1/n) sum X X^T + 1e-6 I. Decision weights never enter here.
Eigen::MatrixXd empirical_cov(const std::vector<Window>& windows);
Eigen::MatrixXd empirical_cov(const std::vector<const Window*>& windows, Eigen::Index dim);

// ADMM for min -logdet(T) + tr(S T) + lambda*||T||_1(off-diag) subject to the
// block-Toeplitz constraint. Theta step is the logdet proximal map via
// eigendecomposition; Z step averages tied entries and soft-thresholds.
ToeplitzClusterModel toeplitz_glasso(const Eigen::MatrixXd& S, double lambda, int omega,
                                     double rho = 1.0, double tol = 1e-5, int max_iter = 1000);

// 0.5 x^T Theta x - 0.5 logdet(Theta) + (d/2) log(2 pi)
double window_nll(const Eigen::VectorXd& x, const ToeplitzClusterModel& model);

// 0 when staying; beta * exp(-dt/tau) * (1 + r_bar) on a switch.
double consistency_penalty(int prev_q, int q, double dt, double r_bar, double beta, double tau);

// Exact forward DP over Q states minimising sum_t [nll + consistency], ties
// toward the lower cluster id. r_bar[t] regulates the switch into window t.
Assignment dp_assign(const std::vector<Window>& windows,
                     const std::vector<ToeplitzClusterModel>& models,
                     const std::vector<double>& r_bar, double beta, double tau);

// Forward-filtered labels: q_t = argmin_q cost of the best prefix path ending
// in q at t. Equals dp_assign run on every prefix, reading the last label, so
// the result at t never depends on later windows.
Assignment dp_assign_filtered(const std::vector<Window>& windows,
                              const std::vector<ToeplitzClusterModel>& models,
                              const std::vector<double>& r_bar, double beta, double tau);

struct TiccResult {
  std::vector<ToeplitzClusterModel> models;
  std::vector<Assignment> assignments;  // aligned with dataset trajectories
  double beta_effective = 0.0;
  double tau_effective = 0.0;
  std::vector<double> objective_trace;  // after each (assign, fit) round
  int iterations = 0;
};

// Alternates dp_assign over trajectories and per-cluster toeplitz_glasso until
// assignments stop changing. r_bar holds one value per step per trajectory
// (pass all-ones on the first outer iteration).
TiccResult rmt_ticc_fit(const DatasetManifest& centered,
                        const std::vector<std::vector<double>>& r_bar,
                        const SegmentationConfig& cfg, int threads = 1);

std::vector<SubTrajectory> cut_subtrajectories(const Trajectory& traj,
                                               const Assignment& assignment);

namespace instrument {
// test hooks: incremented on entry of the corresponding operation
extern std::atomic<std::uint64_t> rmt_ticc_fit_calls;
extern std::atomic<std::uint64_t> dp_assign_calls;
extern std::atomic<std::uint64_t> toeplitz_glasso_calls;
}  // namespace instrument

}  // namespace halide
