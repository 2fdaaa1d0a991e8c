#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "halide/dataset.hpp"

namespace halide {

// Ground-truth generator for the benchmark: regimes follow a self-loop-heavy
// Markov chain, states follow a per-regime AR(1) whose stationary precision is
// the regime's banded precision, actions come from per-cluster softmax
// policies corrupted per-demonstrator.
struct GeneratorSpec {
  int Q_true = 3;
  int O_true = 3;
  int m = 6;
  int A = 3;
  int N = 60;
  int T_min = 100;
  int T_max = 140;
  double self_loop = 0.95;
  double policy_separation = 2.0;
  double regime_mean_scale = 1.0;
  double kappa_high = 0.95;
  double kappa_low = 0.4;
  double frac_high = 0.5;
  double noise_sigma = 0.25;  // on the logit-quality signal
  std::vector<std::string> cohorts = {"S21", "S22", "F24", "S25"};
  // "identity" maps regime r to policy r mod O_true; "random" draws a policy
  // per regime run
  std::string regime_policy_map = "identity";
  std::uint64_t seed = 0;

  static GeneratorSpec from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct GroundTruth {
  std::vector<std::vector<int>> regimes;      // per trajectory, per step
  std::vector<std::vector<int>> policy_ids;   // per trajectory, per step
  std::vector<double> kappa;                  // per trajectory
  std::vector<double> z;                      // quality signal per trajectory
  std::vector<Eigen::MatrixXd> regime_precisions;  // Q_true of m x m
  std::vector<Eigen::VectorXd> regime_means;       // Q_true of m
  std::vector<Eigen::MatrixXd> policy_weights;     // O_true of A x m

  std::string to_json_text() const;
  static GroundTruth from_json_text(const std::string& text);
};

struct SyntheticDataset {
  DatasetManifest data;
  GroundTruth truth;
};

SyntheticDataset generate(const GeneratorSpec& spec);

struct RecoveryReport {
  double step_accuracy = 0.0;  // after optimal cluster-label matching
  double policy_ari = 0.0;     // adjusted Rand index on per-step policy labels
};

// Optimal matching solved on the confusion matrix (permutation search over
// the padded square matrix).
double matched_accuracy(const std::vector<int>& truth, const std::vector<int>& predicted);
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

RecoveryReport score_recovery(const GroundTruth& truth,
                              const std::vector<std::vector<int>>& assignments,
                              const std::vector<std::vector<int>>& step_policy_labels);

// Spearman rank correlation (midranks on ties).
double rank_correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace halide
