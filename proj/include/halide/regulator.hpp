#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <vector>

namespace halide {

// High-level MDP over (state-cluster q, policy-cluster o): reward table plus
// empirical transition statistics, with a min-max normalized copy feeding the
// segmentation consistency term.
struct HighLevelModel {
  Eigen::MatrixXd reward;             // Q x O, raw MaxEnt-IRL estimate
  Eigen::MatrixXd normalized_reward;  // Q x O, min-max scaled to [0,1]
  std::vector<Eigen::MatrixXd> transitions;  // per q: O x Q row-stochastic P(q'|q,o)
  double gamma = 0.95;
};

// Ordered (q, o) labels of one trajectory's segments.
using HighLevelSequence = std::vector<std::pair<int, int>>;

struct HighLevelData {
  int Q = 0;
  int O = 0;
  std::vector<HighLevelSequence> sequences;
};

// Pairs up each trajectory's per-segment q (from segmentation) with its
// EM hard label o; segment order is preserved so consecutive pairs define
// high-level transitions.
HighLevelData build_high_level(const std::vector<std::vector<int>>& segment_q,
                               const std::vector<std::vector<int>>& segment_o, int Q, int O);

struct IrlConfig {
  double gamma = 0.95;
  int steps = 200;
  double lr = 0.1;
  double vi_tol = 1e-8;
  double grad_tol = 1e-6;
};

// Tabular MaxEnt IRL with one-hot (q,o) features: soft value iteration,
// discounted expected visitations from the empirical start distribution, and
// gradient steps on empirical-minus-expected visitation.
HighLevelModel maxent_irl_fit(const HighLevelData& data, const IrlConfig& cfg);

// Soft-optimal action distribution per state under a reward table; exposed so
// tests can check reward-shift invariance.
Eigen::MatrixXd soft_policy(const Eigen::MatrixXd& reward,
                            const std::vector<Eigen::MatrixXd>& transitions, double gamma,
                            double vi_tol);

// MaxEnt gradient (empirical minus expected visitation) at a given reward.
Eigen::MatrixXd irl_gradient(const HighLevelData& data, const Eigen::MatrixXd& reward,
                             const std::vector<Eigen::MatrixXd>& transitions, double gamma,
                             double vi_tol);

// r_bar_t = normalized_reward[q_t, o(segment containing t)].
std::vector<std::vector<double>> distribute_reward(
    const HighLevelModel& model, const std::vector<std::vector<int>>& assignments,
    const std::vector<std::vector<int>>& segment_o);

namespace instrument {
extern std::atomic<std::uint64_t> maxent_irl_calls;
extern std::atomic<std::uint64_t> build_high_level_calls;
}  // namespace instrument

}  // namespace halide
