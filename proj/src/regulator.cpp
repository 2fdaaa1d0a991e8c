#include "halide/regulator.hpp"

#include <cmath>

#include "halide/errors.hpp"
#include "halide/policy.hpp"

namespace halide {

namespace instrument {
std::atomic<std::uint64_t> maxent_irl_calls{0};
std::atomic<std::uint64_t> build_high_level_calls{0};
}  // namespace instrument

HighLevelData build_high_level(const std::vector<std::vector<int>>& segment_q,
                               const std::vector<std::vector<int>>& segment_o, int Q, int O) {
  instrument::build_high_level_calls.fetch_add(1, std::memory_order_relaxed);
  if (segment_q.size() != segment_o.size()) {
    throw ValidationError("build_high_level: per-trajectory label shapes differ");
  }
  HighLevelData data;
  data.Q = Q;
  data.O = O;
  data.sequences.reserve(segment_q.size());
  for (std::size_t n = 0; n < segment_q.size(); ++n) {
    if (segment_q[n].size() != segment_o[n].size()) {
      throw ValidationError("build_high_level: segment label length mismatch");
    }
    HighLevelSequence seq;
    seq.reserve(segment_q[n].size());
    for (std::size_t i = 0; i < segment_q[n].size(); ++i) {
      const int q = segment_q[n][i];
      const int o = segment_o[n][i];
      if (q < 0 || q >= Q || o < 0 || o >= O) {
        throw ValidationError("build_high_level: label out of range");
      }
      seq.push_back({q, o});
    }
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

namespace {

struct Counts {
  Eigen::MatrixXd visits;                    // Q x O
  std::vector<Eigen::MatrixXd> transitions;  // per q: O x Q
  Eigen::VectorXd start;                     // Q
};

Counts tally(const HighLevelData& data) {
  Counts c;
  c.visits = Eigen::MatrixXd::Zero(data.Q, data.O);
  c.start = Eigen::VectorXd::Zero(data.Q);
  c.transitions.assign(static_cast<std::size_t>(data.Q),
                       Eigen::MatrixXd::Zero(data.O, data.Q));
  for (const auto& seq : data.sequences) {
    if (seq.empty()) continue;
    c.start[seq.front().first] += 1.0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto [q, o] = seq[i];
      c.visits(q, o) += 1.0;
      if (i + 1 < seq.size()) {
        c.transitions[static_cast<std::size_t>(q)](o, seq[i + 1].first) += 1.0;
      }
    }
  }
  return c;
}

std::vector<Eigen::MatrixXd> normalize_transitions(const Counts& c, int Q, int O) {
  std::vector<Eigen::MatrixXd> P(static_cast<std::size_t>(Q), Eigen::MatrixXd::Zero(O, Q));
  for (int q = 0; q < Q; ++q) {
    for (int o = 0; o < O; ++o) {
      const double total = c.transitions[static_cast<std::size_t>(q)].row(o).sum();
      if (total > 0.0) {
        P[static_cast<std::size_t>(q)].row(o) =
            c.transitions[static_cast<std::size_t>(q)].row(o) / total;
      } else {
        // unobserved (q, o): self-loop keeps value iteration well-defined
        P[static_cast<std::size_t>(q)](o, q) = 1.0;
      }
    }
  }
  return P;
}

}  // namespace

Eigen::MatrixXd soft_policy(const Eigen::MatrixXd& reward,
                            const std::vector<Eigen::MatrixXd>& transitions, double gamma,
                            double vi_tol) {
  const int Q = static_cast<int>(reward.rows());
  const int O = static_cast<int>(reward.cols());
  Eigen::VectorXd V = Eigen::VectorXd::Zero(Q);
  Eigen::MatrixXd Qsoft(Q, O);
  for (int it = 0; it < 100000; ++it) {
    for (int q = 0; q < Q; ++q) {
      Qsoft.row(q) = reward.row(q) +
                     gamma * (transitions[static_cast<std::size_t>(q)] * V).transpose();
    }
    Eigen::VectorXd Vnew(Q);
    for (int q = 0; q < Q; ++q) Vnew[q] = logsumexp(Qsoft.row(q).transpose());
    const double diff = (Vnew - V).cwiseAbs().maxCoeff();
    V = Vnew;
    if (diff < vi_tol) break;
  }
  Eigen::MatrixXd pi(Q, O);
  for (int q = 0; q < Q; ++q) {
    pi.row(q) = (Qsoft.row(q).array() - V[q]).exp();
    pi.row(q) /= pi.row(q).sum();
  }
  return pi;
}

namespace {

// Discounted expected (q, o) visitation under pi from the start distribution,
// normalized to sum to 1 (so it is comparable to empirical frequencies).
Eigen::MatrixXd expected_visitation(const Eigen::MatrixXd& pi,
                                    const std::vector<Eigen::MatrixXd>& transitions,
                                    const Eigen::VectorXd& start, double gamma) {
  const int Q = static_cast<int>(pi.rows());
  Eigen::VectorXd d = start;
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(Q, pi.cols());
  double weight = 1.0;  // gamma^t
  for (int t = 0; t < 100000; ++t) {
    mu += weight * (d.asDiagonal() * pi);
    if (gamma <= 0.0) break;
    Eigen::VectorXd d_next = Eigen::VectorXd::Zero(Q);
    for (int q = 0; q < Q; ++q) {
      d_next += transitions[static_cast<std::size_t>(q)].transpose() *
                (d[q] * pi.row(q).transpose());
    }
    d = d_next;
    weight *= gamma;
    if (weight < 1e-12) break;
  }
  const double total = mu.sum();
  if (total > 0.0) mu /= total;
  return mu;
}

}  // namespace

Eigen::MatrixXd irl_gradient(const HighLevelData& data, const Eigen::MatrixXd& reward,
                             const std::vector<Eigen::MatrixXd>& transitions, double gamma,
                             double vi_tol) {
  const Counts c = tally(data);
  const double total = c.visits.sum();
  if (total <= 0.0) throw ValidationError("irl_gradient: no observed (q,o) pairs");
  const Eigen::MatrixXd empirical = c.visits / total;
  const Eigen::VectorXd start = c.start / c.start.sum();
  const Eigen::MatrixXd pi = soft_policy(reward, transitions, gamma, vi_tol);
  return empirical - expected_visitation(pi, transitions, start, gamma);
}

HighLevelModel maxent_irl_fit(const HighLevelData& data, const IrlConfig& cfg) {
  instrument::maxent_irl_calls.fetch_add(1, std::memory_order_relaxed);
  if (data.Q < 1 || data.O < 1) throw ValidationError("maxent_irl_fit: empty model");
  const Counts c = tally(data);
  if (c.visits.sum() <= 0.0) throw ValidationError("maxent_irl_fit: no observed (q,o) pairs");

  HighLevelModel model;
  model.gamma = cfg.gamma;
  model.transitions = normalize_transitions(c, data.Q, data.O);
  model.reward = Eigen::MatrixXd::Zero(data.Q, data.O);

  const Eigen::MatrixXd empirical = c.visits / c.visits.sum();
  const Eigen::VectorXd start = c.start / c.start.sum();
  for (int step = 0; step < cfg.steps; ++step) {
    const Eigen::MatrixXd pi = soft_policy(model.reward, model.transitions, cfg.gamma, cfg.vi_tol);
    const Eigen::MatrixXd grad =
        empirical - expected_visitation(pi, model.transitions, start, cfg.gamma);
    model.reward += cfg.lr * grad;
    if (grad.cwiseAbs().maxCoeff() < cfg.grad_tol) break;
  }

  const double lo = model.reward.minCoeff();
  const double hi = model.reward.maxCoeff();
  if (hi - lo < 1e-9) {
    model.normalized_reward = Eigen::MatrixXd::Constant(data.Q, data.O, 0.5);
  } else {
    model.normalized_reward = (model.reward.array() - lo) / (hi - lo);
  }
  return model;
}

std::vector<std::vector<double>> distribute_reward(
    const HighLevelModel& model, const std::vector<std::vector<int>>& assignments,
    const std::vector<std::vector<int>>& segment_o) {
  if (assignments.size() != segment_o.size()) {
    throw ValidationError("distribute_reward: trajectory count mismatch");
  }
  std::vector<std::vector<double>> out(assignments.size());
  for (std::size_t n = 0; n < assignments.size(); ++n) {
    const auto& assign = assignments[n];
    out[n].resize(assign.size(), 0.0);
    std::size_t seg = 0;
    for (std::size_t t = 0; t < assign.size(); ++t) {
      if (t > 0 && assign[t] != assign[t - 1]) ++seg;
      if (seg >= segment_o[n].size()) {
        throw ValidationError("distribute_reward: missing segment label");
      }
      out[n][t] = model.normalized_reward(assign[t], segment_o[n][seg]);
    }
    if (!assign.empty() && seg + 1 != segment_o[n].size()) {
      throw ValidationError("distribute_reward: segment label count mismatch");
    }
  }
  return out;
}

}  // namespace halide
