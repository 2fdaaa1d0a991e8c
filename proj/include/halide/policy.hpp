#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "halide/segmentation.hpp"

namespace halide {

// Parametric score f(x, a); the policy is the softmax of the scores and the
// normalizer U(x) = sum_a exp f(x, a). Linear by default, optionally one
// tanh hidden layer shared across actions.
class EnergyPolicy {
 public:
  enum class Arch { Linear, Tanh };

  EnergyPolicy() = default;
  EnergyPolicy(int state_dim, int num_actions);                 // linear
  EnergyPolicy(int state_dim, int num_actions, int hidden);     // tanh

  Arch arch() const { return arch_; }
  int state_dim() const { return state_dim_; }
  int num_actions() const { return num_actions_; }
  int hidden() const { return hidden_; }

  Eigen::VectorXd scores(const Eigen::VectorXd& x) const;  // length A

  // Flat parameter vector; layout is stable and matches gradients.
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);
  Eigen::Index num_params() const;

  // Accumulates d(loss)/d(params) for scale * g_f at state x, where g_f is
  // the gradient of the loss w.r.t. the A scores.
  void accumulate_score_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g_f,
                                 Eigen::VectorXd& grad) const;

 private:
  Arch arch_ = Arch::Linear;
  int state_dim_ = 0;
  int num_actions_ = 0;
  int hidden_ = 0;
  Eigen::MatrixXd W_;   // linear: A x m; tanh: H x m
  Eigen::VectorXd b_;   // linear: A;     tanh: H
  Eigen::MatrixXd W2_;  // tanh: A x H
  Eigen::VectorXd b2_;  // tanh: A
};

double log_normalizer(const EnergyPolicy& pol, const Eigen::VectorXd& x);
double policy_log_prob(const EnergyPolicy& pol, const Eigen::VectorXd& x, int a);
Eigen::VectorXd policy_probs(const EnergyPolicy& pol, const Eigen::VectorXd& x);

// u * sum_t w_t [ -log pi(a_t|x_t) + lambda_edm * log U(x_t) ]
double weighted_loss(const EnergyPolicy& pol, const std::vector<Step>& steps, double u,
                     double lambda_edm);

// Exact gradient of weighted_loss in the flat parameter layout.
Eigen::VectorXd loss_gradient(const EnergyPolicy& pol, const std::vector<Step>& steps, double u,
                              double lambda_edm);

struct EMConfig {
  int O = 3;
  double lambda_edm = 0.5;
  double lr = 0.05;
  double momentum = 0.9;
  int m_steps = 100;
  int max_em_iter = 30;
  double em_tol = 1e-4;
  int hidden = 0;  // 0 selects the linear architecture
  std::uint64_t seed = 0;
};

struct MixtureState {
  std::vector<EnergyPolicy> policies;
  Eigen::VectorXd priors;           // O, on the simplex
  Eigen::MatrixXd responsibilities; // N_hat x O, row-stochastic
  std::vector<int> hard_labels;     // argmax per sub-trajectory
  std::vector<double> objective_trace;  // expected weighted objective per EM iteration
};

// Responsibilities from the unweighted per-step log pi - log U sums, in
// log-space; decision weights never enter here.
Eigen::MatrixXd e_step(const std::vector<SubTrajectory>& subtrajs, const MixtureState& mixture);

// Gradient M-step on the responsibility- and decision-weighted loss, then
// prior update with a 1e-8 floor.
void m_step(const std::vector<SubTrajectory>& subtrajs, const Eigen::MatrixXd& u,
            MixtureState& mixture, const EMConfig& cfg, int threads = 1);

MixtureState em_edm_fit(const std::vector<SubTrajectory>& subtrajs, int state_dim,
                        int num_actions, const EMConfig& cfg, int threads = 1);

// belief-weighted action distribution sum_o belief_o pi_o(.|x)
Eigen::VectorXd mixture_predict(const MixtureState& mixture, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& belief);

double logsumexp(const Eigen::VectorXd& v);

}  // namespace halide
