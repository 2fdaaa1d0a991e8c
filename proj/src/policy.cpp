#include "halide/policy.hpp"

#include <cmath>
#include <limits>

#include "halide/errors.hpp"
#include "halide/kmeans.hpp"
#include "halide/parallel.hpp"
#include "halide/rng.hpp"

namespace halide {

double logsumexp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

EnergyPolicy::EnergyPolicy(int state_dim, int num_actions)
    : arch_(Arch::Linear), state_dim_(state_dim), num_actions_(num_actions) {
  W_ = Eigen::MatrixXd::Zero(num_actions, state_dim);
  b_ = Eigen::VectorXd::Zero(num_actions);
}

EnergyPolicy::EnergyPolicy(int state_dim, int num_actions, int hidden)
    : arch_(Arch::Tanh), state_dim_(state_dim), num_actions_(num_actions), hidden_(hidden) {
  W_ = Eigen::MatrixXd::Zero(hidden, state_dim);
  b_ = Eigen::VectorXd::Zero(hidden);
  W2_ = Eigen::MatrixXd::Zero(num_actions, hidden);
  b2_ = Eigen::VectorXd::Zero(num_actions);
}

Eigen::VectorXd EnergyPolicy::scores(const Eigen::VectorXd& x) const {
  if (arch_ == Arch::Linear) return W_ * x + b_;
  return W2_ * (W_ * x + b_).array().tanh().matrix() + b2_;
}

Eigen::Index EnergyPolicy::num_params() const {
  if (arch_ == Arch::Linear) return W_.size() + b_.size();
  return W_.size() + b_.size() + W2_.size() + b2_.size();
}

Eigen::VectorXd EnergyPolicy::params() const {
  Eigen::VectorXd p(num_params());
  Eigen::Index at = 0;
  p.segment(at, W_.size()) = Eigen::Map<const Eigen::VectorXd>(W_.data(), W_.size());
  at += W_.size();
  p.segment(at, b_.size()) = b_;
  at += b_.size();
  if (arch_ == Arch::Tanh) {
    p.segment(at, W2_.size()) = Eigen::Map<const Eigen::VectorXd>(W2_.data(), W2_.size());
    at += W2_.size();
    p.segment(at, b2_.size()) = b2_;
  }
  return p;
}

void EnergyPolicy::set_params(const Eigen::VectorXd& p) {
  if (p.size() != num_params()) throw ValidationError("EnergyPolicy: parameter size mismatch");
  Eigen::Index at = 0;
  Eigen::Map<Eigen::VectorXd>(W_.data(), W_.size()) = p.segment(at, W_.size());
  at += W_.size();
  b_ = p.segment(at, b_.size());
  at += b_.size();
  if (arch_ == Arch::Tanh) {
    Eigen::Map<Eigen::VectorXd>(W2_.data(), W2_.size()) = p.segment(at, W2_.size());
    at += W2_.size();
    b2_ = p.segment(at, b2_.size());
  }
}

void EnergyPolicy::accumulate_score_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g_f,
                                             Eigen::VectorXd& grad) const {
  Eigen::Index at = 0;
  if (arch_ == Arch::Linear) {
    Eigen::Map<Eigen::MatrixXd> gW(grad.data(), num_actions_, state_dim_);
    gW.noalias() += g_f * x.transpose();
    at = W_.size();
    grad.segment(at, b_.size()) += g_f;
    return;
  }
  const Eigen::VectorXd z = W_ * x + b_;
  const Eigen::VectorXd h = z.array().tanh();
  const Eigen::VectorXd g_h = W2_.transpose() * g_f;
  const Eigen::VectorXd g_z = g_h.array() * (1.0 - h.array().square());
  Eigen::Map<Eigen::MatrixXd> gW1(grad.data(), hidden_, state_dim_);
  gW1.noalias() += g_z * x.transpose();
  at = W_.size();
  grad.segment(at, b_.size()) += g_z;
  at += b_.size();
  Eigen::Map<Eigen::MatrixXd> gW2(grad.data() + at, num_actions_, hidden_);
  gW2.noalias() += g_f * h.transpose();
  at += W2_.size();
  grad.segment(at, b2_.size()) += g_f;
}

double log_normalizer(const EnergyPolicy& pol, const Eigen::VectorXd& x) {
  return logsumexp(pol.scores(x));
}

double policy_log_prob(const EnergyPolicy& pol, const Eigen::VectorXd& x, int a) {
  const Eigen::VectorXd f = pol.scores(x);
  return f[a] - logsumexp(f);
}

Eigen::VectorXd policy_probs(const EnergyPolicy& pol, const Eigen::VectorXd& x) {
  const Eigen::VectorXd f = pol.scores(x);
  const double lz = logsumexp(f);
  return (f.array() - lz).exp();
}

double weighted_loss(const EnergyPolicy& pol, const std::vector<Step>& steps, double u,
                     double lambda_edm) {
  double loss = 0.0;
  for (const Step& s : steps) {
    const Eigen::VectorXd f = pol.scores(s.x);
    const double lz = logsumexp(f);
    // -log pi + lambda log U == (1 + lambda) logsumexp(f) - f(a)
    loss += s.w * ((1.0 + lambda_edm) * lz - f[s.a]);
  }
  return u * loss;
}

Eigen::VectorXd loss_gradient(const EnergyPolicy& pol, const std::vector<Step>& steps, double u,
                              double lambda_edm) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(pol.num_params());
  for (const Step& s : steps) {
    const Eigen::VectorXd f = pol.scores(s.x);
    const double lz = logsumexp(f);
    Eigen::VectorXd g_f = (1.0 + lambda_edm) * (f.array() - lz).exp().matrix() * (u * s.w);
    g_f[s.a] -= u * s.w;
    pol.accumulate_score_gradient(s.x, g_f, grad);
  }
  return grad;
}

namespace {

// Flattened steps of all sub-trajectories; lets the EM inner loops run as a
// handful of GEMMs instead of per-step products.
struct FlatSteps {
  Eigen::MatrixXd X;         // n_steps x m
  std::vector<int> actions;  // n_steps
  Eigen::VectorXd weights;   // n_steps, decision weights w_t
  std::vector<std::pair<Eigen::Index, Eigen::Index>> ranges;  // per subtraj [begin, end)
};

FlatSteps flatten(const std::vector<SubTrajectory>& subtrajs, int state_dim) {
  FlatSteps flat;
  Eigen::Index total = 0;
  for (const auto& sub : subtrajs) total += static_cast<Eigen::Index>(sub.steps.size());
  flat.X.resize(total, state_dim);
  flat.actions.resize(static_cast<std::size_t>(total));
  flat.weights.resize(total);
  flat.ranges.reserve(subtrajs.size());
  Eigen::Index at = 0;
  for (const auto& sub : subtrajs) {
    const Eigen::Index begin = at;
    for (const Step& s : sub.steps) {
      flat.X.row(at) = s.x.transpose();
      flat.actions[static_cast<std::size_t>(at)] = s.a;
      flat.weights[at] = s.w;
      ++at;
    }
    flat.ranges.push_back({begin, at});
  }
  return flat;
}

// Per-row scores F (n x A) under the policy, plus cached tanh activations for
// the hidden architecture.
struct BatchScores {
  Eigen::MatrixXd F;
  Eigen::MatrixXd H;  // tanh activations, empty for linear
};

BatchScores batch_scores(const EnergyPolicy& pol, const Eigen::MatrixXd& X) {
  BatchScores out;
  const Eigen::VectorXd p = pol.params();
  const int A = pol.num_actions();
  const int m = pol.state_dim();
  if (pol.arch() == EnergyPolicy::Arch::Linear) {
    const Eigen::Map<const Eigen::MatrixXd> W(p.data(), A, m);
    const Eigen::Map<const Eigen::VectorXd> b(p.data() + W.size(), A);
    out.F.noalias() = X * W.transpose();
    out.F.rowwise() += b.transpose();
  } else {
    const int H = pol.hidden();
    const Eigen::Map<const Eigen::MatrixXd> W1(p.data(), H, m);
    const Eigen::Map<const Eigen::VectorXd> b1(p.data() + W1.size(), H);
    const Eigen::Map<const Eigen::MatrixXd> W2(p.data() + W1.size() + H, A, H);
    const Eigen::Map<const Eigen::VectorXd> b2(p.data() + W1.size() + H + W2.size(), A);
    out.H.noalias() = X * W1.transpose();
    out.H.rowwise() += b1.transpose();
    out.H = out.H.array().tanh();
    out.F.noalias() = out.H * W2.transpose();
    out.F.rowwise() += b2.transpose();
  }
  return out;
}

Eigen::VectorXd row_logsumexp(const Eigen::MatrixXd& F) {
  const Eigen::VectorXd mx = F.rowwise().maxCoeff();
  return mx.array() + (F.colwise() - mx).array().exp().rowwise().sum().log();
}

// loss = sum_k scale_k [ (1+lambda) lz_k - F(k, a_k) ]; grad in flat layout.
double batch_loss_grad(const EnergyPolicy& pol, const FlatSteps& flat,
                       const Eigen::VectorXd& scale, double lambda_edm,
                       Eigen::VectorXd* grad_out) {
  const BatchScores bs = batch_scores(pol, flat.X);
  const Eigen::VectorXd lz = row_logsumexp(bs.F);
  double loss = 0.0;
  for (Eigen::Index k = 0; k < bs.F.rows(); ++k) {
    loss += scale[k] * ((1.0 + lambda_edm) * lz[k] -
                        bs.F(k, flat.actions[static_cast<std::size_t>(k)]));
  }
  if (grad_out == nullptr) return loss;

  Eigen::MatrixXd G = ((bs.F.colwise() - lz).array().exp().colwise() *
                       (scale.array() * (1.0 + lambda_edm)))
                          .matrix();
  for (Eigen::Index k = 0; k < G.rows(); ++k) {
    G(k, flat.actions[static_cast<std::size_t>(k)]) -= scale[k];
  }

  Eigen::VectorXd& grad = *grad_out;
  grad.setZero();
  const int A = pol.num_actions();
  const int m = pol.state_dim();
  if (pol.arch() == EnergyPolicy::Arch::Linear) {
    Eigen::Map<Eigen::MatrixXd> gW(grad.data(), A, m);
    gW.noalias() = G.transpose() * flat.X;
    Eigen::Map<Eigen::VectorXd>(grad.data() + gW.size(), A) = G.colwise().sum();
  } else {
    const int H = pol.hidden();
    const Eigen::VectorXd p = pol.params();
    const Eigen::Map<const Eigen::MatrixXd> W2(p.data() + H * m + H, A, H);
    Eigen::MatrixXd Gz = (G * W2).array() * (1.0 - bs.H.array().square());
    Eigen::Map<Eigen::MatrixXd> gW1(grad.data(), H, m);
    gW1.noalias() = Gz.transpose() * flat.X;
    Eigen::Map<Eigen::VectorXd>(grad.data() + H * m, H) = Gz.colwise().sum();
    Eigen::Map<Eigen::MatrixXd> gW2(grad.data() + H * m + H, A, H);
    gW2.noalias() = G.transpose() * bs.H;
    Eigen::Map<Eigen::VectorXd>(grad.data() + H * m + H + A * H, A) = G.colwise().sum();
  }
  return loss;
}

Eigen::MatrixXd e_step_flat(const FlatSteps& flat, const MixtureState& mixture) {
  const int O = static_cast<int>(mixture.policies.size());
  const Eigen::Index n = static_cast<Eigen::Index>(flat.ranges.size());
  Eigen::MatrixXd logp(n, O);
  for (int o = 0; o < O; ++o) {
    const BatchScores bs = batch_scores(mixture.policies[static_cast<std::size_t>(o)], flat.X);
    const Eigen::VectorXd lz = row_logsumexp(bs.F);
    for (Eigen::Index i = 0; i < n; ++i) {
      double acc = std::log(mixture.priors[o]);
      for (Eigen::Index k = flat.ranges[static_cast<std::size_t>(i)].first;
           k < flat.ranges[static_cast<std::size_t>(i)].second; ++k) {
        // log pi - log U = f(x,a) - 2 logsumexp f
        acc += bs.F(k, flat.actions[static_cast<std::size_t>(k)]) - 2.0 * lz[k];
      }
      logp(i, o) = acc;
    }
  }
  Eigen::MatrixXd u(n, O);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lz = logsumexp(logp.row(i).transpose());
    u.row(i) = (logp.row(i).array() - lz).exp();
  }
  return u;
}

// responsibility- and decision-weighted per-step scale for cluster o
Eigen::VectorXd cluster_scale(const FlatSteps& flat, const Eigen::MatrixXd& u, Eigen::Index o) {
  Eigen::VectorXd scale(flat.X.rows());
  for (std::size_t i = 0; i < flat.ranges.size(); ++i) {
    const double resp = u(static_cast<Eigen::Index>(i), o);
    for (Eigen::Index k = flat.ranges[i].first; k < flat.ranges[i].second; ++k) {
      scale[k] = resp * flat.weights[k];
    }
  }
  return scale;
}

void m_step_flat(const FlatSteps& flat, const Eigen::MatrixXd& u, MixtureState& mixture,
                 const EMConfig& cfg, int threads) {
  const int O = static_cast<int>(mixture.policies.size());
  parallel_for(static_cast<std::size_t>(O), threads, [&](std::size_t o) {
    EnergyPolicy& pol = mixture.policies[o];
    const Eigen::VectorXd scale = cluster_scale(flat, u, static_cast<Eigen::Index>(o));
    Eigen::VectorXd velocity = Eigen::VectorXd::Zero(pol.num_params());
    Eigen::VectorXd grad(pol.num_params());
    for (int step = 0; step < cfg.m_steps; ++step) {
      batch_loss_grad(pol, flat, scale, cfg.lambda_edm, &grad);
      if (!grad.allFinite()) {
        throw NumericError("m_step: non-finite gradient (step size too large?)");
      }
      velocity = cfg.momentum * velocity - cfg.lr * grad;
      pol.set_params(pol.params() + velocity);
    }
  });
  // prior update with floor against cluster death
  Eigen::VectorXd rho =
      u.colwise().sum().transpose() / static_cast<double>(flat.ranges.size());
  rho = rho.cwiseMax(1e-8);
  mixture.priors = rho / rho.sum();
}

double expected_objective_flat(const FlatSteps& flat, const MixtureState& mixture,
                               const Eigen::MatrixXd& u, double lambda_edm) {
  double total = 0.0;
  for (std::size_t o = 0; o < mixture.policies.size(); ++o) {
    const Eigen::VectorXd scale = cluster_scale(flat, u, static_cast<Eigen::Index>(o));
    total += batch_loss_grad(mixture.policies[o], flat, scale, lambda_edm, nullptr);
  }
  return total;
}

int infer_state_dim(const std::vector<SubTrajectory>& subtrajs) {
  for (const auto& sub : subtrajs) {
    if (!sub.steps.empty()) return static_cast<int>(sub.steps.front().x.size());
  }
  throw ValidationError("no steps in sub-trajectories");
}

}  // namespace

Eigen::MatrixXd e_step(const std::vector<SubTrajectory>& subtrajs, const MixtureState& mixture) {
  return e_step_flat(flatten(subtrajs, infer_state_dim(subtrajs)), mixture);
}

void m_step(const std::vector<SubTrajectory>& subtrajs, const Eigen::MatrixXd& u,
            MixtureState& mixture, const EMConfig& cfg, int threads) {
  m_step_flat(flatten(subtrajs, infer_state_dim(subtrajs)), u, mixture, cfg, threads);
}

MixtureState em_edm_fit(const std::vector<SubTrajectory>& subtrajs, int state_dim,
                        int num_actions, const EMConfig& cfg, int threads) {
  const std::size_t n = subtrajs.size();
  if (n < static_cast<std::size_t>(cfg.O)) {
    throw ValidationError("em_edm_fit: fewer sub-trajectories than clusters");
  }

  MixtureState mixture;
  mixture.policies.reserve(static_cast<std::size_t>(cfg.O));
  for (int o = 0; o < cfg.O; ++o) {
    if (cfg.hidden > 0) {
      EnergyPolicy pol(state_dim, num_actions, cfg.hidden);
      // tanh layers need symmetry breaking; linear policies start at zero
      Rng rng(cfg.seed, "policy-init", static_cast<std::uint64_t>(o));
      Eigen::VectorXd p(pol.num_params());
      const double s1 = 1.0 / std::sqrt(static_cast<double>(state_dim));
      for (Eigen::Index k = 0; k < p.size(); ++k) p[k] = rng.normal(0.0, 0.1 * s1);
      pol.set_params(p);
      mixture.policies.push_back(std::move(pol));
    } else {
      mixture.policies.push_back(EnergyPolicy(state_dim, num_actions));
    }
  }

  const FlatSteps flat = flatten(subtrajs, state_dim);

  // hard initial responsibilities from k-means++ over mean states
  Eigen::MatrixXd means(static_cast<Eigen::Index>(n), state_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [begin, end] = flat.ranges[i];
    means.row(static_cast<Eigen::Index>(i)) =
        flat.X.middleRows(begin, end - begin).colwise().mean();
  }
  Rng rng(cfg.seed, "em-init");
  const std::vector<int> init = kmeans_assign(means, cfg.O, rng);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), cfg.O);
  for (std::size_t i = 0; i < n; ++i) u(static_cast<Eigen::Index>(i), init[i]) = 1.0;

  mixture.priors = Eigen::VectorXd::Constant(cfg.O, 1.0 / cfg.O);
  m_step_flat(flat, u, mixture, cfg, threads);
  double obj = expected_objective_flat(flat, mixture, u, cfg.lambda_edm);
  mixture.objective_trace.push_back(obj);

  for (int iter = 0; iter < cfg.max_em_iter; ++iter) {
    u = e_step_flat(flat, mixture);
    m_step_flat(flat, u, mixture, cfg, threads);
    const double next = expected_objective_flat(flat, mixture, u, cfg.lambda_edm);
    mixture.objective_trace.push_back(next);
    const bool converged = std::abs(next - obj) < cfg.em_tol;
    obj = next;
    if (converged) break;
  }

  mixture.responsibilities = u;
  mixture.hard_labels.resize(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    for (int o = 1; o < cfg.O; ++o) {
      if (u(static_cast<Eigen::Index>(i), o) > u(static_cast<Eigen::Index>(i), best)) best = o;
    }
    mixture.hard_labels[i] = best;
  }
  return mixture;
}

Eigen::VectorXd mixture_predict(const MixtureState& mixture, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& belief) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(mixture.policies.front().num_actions());
  for (std::size_t o = 0; o < mixture.policies.size(); ++o) {
    out += belief[static_cast<Eigen::Index>(o)] * policy_probs(mixture.policies[o], x);
  }
  return out;
}

}  // namespace halide
