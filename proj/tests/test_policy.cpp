#include <doctest.h>

#include <cmath>

#include "halide/errors.hpp"
#include "halide/policy.hpp"
#include "halide/rng.hpp"
#include "support/builders.hpp"

using namespace halide;
using builders::step;
using builders::vec;

namespace {

EnergyPolicy random_policy(int m, int A, int hidden, Rng& rng, double scale = 0.5) {
  EnergyPolicy pol = hidden > 0 ? EnergyPolicy(m, A, hidden) : EnergyPolicy(m, A);
  Eigen::VectorXd p(pol.num_params());
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = rng.normal(0.0, scale);
  pol.set_params(p);
  return pol;
}

std::vector<Step> random_steps(int T, int m, int A, Rng& rng, double w = 1.0) {
  std::vector<Step> steps;
  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd x(m);
    for (int i = 0; i < m; ++i) x[i] = rng.normal();
    steps.push_back(step(t + 1.0, x, static_cast<int>(rng.uniform_index(A)), w));
  }
  return steps;
}

SubTrajectory as_subtraj(std::vector<Step> steps, const std::string& owner = "s") {
  SubTrajectory sub;
  sub.owner = owner;
  sub.start = 0;
  sub.end = static_cast<int>(steps.size());
  sub.steps = std::move(steps);
  return sub;
}

}  // namespace

TEST_CASE("policy_log_prob and log_normalizer closed forms") {
  EnergyPolicy uniform(2, 3);
  CHECK(policy_log_prob(uniform, vec({0.3, -0.4}), 1) ==
        doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-12));
  CHECK(log_normalizer(uniform, vec({1.0, 2.0})) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  // f = (1, 0): log prob of action 0 is log sigma(1)
  EnergyPolicy two(1, 2);
  Eigen::VectorXd p = two.params();
  p.setZero();
  p[2] = 1.0;  // bias of action 0 (weights first, column-major, then biases)
  two.set_params(p);
  CHECK(policy_log_prob(two, vec({0.0}), 0) ==
        doctest::Approx(-0.3132616875182228).epsilon(1e-12));

  // f = (0, 0, ln 2): normalizer log 4
  EnergyPolicy three(1, 3);
  Eigen::VectorXd p3 = three.params();
  p3.setZero();
  p3[5] = std::log(2.0);
  three.set_params(p3);
  CHECK(log_normalizer(three, vec({0.0})) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and normalization") {
  Rng rng(51, "softmax");
  for (int rep = 0; rep < 30; ++rep) {
    const int m = 2 + static_cast<int>(rng.uniform_index(3));
    const int A = 2 + static_cast<int>(rng.uniform_index(3));
    const int hidden = rep % 2 == 0 ? 0 : 4;
    const EnergyPolicy pol = random_policy(m, A, hidden, rng);
    Eigen::VectorXd x(m);
    for (int i = 0; i < m; ++i) x[i] = rng.normal();

    double total = 0.0;
    for (int a = 0; a < A; ++a) total += std::exp(policy_log_prob(pol, x, a));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    // adding a constant to every bias leaves log-probs unchanged
    EnergyPolicy shifted = pol;
    Eigen::VectorXd p = shifted.params();
    const double c = rng.uniform(-2.0, 2.0);
    p.tail(A).array() += c;  // action biases sit at the tail in both archs
    shifted.set_params(p);
    CHECK(policy_log_prob(shifted, x, 0) ==
          doctest::Approx(policy_log_prob(pol, x, 0)).epsilon(1e-10));
    CHECK(log_normalizer(shifted, x) == doctest::Approx(log_normalizer(pol, x) + c).epsilon(1e-10));
  }
}

TEST_CASE("weighted_loss values and linearity in w") {
  EnergyPolicy uniform(2, 3);
  const auto steps = std::vector<Step>{step(1.0, vec({0.1, 0.2}), 1, 0.5)};
  CHECK(weighted_loss(uniform, steps, 1.0, 0.0) ==
        doctest::Approx(0.5 * std::log(3.0)).epsilon(1e-12));

  Rng rng(53, "loss-lin");
  const EnergyPolicy pol = random_policy(3, 3, 0, rng);
  auto s1 = random_steps(6, 3, 3, rng, 1.0);
  auto s_half = s1;
  for (auto& s : s_half) s.w = 0.5;
  CHECK(weighted_loss(pol, s_half, 1.0, 0.5) ==
        doctest::Approx(0.5 * weighted_loss(pol, s1, 1.0, 0.5)).epsilon(1e-12));

  // near-zero weight steps contribute proportionally
  auto s_tiny = s1;
  for (auto& s : s_tiny) s.w = 1e-12;
  CHECK(std::abs(weighted_loss(pol, s_tiny, 1.0, 0.5)) <
        1e-10 * std::abs(weighted_loss(pol, s1, 1.0, 0.5)) + 1e-10);

  // w == 1 equals the unweighted objective computed explicitly
  double unweighted = 0.0;
  for (const auto& s : s1) {
    unweighted += -policy_log_prob(pol, s.x, s.a) + 0.5 * log_normalizer(pol, s.x);
  }
  CHECK(weighted_loss(pol, s1, 1.0, 0.5) == doctest::Approx(unweighted).epsilon(1e-12));
}

TEST_CASE("loss_gradient matches central finite differences") {
  Rng rng(59, "grad-fd");
  int checked = 0;
  for (int rep = 0; rep < 30; ++rep) {
    const int m = 2 + static_cast<int>(rng.uniform_index(2));
    const int A = 2 + static_cast<int>(rng.uniform_index(2));
    const int hidden = rep % 3 == 2 ? 3 : 0;
    const double w = rep % 3 == 0 ? 1.0 : (rep % 3 == 1 ? 0.5 : 1e-9);
    const double lambda = rep % 2 == 0 ? 0.0 : 0.5;
    EnergyPolicy pol = random_policy(m, A, hidden, rng);
    const auto steps = random_steps(4, m, A, rng, w);
    const double u = rng.uniform(0.2, 1.0);

    const Eigen::VectorXd grad = loss_gradient(pol, steps, u, lambda);
    const Eigen::VectorXd p0 = pol.params();
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < p0.size(); ++i) {
      Eigen::VectorXd p = p0;
      p[i] = p0[i] + h;
      pol.set_params(p);
      const double up = weighted_loss(pol, steps, u, lambda);
      p[i] = p0[i] - h;
      pol.set_params(p);
      const double dn = weighted_loss(pol, steps, u, lambda);
      pol.set_params(p0);
      const double fd = (up - dn) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
      CHECK(std::abs(grad[i] - fd) / denom < 1e-4);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("gradient edge cases") {
  Rng rng(61, "grad-edge");
  const EnergyPolicy pol = random_policy(3, 3, 0, rng);

  // zero-weight step contributes nothing
  auto steps = random_steps(3, 3, 3, rng);
  const Eigen::VectorXd g_all = loss_gradient(pol, steps, 1.0, 0.5);
  auto with_dead = steps;
  Step dead = steps[0];
  dead.w = 0.0;
  with_dead.push_back(dead);
  CHECK((loss_gradient(pol, with_dead, 1.0, 0.5) - g_all).cwiseAbs().maxCoeff() == 0.0);

  // BC gradient vanishes at the (near-)deterministic optimum of one pair
  EnergyPolicy opt(2, 2);
  Eigen::VectorXd p = opt.params();
  p[4] = 40.0;  // bias strongly favouring action 0
  p[5] = -40.0;
  opt.set_params(p);
  const auto one = std::vector<Step>{step(1.0, vec({0.0, 0.0}), 0, 1.0)};
  CHECK(loss_gradient(opt, one, 1.0, 0.0).cwiseAbs().maxCoeff() < 1e-10);

  // duplicated sub-trajectory at w=0.5 equals single copy at w=1
  auto half = steps;
  for (auto& s : half) s.w = 0.5;
  std::vector<Step> doubled = half;
  doubled.insert(doubled.end(), half.begin(), half.end());
  const Eigen::VectorXd g_doubled = loss_gradient(pol, doubled, 1.0, 0.5);
  const Eigen::VectorXd g_single = loss_gradient(pol, steps, 1.0, 0.5);
  CHECK((g_doubled - g_single).cwiseAbs().maxCoeff() <
        1e-12 * std::max(1.0, g_single.cwiseAbs().maxCoeff()));
}

TEST_CASE("e_step responsibilities") {
  Rng rng(67, "estep");

  SUBCASE("single cluster gives all ones") {
    MixtureState mix;
    mix.policies.push_back(random_policy(2, 2, 0, rng));
    mix.priors = Eigen::VectorXd::Ones(1);
    const std::vector<SubTrajectory> subs{as_subtraj(random_steps(4, 2, 2, rng))};
    const Eigen::MatrixXd u = e_step(subs, mix);
    CHECK(u(0, 0) == 1.0);
  }

  SUBCASE("identical policies split evenly") {
    MixtureState mix;
    const EnergyPolicy pol = random_policy(2, 3, 0, rng);
    mix.policies = {pol, pol};
    mix.priors = Eigen::VectorXd::Constant(2, 0.5);
    const std::vector<SubTrajectory> subs{as_subtraj(random_steps(5, 2, 3, rng)),
                                          as_subtraj(random_steps(3, 2, 3, rng))};
    const Eigen::MatrixXd u = e_step(subs, mix);
    for (Eigen::Index i = 0; i < 2; ++i) {
      CHECK(u(i, 0) == doctest::Approx(0.5).epsilon(1e-12));
      CHECK(u.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("weights do not change responsibilities") {
    MixtureState mix;
    mix.policies = {random_policy(2, 3, 0, rng), random_policy(2, 3, 0, rng)};
    mix.priors = Eigen::VectorXd::Constant(2, 0.5);
    std::vector<SubTrajectory> subs{as_subtraj(random_steps(5, 2, 3, rng))};
    const Eigen::MatrixXd u1 = e_step(subs, mix);
    for (auto& s : subs[0].steps) s.w = 0.123;
    const Eigen::MatrixXd u2 = e_step(subs, mix);
    CHECK(u1 == u2);
  }

  SUBCASE("hand-set log-likelihoods via softmax") {
    // log-liks (-1, -3), priors (0.5, 0.5) -> (0.8808, 0.1192)
    Eigen::VectorXd logp(2);
    logp << std::log(0.5) + -1.0, std::log(0.5) + -3.0;
    const double lz = logsumexp(logp);
    CHECK(std::exp(logp[0] - lz) == doctest::Approx(0.8807970779778823).epsilon(1e-10));
    CHECK(std::exp(logp[1] - lz) == doctest::Approx(0.11920292202211755).epsilon(1e-10));
  }
}

TEST_CASE("m_step keeps untouched clusters fixed and updates priors") {
  Rng rng(71, "mstep");
  MixtureState mix;
  mix.policies = {random_policy(2, 2, 0, rng), random_policy(2, 2, 0, rng)};
  mix.priors = Eigen::VectorXd::Constant(2, 0.5);
  const std::vector<SubTrajectory> subs{as_subtraj(random_steps(6, 2, 2, rng)),
                                        as_subtraj(random_steps(4, 2, 2, rng))};
  Eigen::MatrixXd u(2, 2);
  u << 1.0, 0.0, 1.0, 0.0;
  const Eigen::VectorXd before = mix.policies[1].params();
  EMConfig cfg;
  cfg.O = 2;
  cfg.m_steps = 20;
  m_step(subs, u, mix, cfg);
  CHECK(mix.policies[1].params() == before);
  CHECK(mix.priors[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(mix.priors[1] > 0.0);
  CHECK(mix.priors.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("em_edm_fit recovers two separated ground-truth policies") {
  Rng rng(73, "em-recover");
  // two conflicting policies on partially shifted state distributions, as
  // segments from two behavioural regimes would produce
  Eigen::MatrixXd G0(2, 2), G1(2, 2);
  G0 << 3.0, 0.0, -3.0, 0.0;
  G1 << -3.0, 0.0, 3.0, 0.0;
  std::vector<SubTrajectory> subs;
  std::vector<int> truth;
  for (int i = 0; i < 40; ++i) {
    const Eigen::MatrixXd& G = i % 2 == 0 ? G0 : G1;
    const double shift = i % 2 == 0 ? 0.8 : -0.8;
    truth.push_back(i % 2);
    std::vector<Step> steps;
    for (int t = 0; t < 12; ++t) {
      Eigen::VectorXd x(2);
      x << rng.normal(), rng.normal() + shift;
      const Eigen::VectorXd scores = G * x;
      const double lz = logsumexp(scores);
      const double r = rng.uniform();
      const int a = r < std::exp(scores[0] - lz) ? 0 : 1;
      steps.push_back(step(t + 1.0, x, a));
    }
    subs.push_back(as_subtraj(std::move(steps), "s" + std::to_string(i)));
  }
  EMConfig cfg;
  cfg.O = 2;
  cfg.seed = 9;
  cfg.max_em_iter = 15;
  const MixtureState mix = em_edm_fit(subs, 2, 2, cfg);

  // same seed twice is bit-identical
  const MixtureState mix2 = em_edm_fit(subs, 2, 2, cfg);
  CHECK(mix.policies[0].params() == mix2.policies[0].params());
  CHECK(mix.responsibilities == mix2.responsibilities);

  int agree = 0;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (mix.hard_labels[i] == truth[i]) ++agree;
  }
  const double frac = static_cast<double>(agree) / subs.size();
  CHECK((frac >= 0.9 || frac <= 0.1));  // label permutation allowed

  // expected objective is non-increasing within tolerance
  for (std::size_t i = 1; i < mix.objective_trace.size(); ++i) {
    CHECK(mix.objective_trace[i] <= mix.objective_trace[i - 1] + 1e-3);
  }
  CHECK(mix.objective_trace.back() <= mix.objective_trace.front());

  CHECK_THROWS_AS(em_edm_fit(subs, 2, 2, [] { EMConfig c; c.O = 41; return c; }()), ValidationError);
}

TEST_CASE("mixture_predict blends policies by belief") {
  Rng rng(79, "mixpred");
  MixtureState mix;
  mix.policies = {random_policy(2, 3, 0, rng), random_policy(2, 3, 0, rng)};
  mix.priors = Eigen::VectorXd::Constant(2, 0.5);
  const Eigen::VectorXd x = vec({0.4, -1.2});

  Eigen::VectorXd onehot(2);
  onehot << 1.0, 0.0;
  CHECK(mixture_predict(mix, x, onehot).isApprox(policy_probs(mix.policies[0], x)));

  Eigen::VectorXd belief(2);
  belief << 0.3, 0.7;
  const Eigen::VectorXd blended = mixture_predict(mix, x, belief);
  const Eigen::VectorXd direct =
      0.3 * policy_probs(mix.policies[0], x) + 0.7 * policy_probs(mix.policies[1], x);
  CHECK(blended.isApprox(direct, 1e-12));
  CHECK(blended.sum() == doctest::Approx(1.0).epsilon(1e-9));

  // identical policies: belief irrelevant
  MixtureState same;
  same.policies = {mix.policies[0], mix.policies[0]};
  same.priors = mix.priors;
  CHECK(mixture_predict(same, x, onehot).isApprox(mixture_predict(same, x, belief), 1e-12));
}
