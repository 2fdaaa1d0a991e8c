#include <doctest.h>

#include <set>

#include "halide/dataset.hpp"
#include "halide/rng.hpp"
#include "halide/synthetic.hpp"

using namespace halide;

TEST_CASE("generated datasets validate and are deterministic") {
  GeneratorSpec spec;
  spec.N = 12;
  spec.T_min = 20;
  spec.T_max = 30;
  spec.m = 3;
  spec.seed = 123;
  const auto a = generate(spec);
  const auto b = generate(spec);
  CHECK(format_dataset(a.data) == format_dataset(b.data));
  CHECK(a.truth.to_json_text() == b.truth.to_json_text());

  validate_dataset(a.data);  // throws on violation
  CHECK(a.data.size() == 12);
  for (std::size_t n = 0; n < a.data.trajectories.size(); ++n) {
    CHECK(a.data.trajectories[n].steps.size() == a.truth.regimes[n].size());
    CHECK(a.truth.policy_ids[n].size() == a.truth.regimes[n].size());
  }

  // cohorts cycle through the configured labels
  std::set<std::string> cohorts;
  for (const auto& t : a.data.trajectories) cohorts.insert(t.cohort);
  CHECK(cohorts.size() == spec.cohorts.size());
}

TEST_CASE("kappa = 1 draws every action from the ground-truth policy") {
  GeneratorSpec spec;
  spec.N = 4;
  spec.T_min = 30;
  spec.T_max = 30;
  spec.m = 2;
  spec.kappa_high = 1.0;
  spec.kappa_low = 1.0;
  spec.seed = 9;
  const auto synth = generate(spec);
  // statistical check: actions should match the argmax of the true policy
  // scores far more often than uniform choice would
  int match = 0, total = 0;
  for (std::size_t n = 0; n < synth.data.trajectories.size(); ++n) {
    for (std::size_t t = 0; t < synth.data.trajectories[n].steps.size(); ++t) {
      const auto& step = synth.data.trajectories[n].steps[t];
      const Eigen::VectorXd scores =
          synth.truth.policy_weights[static_cast<std::size_t>(
              synth.truth.policy_ids[n][t])] * step.x;
      Eigen::Index best;
      scores.maxCoeff(&best);
      match += step.a == static_cast<int>(best) ? 1 : 0;
      ++total;
    }
  }
  CHECK(static_cast<double>(match) / total > 0.6);
}

TEST_CASE("single regime single policy is a degenerate but valid spec") {
  GeneratorSpec spec;
  spec.Q_true = 1;
  spec.O_true = 1;
  spec.N = 3;
  spec.T_min = 10;
  spec.T_max = 12;
  spec.m = 2;
  spec.seed = 4;
  const auto synth = generate(spec);
  for (const auto& regimes : synth.truth.regimes) {
    for (const int r : regimes) CHECK(r == 0);
  }
}

TEST_CASE("quality signal correlates with kappa") {
  GeneratorSpec spec;
  spec.N = 40;
  spec.T_min = 10;
  spec.T_max = 14;
  spec.m = 2;
  spec.seed = 31;
  const auto synth = generate(spec);
  CHECK(rank_correlation(synth.truth.z, synth.truth.kappa) >= 0.8);
}

TEST_CASE("matched_accuracy is invariant to label permutation") {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2};
  CHECK(matched_accuracy(truth, truth) == 1.0);
  const std::vector<int> permuted{2, 2, 0, 0, 1, 1};
  CHECK(matched_accuracy(truth, permuted) == 1.0);
  const std::vector<int> off{0, 0, 1, 2, 2, 2};
  CHECK(matched_accuracy(truth, off) == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("ARI properties") {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  CHECK(adjusted_rand_index(a, a) == doctest::Approx(1.0));
  const std::vector<int> perm{1, 1, 2, 2, 0, 0};
  CHECK(adjusted_rand_index(a, perm) == doctest::Approx(1.0));

  // random labels at large n concentrate near zero
  Rng rng(55, "ari-null");
  std::vector<int> x, y;
  for (int i = 0; i < 1000; ++i) {
    x.push_back(static_cast<int>(rng.uniform_index(3)));
    y.push_back(static_cast<int>(rng.uniform_index(3)));
  }
  CHECK(std::abs(adjusted_rand_index(x, y)) < 0.05);
}

TEST_CASE("score_recovery wires matching and ARI together") {
  GeneratorSpec spec;
  spec.N = 3;
  spec.T_min = 8;
  spec.T_max = 10;
  spec.m = 2;
  spec.seed = 77;
  const auto synth = generate(spec);
  const auto report =
      score_recovery(synth.truth, synth.truth.regimes, synth.truth.policy_ids);
  CHECK(report.step_accuracy == 1.0);
  CHECK(report.policy_ari == doctest::Approx(1.0));
}

TEST_CASE("generator spec round-trips through JSON") {
  GeneratorSpec spec;
  spec.N = 7;
  spec.seed = 3;
  spec.cohorts = {"S21", "F23"};
  const auto parsed = GeneratorSpec::from_json_text(spec.to_json_text());
  CHECK(parsed.N == 7);
  CHECK(parsed.seed == 3);
  CHECK(parsed.cohorts == spec.cohorts);
  CHECK_THROWS(GeneratorSpec::from_json_text("{\"n\": -4}"));
}
