#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "halide/errors.hpp"
#include "halide/evaluation.hpp"
#include "halide/rng.hpp"
#include "support/stats_reference.hpp"

using namespace halide;

namespace {

PredictionRecord rec(int truth, std::initializer_list<double> dist) {
  PredictionRecord r;
  r.trajectory_id = "t";
  r.true_action = truth;
  r.distribution.resize(static_cast<Eigen::Index>(dist.size()));
  Eigen::Index i = 0;
  for (const double d : dist) r.distribution[i++] = d;
  return r;
}

// brute-force references, independent of the library path
double brute_auc(const std::vector<double>& scores, const std::vector<bool>& pos) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (pos[j]) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

std::vector<PredictionRecord> random_records(int n, int A, Rng& rng) {
  std::vector<PredictionRecord> records;
  for (int i = 0; i < n; ++i) {
    PredictionRecord r;
    r.trajectory_id = "t";
    r.step_index = i;
    r.true_action = static_cast<int>(rng.uniform_index(A));
    Eigen::VectorXd d(A);
    for (int a = 0; a < A; ++a) d[a] = rng.uniform(0.05, 1.0);
    // quantize so score ties actually occur
    for (int a = 0; a < A; ++a) d[a] = std::round(d[a] * 8.0) / 8.0;
    r.distribution = d / d.sum();
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace

TEST_CASE("perfect predictions score 1 everywhere") {
  std::vector<PredictionRecord> records;
  for (int i = 0; i < 9; ++i) records.push_back(rec(i % 3, {0.0, 0.0, 0.0}));
  for (auto& r : records) r.distribution[r.true_action] = 1.0;
  const MetricReport m = compute_metrics(records);
  CHECK(m.acc == 1.0);
  CHECK(m.rec == 1.0);
  CHECK(m.prec == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.auc == 1.0);
  CHECK(m.apr == 1.0);
  CHECK(m.jaccard == 1.0);
}

TEST_CASE("binary AUC matches the pairwise oracle value 0.75") {
  std::vector<PredictionRecord> records{
      rec(0, {0.9, 0.1}), rec(0, {0.6, 0.4}), rec(1, {0.65, 0.35}), rec(1, {0.2, 0.8})};
  const MetricReport m = compute_metrics(records);
  // class-1 pair counting: (0.35,0.8) vs (0.1,0.4): 3 of 4 pairs won
  std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  std::vector<bool> p{false, false, true, true};
  CHECK(brute_auc(s, p) == doctest::Approx(0.75));
  CHECK(m.auc == doctest::Approx(0.75));
}

TEST_CASE("weighted F1 on the hand-computed confusion matrix") {
  // confusion [[2,0,0],[1,1,0],[0,0,2]] (rows true, cols predicted)
  std::vector<PredictionRecord> records{
      rec(0, {1.0, 0.0, 0.0}), rec(0, {1.0, 0.0, 0.0}),
      rec(1, {1.0, 0.0, 0.0}), rec(1, {0.0, 1.0, 0.0}),
      rec(2, {0.0, 0.0, 1.0}), rec(2, {0.0, 0.0, 1.0})};
  const MetricReport m = compute_metrics(records);
  CHECK(m.f1 == doctest::Approx((2.0 * 0.8 + 2.0 * (2.0 / 3.0) + 2.0 * 1.0) / 6.0).epsilon(1e-12));
  CHECK(m.acc == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("accuracy equals support-weighted recall on random inputs") {
  Rng rng(83, "acc-rec");
  for (int rep = 0; rep < 50; ++rep) {
    const int A = 2 + static_cast<int>(rng.uniform_index(3));
    const auto records = random_records(10 + static_cast<int>(rng.uniform_index(40)), A, rng);
    const MetricReport m = compute_metrics(records);
    CHECK(m.acc == doctest::Approx(m.rec).epsilon(1e-12));
  }
}

TEST_CASE("AUC and APR match brute-force references on small random sets") {
  Rng rng(89, "auc-brute");
  for (int rep = 0; rep < 50; ++rep) {
    const int A = 2 + static_cast<int>(rng.uniform_index(2));
    const auto records = random_records(6 + static_cast<int>(rng.uniform_index(44)), A, rng);
    const MetricReport m = compute_metrics(records);
    if (!m.auc_defined) continue;

    const double n = static_cast<double>(records.size());
    double auc_ref = 0.0, apr_ref = 0.0, f1_ref = 0.0, jac_ref = 0.0;
    for (int c = 0; c < A; ++c) {
      std::vector<double> scores;
      std::vector<bool> pos;
      double support = 0.0;
      for (const auto& r : records) {
        scores.push_back(r.distribution[c]);
        pos.push_back(r.true_action == c);
        support += r.true_action == c ? 1.0 : 0.0;
      }
      if (support == 0.0) continue;
      auc_ref += support / n * brute_auc(scores, pos);

      // direct average precision: enumerate distinct thresholds, recount the
      // confusion at each, sum recall increments times precision
      std::vector<double> thresholds = scores;
      std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
      thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
      double ap = 0.0, prev_tp = 0.0;
      for (const double th : thresholds) {
        double tp_at = 0.0, pp_at = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
          if (scores[i] >= th) {
            pp_at += 1.0;
            if (pos[i]) tp_at += 1.0;
          }
        }
        ap += (tp_at - prev_tp) * (tp_at / pp_at);
        prev_tp = tp_at;
      }
      apr_ref += support / n * (ap / support);

      // confusion arithmetic for F1/Jaccard
      double tpc = 0.0, fpc = 0.0;
      for (const auto& r : records) {
        int hard = 0;
        for (Eigen::Index a = 1; a < r.distribution.size(); ++a) {
          if (r.distribution[a] > r.distribution[hard]) hard = static_cast<int>(a);
        }
        if (hard == c) {
          if (r.true_action == c) tpc += 1.0;
          else fpc += 1.0;
        }
      }
      const double fnc = support - tpc;
      const double precision = tpc + fpc > 0 ? tpc / (tpc + fpc) : 0.0;
      const double recall = tpc / support;
      const double f1c = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
      f1_ref += support / n * f1c;
      jac_ref += support / n * (tpc + fpc + fnc > 0 ? tpc / (tpc + fpc + fnc) : 0.0);
    }
    CHECK(m.auc == doctest::Approx(auc_ref).epsilon(1e-9));
    CHECK(m.apr == doctest::Approx(apr_ref).epsilon(1e-9));
    CHECK(m.f1 == doctest::Approx(f1_ref).epsilon(1e-9));
    CHECK(m.jaccard == doctest::Approx(jac_ref).epsilon(1e-9));

    // per-class Jaccard = F1/(2-F1) implies the weighted ordering
    CHECK(m.jaccard <= m.f1 + 1e-12);
  }
}

TEST_CASE("metrics are invariant to record order") {
  Rng rng(97, "perm");
  auto records = random_records(30, 3, rng);
  const MetricReport m1 = compute_metrics(records);
  std::reverse(records.begin(), records.end());
  const MetricReport m2 = compute_metrics(records);
  CHECK(m1.acc == m2.acc);
  CHECK(m1.f1 == doctest::Approx(m2.f1).epsilon(1e-12));
  CHECK(m1.auc == doctest::Approx(m2.auc).epsilon(1e-12));
  CHECK(m1.apr == doctest::Approx(m2.apr).epsilon(1e-12));
}

TEST_CASE("single-class input flags AUC/APR undefined") {
  std::vector<PredictionRecord> records{rec(0, {0.8, 0.2}), rec(0, {0.3, 0.7})};
  const MetricReport m = compute_metrics(records);
  CHECK(!m.auc_defined);
  CHECK(std::isnan(m.auc));
  CHECK_THROWS_AS(compute_metrics({}), ValidationError);
}

TEST_CASE("temporal folds follow the season-year order") {
  DatasetManifest d;
  d.state_dim = 1;
  d.num_actions = 2;
  auto add = [&](const std::string& id, const std::string& cohort) {
    Trajectory t;
    t.id = id;
    t.cohort = cohort;
    Step s;
    s.t = 1.0;
    s.x = Eigen::VectorXd::Zero(1);
    s.a = 0;
    t.steps.push_back(s);
    d.trajectories.push_back(std::move(t));
  };
  add("a", "S25");
  add("b", "S21");
  add("c", "F24");
  add("d", "S22");
  add("e", "S24");
  add("f", "S21");  // duplicate cohort merges

  const auto folds = temporal_folds(d);
  REQUIRE(folds.size() == 4);
  CHECK(folds[0].test_cohort == "S22");
  CHECK(folds[1].test_cohort == "S24");
  CHECK(folds[2].test_cohort == "F24");
  CHECK(folds[3].test_cohort == "S25");
  CHECK(folds[3].train_cohorts == std::vector<std::string>{"S21", "S22", "S24", "F24"});

  DatasetManifest single;
  single.state_dim = 1;
  single.num_actions = 2;
  Trajectory t;
  t.id = "x";
  t.cohort = "S21";
  Step s;
  s.t = 1.0;
  s.x = Eigen::VectorXd::Zero(1);
  t.steps.push_back(s);
  single.trajectories.push_back(t);
  CHECK_THROWS_AS(temporal_folds(single), ValidationError);
}

TEST_CASE("friedman_conover matches the scalar reference on a canonical table") {
  Eigen::MatrixXd values(4, 6);
  values << 0.71, 0.68, 0.74, 0.70, 0.69, 0.73,
            0.65, 0.60, 0.66, 0.63, 0.61, 0.64,
            0.78, 0.75, 0.80, 0.77, 0.76, 0.79,
            0.55, 0.52, 0.57, 0.54, 0.53, 0.56;
  const FriedmanReport got = friedman_conover(values);

  std::vector<std::vector<double>> ref_values(4, std::vector<double>(6));
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 6; ++j) ref_values[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = values(i, j);
  }
  const auto ref = stats_ref::friedman_conover(ref_values, 0.05);

  CHECK(got.statistic == doctest::Approx(ref.statistic).epsilon(1e-6));
  CHECK(got.p_value == doctest::Approx(ref.p_value).epsilon(1e-6));
  for (int i = 0; i < 4; ++i) {
    CHECK(got.mean_ranks[static_cast<std::size_t>(i)] ==
          doctest::Approx(ref.mean_ranks[static_cast<std::size_t>(i)]).epsilon(1e-9));
  }
  for (const auto& pd : got.pairwise) {
    CHECK(pd.p_value ==
          doctest::Approx(ref.pairwise_p[static_cast<std::size_t>(pd.method_a)]
                                        [static_cast<std::size_t>(pd.method_b)]).epsilon(1e-6));
    CHECK(pd.significant == ref.rejected[static_cast<std::size_t>(pd.method_a)]
                                        [static_cast<std::size_t>(pd.method_b)]);
  }
  // method 2 is best in every fold
  CHECK(got.mean_ranks[2] == doctest::Approx(1.0));
}

TEST_CASE("friedman_conover degenerate all-equal table") {
  const Eigen::MatrixXd values = Eigen::MatrixXd::Constant(3, 4, 0.5);
  const FriedmanReport got = friedman_conover(values);
  CHECK(got.p_value == 1.0);
  CHECK(!got.significant);
  CHECK(got.pairwise.empty());
  for (const double r : got.mean_ranks) CHECK(r == doctest::Approx(2.0));
  for (const auto& g : got.groups) CHECK(g == "a");
}

TEST_CASE("friedman_conover against reference on random tables") {
  Rng rng(101, "friedman-rand");
  for (int rep = 0; rep < 20; ++rep) {
    const int k = 3 + static_cast<int>(rng.uniform_index(4));
    const int n = 3 + static_cast<int>(rng.uniform_index(6));
    Eigen::MatrixXd values(k, n);
    std::vector<std::vector<double>> ref_values(static_cast<std::size_t>(k),
                                                std::vector<double>(static_cast<std::size_t>(n)));
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < n; ++j) {
        // quantized so rank ties occur
        const double v = std::round(rng.uniform() * 10.0) / 10.0;
        values(i, j) = v;
        ref_values[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
      }
    }
    const FriedmanReport got = friedman_conover(values);
    const auto ref = stats_ref::friedman_conover(ref_values, 0.05);
    CHECK(got.statistic == doctest::Approx(ref.statistic).epsilon(1e-6));
    CHECK(got.p_value == doctest::Approx(ref.p_value).epsilon(1e-6));
    for (const auto& pd : got.pairwise) {
      CHECK(pd.significant == ref.rejected[static_cast<std::size_t>(pd.method_a)]
                                          [static_cast<std::size_t>(pd.method_b)]);
    }
  }
}

TEST_CASE("summaries aggregate mean and population std") {
  MetricReport a, b;
  a.f1 = 0.6;
  b.f1 = 0.8;
  a.auc_defined = b.auc_defined = true;
  const MethodSummary s = summarize_method("m", {a, b});
  CHECK(s.mean.f1 == doctest::Approx(0.7));
  CHECK(s.stddev.f1 == doctest::Approx(0.1));
  const MethodSummary one = summarize_method("m", {a});
  CHECK(one.stddev.f1 == 0.0);
}

TEST_CASE("prediction records round-trip through JSONL") {
  Rng rng(103, "pred-io");
  const auto records = random_records(12, 3, rng);
  const std::string text = format_predictions(records);
  const std::string path = "/tmp/halide_test_preds.jsonl";
  {
    std::ofstream out(path);
    out << text;
  }
  const auto loaded = load_predictions(path);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].true_action == records[i].true_action);
    CHECK(loaded[i].distribution == records[i].distribution);
  }
  CHECK(format_predictions(loaded) == text);
}
