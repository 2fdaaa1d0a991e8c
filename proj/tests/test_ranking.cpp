#include <doctest.h>

#include <cmath>

#include "halide/errors.hpp"
#include "halide/ranking.hpp"
#include "halide/rng.hpp"
#include "support/builders.hpp"

using namespace halide;

TEST_CASE("nlg formula") {
  CHECK(nlg(0.25, 0.25) == 0.0);
  CHECK(nlg(0.0, 1.0) == 1.0);
  CHECK(nlg(0.36, 0.84) == doctest::Approx(0.6).epsilon(1e-12));  // 0.48 / sqrt(0.64)
  CHECK_THROWS_AS(nlg(1.0, 0.5), ValidationError);
}

TEST_CASE("nlg is strictly increasing in posttest") {
  Rng rng(3, "nlg-mono");
  for (int i = 0; i < 200; ++i) {
    const double pre = rng.uniform(0.0, 0.99);
    const double p1 = rng.uniform(0.0, 1.0);
    const double p2 = rng.uniform(0.0, 1.0);
    if (p1 == p2) continue;
    const double lo = std::min(p1, p2), hi = std::max(p1, p2);
    CHECK(nlg(pre, lo) < nlg(pre, hi));
  }
}

TEST_CASE("standardize uses population std") {
  const auto r = standardize({-1.0, 1.0});
  CHECK(r.z[0] == doctest::Approx(-1.0));
  CHECK(r.z[1] == doctest::Approx(1.0));
  CHECK(!r.degenerate);

  const auto zeros = standardize({0.0, 0.0, 0.0});
  CHECK(zeros.degenerate);
  CHECK(zeros.z == std::vector<double>{0.0, 0.0, 0.0});

  // mean 2, population std sqrt(2/3)
  const auto r3 = standardize({1.0, 2.0, 3.0});
  CHECK(r3.z[0] == doctest::Approx(-1.2247448713915890).epsilon(1e-12));
  CHECK(r3.z[1] == doctest::Approx(0.0));
  CHECK(r3.z[2] == doctest::Approx(1.2247448713915890).epsilon(1e-12));

  // standardized output has mean ~0 and std ~1
  Rng rng(11, "std");
  std::vector<double> vals;
  for (int i = 0; i < 57; ++i) vals.push_back(rng.normal(3.0, 2.5));
  const auto rr = standardize(vals);
  double mean = 0.0, var = 0.0;
  for (const double z : rr.z) mean += z;
  mean /= static_cast<double>(rr.z.size());
  for (const double z : rr.z) var += (z - mean) * (z - mean);
  var /= static_cast<double>(rr.z.size());
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(var - 1.0) < 1e-9);
}

TEST_CASE("weight_map values and properties") {
  CHECK(weight_map(0.0, 1.0) == doctest::Approx(0.5));
  CHECK(weight_map(0.0, 17.0) == doctest::Approx(0.5));
  CHECK(weight_map(1.0, 2.0) == doctest::Approx(0.8807970779778823).epsilon(1e-12));
  CHECK(weight_map(10.0, 1.0) == doctest::Approx(0.9999546021312976).epsilon(1e-12));

  Rng rng(5, "wm");
  for (int i = 0; i < 200; ++i) {
    const double z = rng.uniform(-8.0, 8.0);
    const double alpha = rng.uniform(0.05, 4.0);
    const double w = weight_map(z, alpha);
    CHECK(w > 0.0);
    CHECK(w < 1.0);
    CHECK(weight_map(-z, alpha) == doctest::Approx(1.0 - w).epsilon(1e-9));
    CHECK(weight_map(z + 0.25, alpha) > w);  // monotone in z
  }
  CHECK_THROWS_AS(weight_map(0.0, 0.0), ValidationError);
}

TEST_CASE("qlg_label follows group movement") {
  const GroupCuts cuts{1.0 / 3.0, 2.0 / 3.0};
  CHECK(qlg_label("a", 0.9, 0.8, cuts).high);        // high -> high
  CHECK(!qlg_label("b", 0.5, 0.1, cuts).high);       // medium -> low
  CHECK(!qlg_label("c", 0.5, 0.55, cuts).high);      // medium -> medium
  CHECK(qlg_label("d", 0.1, 0.5, cuts).high);        // low -> medium counts as improved
  CHECK(qlg_label("e", 0.4, 0.9, cuts).high);        // medium -> high
  CHECK(!qlg_label("f", 0.2, 0.3, cuts).high);       // low -> low
}

TEST_CASE("partition_expert splits by QLG") {
  auto d = builders::random_dataset(5, 3, 2, 2, 1);
  std::vector<QLGLabel> labels;
  for (std::size_t i = 0; i < 5; ++i) {
    QLGLabel l;
    l.trajectory_id = d.trajectories[i].id;
    l.high = i < 3;
    labels.push_back(l);
  }
  const auto part = partition_expert(d, labels);
  CHECK(part.expert_ids.size() == 3);
  CHECK(part.imperfect_ids.size() == 2);

  for (auto& l : labels) l.high = true;
  CHECK(partition_expert(d, labels).imperfect_ids.empty());
  for (auto& l : labels) l.high = false;
  CHECK(partition_expert(d, labels).expert_ids.empty());

  // union is everything, disjoint
  labels[0].high = true;
  labels[2].high = true;
  const auto p2 = partition_expert(d, labels);
  CHECK(p2.expert_ids.size() + p2.imperfect_ids.size() == 5);
  for (const auto& id : p2.expert_ids) {
    CHECK(std::find(p2.imperfect_ids.begin(), p2.imperfect_ids.end(), id) ==
          p2.imperfect_ids.end());
  }
}

TEST_CASE("rank_dataset wires nlg -> z -> weight") {
  auto d = builders::random_dataset(6, 4, 2, 2, 2);
  Rng rng(21, "scores");
  for (auto& t : d.trajectories) {
    const double pre = rng.uniform(0.1, 0.6);
    t.pretest = pre;
    t.posttest = std::min(1.0, pre + rng.uniform(0.0, 0.4));
  }
  const auto records = rank_dataset(d, 1.0);
  REQUIRE(records.size() == 6);
  double zsum = 0.0;
  for (const auto& r : records) {
    CHECK(r.weight > 0.0);
    CHECK(r.weight < 1.0);
    zsum += r.z;
  }
  CHECK(std::abs(zsum) < 1e-9);
}
