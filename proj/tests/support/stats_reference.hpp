#pragma once

// Scalar-loop reimplementation of the Friedman test (Conover's tie-corrected
// T1 form) and the Conover post-hoc with Holm step-down, written directly
// from the textbook formulas as an independent check on the library.

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <vector>

namespace stats_ref {

struct Result {
  double statistic = 0.0;
  double p_value = 1.0;
  std::vector<double> mean_ranks;
  std::vector<std::vector<double>> pairwise_p;  // Holm-adjusted, 1 on diagonal
  std::vector<std::vector<bool>> rejected;
};

// values[i][j]: method i, fold j; higher is better (rank 1)
inline Result friedman_conover(const std::vector<std::vector<double>>& values, double alpha) {
  const std::size_t k = values.size();
  const std::size_t n = values[0].size();

  // ranks within each fold, midranks for ties
  std::vector<std::vector<double>> rank(k, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < k; ++i) {
      double r = 1.0;
      double ties = 0.0;
      for (std::size_t other = 0; other < k; ++other) {
        if (other == i) continue;
        if (values[other][j] > values[i][j]) r += 1.0;
        if (values[other][j] == values[i][j]) ties += 1.0;
      }
      rank[i][j] = r + ties / 2.0;
    }
  }

  std::vector<double> R(k, 0.0);
  double A1 = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      R[i] += rank[i][j];
      A1 += rank[i][j] * rank[i][j];
    }
  }
  const double kd = static_cast<double>(k);
  const double nd = static_cast<double>(n);
  const double C1 = nd * kd * (kd + 1.0) * (kd + 1.0) / 4.0;

  Result res;
  res.mean_ranks.resize(k);
  for (std::size_t i = 0; i < k; ++i) res.mean_ranks[i] = R[i] / nd;
  res.pairwise_p.assign(k, std::vector<double>(k, 1.0));
  res.rejected.assign(k, std::vector<bool>(k, false));

  if (A1 - C1 <= 0.0) return res;

  double dev = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    dev += (R[i] - nd * (kd + 1.0) / 2.0) * (R[i] - nd * (kd + 1.0) / 2.0);
  }
  res.statistic = (kd - 1.0) * dev / (A1 - C1);
  boost::math::chi_squared chi(kd - 1.0);
  res.p_value = boost::math::cdf(boost::math::complement(chi, res.statistic));
  if (res.p_value >= alpha) return res;

  const double df = (nd - 1.0) * (kd - 1.0);
  const double scale = std::max(0.0, 1.0 - res.statistic / (nd * (kd - 1.0)));
  const double se = std::sqrt(2.0 * nd * (A1 - C1) / df * scale);
  boost::math::students_t tdist(df);

  struct Pair {
    std::size_t a, b;
    double p;
  };
  std::vector<Pair> pairs;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      const double diff = std::abs(R[a] - R[b]);
      double p;
      if (se > 0.0) {
        p = 2.0 * boost::math::cdf(boost::math::complement(tdist, diff / se));
      } else {
        p = diff > 0.0 ? 0.0 : 1.0;
      }
      pairs.push_back({a, b, p});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) { return x.p < y.p; });
  double running = 0.0;
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    double adj = static_cast<double>(pairs.size() - r) * pairs[r].p;
    adj = std::min(adj, 1.0);
    running = std::max(running, adj);
    res.pairwise_p[pairs[r].a][pairs[r].b] = running;
    res.pairwise_p[pairs[r].b][pairs[r].a] = running;
    if (running < alpha) {
      res.rejected[pairs[r].a][pairs[r].b] = true;
      res.rejected[pairs[r].b][pairs[r].a] = true;
    }
  }
  return res;
}

}  // namespace stats_ref
