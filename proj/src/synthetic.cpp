#include "halide/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "halide/errors.hpp"
#include "halide/parallel.hpp"
#include "halide/rng.hpp"

namespace halide {

using nlohmann::json;

GeneratorSpec GeneratorSpec::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("generator spec: invalid JSON: ") + e.what());
  }
  GeneratorSpec s;
  s.Q_true = j.value("q_true", s.Q_true);
  s.O_true = j.value("o_true", s.O_true);
  s.m = j.value("m", s.m);
  s.A = j.value("a", s.A);
  s.N = j.value("n", s.N);
  s.T_min = j.value("t_min", s.T_min);
  s.T_max = j.value("t_max", s.T_max);
  s.self_loop = j.value("self_loop", s.self_loop);
  s.policy_separation = j.value("policy_separation", s.policy_separation);
  s.regime_mean_scale = j.value("regime_mean_scale", s.regime_mean_scale);
  s.kappa_high = j.value("kappa_high", s.kappa_high);
  s.kappa_low = j.value("kappa_low", s.kappa_low);
  s.frac_high = j.value("frac_high", s.frac_high);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  if (j.contains("cohorts")) s.cohorts = j.at("cohorts").get<std::vector<std::string>>();
  s.regime_policy_map = j.value("regime_policy_map", s.regime_policy_map);
  s.seed = j.value("seed", s.seed);
  if (s.Q_true < 1 || s.O_true < 1 || s.m < 1 || s.A < 2 || s.N < 1 || s.T_min < 1 ||
      s.T_max < s.T_min || s.cohorts.empty()) {
    throw ValidationError("generator spec: invalid field values");
  }
  if (!(s.kappa_high > 0.0 && s.kappa_high <= 1.0 && s.kappa_low > 0.0 && s.kappa_low <= 1.0)) {
    throw ValidationError("generator spec: kappa values must lie in (0,1]");
  }
  return s;
}

std::string GeneratorSpec::to_json_text() const {
  json j{{"q_true", Q_true},
         {"o_true", O_true},
         {"m", m},
         {"a", A},
         {"n", N},
         {"t_min", T_min},
         {"t_max", T_max},
         {"self_loop", self_loop},
         {"policy_separation", policy_separation},
         {"regime_mean_scale", regime_mean_scale},
         {"kappa_high", kappa_high},
         {"kappa_low", kappa_low},
         {"frac_high", frac_high},
         {"noise_sigma", noise_sigma},
         {"cohorts", cohorts},
         {"regime_policy_map", regime_policy_map},
         {"seed", seed}};
  return j.dump();
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
  const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index c = r > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  Eigen::MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      M(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<double>();
    }
  }
  return M;
}

}  // namespace

std::string GroundTruth::to_json_text() const {
  json j;
  j["regimes"] = regimes;
  j["policy_ids"] = policy_ids;
  j["kappa"] = kappa;
  j["z"] = z;
  json precs = json::array();
  for (const auto& P : regime_precisions) precs.push_back(matrix_to_json(P));
  j["regime_precisions"] = std::move(precs);
  json means = json::array();
  for (const auto& mu : regime_means) {
    json row = json::array();
    for (Eigen::Index i = 0; i < mu.size(); ++i) row.push_back(mu[i]);
    means.push_back(std::move(row));
  }
  j["regime_means"] = std::move(means);
  json pols = json::array();
  for (const auto& G : policy_weights) pols.push_back(matrix_to_json(G));
  j["policy_weights"] = std::move(pols);
  return j.dump();
}

GroundTruth GroundTruth::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("ground truth: invalid JSON: ") + e.what());
  }
  GroundTruth g;
  g.regimes = j.at("regimes").get<std::vector<std::vector<int>>>();
  g.policy_ids = j.at("policy_ids").get<std::vector<std::vector<int>>>();
  g.kappa = j.at("kappa").get<std::vector<double>>();
  g.z = j.at("z").get<std::vector<double>>();
  for (const auto& P : j.at("regime_precisions")) g.regime_precisions.push_back(matrix_from_json(P));
  for (const auto& mu : j.at("regime_means")) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(mu.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = mu[static_cast<std::size_t>(i)].get<double>();
    g.regime_means.push_back(std::move(v));
  }
  for (const auto& G : j.at("policy_weights")) g.policy_weights.push_back(matrix_from_json(G));
  return g;
}

namespace {

// Banded SPD precision per regime: tridiagonal coupling plus a per-regime
// diagonal profile, so regimes differ in both scale and cross-dimension
// structure.
Eigen::MatrixXd make_regime_precision(int m, int r, int Q_true, Rng& rng) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(m, m);
  const double coupling = -0.45 + 0.9 * static_cast<double>(r) / std::max(1, Q_true - 1);
  for (int i = 0; i < m; ++i) {
    // diagonal profile rotates with the regime index
    const double phase = 2.0 * M_PI * (static_cast<double>((i + r) % m)) / static_cast<double>(m);
    P(i, i) = 1.5 + std::cos(phase) + 0.1 * rng.uniform();
    if (i + 1 < m) {
      const double c = coupling * (0.9 + 0.2 * rng.uniform());
      P(i, i + 1) = c;
      P(i + 1, i) = c;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(P);
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig < 0.15) P.diagonal().array() += (0.15 - min_eig);
  return P;
}

int sample_categorical(const Eigen::VectorXd& probs, Rng& rng) {
  const double u = rng.uniform() * probs.sum();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u <= acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

}  // namespace

SyntheticDataset generate(const GeneratorSpec& spec) {
  Rng setup_rng(spec.seed, "synth-setup");

  // regime models and their AR factors
  std::vector<Eigen::MatrixXd> precisions;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> cov_chol;       // chol of stationary covariance
  std::vector<Eigen::MatrixXd> noise_chol;     // chol of (1-phi^2) Sigma
  std::vector<double> phis;
  for (int r = 0; r < spec.Q_true; ++r) {
    Eigen::MatrixXd P = make_regime_precision(spec.m, r, spec.Q_true, setup_rng);
    precisions.push_back(P);
    Eigen::VectorXd mu(spec.m);
    for (int i = 0; i < spec.m; ++i) mu[i] = setup_rng.normal() * spec.regime_mean_scale;
    means.push_back(mu);
    const Eigen::MatrixXd Sigma = P.inverse();
    cov_chol.push_back(Eigen::LLT<Eigen::MatrixXd>(Sigma).matrixL());
    const double phi =
        spec.Q_true == 1 ? 0.5 : 0.2 + 0.6 * static_cast<double>(r) / (spec.Q_true - 1);
    phis.push_back(phi);
    noise_chol.push_back(Eigen::LLT<Eigen::MatrixXd>((1.0 - phi * phi) * Sigma).matrixL());
  }

  // ground-truth policies: a shared random score matrix whose action rows are
  // cyclically reassigned per cluster, so the same state demands different
  // actions under different policies and no single flat policy can explain
  // them all
  std::vector<Eigen::MatrixXd> policies;
  {
    Eigen::MatrixXd base(spec.A, spec.m);
    for (int a = 0; a < spec.A; ++a) {
      for (int i = 0; i < spec.m; ++i) base(a, i) = setup_rng.normal() * spec.policy_separation;
    }
    for (int o = 0; o < spec.O_true; ++o) {
      Eigen::MatrixXd G(spec.A, spec.m);
      for (int a = 0; a < spec.A; ++a) {
        G.row(a) = base.row((a + o) % spec.A);
        for (int i = 0; i < spec.m; ++i) {
          G(a, i) += setup_rng.normal() * 0.1 * spec.policy_separation;
        }
      }
      policies.push_back(G);
    }
  }

  // self-loop-heavy regime chain
  Eigen::MatrixXd chain(spec.Q_true, spec.Q_true);
  if (spec.Q_true == 1) {
    chain(0, 0) = 1.0;
  } else {
    const double off = (1.0 - spec.self_loop) / (spec.Q_true - 1);
    chain.setConstant(off);
    chain.diagonal().setConstant(spec.self_loop);
  }

  SyntheticDataset out;
  out.data.state_dim = spec.m;
  out.data.num_actions = spec.A;
  out.data.trajectories.resize(static_cast<std::size_t>(spec.N));
  out.truth.regimes.resize(static_cast<std::size_t>(spec.N));
  out.truth.policy_ids.resize(static_cast<std::size_t>(spec.N));
  out.truth.kappa.resize(static_cast<std::size_t>(spec.N));
  out.truth.z.resize(static_cast<std::size_t>(spec.N));
  out.truth.regime_precisions = precisions;
  out.truth.regime_means = means;
  out.truth.policy_weights = policies;

  const int n_high = static_cast<int>(std::lround(spec.frac_high * spec.N));

  // per-trajectory derived streams keep generation independent of scheduling
  for (int n = 0; n < spec.N; ++n) {
    Rng rng(spec.seed, "synth-traj", static_cast<std::uint64_t>(n));
    Trajectory traj;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "syn-%04d", n);
    traj.id = buf;
    traj.cohort = spec.cohorts[static_cast<std::size_t>(n) % spec.cohorts.size()];
    const double kappa = n < n_high ? spec.kappa_high : spec.kappa_low;
    out.truth.kappa[static_cast<std::size_t>(n)] = kappa;

    const int T = spec.T_min + static_cast<int>(rng.uniform_index(
                                   static_cast<std::uint64_t>(spec.T_max - spec.T_min + 1)));
    auto& regimes = out.truth.regimes[static_cast<std::size_t>(n)];
    auto& pol_ids = out.truth.policy_ids[static_cast<std::size_t>(n)];
    regimes.resize(static_cast<std::size_t>(T));
    pol_ids.resize(static_cast<std::size_t>(T));

    int regime = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.Q_true)));
    int policy = spec.regime_policy_map == "random"
                     ? static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.O_true)))
                     : regime % spec.O_true;
    Eigen::VectorXd x(spec.m);
    Eigen::VectorXd noise(spec.m);
    double t_clock = 0.0;
    for (int t = 0; t < T; ++t) {
      if (t > 0) {
        const int next = sample_categorical(chain.row(regime).transpose(), rng);
        if (next != regime) {
          regime = next;
          policy = spec.regime_policy_map == "random"
                       ? static_cast<int>(
                             rng.uniform_index(static_cast<std::uint64_t>(spec.O_true)))
                       : regime % spec.O_true;
        }
      }
      regimes[static_cast<std::size_t>(t)] = regime;
      pol_ids[static_cast<std::size_t>(t)] = policy;

      for (int i = 0; i < spec.m; ++i) noise[i] = rng.normal();
      const Eigen::VectorXd& mu = means[static_cast<std::size_t>(regime)];
      if (t == 0) {
        x = mu + cov_chol[static_cast<std::size_t>(regime)] * noise;
      } else {
        x = mu + phis[static_cast<std::size_t>(regime)] * (x - mu) +
            noise_chol[static_cast<std::size_t>(regime)] * noise;
      }

      int a;
      if (rng.uniform() < kappa) {
        const Eigen::VectorXd scores = policies[static_cast<std::size_t>(policy)] * x;
        const double lz = scores.maxCoeff() + std::log((scores.array() - scores.maxCoeff()).exp().sum());
        a = sample_categorical((scores.array() - lz).exp(), rng);
      } else {
        a = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.A)));
      }

      t_clock += 1.0 + 4.0 * rng.uniform();  // irregular gaps for the dt decay
      Step step;
      step.t = t_clock;
      step.x = x;
      step.a = a;
      step.w = 1.0;
      traj.steps.push_back(std::move(step));
    }

    // quality signal and test scores correlated with kappa
    const double z = std::log(kappa / (1.0 - kappa + 1e-9)) + rng.normal(0.0, spec.noise_sigma);
    out.truth.z[static_cast<std::size_t>(n)] = z;
    const double pretest = rng.uniform(0.1, 0.5);
    const double gain = (kappa - 0.5) * 0.9 + rng.normal(0.0, 0.03);
    const double posttest =
        std::clamp(pretest + gain * std::sqrt(1.0 - pretest), 0.0, 1.0);
    traj.pretest = pretest;
    traj.posttest = posttest;
    out.data.trajectories[static_cast<std::size_t>(n)] = std::move(traj);
  }

  validate_dataset(out.data);

  // generation-time assertion on the ranking signal
  std::vector<double> nlg_vals;
  for (const auto& traj : out.data.trajectories) {
    nlg_vals.push_back((*traj.posttest - *traj.pretest) / std::sqrt(1.0 - *traj.pretest));
  }
  if (spec.N >= 10 && spec.kappa_high != spec.kappa_low) {
    if (rank_correlation(out.truth.z, out.truth.kappa) < 0.8 ||
        rank_correlation(nlg_vals, out.truth.kappa) < 0.8) {
      throw NumericError("generate: quality signal decorrelated from kappa");
    }
  }
  return out;
}

double rank_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ValidationError("rank_correlation: need two equal-length samples");
  }
  auto midranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = mid;
      i = j + 1;
    }
    return ranks;
  };
  const std::vector<double> ra = midranks(a);
  const std::vector<double> rb = midranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

double matched_accuracy(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size() || truth.empty()) {
    throw ValidationError("matched_accuracy: label length mismatch");
  }
  int kt = 0, kp = 0;
  for (const int v : truth) kt = std::max(kt, v + 1);
  for (const int v : predicted) kp = std::max(kp, v + 1);
  const int k = std::max(kt, kp);
  if (k > 8) throw ValidationError("matched_accuracy: too many clusters for permutation search");
  Eigen::MatrixXd confusion = Eigen::MatrixXd::Zero(k, k);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    confusion(predicted[i], truth[i]) += 1.0;
  }
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    double hits = 0.0;
    for (int p = 0; p < k; ++p) hits += confusion(p, perm[static_cast<std::size_t>(p)]);
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(truth.size());
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw ValidationError("adjusted_rand_index: label length mismatch");
  }
  int ka = 0, kb = 0;
  for (const int v : a) ka = std::max(ka, v + 1);
  for (const int v : b) kb = std::max(kb, v + 1);
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(ka, kb);
  for (std::size_t i = 0; i < a.size(); ++i) table(a[i], b[i]) += 1.0;
  auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_ij = 0.0;
  for (int i = 0; i < ka; ++i) {
    for (int j = 0; j < kb; ++j) sum_ij += comb2(table(i, j));
  }
  double sum_a = 0.0, sum_b = 0.0;
  for (int i = 0; i < ka; ++i) sum_a += comb2(table.row(i).sum());
  for (int j = 0; j < kb; ++j) sum_b += comb2(table.col(j).sum());
  const double total = comb2(static_cast<double>(a.size()));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index - expected == 0.0) return 1.0;  // both partitions trivial
  return (sum_ij - expected) / (max_index - expected);
}

RecoveryReport score_recovery(const GroundTruth& truth,
                              const std::vector<std::vector<int>>& assignments,
                              const std::vector<std::vector<int>>& step_policy_labels) {
  RecoveryReport report;
  std::vector<int> true_regimes, pred_regimes, true_policies, pred_policies;
  for (std::size_t n = 0; n < truth.regimes.size(); ++n) {
    if (assignments[n].size() != truth.regimes[n].size() ||
        step_policy_labels[n].size() != truth.policy_ids[n].size()) {
      throw ValidationError("score_recovery: label length mismatch");
    }
    true_regimes.insert(true_regimes.end(), truth.regimes[n].begin(), truth.regimes[n].end());
    pred_regimes.insert(pred_regimes.end(), assignments[n].begin(), assignments[n].end());
    true_policies.insert(true_policies.end(), truth.policy_ids[n].begin(),
                         truth.policy_ids[n].end());
    pred_policies.insert(pred_policies.end(), step_policy_labels[n].begin(),
                         step_policy_labels[n].end());
  }
  report.step_accuracy = matched_accuracy(true_regimes, pred_regimes);
  report.policy_ari = adjusted_rand_index(true_policies, pred_policies);
  return report;
}

}  // namespace halide
