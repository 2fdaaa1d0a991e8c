#include "halide/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "halide/errors.hpp"
#include "halide/kmeans.hpp"
#include "halide/parallel.hpp"
#include "halide/rng.hpp"

namespace halide {

namespace instrument {
std::atomic<std::uint64_t> rmt_ticc_fit_calls{0};
std::atomic<std::uint64_t> dp_assign_calls{0};
std::atomic<std::uint64_t> toeplitz_glasso_calls{0};
}  // namespace instrument

namespace {

constexpr double kCovRidge = 1e-6;

// Averages every set of entries tied by the block-Toeplitz structure (blocks
// of size m on the same block diagonal are equal) and symmetrizes.
Eigen::MatrixXd toeplitz_average(const Eigen::MatrixXd& M, int block_size) {
  const Eigen::Index dim = M.rows();
  const int m = block_size;
  const int omega = static_cast<int>(dim) / m;
  Eigen::MatrixXd R = 0.5 * (M + M.transpose());
  for (int d = 0; d < omega; ++d) {
    for (int oi = 0; oi < m; ++oi) {
      for (int oj = (d == 0 ? oi : 0); oj < m; ++oj) {
        double sum = 0.0;
        for (int b = 0; b + d < omega; ++b) {
          sum += R(b * m + oi, (b + d) * m + oj);
        }
        const double avg = sum / static_cast<double>(omega - d);
        for (int b = 0; b + d < omega; ++b) {
          R(b * m + oi, (b + d) * m + oj) = avg;
          R((b + d) * m + oj, b * m + oi) = avg;
        }
      }
    }
  }
  return R;
}

void soft_threshold_offdiag(Eigen::MatrixXd& M, double kappa) {
  if (kappa <= 0.0) return;
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      if (i == j) continue;
      const double v = M(i, j);
      M(i, j) = v > kappa ? v - kappa : (v < -kappa ? v + kappa : 0.0);
    }
  }
}

}  // namespace

double ToeplitzClusterModel::toeplitz_violation(int block_size) const {
  const Eigen::MatrixXd avg = toeplitz_average(theta, block_size);
  return (theta - avg).cwiseAbs().maxCoeff();
}

Eigen::MatrixXd empirical_cov(const std::vector<const Window*>& windows, Eigen::Index dim) {
  if (windows.empty()) throw ValidationError("empirical_cov: no windows");
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(dim, dim);
  for (const Window* w : windows) {
    S.selfadjointView<Eigen::Lower>().rankUpdate(w->values);
  }
  S /= static_cast<double>(windows.size());
  S = S.selfadjointView<Eigen::Lower>();
  S.diagonal().array() += kCovRidge;
  return S;
}

Eigen::MatrixXd empirical_cov(const std::vector<Window>& windows) {
  std::vector<const Window*> ptrs;
  ptrs.reserve(windows.size());
  for (const auto& w : windows) ptrs.push_back(&w);
  return empirical_cov(ptrs, windows.front().values.size());
}

ToeplitzClusterModel toeplitz_glasso(const Eigen::MatrixXd& S, double lambda, int omega,
                                     double rho, double tol, int max_iter) {
  instrument::toeplitz_glasso_calls.fetch_add(1, std::memory_order_relaxed);
  const Eigen::Index dim = S.rows();
  if (S.cols() != dim) throw ValidationError("toeplitz_glasso: S must be square");
  if (omega < 1 || dim % omega != 0) {
    throw ValidationError("toeplitz_glasso: dimension not divisible by omega");
  }
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
    throw ValidationError("toeplitz_glasso: S must be symmetric");
  }
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> check(S, Eigen::EigenvaluesOnly);
    if (check.eigenvalues().minCoeff() < -1e-8) {
      throw ValidationError("toeplitz_glasso: S must be PSD within tolerance");
    }
  }
  const int m = static_cast<int>(dim) / omega;

  Eigen::MatrixXd Z = Eigen::MatrixXd::Identity(dim, dim);
  Eigen::MatrixXd U = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::MatrixXd Theta = Z;
  bool converged = false;

  for (int it = 0; it < max_iter; ++it) {
    // Theta step: prox of -logdet at Z - U - S/rho
    Eigen::MatrixXd E = Z - U - S / rho;
    E = 0.5 * (E + E.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(E);
    Eigen::VectorXd d = eig.eigenvalues();
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      d[i] = 0.5 * (d[i] + std::sqrt(d[i] * d[i] + 4.0 / rho));
    }
    Theta = eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();

    // Z step: tie-average then shrink off-diagonals
    Eigen::MatrixXd Z_prev = Z;
    Z = toeplitz_average(Theta + U, m);
    soft_threshold_offdiag(Z, lambda / rho);

    U += Theta - Z;

    const double primal = (Theta - Z).cwiseAbs().maxCoeff();
    const double dual = rho * (Z - Z_prev).cwiseAbs().maxCoeff();
    if (std::max(primal, dual) < tol) {
      converged = true;
      break;
    }
  }

  ToeplitzClusterModel model;
  model.converged = converged;
  model.theta = Z;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(model.theta);
  double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig <= 1e-12) {
    // thresholded iterate lost definiteness; fall back to the projected
    // barrier iterate, shifting the diagonal as a last resort
    model.theta = toeplitz_average(Theta, m);
    eig.compute(model.theta);
    min_eig = eig.eigenvalues().minCoeff();
    if (min_eig <= 1e-12) {
      model.theta.diagonal().array() += (1e-8 - min_eig);
      eig.compute(model.theta);
    }
    model.converged = false;
  }
  model.logdet = eig.eigenvalues().array().log().sum();
  return model;
}

double window_nll(const Eigen::VectorXd& x, const ToeplitzClusterModel& model) {
  const double quad = x.dot(model.theta.selfadjointView<Eigen::Lower>() * x);
  const double d = static_cast<double>(x.size());
  return 0.5 * quad - 0.5 * model.logdet + 0.5 * d * std::log(2.0 * M_PI);
}

double consistency_penalty(int prev_q, int q, double dt, double r_bar, double beta, double tau) {
  if (prev_q == q) return 0.0;
  return beta * std::exp(-dt / tau) * (1.0 + r_bar);
}

namespace {

struct DpTable {
  Eigen::MatrixXd best;       // T x Q prefix costs
  Eigen::MatrixXi backptr;    // T x Q
};

DpTable dp_forward(const std::vector<Window>& windows,
                   const std::vector<ToeplitzClusterModel>& models,
                   const std::vector<double>& r_bar, double beta, double tau) {
  const int T = static_cast<int>(windows.size());
  const int Q = static_cast<int>(models.size());
  DpTable tab;
  tab.best.resize(T, Q);
  tab.backptr = Eigen::MatrixXi::Constant(T, Q, -1);
  for (int q = 0; q < Q; ++q) {
    tab.best(0, q) = window_nll(windows[0].values, models[static_cast<std::size_t>(q)]);
  }
  for (int t = 1; t < T; ++t) {
    for (int q = 0; q < Q; ++q) {
      double best_prev = std::numeric_limits<double>::infinity();
      int best_p = 0;
      for (int p = 0; p < Q; ++p) {
        const double c = tab.best(t - 1, p) +
                         consistency_penalty(p, q, windows[static_cast<std::size_t>(t)].dt,
                                             r_bar[static_cast<std::size_t>(t)], beta, tau);
        if (c < best_prev) {
          best_prev = c;
          best_p = p;
        }
      }
      tab.best(t, q) =
          best_prev + window_nll(windows[static_cast<std::size_t>(t)].values, models[static_cast<std::size_t>(q)]);
      tab.backptr(t, q) = best_p;
    }
  }
  return tab;
}

void check_dp_inputs(const std::vector<Window>& windows,
                     const std::vector<ToeplitzClusterModel>& models,
                     const std::vector<double>& r_bar) {
  if (windows.empty()) throw ValidationError("dp_assign: no windows");
  if (models.empty()) throw ValidationError("dp_assign: no models");
  if (r_bar.size() != windows.size()) {
    throw ValidationError("dp_assign: r_bar length mismatch");
  }
}

}  // namespace

Assignment dp_assign(const std::vector<Window>& windows,
                     const std::vector<ToeplitzClusterModel>& models,
                     const std::vector<double>& r_bar, double beta, double tau) {
  instrument::dp_assign_calls.fetch_add(1, std::memory_order_relaxed);
  check_dp_inputs(windows, models, r_bar);
  const int T = static_cast<int>(windows.size());
  const int Q = static_cast<int>(models.size());
  const DpTable tab = dp_forward(windows, models, r_bar, beta, tau);

  Assignment out(static_cast<std::size_t>(T), 0);
  int q = 0;
  double best = tab.best(T - 1, 0);
  for (int c = 1; c < Q; ++c) {
    if (tab.best(T - 1, c) < best) {
      best = tab.best(T - 1, c);
      q = c;
    }
  }
  for (int t = T - 1; t >= 0; --t) {
    out[static_cast<std::size_t>(t)] = q;
    if (t > 0) q = tab.backptr(t, q);
  }
  return out;
}

Assignment dp_assign_filtered(const std::vector<Window>& windows,
                              const std::vector<ToeplitzClusterModel>& models,
                              const std::vector<double>& r_bar, double beta, double tau) {
  check_dp_inputs(windows, models, r_bar);
  const int T = static_cast<int>(windows.size());
  const int Q = static_cast<int>(models.size());
  const DpTable tab = dp_forward(windows, models, r_bar, beta, tau);
  Assignment out(static_cast<std::size_t>(T), 0);
  for (int t = 0; t < T; ++t) {
    int q = 0;
    double best = tab.best(t, 0);
    for (int c = 1; c < Q; ++c) {
      if (tab.best(t, c) < best) {
        best = tab.best(t, c);
        q = c;
      }
    }
    out[static_cast<std::size_t>(t)] = q;
  }
  return out;
}

namespace {

struct WindowRef {
  int traj = 0;
  int t = 0;
};

double eq2_objective(const std::vector<std::vector<Window>>& windows,
                     const std::vector<Assignment>& labels,
                     const std::vector<ToeplitzClusterModel>& models,
                     const std::vector<std::vector<double>>& r_bar, double beta, double tau,
                     double lambda_seg) {
  double obj = 0.0;
  for (std::size_t n = 0; n < windows.size(); ++n) {
    for (std::size_t t = 0; t < windows[n].size(); ++t) {
      const int q = labels[n][t];
      obj += window_nll(windows[n][t].values, models[static_cast<std::size_t>(q)]);
      if (t > 0) {
        obj += consistency_penalty(labels[n][t - 1], q, windows[n][t].dt, r_bar[n][t], beta, tau);
      }
    }
  }
  for (const auto& model : models) {
    const Eigen::MatrixXd& Th = model.theta;
    obj += lambda_seg * (Th.cwiseAbs().sum() - Th.diagonal().cwiseAbs().sum());
  }
  return obj;
}

}  // namespace

TiccResult rmt_ticc_fit(const DatasetManifest& centered,
                        const std::vector<std::vector<double>>& r_bar,
                        const SegmentationConfig& cfg, int threads) {
  instrument::rmt_ticc_fit_calls.fetch_add(1, std::memory_order_relaxed);
  const std::size_t N = centered.trajectories.size();
  if (N == 0) throw ValidationError("rmt_ticc_fit: empty dataset");
  if (r_bar.size() != N) throw ValidationError("rmt_ticc_fit: r_bar shape mismatch");

  std::vector<std::vector<Window>> windows(N);
  std::size_t total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    windows[n] = windowize(centered.trajectories[n], cfg.omega);
    if (r_bar[n].size() != windows[n].size()) {
      throw ValidationError("rmt_ticc_fit: r_bar length mismatch for trajectory '" +
                            centered.trajectories[n].id + "'");
    }
    total += windows[n].size();
  }
  if (static_cast<std::size_t>(cfg.Q) > total) {
    throw ValidationError("rmt_ticc_fit: more clusters than windows");
  }
  const Eigen::Index dim = static_cast<Eigen::Index>(centered.state_dim) * cfg.omega;

  // initial assignment: seeded k-means++ on the raw windows
  std::vector<Assignment> labels(N);
  {
    Eigen::MatrixXd pts(static_cast<Eigen::Index>(total), dim);
    Eigen::Index row = 0;
    for (std::size_t n = 0; n < N; ++n) {
      for (const auto& w : windows[n]) pts.row(row++) = w.values.transpose();
    }
    Rng rng(cfg.seed, "ticc-init");
    const std::vector<int> flat = kmeans_assign(pts, cfg.Q, rng);
    std::size_t k = 0;
    for (std::size_t n = 0; n < N; ++n) {
      labels[n].assign(windows[n].size(), 0);
      for (std::size_t t = 0; t < windows[n].size(); ++t) labels[n][t] = flat[k++];
    }
  }

  double tau_eff = cfg.tau;
  if (tau_eff <= 0.0) {
    std::vector<double> gaps;
    for (const auto& tw : windows) {
      for (const auto& w : tw) {
        if (w.dt > 0.0) gaps.push_back(w.dt);
      }
    }
    if (gaps.empty()) {
      tau_eff = 1.0;
    } else {
      std::sort(gaps.begin(), gaps.end());
      tau_eff = gaps[gaps.size() / 2];
    }
  }

  TiccResult res;
  res.tau_effective = tau_eff;
  double beta_eff = 0.0;

  std::vector<ToeplitzClusterModel> models(static_cast<std::size_t>(cfg.Q));
  for (int iter = 0; iter < cfg.max_ticc_iter; ++iter) {
    res.iterations = iter + 1;

    // rescue empty clusters by splitting the largest at its median NLL
    std::vector<std::size_t> counts(static_cast<std::size_t>(cfg.Q), 0);
    for (const auto& tl : labels) {
      for (const int q : tl) ++counts[static_cast<std::size_t>(q)];
    }
    for (int e = 0; e < cfg.Q; ++e) {
      if (counts[static_cast<std::size_t>(e)] > 0) continue;
      int largest = 0;
      for (int q = 1; q < cfg.Q; ++q) {
        if (counts[static_cast<std::size_t>(q)] > counts[static_cast<std::size_t>(largest)]) largest = q;
      }
      if (counts[static_cast<std::size_t>(largest)] < 2) continue;
      std::vector<std::pair<double, WindowRef>> scored;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t t = 0; t < windows[n].size(); ++t) {
          if (labels[n][t] != largest) continue;
          const double score =
              iter == 0 ? windows[n][t].values.squaredNorm()
                        : window_nll(windows[n][t].values, models[static_cast<std::size_t>(largest)]);
          scored.push_back({score, {static_cast<int>(n), static_cast<int>(t)}});
        }
      }
      std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        if (a.second.traj != b.second.traj) return a.second.traj < b.second.traj;
        return a.second.t < b.second.t;
      });
      for (std::size_t k = scored.size() / 2; k < scored.size(); ++k) {
        const WindowRef& ref = scored[k].second;
        labels[static_cast<std::size_t>(ref.traj)][static_cast<std::size_t>(ref.t)] = e;
      }
      counts[static_cast<std::size_t>(e)] = scored.size() - scored.size() / 2;
      counts[static_cast<std::size_t>(largest)] -= counts[static_cast<std::size_t>(e)];
    }

    // M step: per-cluster block-Toeplitz graphical lasso; lambda scaled so the
    // subproblem minimises sum nll + lambda_seg * ||Theta||_1 exactly
    parallel_for(static_cast<std::size_t>(cfg.Q), threads, [&](std::size_t q) {
      std::vector<const Window*> mine;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t t = 0; t < windows[n].size(); ++t) {
          if (labels[n][t] == static_cast<int>(q)) mine.push_back(&windows[n][t]);
        }
      }
      const Eigen::MatrixXd S = empirical_cov(mine, dim);
      const double lambda_eff = 2.0 * cfg.lambda_seg / static_cast<double>(mine.size());
      models[q] = toeplitz_glasso(S, lambda_eff, cfg.omega, cfg.admm_rho, cfg.admm_tol,
                                  cfg.admm_max_iter);
    });

    if (iter == 0) {
      double nll_sum = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t t = 0; t < windows[n].size(); ++t) {
          nll_sum += std::abs(
              window_nll(windows[n][t].values, models[static_cast<std::size_t>(labels[n][t])]));
        }
      }
      const double scale = nll_sum / static_cast<double>(total);
      beta_eff = cfg.beta * scale / 200.0;
      res.beta_effective = beta_eff;
    }

    // E step: exact DP per trajectory
    std::vector<Assignment> new_labels(N);
    parallel_for(N, threads, [&](std::size_t n) {
      new_labels[n] = dp_assign(windows[n], models, r_bar[n], beta_eff, tau_eff);
    });

    const bool changed = new_labels != labels;
    labels = std::move(new_labels);
    res.objective_trace.push_back(
        eq2_objective(windows, labels, models, r_bar, beta_eff, tau_eff, cfg.lambda_seg));
    if (!changed) break;
  }

  res.models = std::move(models);
  res.assignments = std::move(labels);
  return res;
}

std::vector<SubTrajectory> cut_subtrajectories(const Trajectory& traj,
                                               const Assignment& assignment) {
  if (assignment.size() != traj.steps.size()) {
    throw ValidationError("cut_subtrajectories: assignment length mismatch for '" + traj.id + "'");
  }
  std::vector<SubTrajectory> out;
  const int T = traj.length();
  int start = 0;
  for (int t = 1; t <= T; ++t) {
    if (t == T || assignment[static_cast<std::size_t>(t)] != assignment[static_cast<std::size_t>(start)]) {
      SubTrajectory sub;
      sub.owner = traj.id;
      sub.start = start;
      sub.end = t;
      sub.high_state = assignment[static_cast<std::size_t>(start)];
      sub.steps.assign(traj.steps.begin() + start, traj.steps.begin() + t);
      out.push_back(std::move(sub));
      start = t;
    }
  }
  return out;
}

}  // namespace halide
