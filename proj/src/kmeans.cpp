#include "halide/kmeans.hpp"

#include <limits>

#include "halide/errors.hpp"

namespace halide {

namespace {

// k-means++ seeding: first center uniform, then D^2 sampling.
Eigen::MatrixXd seed_centers(const Eigen::MatrixXd& points, int k, Rng& rng) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd centers(k, points.cols());
  centers.row(0) = points.row(static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(n)));
    }
    centers.row(c) = points.row(chosen);
    d2 = d2.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace

std::vector<int> kmeans_assign(const Eigen::MatrixXd& points, int k, Rng& rng, int max_iter) {
  const Eigen::Index n = points.rows();
  if (k < 1) throw ValidationError("kmeans: k must be >= 1");
  if (n < k) throw ValidationError("kmeans: fewer points than clusters");

  Eigen::MatrixXd centers = seed_centers(points, k, rng);
  std::vector<int> labels(static_cast<std::size_t>(n), 0);

  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (points.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      dist[static_cast<std::size_t>(i)] = best_d;
      if (labels[static_cast<std::size_t>(i)] != best) {
        labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }

    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (const int l : labels) ++counts[static_cast<std::size_t>(l)];
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      // farthest point (lowest index on ties) becomes the empty cluster
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] > 1 &&
            dist[static_cast<std::size_t>(i)] > far_d) {
          far_d = dist[static_cast<std::size_t>(i)];
          far = i;
        }
      }
      --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
      labels[static_cast<std::size_t>(far)] = c;
      ++counts[static_cast<std::size_t>(c)];
      dist[static_cast<std::size_t>(far)] = 0.0;
      changed = true;
    }

    centers.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      centers.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
    if (!changed) break;
  }
  return labels;
}

}  // namespace halide
