#pragma once

#include <Eigen/Dense>
#include <vector>

#include "halide/rng.hpp"

namespace halide {

// Seeded k-means++ initialization followed by Lloyd iterations. Rows of
// `points` are observations. Empty clusters steal the point farthest from its
// assigned center. Deterministic given the Rng state.
std::vector<int> kmeans_assign(const Eigen::MatrixXd& points, int k, Rng& rng,
                               int max_iter = 100);

}  // namespace halide
