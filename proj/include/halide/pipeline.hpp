#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "halide/dataset.hpp"
#include "halide/policy.hpp"
#include "halide/regulator.hpp"
#include "halide/segmentation.hpp"

namespace halide {

enum class DataAxis { ExpertOnly, ExpertPlusImperfect };
enum class WeightAxis { Uniform, Ranked };
enum class HierarchyAxis { Flat, Hierarchical };

struct RunConfig {
  DataAxis data_axis = DataAxis::ExpertPlusImperfect;
  WeightAxis weight_axis = WeightAxis::Ranked;
  HierarchyAxis hierarchy_axis = HierarchyAxis::Hierarchical;
  int K = 3;  // outer iterations of the evolving-reward loop
  SegmentationConfig seg;
  EMConfig em;
  double alpha = 1.0;  // ranking sensitivity
  std::uint64_t seed = 0;

  static RunConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
  // stable content hash over the canonical JSON form
  std::string hash() const;
};

struct TrainedModel {
  RunConfig config;
  Eigen::VectorXd state_mean;
  std::vector<ToeplitzClusterModel> cluster_models;  // empty for flat configs
  MixtureState mixture;
  HighLevelModel regulator;  // empty tables for flat configs
  double beta_effective = 0.0;
  double tau_effective = 1.0;
  std::string config_hash;

  std::string to_json_text() const;
  static TrainedModel from_json_text(const std::string& text);
  void save(const std::string& path) const;
  static TrainedModel load(const std::string& path);
};

// Algorithm-1 training: K rounds of segmentation, weighted EM-EDM and
// regulator refit; flat configs collapse to one whole-trajectory segment and
// never touch segmentation or regulator code.
TrainedModel halide_fit(const DatasetManifest& dataset,
                        const std::unordered_map<std::string, double>& weights,
                        const RunConfig& cfg, int threads = 1);

struct PredictionStep {
  int step_index = 0;
  int true_action = 0;
  Eigen::VectorXd distribution;
};

struct TrajectoryPrediction {
  std::string trajectory_id;
  std::vector<PredictionStep> steps;
  std::vector<int> segment_labels;  // filtered q per step (0s for flat)
};

// Causal test-time prediction: forward-filtered segmentation with r_bar = 1,
// belief reset to the priors at segment starts, Bayesian belief update from
// each observed (x, a) after predicting.
TrajectoryPrediction predict_trajectory(const TrainedModel& model, const Trajectory& traj);

struct NamedConfig {
  std::string name;
  RunConfig config;
};

// The Table-1 grid: BC/EDM/THEMES/EDM_W/HALIDE_0 on expert data and
// EDM/HALIDE_1/EDM_W/HALIDE on expert-plus-imperfect data.
std::vector<NamedConfig> baseline_grid(const RunConfig& base);

}  // namespace halide
