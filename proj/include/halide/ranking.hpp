#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "halide/dataset.hpp"

namespace halide {

struct QualitySignal {
  std::string trajectory_id;
  double z_raw = 0.0;
  double z_std = 0.0;
};

enum class PerfGroup { Low = 0, Medium = 1, High = 2 };

struct QLGLabel {
  std::string trajectory_id;
  bool high = false;
  PerfGroup pre_group = PerfGroup::Low;
  PerfGroup post_group = PerfGroup::Low;
};

// Cutpoints separating low/medium/high groups, applied to both tests.
struct GroupCuts {
  double c1 = 1.0 / 3.0;
  double c2 = 2.0 / 3.0;
};

// (posttest - pretest) / sqrt(1 - pretest); pretest must be < 1.
double nlg(double pretest, double posttest);

struct StandardizeResult {
  std::vector<double> z;
  bool degenerate = false;  // zero variance: all-zero output
};

// z-scores with population (divisor n) standard deviation.
StandardizeResult standardize(const std::vector<double>& values);

// Eq-style sigmoid ranking weight 1/(1+exp(-alpha*z)).
double weight_map(double z_std, double alpha);

// Terciles of the pooled pretest distribution over trajectories that carry
// both test scores.
GroupCuts tercile_cuts(const DatasetManifest& d);

PerfGroup perf_group(double score, const GroupCuts& cuts);

// High if the student moved up a group or stayed high; Low otherwise.
QLGLabel qlg_label(const std::string& id, double pretest, double posttest, const GroupCuts& cuts);

struct ExpertPartition {
  std::vector<std::string> expert_ids;
  std::vector<std::string> imperfect_ids;
};

ExpertPartition partition_expert(const DatasetManifest& d,
                                 const std::vector<QLGLabel>& labels);

// Full per-trajectory ranking record as emitted by `halide rank`.
struct RankRecord {
  std::string trajectory_id;
  double nlg = 0.0;
  double z = 0.0;
  double weight = 0.5;
  bool qlg_high = false;
};

// NLG -> standardize -> sigmoid weight, plus QLG labels, for every trajectory
// with both test scores; trajectories missing a score get weight 0.5, z=0 and
// a Low label.
std::vector<RankRecord> rank_dataset(const DatasetManifest& d, double alpha,
                                     const GroupCuts& cuts);
std::vector<RankRecord> rank_dataset(const DatasetManifest& d, double alpha);

// Per-trajectory weight lookup used by the pipeline.
std::unordered_map<std::string, double> weight_lookup(const std::vector<RankRecord>& records);

}  // namespace halide
