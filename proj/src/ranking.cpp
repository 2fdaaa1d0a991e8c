#include "halide/ranking.hpp"

#include <algorithm>
#include <cmath>

#include "halide/errors.hpp"

namespace halide {

double nlg(double pretest, double posttest) {
  if (pretest >= 1.0) {
    throw ValidationError("nlg undefined: pretest = 1 gives zero denominator");
  }
  if (pretest < 0.0 || posttest < 0.0 || posttest > 1.0) {
    throw ValidationError("nlg: scores must lie in [0,1]");
  }
  return (posttest - pretest) / std::sqrt(1.0 - pretest);
}

StandardizeResult standardize(const std::vector<double>& values) {
  if (values.size() < 2) throw ValidationError("standardize needs >= 2 values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (const double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (const double v : values) var += (v - mean) * (v - mean);
  var /= n;
  StandardizeResult out;
  out.z.resize(values.size(), 0.0);
  if (var <= 0.0) {
    out.degenerate = true;
    return out;
  }
  const double sd = std::sqrt(var);
  for (std::size_t i = 0; i < values.size(); ++i) out.z[i] = (values[i] - mean) / sd;
  return out;
}

double weight_map(double z_std, double alpha) {
  if (!(alpha > 0.0)) throw ValidationError("weight_map: alpha must be > 0");
  return 1.0 / (1.0 + std::exp(-alpha * z_std));
}

GroupCuts tercile_cuts(const DatasetManifest& d) {
  std::vector<double> pres;
  for (const auto& traj : d.trajectories) {
    if (traj.pretest && traj.posttest) pres.push_back(*traj.pretest);
  }
  if (pres.empty()) return GroupCuts{};
  std::sort(pres.begin(), pres.end());
  auto quantile = [&](double p) {
    // linear interpolation between order statistics
    const double pos = p * (static_cast<double>(pres.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, pres.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return pres[lo] * (1.0 - frac) + pres[hi] * frac;
  };
  return GroupCuts{quantile(1.0 / 3.0), quantile(2.0 / 3.0)};
}

PerfGroup perf_group(double score, const GroupCuts& cuts) {
  if (score < cuts.c1) return PerfGroup::Low;
  if (score < cuts.c2) return PerfGroup::Medium;
  return PerfGroup::High;
}

QLGLabel qlg_label(const std::string& id, double pretest, double posttest, const GroupCuts& cuts) {
  QLGLabel label;
  label.trajectory_id = id;
  label.pre_group = perf_group(pretest, cuts);
  label.post_group = perf_group(posttest, cuts);
  const int pre = static_cast<int>(label.pre_group);
  const int post = static_cast<int>(label.post_group);
  label.high = post > pre || (pre == post && label.pre_group == PerfGroup::High);
  return label;
}

ExpertPartition partition_expert(const DatasetManifest& d,
                                 const std::vector<QLGLabel>& labels) {
  std::unordered_map<std::string, bool> high;
  high.reserve(labels.size());
  for (const auto& l : labels) high[l.trajectory_id] = l.high;
  ExpertPartition part;
  for (const auto& traj : d.trajectories) {
    auto it = high.find(traj.id);
    if (it == high.end()) {
      throw ValidationError("partition_expert: trajectory '" + traj.id + "' has no QLG label");
    }
    (it->second ? part.expert_ids : part.imperfect_ids).push_back(traj.id);
  }
  return part;
}

std::vector<RankRecord> rank_dataset(const DatasetManifest& d, double alpha,
                                     const GroupCuts& cuts) {
  std::vector<RankRecord> out(d.trajectories.size());
  std::vector<double> gains;
  std::vector<std::size_t> scored;
  for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
    const auto& traj = d.trajectories[i];
    out[i].trajectory_id = traj.id;
    if (traj.pretest && traj.posttest) {
      out[i].nlg = nlg(*traj.pretest, *traj.posttest);
      gains.push_back(out[i].nlg);
      scored.push_back(i);
      out[i].qlg_high = qlg_label(traj.id, *traj.pretest, *traj.posttest, cuts).high;
    }
  }
  if (scored.size() >= 2) {
    const StandardizeResult std_res = standardize(gains);
    for (std::size_t k = 0; k < scored.size(); ++k) {
      out[scored[k]].z = std_res.z[k];
      out[scored[k]].weight = weight_map(std_res.z[k], alpha);
    }
  }
  return out;
}

std::vector<RankRecord> rank_dataset(const DatasetManifest& d, double alpha) {
  return rank_dataset(d, alpha, tercile_cuts(d));
}

std::unordered_map<std::string, double> weight_lookup(const std::vector<RankRecord>& records) {
  std::unordered_map<std::string, double> out;
  out.reserve(records.size());
  for (const auto& r : records) out[r.trajectory_id] = r.weight;
  return out;
}

}  // namespace halide
