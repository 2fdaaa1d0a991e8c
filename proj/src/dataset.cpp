#include "halide/dataset.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_set>

#include "halide/errors.hpp"

namespace halide {

using nlohmann::json;

const Trajectory* DatasetManifest::find(const std::string& id) const {
  for (const auto& traj : trajectories) {
    if (traj.id == id) return &traj;
  }
  return nullptr;
}

namespace {

void validate_trajectory(const DatasetManifest& d, const Trajectory& traj) {
  if (traj.steps.empty()) {
    throw ValidationError("trajectory '" + traj.id + "': trajectory must have >=1 step");
  }
  if (traj.pretest && (*traj.pretest < 0.0 || *traj.pretest > 1.0)) {
    throw ValidationError("trajectory '" + traj.id + "': pretest outside [0,1]");
  }
  if (traj.posttest && (*traj.posttest < 0.0 || *traj.posttest > 1.0)) {
    throw ValidationError("trajectory '" + traj.id + "': posttest outside [0,1]");
  }
  double prev_t = -1.0;
  for (std::size_t s = 0; s < traj.steps.size(); ++s) {
    const Step& step = traj.steps[s];
    const std::string where = "trajectory '" + traj.id + "' step " + std::to_string(s);
    if (step.x.size() != d.state_dim) {
      throw ValidationError(where + ": state vector has length " +
                            std::to_string(step.x.size()) + ", expected " +
                            std::to_string(d.state_dim));
    }
    if (!step.x.allFinite()) throw ValidationError(where + ": non-finite state entry");
    if (step.a < 0 || step.a >= d.num_actions) {
      throw ValidationError(where + ": action " + std::to_string(step.a) +
                            " outside [0," + std::to_string(d.num_actions - 1) + "]");
    }
    if (!(step.w > 0.0 && step.w <= 1.0)) {
      throw ValidationError(where + ": weight must lie in (0,1]");
    }
    if (step.t < 0.0 || !std::isfinite(step.t)) {
      throw ValidationError(where + ": elapsed time must be finite and non-negative");
    }
    if (s > 0 && step.t <= prev_t) {
      throw ValidationError(where + ": elapsed time not strictly increasing");
    }
    prev_t = step.t;
  }
}

}  // namespace

void validate_dataset(const DatasetManifest& d) {
  if (d.state_dim < 1) throw ValidationError("state_dim must be >= 1");
  if (d.num_actions < 2) throw ValidationError("num_actions must be >= 2");
  std::unordered_set<std::string> seen;
  for (const auto& traj : d.trajectories) {
    if (!seen.insert(traj.id).second) {
      throw ValidationError("duplicate trajectory id '" + traj.id + "'");
    }
    validate_trajectory(d, traj);
  }
}

namespace {

Trajectory parse_trajectory_json(const json& rec, int line_no) {
  const std::string where = "line " + std::to_string(line_no);
  if (!rec.is_object()) throw ValidationError(where + ": expected a JSON object");
  Trajectory traj;
  try {
    traj.id = rec.at("id").get<std::string>();
    traj.cohort = rec.value("cohort", std::string{});
    if (rec.contains("pretest")) traj.pretest = rec.at("pretest").get<double>();
    if (rec.contains("posttest")) traj.posttest = rec.at("posttest").get<double>();
    for (const auto& s : rec.at("steps")) {
      Step step;
      step.t = s.at("t").get<double>();
      const auto& xv = s.at("x");
      step.x.resize(static_cast<Eigen::Index>(xv.size()));
      for (std::size_t k = 0; k < xv.size(); ++k) step.x[static_cast<Eigen::Index>(k)] = xv[k].get<double>();
      step.a = s.at("a").get<int>();
      step.w = s.value("w", 1.0);
      traj.steps.push_back(std::move(step));
    }
  } catch (const json::exception& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return traj;
}

}  // namespace

DatasetManifest parse_dataset(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  int line_no = 0;
  DatasetManifest d;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    if (!have_meta) {
      if (!rec.is_object() || rec.value("type", std::string{}) != "meta") {
        throw ValidationError("line " + std::to_string(line_no) +
                              ": first record must be {\"type\":\"meta\",...}");
      }
      try {
        d.state_dim = rec.at("state_dim").get<int>();
        d.num_actions = rec.at("num_actions").get<int>();
      } catch (const json::exception& e) {
        throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
      }
      have_meta = true;
      continue;
    }
    d.trajectories.push_back(parse_trajectory_json(rec, line_no));
  }
  if (!have_meta) throw ValidationError("empty dataset: missing meta record");
  validate_dataset(d);
  return d;
}

DatasetManifest load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_dataset(buf.str());
  } catch (ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::string format_dataset(const DatasetManifest& d) {
  std::ostringstream out;
  json meta{{"type", "meta"}, {"state_dim", d.state_dim}, {"num_actions", d.num_actions}};
  out << meta.dump() << "\n";
  for (const auto& traj : d.trajectories) {
    json rec;
    rec["id"] = traj.id;
    rec["cohort"] = traj.cohort;
    if (traj.pretest) rec["pretest"] = *traj.pretest;
    if (traj.posttest) rec["posttest"] = *traj.posttest;
    json steps = json::array();
    for (const auto& s : traj.steps) {
      json xs = json::array();
      for (Eigen::Index k = 0; k < s.x.size(); ++k) xs.push_back(s.x[k]);
      steps.push_back(json{{"t", s.t}, {"x", xs}, {"a", s.a}, {"w", s.w}});
    }
    rec["steps"] = std::move(steps);
    out << rec.dump() << "\n";
  }
  return out.str();
}

void write_dataset(const DatasetManifest& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write dataset file '" + path + "'");
  out << format_dataset(d);
}

Eigen::VectorXd center_states(DatasetManifest& d) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d.state_dim);
  long count = 0;
  for (const auto& traj : d.trajectories) {
    for (const auto& s : traj.steps) {
      mean += s.x;
      ++count;
    }
  }
  if (count > 0) mean /= static_cast<double>(count);
  for (auto& traj : d.trajectories) {
    for (auto& s : traj.steps) s.x -= mean;
  }
  return mean;
}

std::vector<Window> windowize(const Trajectory& traj, int omega) {
  if (omega < 1) throw ValidationError("window size omega must be >= 1");
  const int T = traj.length();
  std::vector<Window> windows;
  windows.reserve(static_cast<std::size_t>(T));
  const Eigen::Index m = traj.steps.front().x.size();
  for (int t = 0; t < T; ++t) {
    Window w;
    w.owner = traj.id;
    w.t_index = t;
    w.values.resize(m * omega);
    for (int k = 0; k < omega; ++k) {
      // window covers steps [t-omega+1, t]; indices before 0 replicate step 0
      const int src = std::max(0, t - omega + 1 + k);
      w.values.segment(static_cast<Eigen::Index>(k) * m, m) = traj.steps[static_cast<std::size_t>(src)].x;
    }
    w.dt = t == 0 ? 0.0 : traj.steps[static_cast<std::size_t>(t)].t - traj.steps[static_cast<std::size_t>(t - 1)].t;
    windows.push_back(std::move(w));
  }
  return windows;
}

}  // namespace halide
