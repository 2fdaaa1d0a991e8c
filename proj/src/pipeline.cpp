#include "halide/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "halide/errors.hpp"
#include "halide/hashing.hpp"
#include "halide/rng.hpp"

namespace halide {

using nlohmann::json;

namespace {

std::string axis_name(DataAxis a) {
  return a == DataAxis::ExpertOnly ? "expert_only" : "expert_plus_imperfect";
}
std::string axis_name(WeightAxis a) { return a == WeightAxis::Uniform ? "uniform" : "ranked"; }
std::string axis_name(HierarchyAxis a) {
  return a == HierarchyAxis::Flat ? "flat" : "hierarchical";
}

DataAxis parse_data_axis(const std::string& s) {
  if (s == "expert_only") return DataAxis::ExpertOnly;
  if (s == "expert_plus_imperfect") return DataAxis::ExpertPlusImperfect;
  throw ValidationError("config: unknown data_axis '" + s + "'");
}
WeightAxis parse_weight_axis(const std::string& s) {
  if (s == "uniform") return WeightAxis::Uniform;
  if (s == "ranked") return WeightAxis::Ranked;
  throw ValidationError("config: unknown weight_axis '" + s + "'");
}
HierarchyAxis parse_hierarchy_axis(const std::string& s) {
  if (s == "flat") return HierarchyAxis::Flat;
  if (s == "hierarchical") return HierarchyAxis::Hierarchical;
  throw ValidationError("config: unknown hierarchy_axis '" + s + "'");
}

json seg_to_json(const SegmentationConfig& c) {
  return json{{"Q", c.Q},
              {"omega", c.omega},
              {"lambda_seg", c.lambda_seg},
              {"beta", c.beta},
              {"tau", c.tau},
              {"admm_rho", c.admm_rho},
              {"admm_tol", c.admm_tol},
              {"admm_max_iter", c.admm_max_iter},
              {"max_ticc_iter", c.max_ticc_iter},
              {"seed", c.seed}};
}

SegmentationConfig seg_from_json(const json& j) {
  SegmentationConfig c;
  c.Q = j.value("Q", c.Q);
  c.omega = j.value("omega", c.omega);
  c.lambda_seg = j.value("lambda_seg", c.lambda_seg);
  c.beta = j.value("beta", c.beta);
  c.tau = j.value("tau", c.tau);
  c.admm_rho = j.value("admm_rho", c.admm_rho);
  c.admm_tol = j.value("admm_tol", c.admm_tol);
  c.admm_max_iter = j.value("admm_max_iter", c.admm_max_iter);
  c.max_ticc_iter = j.value("max_ticc_iter", c.max_ticc_iter);
  c.seed = j.value("seed", c.seed);
  return c;
}

json em_to_json(const EMConfig& c) {
  return json{{"O", c.O},
              {"lambda_edm", c.lambda_edm},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"m_steps", c.m_steps},
              {"max_em_iter", c.max_em_iter},
              {"em_tol", c.em_tol},
              {"hidden", c.hidden},
              {"seed", c.seed}};
}

EMConfig em_from_json(const json& j) {
  EMConfig c;
  c.O = j.value("O", c.O);
  c.lambda_edm = j.value("lambda_edm", c.lambda_edm);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.m_steps = j.value("m_steps", c.m_steps);
  c.max_em_iter = j.value("max_em_iter", c.max_em_iter);
  c.em_tol = j.value("em_tol", c.em_tol);
  c.hidden = j.value("hidden", c.hidden);
  c.seed = j.value("seed", c.seed);
  return c;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::VectorXd vector_from_json(const json& arr) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = arr[static_cast<std::size_t>(i)].get<double>();
  return v;
}

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

json policy_to_json(const EnergyPolicy& pol) {
  json j;
  j["arch"] = pol.arch() == EnergyPolicy::Arch::Linear ? "linear" : "tanh";
  j["state_dim"] = pol.state_dim();
  j["num_actions"] = pol.num_actions();
  j["hidden"] = pol.hidden();
  j["params"] = vector_to_json(pol.params());
  return j;
}

EnergyPolicy policy_from_json(const json& j) {
  const std::string arch = j.at("arch").get<std::string>();
  const int m = j.at("state_dim").get<int>();
  const int A = j.at("num_actions").get<int>();
  EnergyPolicy pol = arch == "tanh" ? EnergyPolicy(m, A, j.at("hidden").get<int>())
                                    : EnergyPolicy(m, A);
  pol.set_params(vector_from_json(j.at("params")));
  return pol;
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  c.data_axis = parse_data_axis(j.value("data_axis", axis_name(c.data_axis)));
  c.weight_axis = parse_weight_axis(j.value("weight_axis", axis_name(c.weight_axis)));
  c.hierarchy_axis = parse_hierarchy_axis(j.value("hierarchy_axis", axis_name(c.hierarchy_axis)));
  c.K = j.value("K", c.K);
  if (j.contains("seg")) c.seg = seg_from_json(j.at("seg"));
  if (j.contains("em")) c.em = em_from_json(j.at("em"));
  c.alpha = j.value("alpha", c.alpha);
  c.seed = j.value("seed", c.seed);
  if (c.K < 1) throw ValidationError("config: K must be >= 1");
  return c;
}

std::string RunConfig::to_json_text() const {
  json j{{"data_axis", axis_name(data_axis)},
         {"weight_axis", axis_name(weight_axis)},
         {"hierarchy_axis", axis_name(hierarchy_axis)},
         {"K", K},
         {"seg", seg_to_json(seg)},
         {"em", em_to_json(em)},
         {"alpha", alpha},
         {"seed", seed}};
  return j.dump();
}

std::string RunConfig::hash() const { return fnv1a64_hex(to_json_text()); }

std::string TrainedModel::to_json_text() const {
  json j;
  j["config"] = json::parse(config.to_json_text());
  j["config_hash"] = config_hash;
  j["state_mean"] = vector_to_json(state_mean);
  j["beta_effective"] = beta_effective;
  j["tau_effective"] = tau_effective;
  json clusters = json::array();
  for (const auto& model : cluster_models) {
    clusters.push_back(json{{"theta", matrix_to_json(model.theta)},
                            {"logdet", model.logdet},
                            {"converged", model.converged}});
  }
  j["cluster_models"] = std::move(clusters);
  json pols = json::array();
  for (const auto& pol : mixture.policies) pols.push_back(policy_to_json(pol));
  j["policies"] = std::move(pols);
  j["priors"] = vector_to_json(mixture.priors);
  j["regulator"] = json{{"reward", matrix_to_json(regulator.reward)},
                        {"normalized_reward", matrix_to_json(regulator.normalized_reward)},
                        {"gamma", regulator.gamma}};
  return j.dump();
}

TrainedModel TrainedModel::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model: invalid JSON: ") + e.what());
  }
  TrainedModel model;
  model.config = RunConfig::from_json_text(j.at("config").dump());
  model.config_hash = j.value("config_hash", std::string{});
  model.state_mean = vector_from_json(j.at("state_mean"));
  model.beta_effective = j.value("beta_effective", 0.0);
  model.tau_effective = j.value("tau_effective", 1.0);
  for (const auto& cj : j.at("cluster_models")) {
    ToeplitzClusterModel cm;
    cm.theta = matrix_from_json(cj.at("theta"));
    cm.logdet = cj.at("logdet").get<double>();
    cm.converged = cj.value("converged", true);
    model.cluster_models.push_back(std::move(cm));
  }
  for (const auto& pj : j.at("policies")) model.mixture.policies.push_back(policy_from_json(pj));
  model.mixture.priors = vector_from_json(j.at("priors"));
  model.regulator.reward = matrix_from_json(j.at("regulator").at("reward"));
  model.regulator.normalized_reward = matrix_from_json(j.at("regulator").at("normalized_reward"));
  model.regulator.gamma = j.at("regulator").at("gamma").get<double>();
  return model;
}

void TrainedModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write model file '" + path + "'");
  out << to_json_text() << "\n";
}

TrainedModel TrainedModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open model file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

namespace {

// Materializes per-step decision weights: the trajectory-level ranking weight
// distributed across its steps, or literal 1 on the uniform axis.
DatasetManifest weighted_copy(const DatasetManifest& dataset,
                              const std::unordered_map<std::string, double>& weights,
                              WeightAxis axis) {
  DatasetManifest out = dataset;
  for (auto& traj : out.trajectories) {
    double w = 1.0;
    if (axis == WeightAxis::Ranked) {
      const auto it = weights.find(traj.id);
      if (it != weights.end()) w = it->second;
      if (!(w > 0.0 && w <= 1.0)) {
        throw ValidationError("weight for trajectory '" + traj.id + "' outside (0,1]");
      }
    }
    for (auto& step : traj.steps) step.w = w;
  }
  return out;
}

std::vector<SubTrajectory> whole_trajectory_segments(const DatasetManifest& d) {
  std::vector<SubTrajectory> subs;
  subs.reserve(d.trajectories.size());
  for (const auto& traj : d.trajectories) {
    SubTrajectory sub;
    sub.owner = traj.id;
    sub.start = 0;
    sub.end = traj.length();
    sub.high_state = 0;
    sub.steps = traj.steps;
    subs.push_back(std::move(sub));
  }
  return subs;
}

}  // namespace

TrainedModel halide_fit(const DatasetManifest& dataset,
                        const std::unordered_map<std::string, double>& weights,
                        const RunConfig& cfg, int threads) {
  validate_dataset(dataset);
  if (dataset.trajectories.empty()) throw ValidationError("halide_fit: empty dataset");

  TrainedModel model;
  model.config = cfg;
  model.config_hash = cfg.hash();

  DatasetManifest working = weighted_copy(dataset, weights, cfg.weight_axis);
  model.state_mean = center_states(working);

  EMConfig em_cfg = cfg.em;
  em_cfg.seed = cfg.seed;

  if (cfg.hierarchy_axis == HierarchyAxis::Flat) {
    // single whole-trajectory segment, one round, no segmentation/regulator
    const auto subs = whole_trajectory_segments(working);
    model.mixture = em_edm_fit(subs, working.state_dim, working.num_actions, em_cfg, threads);
    model.regulator.reward = Eigen::MatrixXd();
    model.regulator.normalized_reward = Eigen::MatrixXd();
    return model;
  }

  SegmentationConfig seg_cfg = cfg.seg;
  std::vector<std::vector<double>> r_bar(working.trajectories.size());
  for (std::size_t n = 0; n < working.trajectories.size(); ++n) {
    r_bar[n].assign(working.trajectories[n].steps.size(), 1.0);
  }

  TiccResult ticc;
  MixtureState mixture;
  HighLevelModel regulator;
  for (int k = 0; k < cfg.K; ++k) {
    seg_cfg.seed = Rng(cfg.seed, "ticc-round", static_cast<std::uint64_t>(k)).next_u64();
    em_cfg.seed = Rng(cfg.seed, "em-round", static_cast<std::uint64_t>(k)).next_u64();

    ticc = rmt_ticc_fit(working, r_bar, seg_cfg, threads);

    std::vector<SubTrajectory> subs;
    std::vector<std::vector<int>> segment_q(working.trajectories.size());
    std::vector<std::size_t> first_seg(working.trajectories.size());
    for (std::size_t n = 0; n < working.trajectories.size(); ++n) {
      first_seg[n] = subs.size();
      auto cut = cut_subtrajectories(working.trajectories[n], ticc.assignments[n]);
      for (auto& sub : cut) {
        segment_q[n].push_back(sub.high_state);
        subs.push_back(std::move(sub));
      }
    }

    mixture = em_edm_fit(subs, working.state_dim, working.num_actions, em_cfg, threads);

    std::vector<std::vector<int>> segment_o(working.trajectories.size());
    for (std::size_t n = 0; n < working.trajectories.size(); ++n) {
      const std::size_t begin = first_seg[n];
      const std::size_t end =
          n + 1 < working.trajectories.size() ? first_seg[n + 1] : subs.size();
      for (std::size_t s = begin; s < end; ++s) {
        segment_o[n].push_back(mixture.hard_labels[s]);
      }
    }

    const HighLevelData hl = build_high_level(segment_q, segment_o, seg_cfg.Q, em_cfg.O);
    IrlConfig irl;
    regulator = maxent_irl_fit(hl, irl);
    r_bar = distribute_reward(regulator, ticc.assignments, segment_o);
  }

  model.cluster_models = std::move(ticc.models);
  model.mixture = std::move(mixture);
  model.regulator = std::move(regulator);
  model.beta_effective = ticc.beta_effective;
  model.tau_effective = ticc.tau_effective;
  return model;
}

TrajectoryPrediction predict_trajectory(const TrainedModel& model, const Trajectory& traj) {
  const int m = static_cast<int>(model.state_mean.size());
  for (const auto& step : traj.steps) {
    if (step.x.size() != m) throw ValidationError("predict: state dimension mismatch");
  }
  const int O = static_cast<int>(model.mixture.policies.size());
  const bool hierarchical = model.config.hierarchy_axis == HierarchyAxis::Hierarchical;

  Trajectory centered = traj;
  for (auto& step : centered.steps) step.x -= model.state_mean;

  TrajectoryPrediction pred;
  pred.trajectory_id = traj.id;
  const int T = centered.length();

  std::vector<int> labels(static_cast<std::size_t>(T), 0);
  if (hierarchical) {
    const auto windows = windowize(centered, model.config.seg.omega);
    // R-bar lookup needs the o label prediction is still computing, so the
    // test-time consistency term runs with r_bar = 1
    const std::vector<double> ones(windows.size(), 1.0);
    labels = dp_assign_filtered(windows, model.cluster_models, ones, model.beta_effective,
                                model.tau_effective);
  }
  pred.segment_labels = labels;

  Eigen::VectorXd log_belief = model.mixture.priors.array().log().matrix();
  for (int t = 0; t < T; ++t) {
    const Step& step = centered.steps[static_cast<std::size_t>(t)];
    if (t > 0 && labels[static_cast<std::size_t>(t)] != labels[static_cast<std::size_t>(t - 1)]) {
      log_belief = model.mixture.priors.array().log().matrix();  // new segment
    }
    Eigen::VectorXd belief = (log_belief.array() - logsumexp(log_belief)).exp();
    PredictionStep ps;
    ps.step_index = t;
    ps.true_action = step.a;
    ps.distribution = mixture_predict(model.mixture, step.x, belief);
    pred.steps.push_back(std::move(ps));
    // posterior update from the observed decision: pi_o(a|x) / U_o(x)
    for (int o = 0; o < O; ++o) {
      const EnergyPolicy& pol = model.mixture.policies[static_cast<std::size_t>(o)];
      const Eigen::VectorXd f = pol.scores(step.x);
      log_belief[o] += f[step.a] - 2.0 * logsumexp(f);
    }
  }
  return pred;
}

std::vector<NamedConfig> baseline_grid(const RunConfig& base) {
  auto make = [&](const std::string& name, DataAxis d, WeightAxis w, HierarchyAxis h,
                  int O_override, double lambda_override) {
    RunConfig c = base;
    c.data_axis = d;
    c.weight_axis = w;
    c.hierarchy_axis = h;
    if (O_override > 0) c.em.O = O_override;
    if (lambda_override >= 0.0) c.em.lambda_edm = lambda_override;
    return NamedConfig{name, c};
  };
  std::vector<NamedConfig> grid;
  // expert-only
  grid.push_back(make("BC", DataAxis::ExpertOnly, WeightAxis::Uniform, HierarchyAxis::Flat, 1, 0.0));
  grid.push_back(make("EDM", DataAxis::ExpertOnly, WeightAxis::Uniform, HierarchyAxis::Flat, 1, -1.0));
  grid.push_back(make("THEMES", DataAxis::ExpertOnly, WeightAxis::Uniform, HierarchyAxis::Hierarchical, -1, -1.0));
  grid.push_back(make("EDM_W", DataAxis::ExpertOnly, WeightAxis::Ranked, HierarchyAxis::Flat, 1, -1.0));
  grid.push_back(make("HALIDE_0", DataAxis::ExpertOnly, WeightAxis::Ranked, HierarchyAxis::Hierarchical, -1, -1.0));
  // expert plus imperfect
  grid.push_back(make("EDM_EI", DataAxis::ExpertPlusImperfect, WeightAxis::Uniform, HierarchyAxis::Flat, 1, -1.0));
  grid.push_back(make("HALIDE_1", DataAxis::ExpertPlusImperfect, WeightAxis::Uniform, HierarchyAxis::Hierarchical, -1, -1.0));
  grid.push_back(make("EDM_W_EI", DataAxis::ExpertPlusImperfect, WeightAxis::Ranked, HierarchyAxis::Flat, 1, -1.0));
  grid.push_back(make("HALIDE", DataAxis::ExpertPlusImperfect, WeightAxis::Ranked, HierarchyAxis::Hierarchical, -1, -1.0));
  return grid;
}

}  // namespace halide
