// halide: hierarchical apprenticeship learning from ranked demonstrations.
// Subcommands: synth, rank, segment, fit, predict, eval, bench.
// Exit codes: 0 success, 1 usage, 2 data/validation, 3 numerical failure.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "halide/dataset.hpp"
#include "halide/errors.hpp"
#include "halide/evaluation.hpp"
#include "halide/hashing.hpp"
#include "halide/pipeline.hpp"
#include "halide/ranking.hpp"
#include "halide/regulator.hpp"
#include "halide/rng.hpp"
#include "halide/segmentation.hpp"
#include "halide/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

void log_line(const std::string& level, const std::string& event, json fields = json::object()) {
  fields["level"] = level;
  fields["event"] = event;
  std::cerr << fields.dump() << "\n";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw halide::ValidationError("cannot open file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw halide::ValidationError("cannot write file '" + path + "'");
  out << content;
}

// Every command drops a manifest beside its primary output. Only the
// duration field varies between reruns; primary outputs stay byte-identical.
struct ManifestWriter {
  std::string command;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  void add_input(const std::string& path) {
    inputs.push_back({path, halide::fnv1a64_hex(read_file(path))});
  }

  void write(const std::string& beside_output) const {
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - started)
                             .count();
    json j;
    j["command"] = command;
    j["seed"] = seed;
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    json in = json::object();
    for (const auto& [path, digest] : inputs) in[path] = digest;
    j["inputs"] = std::move(in);
    j["version"] = kVersion;
    j["duration_ms"] = elapsed;
    write_file(beside_output + ".manifest.json", j.dump() + "\n");
  }
};

halide::RunConfig load_config(const std::string& path, std::uint64_t seed_override,
                              bool seed_given) {
  halide::RunConfig cfg =
      path.empty() ? halide::RunConfig{} : halide::RunConfig::from_json_text(read_file(path));
  if (seed_given) cfg.seed = seed_override;
  return cfg;
}

struct RankOptions {
  std::string data;
  std::string out;
  double alpha = 1.0;
  std::string groups = "terciles";
};

int run_rank(const RankOptions& opt, ManifestWriter manifest) {
  const auto dataset = halide::load_dataset(opt.data);
  manifest.add_input(opt.data);

  halide::GroupCuts cuts;
  if (opt.groups == "terciles") {
    cuts = halide::tercile_cuts(dataset);
  } else if (opt.groups.rfind("fixed:", 0) == 0) {
    const std::string spec = opt.groups.substr(6);
    const auto comma = spec.find(',');
    if (comma == std::string::npos) {
      throw halide::ValidationError("--groups fixed:c1,c2 needs two cutpoints");
    }
    cuts.c1 = std::stod(spec.substr(0, comma));
    cuts.c2 = std::stod(spec.substr(comma + 1));
  } else {
    throw halide::ValidationError("--groups must be 'terciles' or 'fixed:c1,c2'");
  }

  const auto records = halide::rank_dataset(dataset, opt.alpha, cuts);
  std::ostringstream out;
  for (const auto& r : records) {
    out << json{{"id", r.trajectory_id},
                {"nlg", r.nlg},
                {"z", r.z},
                {"weight", r.weight},
                {"qlg", r.qlg_high ? "High" : "Low"}}
               .dump()
        << "\n";
  }
  write_file(opt.out, out.str());
  manifest.write(opt.out);
  log_line("info", "rank-complete", {{"trajectories", records.size()}, {"out", opt.out}});
  return 0;
}

std::unordered_map<std::string, double> load_weights_file(const std::string& path) {
  std::unordered_map<std::string, double> weights;
  std::istringstream in(read_file(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      weights[rec.at("id").get<std::string>()] = rec.at("weight").get<double>();
    } catch (const json::exception& e) {
      throw halide::ValidationError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return weights;
}

struct SegmentOptions {
  std::string data;
  std::string config;
  std::string out;
  int threads = 1;
};

int run_segment(const SegmentOptions& opt, ManifestWriter manifest, std::uint64_t seed,
                bool seed_given) {
  auto dataset = halide::load_dataset(opt.data);
  manifest.add_input(opt.data);
  halide::RunConfig cfg = load_config(opt.config, seed, seed_given);
  if (!opt.config.empty()) manifest.add_input(opt.config);
  cfg.seg.seed = cfg.seed;
  manifest.config_hash = cfg.hash();

  halide::center_states(dataset);
  std::vector<std::vector<double>> r_bar;
  for (const auto& traj : dataset.trajectories) {
    r_bar.push_back(std::vector<double>(traj.steps.size(), 1.0));
  }
  const auto res = halide::rmt_ticc_fit(dataset, r_bar, cfg.seg, opt.threads);

  std::ostringstream out;
  json models = json::array();
  for (const auto& model : res.models) {
    json theta = json::array();
    for (Eigen::Index i = 0; i < model.theta.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < model.theta.cols(); ++j) row.push_back(model.theta(i, j));
      theta.push_back(std::move(row));
    }
    models.push_back(json{{"theta", std::move(theta)},
                          {"logdet", model.logdet},
                          {"converged", model.converged}});
  }
  out << json{{"type", "models"},
              {"models", std::move(models)},
              {"beta_effective", res.beta_effective},
              {"tau_effective", res.tau_effective}}
             .dump()
      << "\n";
  for (std::size_t n = 0; n < dataset.trajectories.size(); ++n) {
    const auto subs = halide::cut_subtrajectories(dataset.trajectories[n], res.assignments[n]);
    json segments = json::array();
    for (const auto& s : subs) {
      segments.push_back(json{{"start", s.start}, {"end", s.end}, {"q", s.high_state}});
    }
    out << json{{"id", dataset.trajectories[n].id},
                {"assignment", res.assignments[n]},
                {"segments", std::move(segments)}}
               .dump()
        << "\n";
  }
  write_file(opt.out, out.str());
  manifest.write(opt.out);
  log_line("info", "segment-complete", {{"iterations", res.iterations}, {"out", opt.out}});
  return 0;
}

struct FitOptions {
  std::string data;
  std::string weights;
  std::string config;
  std::string out;
  int threads = 1;
};

int run_fit(const FitOptions& opt, ManifestWriter manifest, std::uint64_t seed, bool seed_given) {
  const auto dataset = halide::load_dataset(opt.data);
  manifest.add_input(opt.data);
  halide::RunConfig cfg = load_config(opt.config, seed, seed_given);
  if (!opt.config.empty()) manifest.add_input(opt.config);
  manifest.config_hash = cfg.hash();

  std::unordered_map<std::string, double> weights;
  if (!opt.weights.empty()) {
    weights = load_weights_file(opt.weights);
    manifest.add_input(opt.weights);
  }

  const auto model = halide::halide_fit(dataset, weights, cfg, opt.threads);
  write_file(opt.out, model.to_json_text() + "\n");
  manifest.write(opt.out);
  log_line("info", "fit-complete", {{"out", opt.out}, {"config_hash", cfg.hash()}});
  return 0;
}

struct PredictOptions {
  std::string model;
  std::string data;
  std::string out;
};

int run_predict(const PredictOptions& opt, ManifestWriter manifest) {
  const auto model = halide::TrainedModel::load(opt.model);
  manifest.add_input(opt.model);
  const auto dataset = halide::load_dataset(opt.data);
  manifest.add_input(opt.data);
  manifest.config_hash = model.config_hash;

  std::vector<halide::PredictionRecord> records;
  for (const auto& traj : dataset.trajectories) {
    const auto pred = halide::predict_trajectory(model, traj);
    for (const auto& step : pred.steps) {
      halide::PredictionRecord r;
      r.trajectory_id = traj.id;
      r.step_index = step.step_index;
      r.true_action = step.true_action;
      r.distribution = step.distribution;
      records.push_back(std::move(r));
    }
  }
  write_file(opt.out, halide::format_predictions(records));
  manifest.write(opt.out);
  log_line("info", "predict-complete", {{"records", records.size()}, {"out", opt.out}});
  return 0;
}

struct SynthOptions {
  std::string spec;
  std::string out;
  std::string truth;
};

int run_synth(const SynthOptions& opt, ManifestWriter manifest, std::uint64_t seed,
              bool seed_given) {
  halide::GeneratorSpec spec;
  if (!opt.spec.empty()) {
    spec = halide::GeneratorSpec::from_json_text(read_file(opt.spec));
    manifest.add_input(opt.spec);
  }
  if (seed_given) spec.seed = seed;
  manifest.seed = spec.seed;
  const auto synth = halide::generate(spec);
  write_file(opt.out, halide::format_dataset(synth.data));
  if (!opt.truth.empty()) write_file(opt.truth, synth.truth.to_json_text() + "\n");
  manifest.write(opt.out);
  log_line("info", "synth-complete", {{"trajectories", synth.data.size()}, {"out", opt.out}});
  return 0;
}

struct EvalOptions {
  std::string preds;
  std::string out;
  std::string cd;
};

std::pair<std::vector<std::string>, std::vector<std::string>> discover_grid(
    const std::string& dir) {
  std::vector<std::string> methods;
  std::vector<std::string> folds;
  if (!fs::is_directory(dir)) {
    throw halide::ValidationError("predictions directory '" + dir + "' not found");
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) methods.push_back(entry.path().filename().string());
  }
  std::sort(methods.begin(), methods.end());
  if (methods.empty()) throw halide::ValidationError("no method directories under '" + dir + "'");
  for (const auto& entry : fs::directory_iterator(dir + "/" + methods.front())) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = ".preds.jsonl";
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      folds.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::vector<std::string> ordered;
  halide::cohort_order(folds, ordered);
  return {methods, ordered};
}

int run_eval(const EvalOptions& opt, ManifestWriter manifest) {
  const auto [methods, folds] = discover_grid(opt.preds);
  const auto eval = halide::evaluate_grid(opt.preds, methods, folds);
  write_file(opt.out, halide::report_csv(eval));
  if (!opt.cd.empty() && folds.size() >= 2) {
    write_file(opt.cd, halide::cd_csv(eval.f1_report, methods));
    const fs::path cd_path(opt.cd);
    fs::path jaccard_path = cd_path.parent_path() / (cd_path.stem().string() + "_jaccard.csv");
    write_file(jaccard_path.string(), halide::cd_csv(eval.jaccard_report, methods));
  }
  manifest.write(opt.out);
  log_line("info", "eval-complete",
           {{"methods", methods.size()}, {"folds", folds.size()}, {"out", opt.out}});
  return 0;
}

struct BenchOptions {
  std::string data;
  std::string config;
  std::string outdir;
  int threads = 1;
};

int run_bench(const BenchOptions& opt, ManifestWriter manifest, std::uint64_t seed,
              bool seed_given) {
  const auto dataset = halide::load_dataset(opt.data);
  manifest.add_input(opt.data);
  halide::RunConfig base = load_config(opt.config, seed, seed_given);
  if (!opt.config.empty()) manifest.add_input(opt.config);
  manifest.config_hash = base.hash();

  const auto folds = halide::temporal_folds(dataset);
  const auto grid = halide::baseline_grid(base);
  std::vector<std::string> fold_names;
  for (const auto& fold : folds) fold_names.push_back(fold.test_cohort);

  for (const auto& fold : folds) {
    halide::DatasetManifest train, test;
    train.state_dim = test.state_dim = dataset.state_dim;
    train.num_actions = test.num_actions = dataset.num_actions;
    for (const auto& traj : dataset.trajectories) {
      if (traj.cohort == fold.test_cohort) {
        test.trajectories.push_back(traj);
      } else if (std::find(fold.train_cohorts.begin(), fold.train_cohorts.end(), traj.cohort) !=
                 fold.train_cohorts.end()) {
        train.trajectories.push_back(traj);
      }
    }
    if (train.trajectories.empty() || test.trajectories.empty()) {
      throw halide::ValidationError("bench: empty train or test split for fold '" +
                                    fold.test_cohort + "'");
    }

    // ranking signals computed on the training pool only
    const auto rank_records = halide::rank_dataset(train, base.alpha);
    const auto weights = halide::weight_lookup(rank_records);
    std::vector<halide::QLGLabel> labels;
    for (const auto& r : rank_records) {
      halide::QLGLabel l;
      l.trajectory_id = r.trajectory_id;
      l.high = r.qlg_high;
      labels.push_back(l);
    }
    const auto partition = halide::partition_expert(train, labels);

    for (const auto& named : grid) {
      halide::RunConfig cfg = named.config;
      cfg.seed = halide::Rng(base.seed, "bench-" + named.name).next_u64();

      halide::DatasetManifest selected;
      selected.state_dim = train.state_dim;
      selected.num_actions = train.num_actions;
      if (cfg.data_axis == halide::DataAxis::ExpertOnly) {
        for (const auto& id : partition.expert_ids) {
          selected.trajectories.push_back(*train.find(id));
        }
      } else {
        selected.trajectories = train.trajectories;
      }
      if (selected.trajectories.empty()) {
        throw halide::ValidationError("bench: no expert trajectories in fold '" +
                                      fold.test_cohort + "'");
      }

      const auto model = halide::halide_fit(selected, weights, cfg, opt.threads);
      std::vector<halide::PredictionRecord> records;
      for (const auto& traj : test.trajectories) {
        const auto pred = halide::predict_trajectory(model, traj);
        for (const auto& step : pred.steps) {
          halide::PredictionRecord r;
          r.trajectory_id = traj.id;
          r.step_index = step.step_index;
          r.true_action = step.true_action;
          r.distribution = step.distribution;
          records.push_back(std::move(r));
        }
      }
      const std::string path =
          opt.outdir + "/" + named.name + "/" + fold.test_cohort + ".preds.jsonl";
      write_file(path, halide::format_predictions(records));
      log_line("info", "bench-cell-complete",
               {{"method", named.name}, {"fold", fold.test_cohort}});
    }
  }

  std::vector<std::string> method_names;
  for (const auto& named : grid) method_names.push_back(named.name);
  std::sort(method_names.begin(), method_names.end());
  const auto eval = halide::evaluate_grid(opt.outdir, method_names, fold_names);
  write_file(opt.outdir + "/report.csv", halide::report_csv(eval));
  if (fold_names.size() >= 2) {
    write_file(opt.outdir + "/cd_f1.csv", halide::cd_csv(eval.f1_report, method_names));
    write_file(opt.outdir + "/cd_jaccard.csv", halide::cd_csv(eval.jaccard_report, method_names));
  }
  manifest.write(opt.outdir + "/bench");
  log_line("info", "bench-complete", {{"outdir", opt.outdir}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HALIDE: hierarchical apprenticeship learning from ranked demonstrations"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();  // global --seed/--threads may follow the subcommand

  std::uint64_t seed = 0;
  bool seed_given = false;
  app.add_option("--seed", seed, "root seed for all random sub-streams")
      ->each([&](const std::string&) { seed_given = true; });
  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap (output is thread-count invariant)");

  RankOptions rank_opt;
  auto* rank = app.add_subcommand("rank", "compute NLG/QLG ranking weights");
  rank->set_version_flag("--version", kVersion);
  rank->add_option("--data", rank_opt.data, "trajectory JSONL")->required();
  rank->add_option("--alpha", rank_opt.alpha, "sigmoid sensitivity");
  rank->add_option("--groups", rank_opt.groups, "terciles | fixed:c1,c2");
  rank->add_option("--out", rank_opt.out, "output weights JSONL")->required();

  SegmentOptions seg_opt;
  auto* segment = app.add_subcommand("segment", "RMT-TICC segmentation");
  segment->set_version_flag("--version", kVersion);
  segment->add_option("--data", seg_opt.data)->required();
  segment->add_option("--config", seg_opt.config, "RunConfig JSON");
  segment->add_option("--out", seg_opt.out)->required();

  FitOptions fit_opt;
  auto* fit = app.add_subcommand("fit", "train a model (Algorithm-1 loop)");
  fit->set_version_flag("--version", kVersion);
  fit->add_option("--data", fit_opt.data)->required();
  fit->add_option("--weights", fit_opt.weights, "weights JSONL from `rank`");
  fit->add_option("--config", fit_opt.config, "RunConfig JSON");
  fit->add_option("--out", fit_opt.out)->required();

  PredictOptions predict_opt;
  auto* predict = app.add_subcommand("predict", "causal per-step action distributions");
  predict->set_version_flag("--version", kVersion);
  predict->add_option("--model", predict_opt.model)->required();
  predict->add_option("--data", predict_opt.data)->required();
  predict->add_option("--out", predict_opt.out)->required();

  SynthOptions synth_opt;
  auto* synth = app.add_subcommand("synth", "generate a ground-truth benchmark dataset");
  synth->set_version_flag("--version", kVersion);
  synth->add_option("--spec", synth_opt.spec, "GeneratorSpec JSON (defaults used when absent)");
  synth->add_option("--out", synth_opt.out)->required();
  synth->add_option("--truth", synth_opt.truth, "ground-truth JSON output");

  EvalOptions eval_opt;
  auto* eval = app.add_subcommand("eval", "metrics, Friedman/Conover CD data");
  eval->set_version_flag("--version", kVersion);
  eval->add_option("--preds", eval_opt.preds, "directory of <method>/<fold>.preds.jsonl")
      ->required();
  eval->add_option("--out", eval_opt.out, "report CSV")->required();
  eval->add_option("--cd", eval_opt.cd, "critical-difference CSV (F1; _jaccard twin emitted)");

  BenchOptions bench_opt;
  auto* bench = app.add_subcommand("bench", "train and evaluate the full baseline grid");
  bench->set_version_flag("--version", kVersion);
  bench->add_option("--data", bench_opt.data)->required();
  bench->add_option("--config", bench_opt.config, "base RunConfig JSON");
  bench->add_option("--outdir", bench_opt.outdir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the usage message
    return 1;
  }

  ManifestWriter manifest;
  manifest.seed = seed;
  for (int i = 0; i < argc; ++i) {
    if (i > 0) manifest.command += " ";
    manifest.command += argv[i];
  }

  try {
    if (*rank) return run_rank(rank_opt, std::move(manifest));
    if (*segment) {
      seg_opt.threads = threads;
      return run_segment(seg_opt, std::move(manifest), seed, seed_given);
    }
    if (*fit) {
      fit_opt.threads = threads;
      return run_fit(fit_opt, std::move(manifest), seed, seed_given);
    }
    if (*predict) return run_predict(predict_opt, std::move(manifest));
    if (*synth) return run_synth(synth_opt, std::move(manifest), seed, seed_given);
    if (*eval) return run_eval(eval_opt, std::move(manifest));
    if (*bench) {
      bench_opt.threads = threads;
      return run_bench(bench_opt, std::move(manifest), seed, seed_given);
    }
  } catch (const halide::ValidationError& e) {
    log_line("error", "validation-error", {{"message", e.what()}});
    return 2;
  } catch (const halide::NumericError& e) {
    log_line("error", "numeric-error", {{"message", e.what()}});
    return 3;
  } catch (const std::exception& e) {
    log_line("error", "internal-error", {{"message", e.what()}});
    return 3;
  }
  return 0;
}
