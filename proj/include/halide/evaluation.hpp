#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "halide/dataset.hpp"

namespace halide {

struct PredictionRecord {
  std::string trajectory_id;
  int step_index = 0;
  int true_action = 0;
  Eigen::VectorXd distribution;
};

// Support-weighted one-vs-rest multiclass metrics; AUC/APR carry a defined
// flag since they need at least two observed classes.
struct MetricReport {
  double acc = 0.0;
  double rec = 0.0;
  double prec = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  double apr = 0.0;
  double jaccard = 0.0;
  bool auc_defined = false;

  double get(const std::string& name) const;
};

MetricReport compute_metrics(const std::vector<PredictionRecord>& records);

struct Fold {
  std::vector<std::string> train_cohorts;
  std::string test_cohort;
};

// Train on cohorts c_1..c_j, test on c_{j+1}; cohorts ordered by the parsed
// (year, season) key of labels like "S21"/"F24", lexicographic fallback.
std::vector<Fold> temporal_folds(const DatasetManifest& d);

// true when every label parsed as a season-year cohort
bool cohort_order(const std::vector<std::string>& labels, std::vector<std::string>& ordered);

struct PairwiseDecision {
  int method_a = 0;
  int method_b = 0;
  double p_value = 1.0;        // Conover t-test p, Holm-adjusted
  bool significant = false;    // at alpha = 0.05 after Holm
};

struct FriedmanReport {
  double statistic = 0.0;  // tie-corrected Friedman chi-square (Conover T1)
  double p_value = 1.0;
  bool significant = false;
  std::vector<double> mean_ranks;  // rank 1 = best (highest metric)
  std::vector<PairwiseDecision> pairwise;
  std::vector<std::string> groups;  // compact letter display per method
};

// values(i, j): metric for method i on fold j; higher is better.
FriedmanReport friedman_conover(const Eigen::MatrixXd& values, double alpha = 0.05);

struct MethodSummary {
  std::string method;
  std::vector<MetricReport> per_fold;
  MetricReport mean;
  MetricReport stddev;  // population std over folds
};

MethodSummary summarize_method(const std::string& name, const std::vector<MetricReport>& folds);

// Parses prediction JSONL: one record per line with
// {"id", "step", "true_action", "dist":[...]}.
std::vector<PredictionRecord> load_predictions(const std::string& path);
std::string format_predictions(const std::vector<PredictionRecord>& records);

struct GridEvaluation {
  std::vector<MethodSummary> methods;
  std::vector<std::string> fold_names;
  FriedmanReport f1_report;
  FriedmanReport jaccard_report;
};

// Reads <dir>/<method>/<fold>.preds.jsonl for every method and fold.
GridEvaluation evaluate_grid(const std::string& dir, const std::vector<std::string>& methods,
                             const std::vector<std::string>& folds);

std::string report_csv(const GridEvaluation& eval);
std::string cd_csv(const FriedmanReport& report, const std::vector<std::string>& method_names);

}  // namespace halide
