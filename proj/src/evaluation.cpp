#include "halide/evaluation.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cctype>
#include <cmath>
#include <limits>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "halide/errors.hpp"

namespace halide {

using nlohmann::json;

double MetricReport::get(const std::string& name) const {
  if (name == "acc") return acc;
  if (name == "rec") return rec;
  if (name == "prec") return prec;
  if (name == "f1") return f1;
  if (name == "auc") return auc;
  if (name == "apr") return apr;
  if (name == "jaccard") return jaccard;
  throw ValidationError("unknown metric '" + name + "'");
}

namespace {

int argmax_action(const Eigen::VectorXd& dist) {
  int best = 0;
  for (Eigen::Index a = 1; a < dist.size(); ++a) {
    if (dist[a] > dist[best]) best = static_cast<int>(a);
  }
  return best;
}

// one-vs-rest ROC AUC via the midrank statistic
double class_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
    i = j + 1;
  }
  double rank_sum = 0.0;
  double n_pos = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (positive[k]) {
      rank_sum += rank[k];
      n_pos += 1.0;
    }
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

// average precision over descending score thresholds: tied scores form one
// block, each contributing its recall increment times the precision at the
// block end, so the result never depends on record order
double class_apr(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });
  double n_pos = 0.0;
  for (const bool p : positive) n_pos += p ? 1.0 : 0.0;
  if (n_pos == 0.0) return std::numeric_limits<double>::quiet_NaN();
  double tp = 0.0;
  double ap = 0.0;
  std::size_t k = 0;
  while (k < n) {
    std::size_t e = k;
    double block_tp = positive[idx[k]] ? 1.0 : 0.0;
    while (e + 1 < n && scores[idx[e + 1]] == scores[idx[k]]) {
      ++e;
      if (positive[idx[e]]) block_tp += 1.0;
    }
    tp += block_tp;
    ap += block_tp * tp / static_cast<double>(e + 1);
    k = e + 1;
  }
  return ap / n_pos;
}

}  // namespace

MetricReport compute_metrics(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw ValidationError("compute_metrics: no records");
  const int A = static_cast<int>(records.front().distribution.size());
  const double n = static_cast<double>(records.size());

  std::vector<double> support(static_cast<std::size_t>(A), 0.0);
  std::vector<double> tp(static_cast<std::size_t>(A), 0.0);
  std::vector<double> fp(static_cast<std::size_t>(A), 0.0);
  double correct = 0.0;
  for (const auto& r : records) {
    if (r.distribution.size() != A) throw ValidationError("compute_metrics: ragged distributions");
    const double total = r.distribution.sum();
    if (std::abs(total - 1.0) > 1e-9) {
      throw ValidationError("compute_metrics: distribution does not sum to 1");
    }
    if (r.true_action < 0 || r.true_action >= A) {
      throw ValidationError("compute_metrics: true action out of range");
    }
    const int hard = argmax_action(r.distribution);
    support[static_cast<std::size_t>(r.true_action)] += 1.0;
    if (hard == r.true_action) {
      correct += 1.0;
      tp[static_cast<std::size_t>(hard)] += 1.0;
    } else {
      fp[static_cast<std::size_t>(hard)] += 1.0;
    }
  }

  MetricReport rep;
  rep.acc = correct / n;

  int classes_present = 0;
  for (int c = 0; c < A; ++c) {
    if (support[static_cast<std::size_t>(c)] > 0.0) ++classes_present;
  }
  rep.auc_defined = classes_present >= 2;

  double w_rec = 0.0, w_prec = 0.0, w_f1 = 0.0, w_jac = 0.0, w_auc = 0.0, w_apr = 0.0;
  for (int c = 0; c < A; ++c) {
    const double sup = support[static_cast<std::size_t>(c)];
    if (sup == 0.0) continue;
    const double weight = sup / n;
    const double tpc = tp[static_cast<std::size_t>(c)];
    const double fpc = fp[static_cast<std::size_t>(c)];
    const double fnc = sup - tpc;
    const double recall = tpc / sup;
    const double precision = tpc + fpc > 0.0 ? tpc / (tpc + fpc) : 0.0;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    const double jac = tpc + fpc + fnc > 0.0 ? tpc / (tpc + fpc + fnc) : 0.0;
    w_rec += weight * recall;
    w_prec += weight * precision;
    w_f1 += weight * f1;
    w_jac += weight * jac;
    if (rep.auc_defined) {
      std::vector<double> scores;
      std::vector<bool> positive;
      scores.reserve(records.size());
      positive.reserve(records.size());
      for (const auto& r : records) {
        scores.push_back(r.distribution[c]);
        positive.push_back(r.true_action == c);
      }
      w_auc += weight * class_auc(scores, positive);
      w_apr += weight * class_apr(scores, positive);
    }
  }
  rep.rec = w_rec;
  rep.prec = w_prec;
  rep.f1 = w_f1;
  rep.jaccard = w_jac;
  rep.auc = rep.auc_defined ? w_auc : std::numeric_limits<double>::quiet_NaN();
  rep.apr = rep.auc_defined ? w_apr : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

namespace {

// "S21" -> (2021, 0), "F24" -> (2024, 1)
bool parse_cohort(const std::string& label, std::pair<int, int>& key) {
  if (label.size() < 2) return false;
  int season;
  if (label[0] == 'S' || label[0] == 's') {
    season = 0;
  } else if (label[0] == 'F' || label[0] == 'f') {
    season = 1;
  } else {
    return false;
  }
  int year = 0;
  for (std::size_t i = 1; i < label.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(label[i]))) return false;
    year = year * 10 + (label[i] - '0');
  }
  if (label.size() == 3) year += 2000;
  key = {year, season};
  return true;
}

}  // namespace

bool cohort_order(const std::vector<std::string>& labels, std::vector<std::string>& ordered) {
  ordered = labels;
  std::vector<std::pair<std::pair<int, int>, std::string>> keyed;
  bool parsable = true;
  for (const auto& l : labels) {
    std::pair<int, int> key;
    if (!parse_cohort(l, key)) {
      parsable = false;
      break;
    }
    keyed.push_back({key, l});
  }
  if (parsable) {
    std::sort(keyed.begin(), keyed.end());
    for (std::size_t i = 0; i < keyed.size(); ++i) ordered[i] = keyed[i].second;
  } else {
    std::sort(ordered.begin(), ordered.end());
  }
  return parsable;
}

std::vector<Fold> temporal_folds(const DatasetManifest& d) {
  std::vector<std::string> distinct;
  for (const auto& traj : d.trajectories) {
    if (std::find(distinct.begin(), distinct.end(), traj.cohort) == distinct.end()) {
      distinct.push_back(traj.cohort);
    }
  }
  if (distinct.size() < 2) {
    throw ValidationError("temporal_folds: need at least 2 distinct cohorts");
  }
  std::vector<std::string> ordered;
  cohort_order(distinct, ordered);
  std::vector<Fold> folds;
  for (std::size_t j = 1; j < ordered.size(); ++j) {
    Fold fold;
    fold.train_cohorts.assign(ordered.begin(), ordered.begin() + static_cast<long>(j));
    fold.test_cohort = ordered[j];
    folds.push_back(std::move(fold));
  }
  return folds;
}

namespace {

// within-block ranks, rank 1 for the highest value, midranks on ties
Eigen::MatrixXd block_ranks(const Eigen::MatrixXd& values) {
  const Eigen::Index k = values.rows();
  const Eigen::Index n = values.cols();
  Eigen::MatrixXd ranks(k, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(k));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](Eigen::Index a, Eigen::Index b) { return values(a, j) > values(b, j); });
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t e = i;
      while (e + 1 < idx.size() && values(idx[e + 1], j) == values(idx[i], j)) ++e;
      const double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(e)) + 1.0;
      for (std::size_t t = i; t <= e; ++t) ranks(idx[t], j) = mid;
      i = e + 1;
    }
  }
  return ranks;
}

std::vector<std::string> letter_groups(int k, const std::vector<double>& mean_ranks,
                                       const std::vector<std::vector<bool>>& different) {
  // methods in rank order; a group is a maximal run with no significant pair
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (mean_ranks[static_cast<std::size_t>(a)] != mean_ranks[static_cast<std::size_t>(b)]) {
      return mean_ranks[static_cast<std::size_t>(a)] < mean_ranks[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  std::vector<std::pair<int, int>> runs;
  for (int i = 0; i < k; ++i) {
    int j = i;
    while (j + 1 < k) {
      bool ok = true;
      for (int t = i; t <= j && ok; ++t) {
        if (different[static_cast<std::size_t>(order[static_cast<std::size_t>(t)])]
                     [static_cast<std::size_t>(order[static_cast<std::size_t>(j + 1)])]) {
          ok = false;
        }
      }
      if (!ok) break;
      ++j;
    }
    if (runs.empty() || runs.back().second < j) runs.push_back({i, j});
  }
  std::vector<std::string> groups(static_cast<std::size_t>(k));
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const char letter = static_cast<char>('a' + (r % 26));
    for (int t = runs[r].first; t <= runs[r].second; ++t) {
      groups[static_cast<std::size_t>(order[static_cast<std::size_t>(t)])] += letter;
    }
  }
  return groups;
}

}  // namespace

FriedmanReport friedman_conover(const Eigen::MatrixXd& values, double alpha) {
  const Eigen::Index k = values.rows();
  const Eigen::Index n = values.cols();
  if (k < 2 || n < 2) throw ValidationError("friedman_conover: need >= 2 methods and >= 2 folds");

  const Eigen::MatrixXd ranks = block_ranks(values);
  FriedmanReport report;
  report.mean_ranks.resize(static_cast<std::size_t>(k));
  Eigen::VectorXd rank_sums = ranks.rowwise().sum();
  for (Eigen::Index i = 0; i < k; ++i) {
    report.mean_ranks[static_cast<std::size_t>(i)] = rank_sums[i] / static_cast<double>(n);
  }

  const double kd = static_cast<double>(k);
  const double nd = static_cast<double>(n);
  const double A1 = ranks.array().square().sum();
  const double C1 = nd * kd * (kd + 1.0) * (kd + 1.0) / 4.0;
  double dev = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double d = rank_sums[i] - nd * (kd + 1.0) / 2.0;
    dev += d * d;
  }

  std::vector<std::vector<bool>> different(
      static_cast<std::size_t>(k), std::vector<bool>(static_cast<std::size_t>(k), false));

  if (A1 - C1 <= 0.0) {
    // every block fully tied
    report.statistic = 0.0;
    report.p_value = 1.0;
    report.significant = false;
    report.groups = letter_groups(static_cast<int>(k), report.mean_ranks, different);
    return report;
  }

  report.statistic = (kd - 1.0) * dev / (A1 - C1);
  boost::math::chi_squared chi(kd - 1.0);
  report.p_value = boost::math::cdf(boost::math::complement(chi, report.statistic));
  report.significant = report.p_value < alpha;

  if (report.significant) {
    const double df = (nd - 1.0) * (kd - 1.0);
    const double t1_cap = nd * (kd - 1.0);
    const double scale = 1.0 - report.statistic / t1_cap;
    const double se2 = 2.0 * nd * (A1 - C1) / df * std::max(scale, 0.0);
    const double se = std::sqrt(se2);
    boost::math::students_t tdist(df);
    std::vector<PairwiseDecision> raw;
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = i + 1; j < k; ++j) {
        PairwiseDecision d;
        d.method_a = static_cast<int>(i);
        d.method_b = static_cast<int>(j);
        const double diff = std::abs(rank_sums[i] - rank_sums[j]);
        if (se > 0.0) {
          const double t = diff / se;
          d.p_value = 2.0 * boost::math::cdf(boost::math::complement(tdist, t));
        } else {
          d.p_value = diff > 0.0 ? 0.0 : 1.0;
        }
        raw.push_back(d);
      }
    }
    // Holm step-down
    std::vector<std::size_t> idx(raw.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return raw[a].p_value < raw[b].p_value; });
    double running = 0.0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double adj = std::min(1.0, static_cast<double>(idx.size() - r) * raw[idx[r]].p_value);
      running = std::max(running, adj);
      raw[idx[r]].p_value = running;
      raw[idx[r]].significant = running < alpha;
      if (raw[idx[r]].significant) {
        different[static_cast<std::size_t>(raw[idx[r]].method_a)]
                 [static_cast<std::size_t>(raw[idx[r]].method_b)] = true;
        different[static_cast<std::size_t>(raw[idx[r]].method_b)]
                 [static_cast<std::size_t>(raw[idx[r]].method_a)] = true;
      }
    }
    report.pairwise = std::move(raw);
  }

  report.groups = letter_groups(static_cast<int>(k), report.mean_ranks, different);
  return report;
}

MethodSummary summarize_method(const std::string& name, const std::vector<MetricReport>& folds) {
  if (folds.empty()) throw ValidationError("summarize_method: no folds");
  MethodSummary s;
  s.method = name;
  s.per_fold = folds;
  const double n = static_cast<double>(folds.size());
  auto moment = [&](auto getter) {
    double mean = 0.0;
    for (const auto& f : folds) mean += getter(f);
    mean /= n;
    double var = 0.0;
    for (const auto& f : folds) var += (getter(f) - mean) * (getter(f) - mean);
    var /= n;  // population std, matching a mean +- std presentation
    return std::pair<double, double>{mean, std::sqrt(var)};
  };
  auto assign = [&](double MetricReport::*field) {
    auto [m, sd] = moment([&](const MetricReport& r) { return r.*field; });
    s.mean.*field = m;
    s.stddev.*field = sd;
  };
  assign(&MetricReport::acc);
  assign(&MetricReport::rec);
  assign(&MetricReport::prec);
  assign(&MetricReport::f1);
  assign(&MetricReport::auc);
  assign(&MetricReport::apr);
  assign(&MetricReport::jaccard);
  s.mean.auc_defined = folds.front().auc_defined;
  return s;
}

std::vector<PredictionRecord> load_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open predictions file '" + path + "'");
  std::vector<PredictionRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
      PredictionRecord r;
      r.trajectory_id = rec.at("id").get<std::string>();
      r.step_index = rec.at("step").get<int>();
      r.true_action = rec.at("true_action").get<int>();
      const auto& dist = rec.at("dist");
      r.distribution.resize(static_cast<Eigen::Index>(dist.size()));
      for (std::size_t i = 0; i < dist.size(); ++i) {
        r.distribution[static_cast<Eigen::Index>(i)] = dist[i].get<double>();
      }
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::string format_predictions(const std::vector<PredictionRecord>& records) {
  std::ostringstream out;
  for (const auto& r : records) {
    json dist = json::array();
    for (Eigen::Index i = 0; i < r.distribution.size(); ++i) dist.push_back(r.distribution[i]);
    json rec{{"id", r.trajectory_id},
             {"step", r.step_index},
             {"true_action", r.true_action},
             {"dist", std::move(dist)}};
    out << rec.dump() << "\n";
  }
  return out.str();
}

GridEvaluation evaluate_grid(const std::string& dir, const std::vector<std::string>& methods,
                             const std::vector<std::string>& folds) {
  if (methods.empty() || folds.empty()) {
    throw ValidationError("evaluate_grid: methods and folds must be non-empty");
  }
  GridEvaluation eval;
  eval.fold_names = folds;
  Eigen::MatrixXd f1(static_cast<Eigen::Index>(methods.size()),
                     static_cast<Eigen::Index>(folds.size()));
  Eigen::MatrixXd jac = f1;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    std::vector<MetricReport> per_fold;
    for (std::size_t fi = 0; fi < folds.size(); ++fi) {
      const std::string path = dir + "/" + methods[mi] + "/" + folds[fi] + ".preds.jsonl";
      const auto records = load_predictions(path);
      per_fold.push_back(compute_metrics(records));
      f1(static_cast<Eigen::Index>(mi), static_cast<Eigen::Index>(fi)) = per_fold.back().f1;
      jac(static_cast<Eigen::Index>(mi), static_cast<Eigen::Index>(fi)) = per_fold.back().jaccard;
    }
    eval.methods.push_back(summarize_method(methods[mi], per_fold));
  }
  if (methods.size() >= 2 && folds.size() >= 2) {
    eval.f1_report = friedman_conover(f1);
    eval.jaccard_report = friedman_conover(jac);
  }
  return eval;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string report_csv(const GridEvaluation& eval) {
  std::ostringstream out;
  out << "method,fold,acc,rec,prec,f1,auc,apr,jaccard\n";
  for (const auto& m : eval.methods) {
    for (std::size_t fi = 0; fi < m.per_fold.size(); ++fi) {
      const auto& r = m.per_fold[fi];
      out << m.method << "," << eval.fold_names[fi] << "," << fmt(r.acc) << "," << fmt(r.rec)
          << "," << fmt(r.prec) << "," << fmt(r.f1) << "," << fmt(r.auc) << "," << fmt(r.apr)
          << "," << fmt(r.jaccard) << "\n";
    }
    out << m.method << ",mean," << fmt(m.mean.acc) << "," << fmt(m.mean.rec) << ","
        << fmt(m.mean.prec) << "," << fmt(m.mean.f1) << "," << fmt(m.mean.auc) << ","
        << fmt(m.mean.apr) << "," << fmt(m.mean.jaccard) << "\n";
    out << m.method << ",std," << fmt(m.stddev.acc) << "," << fmt(m.stddev.rec) << ","
        << fmt(m.stddev.prec) << "," << fmt(m.stddev.f1) << "," << fmt(m.stddev.auc) << ","
        << fmt(m.stddev.apr) << "," << fmt(m.stddev.jaccard) << "\n";
  }
  return out.str();
}

std::string cd_csv(const FriedmanReport& report, const std::vector<std::string>& method_names) {
  std::ostringstream out;
  out << "method,mean_rank,group\n";
  for (std::size_t i = 0; i < method_names.size(); ++i) {
    out << method_names[i] << "," << fmt(report.mean_ranks[i]) << "," << report.groups[i] << "\n";
  }
  return out.str();
}

}  // namespace halide
