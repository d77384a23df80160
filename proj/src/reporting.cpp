#include "cbrm/reporting.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "cbrm/config.hpp"
#include "cbrm/errors.hpp"
#include "cbrm/training.hpp"

namespace cbrm {

namespace fs = std::filesystem;

EpisodeMetrics eval_accuracy(const ModelParams& params,
                             const std::vector<PreferencePair>& test_split,
                             const LabelTable& table) {
  if (test_split.empty()) throw ConfigError("eval_accuracy: empty test split");
  const int K = params.K();
  std::vector<std::int64_t> correct(K, 0), total(K, 0);
  std::int64_t pref_correct = 0;

  for (const auto& pair : test_split) {
    const auto& entry = table.at(pair.pair_id);
    const int pref_pred = preference_prob(params, pair) > 0.5 ? 1 : 0;
    if (pref_pred == entry.preference) ++pref_correct;
    const ConceptDelta delta = concept_delta(params, pair);
    for (int k = 0; k < K; ++k) {
      if (!entry.concepts[k]) continue;  // tie: excluded from the denominator
      const int pred = concept_label_prob(delta, k) > 0.5 ? 1 : 0;
      ++total[k];
      if (pred == *entry.concepts[k]) ++correct[k];
    }
  }

  EpisodeMetrics m;
  m.pref_acc = static_cast<double>(pref_correct) / static_cast<double>(test_split.size());
  std::int64_t c = 0, t = 0;
  m.per_concept_acc.resize(K);
  for (int k = 0; k < K; ++k) {
    c += correct[k];
    t += total[k];
    m.per_concept_acc[k] =
        total[k] > 0 ? static_cast<double>(correct[k]) / static_cast<double>(total[k]) : 0.0;
  }
  m.concept_acc = t > 0 ? static_cast<double>(c) / static_cast<double>(t) : 0.0;
  return m;
}

// --- metrics CSV ---------------------------------------------------------------

void write_metrics_csv(const std::vector<EpisodeMetrics>& rows, int concept_count,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write metrics file: " + path);
  out << "episode,n_labels_acquired,concept_acc,pref_acc";
  for (int k = 0; k < concept_count; ++k) out << ",concept_acc_" << k;
  out << "\n";
  char buf[32];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const auto& m : rows) {
    out << m.episode << ',' << m.labels_acquired << ',' << fmt(m.concept_acc) << ','
        << fmt(m.pref_acc);
    for (double a : m.per_concept_acc) out << ',' << fmt(a);
    out << "\n";
  }
}

std::vector<EpisodeMetrics> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open metrics file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty metrics file");
  std::vector<EpisodeMetrics> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 4)
      throw FormatError(path + ": line " + std::to_string(line_no) + ": too few columns");
    EpisodeMetrics m;
    try {
      m.episode = std::stoi(cells[0]);
      m.labels_acquired = std::stoll(cells[1]);
      m.concept_acc = std::stod(cells[2]);
      m.pref_acc = std::stod(cells[3]);
      for (std::size_t i = 4; i < cells.size(); ++i)
        m.per_concept_acc.push_back(std::stod(cells[i]));
    } catch (const std::exception&) {
      throw FormatError(path + ": line " + std::to_string(line_no) + ": bad numeric cell");
    }
    rows.push_back(std::move(m));
  }
  return rows;
}

// --- aggregation ----------------------------------------------------------------

std::vector<StrategyCurve> aggregate_runs(const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty()) throw ConfigError("aggregate_runs: no run directories");
  struct Run {
    std::string strategy;
    std::vector<EpisodeMetrics> rows;
  };
  std::map<std::string, std::vector<Run>> by_strategy;
  for (const auto& dir : run_dirs) {
    const auto metrics_path = fs::path(dir) / "metrics.csv";
    if (!fs::exists(metrics_path))
      throw FormatError("missing metrics.csv in run directory: " + dir);
    const auto config_path = fs::path(dir) / "config.json";
    if (!fs::exists(config_path))
      throw FormatError("missing config.json in run directory: " + dir);
    const ExperimentConfig cfg = load_config(config_path.string());
    Run run;
    run.strategy = to_string(cfg.acquisition);
    run.rows = read_metrics_csv(metrics_path.string());
    if (run.rows.empty()) throw FormatError("empty metrics.csv in " + dir);
    by_strategy[run.strategy].push_back(std::move(run));
  }

  std::vector<StrategyCurve> curves;
  std::size_t episodes = 0;
  for (const auto& [strategy, runs] : by_strategy) {
    for (const auto& run : runs) {
      if (episodes == 0) episodes = run.rows.size();
      if (run.rows.size() != episodes)
        throw FormatError("aggregate_runs: episode counts are not aligned (strategy " +
                          strategy + ")");
    }
  }

  for (const auto& [strategy, runs] : by_strategy) {
    StrategyCurve curve;
    curve.strategy = strategy;
    curve.n_runs = static_cast<int>(runs.size());
    const int n = curve.n_runs;
    for (std::size_t e = 0; e < episodes; ++e) {
      double mc = 0, mp = 0;
      for (const auto& run : runs) {
        mc += run.rows[e].concept_acc;
        mp += run.rows[e].pref_acc;
      }
      mc /= n;
      mp /= n;
      double vc = 0, vp = 0;
      for (const auto& run : runs) {
        vc += (run.rows[e].concept_acc - mc) * (run.rows[e].concept_acc - mc);
        vp += (run.rows[e].pref_acc - mp) * (run.rows[e].pref_acc - mp);
      }
      // Sample std; zero for a single run.
      curve.mean_concept_acc.push_back(mc);
      curve.mean_pref_acc.push_back(mp);
      curve.std_concept_acc.push_back(n > 1 ? std::sqrt(vc / (n - 1)) : 0.0);
      curve.std_pref_acc.push_back(n > 1 ? std::sqrt(vp / (n - 1)) : 0.0);
    }
    for (const auto& run : runs) {
      double auc = 0;
      for (const auto& row : run.rows) auc += row.concept_acc;
      curve.run_auc.push_back(auc / static_cast<double>(run.rows.size()));
      curve.run_final_pref.push_back(run.rows.back().pref_acc);
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

void write_aggregate_csv(const std::vector<StrategyCurve>& curves, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write aggregate file: " + path);
  out << "strategy,episode,mean_concept_acc,std_concept_acc,mean_pref_acc,std_pref_acc\n";
  char buf[32];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const auto& c : curves)
    for (std::size_t e = 0; e < c.mean_concept_acc.size(); ++e)
      out << c.strategy << ',' << e << ',' << fmt(c.mean_concept_acc[e]) << ','
          << fmt(c.std_concept_acc[e]) << ',' << fmt(c.mean_pref_acc[e]) << ','
          << fmt(c.std_pref_acc[e]) << "\n";
}

// --- SVG learning-curve plot ------------------------------------------------------

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b"};

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

void emit_plot(const std::vector<StrategyCurve>& curves, const std::string& path) {
  if (curves.empty()) throw ConfigError("emit_plot: no curves");
  const double width = 840, height = 520;
  const double x0 = 70, y0 = 40, x1 = width - 30, y1 = height - 60;
  const std::size_t episodes = curves.front().mean_concept_acc.size();
  if (episodes < 1) throw ConfigError("emit_plot: empty curves");

  double lo = 1.0, hi = 0.0;
  for (const auto& c : curves)
    for (std::size_t e = 0; e < episodes; ++e) {
      lo = std::min(lo, c.mean_concept_acc[e] - c.std_concept_acc[e]);
      hi = std::max(hi, c.mean_concept_acc[e] + c.std_concept_acc[e]);
    }
  lo = std::max(0.0, lo - 0.02);
  hi = std::min(1.0, hi + 0.02);
  if (hi <= lo) hi = lo + 0.01;

  auto px = [&](double episode) {
    return x0 + (x1 - x0) * (episodes == 1 ? 0.5 : episode / (episodes - 1.0));
  };
  auto py = [&](double acc) { return y1 - (y1 - y0) * (acc - lo) / (hi - lo); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  // axes
  svg << "<line x1=\"" << x0 << "\" y1=\"" << y1 << "\" x2=\"" << x1 << "\" y2=\"" << y1
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << height - 15
      << "\" text-anchor=\"middle\" font-size=\"14\">episode</text>\n";
  svg << "<text x=\"18\" y=\"" << (y0 + y1) / 2
      << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 "
      << (y0 + y1) / 2 << ")\">concept accuracy</text>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double acc = lo + (hi - lo) * tick / 4.0;
    svg << "<text x=\"" << x0 - 8 << "\" y=\"" << py(acc) + 4
        << "\" text-anchor=\"end\" font-size=\"11\">" << fmt2(acc) << "</text>\n";
  }

  int color = 0;
  for (const auto& c : curves) {
    const char* stroke = kPalette[color % 6];
    ++color;
    // std band polygon: forward along mean+std, back along mean-std
    svg << "<polygon fill=\"" << stroke << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
    for (std::size_t e = 0; e < episodes; ++e)
      svg << fmt2(px(static_cast<double>(e))) << ','
          << fmt2(py(c.mean_concept_acc[e] + c.std_concept_acc[e])) << ' ';
    for (std::size_t e = episodes; e-- > 0;)
      svg << fmt2(px(static_cast<double>(e))) << ','
          << fmt2(py(c.mean_concept_acc[e] - c.std_concept_acc[e])) << ' ';
    svg << "\"/>\n";
    svg << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\"";
    for (std::size_t e = 0; e < episodes; ++e)
      svg << fmt2(px(static_cast<double>(e))) << ',' << fmt2(py(c.mean_concept_acc[e]))
          << ' ';
    svg << "\"/>\n";
    svg << "<text x=\"" << x1 - 150 << "\" y=\"" << y0 + 18 * color
        << "\" font-size=\"13\" fill=\"" << stroke << "\">" << c.strategy << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write plot file: " + path);
  out << svg.str();
}

// --- linear probe ------------------------------------------------------------------

ProbeReport probe_diagnostic(const std::vector<PreferencePair>& pool,
                             const LabelTable& table, double ridge,
                             double leak_threshold, std::uint64_t seed) {
  if (pool.empty()) throw ConfigError("probe_diagnostic: empty pool");
  const int K = table.concept_count;
  const int d = pool.front().dim();

  // Deterministic 80/20 subsplit of the given pool.
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = (pool.size() * 8) / 10;
  if (n_train == 0 || n_train == pool.size())
    throw ConfigError("probe_diagnostic: pool too small for an 80/20 subsplit");

  ProbeReport report;
  report.per_concept_acc.resize(K, 0.0);

  for (int k = 0; k < K; ++k) {
    std::vector<Eigen::VectorXd> x_train, x_test;
    std::vector<double> t_train;
    std::vector<int> s_test;
    for (std::size_t idx = 0; idx < pool.size(); ++idx) {
      const auto& pair = pool[order[idx]];
      const auto& entry = table.at(pair.pair_id);
      if (!entry.concepts[k]) continue;
      Eigen::VectorXd dx = (pair.resp_a_emb - pair.resp_b_emb).cast<double>();
      if (idx < n_train) {
        x_train.push_back(std::move(dx));
        t_train.push_back(2.0 * (*entry.concepts[k]) - 1.0);
      } else {
        x_test.push_back(std::move(dx));
        s_test.push_back(*entry.concepts[k]);
      }
    }
    if (x_train.empty() || x_test.empty()) {
      report.per_concept_acc[k] = 0.0;
      continue;
    }
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd xtt = Eigen::VectorXd::Zero(d);
    for (std::size_t i = 0; i < x_train.size(); ++i) {
      xtx.noalias() += x_train[i] * x_train[i].transpose();
      xtt.noalias() += t_train[i] * x_train[i];
    }
    xtx.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(xtx);
    if (llt.info() != Eigen::Success) {
      if (ridge == 0.0)
        throw NumericError(
            "probe_diagnostic: singular normal equations; use a nonzero ridge");
      throw NumericError("probe_diagnostic: factorization failed");
    }
    const Eigen::VectorXd beta = llt.solve(xtt);
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < x_test.size(); ++i) {
      // score > 0 predicts s=1; the tie (score == 0) predicts s=0.
      const int pred = beta.dot(x_test[i]) > 0.0 ? 1 : 0;
      if (pred == s_test[i]) ++correct;
    }
    report.per_concept_acc[k] =
        static_cast<double>(correct) / static_cast<double>(x_test.size());
  }

  report.mean_acc =
      std::accumulate(report.per_concept_acc.begin(), report.per_concept_acc.end(), 0.0) /
      static_cast<double>(K);
  report.leakage_suspected = report.mean_acc > leak_threshold;
  return report;
}

}  // namespace cbrm
