#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "cbrm/model.hpp"
#include "cbrm/synthetic.hpp"
#include "cbrm/types.hpp"

namespace cbrm {

struct EpisodeMetrics {
  int episode = 0;
  std::int64_t labels_acquired = 0;
  double concept_acc = 0.0;  // mean over all labeled (pair, k)
  double pref_acc = 0.0;
  std::vector<double> per_concept_acc;
};

// Probit-mode concept decisions and mean-mode preference decisions at
// threshold 0.5, scored against the dense label table.
EpisodeMetrics eval_accuracy(const ModelParams& params,
                             const std::vector<PreferencePair>& test_split,
                             const LabelTable& table);

void write_metrics_csv(const std::vector<EpisodeMetrics>& rows, int concept_count,
                       const std::string& path);
std::vector<EpisodeMetrics> read_metrics_csv(const std::string& path);

struct StrategyCurve {
  std::string strategy;
  std::vector<double> mean_concept_acc;  // per episode
  std::vector<double> std_concept_acc;
  std::vector<double> mean_pref_acc;
  std::vector<double> std_pref_acc;
  std::vector<double> run_auc;        // per run: mean concept_acc over episodes
  std::vector<double> run_final_pref; // per run: last-episode pref_acc
  int n_runs = 0;
};

// Groups run directories by the strategy recorded in their config.json,
// requiring aligned episode counts. Each run dir must hold metrics.csv.
std::vector<StrategyCurve> aggregate_runs(const std::vector<std::string>& run_dirs);

void write_aggregate_csv(const std::vector<StrategyCurve>& curves, const std::string& path);

// Self-contained SVG: one polyline plus a shaded std band per strategy,
// labeled axes. Byte-deterministic for identical input.
void emit_plot(const std::vector<StrategyCurve>& curves, const std::string& path);

struct ProbeReport {
  std::vector<double> per_concept_acc;
  double mean_acc = 0.0;
  bool leakage_suspected = false;
};

// Closed-form ridge regression from (resp_a - resp_b) embeddings to signed
// relative labels, 80/20 subsplit, held-out sign accuracy per concept.
ProbeReport probe_diagnostic(const std::vector<PreferencePair>& pool,
                             const LabelTable& table, double ridge,
                             double leak_threshold = 0.9, std::uint64_t seed = 0);

}  // namespace cbrm
