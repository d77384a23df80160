#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cbrm/acquisition.hpp"
#include "cbrm/reporting.hpp"
#include "cbrm/synthetic.hpp"
#include "cbrm/training.hpp"
#include "cbrm/types.hpp"

namespace cbrm {

// Bounded FIFO of labeled training items; the oldest item leaves first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  // Returns the number of evicted items.
  std::size_t push(TrainItem item);

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::vector<TrainItem> contents() const;  // insertion order
  std::int64_t total_pushed() const { return total_pushed_; }
  std::int64_t total_evicted() const { return total_evicted_; }

 private:
  std::size_t capacity_;
  std::deque<TrainItem> items_;
  std::int64_t total_pushed_ = 0;
  std::int64_t total_evicted_ = 0;
};

struct EpisodeState {
  int episode = 0;
  QueryPool pool;                        // U
  std::vector<ConceptLabel> acquired;    // L, every label ever acquired
  std::set<QueryKey> acquired_keys;
  std::set<std::int64_t> touched_pairs;  // pairs whose preference label is held
  ReplayBuffer buffer{0};
  ModelParams params;
  OptimizerState opt;
};

struct RunArtifact {
  std::vector<EpisodeMetrics> metrics;  // row 0 is the post-init row
  ModelParams final_params;
  bool early_stopped = false;
};

// Optional per-episode score dump sink; rows are (episode, i, k, strategy, score).
struct ScoreDump {
  std::string directory;  // created on demand
};

class Engine {
 public:
  Engine(std::vector<PreferencePair> train_split,
         std::vector<PreferencePair> test_split, LabelTable table,
         ExperimentConfig config);

  // Alg. line 1: seed L with B uniform queries, fill the buffer, train once.
  void init(std::uint64_t seed);

  // One acquisition-retrain cycle. Returns false on pool exhaustion (clean
  // early stop, no state change).
  bool run_episode();

  EpisodeMetrics evaluate() const;
  const EpisodeState& state() const { return state_; }
  const ExperimentConfig& config() const { return config_; }
  void set_score_dump(std::optional<ScoreDump> dump) { dump_ = std::move(dump); }

 private:
  std::vector<AcquisitionScore> score_pool(int episode) const;
  void acquire(const std::vector<QueryKey>& selected);
  void retrain(std::uint64_t seed);

  std::vector<PreferencePair> train_split_;
  std::vector<PreferencePair> test_split_;
  LabelTable table_;
  ExperimentConfig config_;
  EpisodeState state_;
  std::uint64_t seed_ = 0;
  std::optional<ScoreDump> dump_;
};

// Full Algorithm-1 run over a pre-split dataset. When out_dir is non-empty,
// writes config.json, metrics.csv, checkpoint.cbrm (and scores/ when dumping).
RunArtifact run_experiment(const ExperimentConfig& config,
                           const std::vector<PreferencePair>& pool,
                           const LabelTable& table, const std::string& out_dir = "",
                           bool dump_scores = false);

// Synthetic end-to-end convenience: generates the world from config, splits,
// builds the label table, runs.
RunArtifact run_synthetic_experiment(const ExperimentConfig& config,
                                     const std::string& out_dir = "",
                                     bool dump_scores = false);

}  // namespace cbrm
