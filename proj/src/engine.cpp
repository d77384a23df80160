#include "cbrm/engine.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include "cbrm/errors.hpp"
#include "cbrm/io.hpp"
#include "cbrm/util.hpp"

namespace cbrm {

namespace fs = std::filesystem;

std::size_t ReplayBuffer::push(TrainItem item) {
  items_.push_back(std::move(item));
  ++total_pushed_;
  std::size_t evicted = 0;
  while (items_.size() > capacity_) {
    items_.pop_front();
    ++evicted;
    ++total_evicted_;
  }
  return evicted;
}

std::vector<TrainItem> ReplayBuffer::contents() const {
  return {items_.begin(), items_.end()};
}

Engine::Engine(std::vector<PreferencePair> train_split,
               std::vector<PreferencePair> test_split, LabelTable table,
               ExperimentConfig config)
    : train_split_(std::move(train_split)),
      test_split_(std::move(test_split)),
      table_(std::move(table)),
      config_(std::move(config)) {
  config_.validate();
  if (train_split_.empty()) throw ConfigError("engine: empty train split");
}

void Engine::init(std::uint64_t seed) {
  seed_ = seed;
  state_ = EpisodeState{};
  state_.buffer = ReplayBuffer(config_.buffer_capacity);
  state_.params = ModelParams::random_init(config_.concept_count, config_.embedding_dim,
                                           config_.gating_mode, mix_seed(seed, 0xA11));
  state_.opt = OptimizerState::init(config_.concept_count, config_.embedding_dim,
                                    config_.learning_rate);

  // U starts as every (i, k) the annotation source can actually answer;
  // ties are never queryable.
  for (const auto& pair : train_split_)
    for (int k = 0; k < config_.concept_count; ++k)
      if (table_.has_concept(pair.pair_id, k)) state_.pool.insert({pair.pair_id, k});

  if (state_.pool.size() < static_cast<std::size_t>(config_.acquisitions_per_episode))
    throw ConfigError("engine: pool smaller than one acquisition batch");

  // Initial labeled set = one uniform batch.
  const auto scores = score_random(state_.pool, mix_seed(seed, 0x1171));
  acquire(select_top_b(scores, config_.acquisitions_per_episode));
  retrain(mix_seed(seed, 0));
  state_.episode = 0;
}

std::vector<AcquisitionScore> Engine::score_pool(int episode) const {
  const std::uint64_t seed = mix_seed(seed_, 0xACF, static_cast<std::uint64_t>(episode));
  switch (config_.acquisition) {
    case AcquisitionKind::kRandom:
      return score_random(state_.pool, seed);
    case AcquisitionKind::kVariance:
      return score_variance(state_.params, train_split_, state_.pool);
    case AcquisitionKind::kCwis:
      return score_cwis(state_.params, train_split_, state_.pool, config_.cwis_lambda,
                        config_.cwis_intervention, config_.cwis_tau);
    case AcquisitionKind::kEig:
      return score_eig(state_.params, train_split_, state_.pool, config_.eig_samples, seed);
  }
  throw ConfigError("unknown acquisition strategy");
}

void Engine::acquire(const std::vector<QueryKey>& selected) {
  // Group new labels by pair; each touched pair becomes one buffer item.
  std::map<std::int64_t, std::vector<ConceptLabel>> by_pair;
  for (const QueryKey& key : selected) {
    if (!state_.pool.contains(key))
      throw ConfigError("selection returned a key outside the pool");
    const auto& entry = table_.at(key.pair_id);
    const auto& value = entry.concepts.at(key.concept_idx);
    if (!value) throw ConfigError("selected a tie (i,k); pool should exclude it");
    ConceptLabel label{key.pair_id, key.concept_idx, *value};
    by_pair[key.pair_id].push_back(label);
    state_.acquired.push_back(label);
    state_.acquired_keys.insert(key);
    state_.pool.erase(key);
  }

  std::unordered_map<std::int64_t, const PreferencePair*> index;
  for (const auto& pair : train_split_) index.emplace(pair.pair_id, &pair);
  for (auto& [pair_id, labels] : by_pair) {
    TrainItem item;
    item.pair = *index.at(pair_id);
    // The preference label is acquired the first time any concept of the
    // pair is queried; it stays attached on every later touch.
    item.pair.label = table_.at(pair_id).preference;
    state_.touched_pairs.insert(pair_id);
    item.labels = std::move(labels);
    state_.buffer.push(std::move(item));
  }
}

void Engine::retrain(std::uint64_t stream) {
  if (config_.retrain_from_scratch) {
    state_.params = ModelParams::random_init(config_.concept_count, config_.embedding_dim,
                                             config_.gating_mode, mix_seed(seed_, 0xA11));
    state_.opt = OptimizerState::init(config_.concept_count, config_.embedding_dim,
                                      config_.learning_rate);
  }
  const auto contents = state_.buffer.contents();
  for (int e = 0; e < config_.epochs_per_episode; ++e)
    train_epoch(state_.params, state_.opt, contents, config_, mix_seed(stream, 0xE9, e));
}

bool Engine::run_episode() {
  if (state_.pool.size() < static_cast<std::size_t>(config_.acquisitions_per_episode))
    return false;  // pool exhausted: clean early stop
  const int t = state_.episode + 1;
  const auto scores = score_pool(t);
  if (dump_) {
    fs::create_directories(dump_->directory);
    std::ofstream out(fs::path(dump_->directory) /
                      ("episode_" + std::to_string(t) + ".csv"));
    out << "episode,pair_id,concept_idx,strategy,score\n";
    for (const auto& s : scores)
      out << t << ',' << s.pair_id << ',' << s.concept_idx << ','
          << to_string(config_.acquisition) << ',' << s.score << '\n';
  }
  acquire(select_top_b(scores, config_.acquisitions_per_episode));
  retrain(mix_seed(seed_, static_cast<std::uint64_t>(t)));
  state_.episode = t;
  return true;
}

EpisodeMetrics Engine::evaluate() const {
  EpisodeMetrics m = eval_accuracy(state_.params, test_split_, table_);
  m.episode = state_.episode;
  m.labels_acquired = static_cast<std::int64_t>(state_.acquired.size());
  return m;
}

RunArtifact run_experiment(const ExperimentConfig& config,
                           const std::vector<PreferencePair>& pool,
                           const LabelTable& table, const std::string& out_dir,
                           bool dump_scores) {
  config.validate();
  const PoolSplit split = split_pool(pool, config, config.seed);

  Engine engine(split.train, split.test, table, config);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    save_config(config, (fs::path(out_dir) / "config.json").string());
    if (dump_scores)
      engine.set_score_dump(ScoreDump{(fs::path(out_dir) / "scores").string()});
  }

  RunArtifact artifact;
  engine.init(config.seed);
  artifact.metrics.push_back(engine.evaluate());
  for (int t = 1; t <= config.episodes; ++t) {
    if (!engine.run_episode()) {
      artifact.early_stopped = true;
      break;
    }
    artifact.metrics.push_back(engine.evaluate());
  }
  artifact.final_params = engine.state().params;

  if (!out_dir.empty()) {
    write_metrics_csv(artifact.metrics, config.concept_count,
                      (fs::path(out_dir) / "metrics.csv").string());
    save_checkpoint(artifact.final_params, (fs::path(out_dir) / "checkpoint.cbrm").string());
  }
  return artifact;
}

RunArtifact run_synthetic_experiment(const ExperimentConfig& config,
                                     const std::string& out_dir, bool dump_scores) {
  const SyntheticData data = generate_synthetic(config.n_pairs, config, config.seed);
  const LabelTable table = make_label_table(data.world, data.pairs);
  return run_experiment(config, data.pairs, table, out_dir, dump_scores);
}

}  // namespace cbrm
