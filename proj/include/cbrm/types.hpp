#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "cbrm/config.hpp"

namespace cbrm {

// Embeddings are stored as float32, matching the on-disk format bit for bit.
// Model math upcasts to double at the call boundary.
using Embedding = Eigen::VectorXf;

struct PreferencePair {
  std::int64_t pair_id = 0;
  Embedding prompt_emb;  // encodes x
  Embedding resp_a_emb;  // encodes (x, y)
  Embedding resp_b_emb;  // encodes (x, y')
  std::optional<int> label;  // 0 => first response preferred, 1 => second

  int dim() const { return static_cast<int>(prompt_emb.size()); }
};

enum class Side { kA, kB };  // first (y) / second (y') response

struct ConceptLabel {
  std::int64_t pair_id = 0;
  int concept_idx = 0;
  int value = 0;  // 1 => second response better on this concept
};

struct QueryKey {
  std::int64_t pair_id = 0;
  int concept_idx = 0;

  friend auto operator<=>(const QueryKey&, const QueryKey&) = default;
};

// The unqueried index set U. Iteration order is sorted (pair_id, concept_idx),
// which makes every downstream scoring pass deterministic.
class QueryPool {
 public:
  QueryPool() = default;

  void insert(QueryKey key) { keys_.insert(key); }
  bool contains(QueryKey key) const { return keys_.count(key) != 0; }
  void erase(QueryKey key) { keys_.erase(key); }
  std::size_t size() const { return keys_.size(); }
  bool empty() const { return keys_.empty(); }

  auto begin() const { return keys_.begin(); }
  auto end() const { return keys_.end(); }

 private:
  std::set<QueryKey> keys_;
};

struct PoolSplit {
  std::vector<PreferencePair> train;
  std::vector<PreferencePair> val;
  std::vector<PreferencePair> test;
};

// Disjoint 70/10/20-style partition, deterministic in the seed.
// Sizes are floor(train_frac*N), floor(val_frac*N), remainder.
PoolSplit split_pool(const std::vector<PreferencePair>& pool,
                     const ExperimentConfig& config, std::uint64_t seed);

}  // namespace cbrm
