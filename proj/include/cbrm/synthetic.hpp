#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "cbrm/config.hpp"
#include "cbrm/types.hpp"

namespace cbrm {

// Linear ground-truth generator standing in for the LLM judge: true concept
// scores are affine in the response embedding, true gating weights are a
// softmax of a linear map of the prompt embedding.
struct SyntheticWorld {
  Eigen::MatrixXd true_concept_map;  // A, K x d
  Eigen::VectorXd concept_bias;      // b, K
  Eigen::MatrixXd true_gating_map;   // G, K x d
  double concept_noise = 0.0;        // std-dev of additive noise on c*
  double label_flip_prob = 0.0;      // epsilon in [0, 0.5)
  std::uint64_t seed = 0;

  int K() const { return static_cast<int>(true_concept_map.rows()); }
  int d() const { return static_cast<int>(true_concept_map.cols()); }
};

struct SyntheticData {
  std::vector<PreferencePair> pairs;  // labels filled from the true reward
  SyntheticWorld world;
};

SyntheticData generate_synthetic(int n_pairs, const ExperimentConfig& config,
                                 std::uint64_t seed);

// True (noisy but deterministic) concept score for one side of a pair.
// Noise is hashed from (world.seed, pair_id, side, k) so repeats agree.
double true_concept_score(const SyntheticWorld& world, const PreferencePair& pair,
                          Side side, int k);
Eigen::VectorXd true_concepts(const SyntheticWorld& world,
                              const PreferencePair& pair, Side side);
Eigen::VectorXd true_gating(const SyntheticWorld& world, const PreferencePair& pair);

// 1[c*_k(x,y') > c*_k(x,y)], flipped with probability epsilon (per-(i,k)
// hashed coin, so the judge answers each query the same way every time).
int oracle_concept_label(const SyntheticWorld& world, const PreferencePair& pair, int k);

// 1 iff w*^T c*(x,y') > w*^T c*(x,y); ties resolve to 0. Never flipped.
int oracle_preference(const SyntheticWorld& world, const PreferencePair& pair);

// Dense per-pair ground truth used both as the annotation source during
// acquisition and as the evaluation reference. Absent concept entries are
// ties (never queryable).
struct LabelTable {
  struct Entry {
    int preference = 0;
    std::vector<std::optional<int>> concepts;
  };
  std::unordered_map<std::int64_t, Entry> entries;
  int concept_count = 0;

  const Entry& at(std::int64_t pair_id) const;
  bool has_concept(std::int64_t pair_id, int k) const;
};

LabelTable make_label_table(const SyntheticWorld& world,
                            const std::vector<PreferencePair>& pairs);

// World file: "CBRW" magic, u16 version, K u32, d u32, noise f64, eps f64,
// seed u64, then A, b, G as little-endian float64.
void save_world(const SyntheticWorld& world, const std::string& path);
SyntheticWorld load_world(const std::string& path);

}  // namespace cbrm
