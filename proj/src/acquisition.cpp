#include "cbrm/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "cbrm/errors.hpp"

namespace cbrm {

namespace {

double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
}

// Per-pair statistics shared by the model-based scorers.
struct PairStats {
  ConceptDelta delta;
  Eigen::VectorXd w;
};

std::unordered_map<std::int64_t, PairStats> pair_stats(
    const ModelParams& params, const std::vector<PreferencePair>& pairs,
    bool need_gating) {
  std::unordered_map<std::int64_t, PairStats> stats;
  stats.reserve(pairs.size());
  for (const auto& pair : pairs) {
    PairStats s;
    s.delta = concept_delta(params, pair);
    if (need_gating) s.w = gating_weights(params, as_double(pair.prompt_emb)).w;
    stats.emplace(pair.pair_id, std::move(s));
  }
  return stats;
}

const PairStats& stats_for(const std::unordered_map<std::int64_t, PairStats>& stats,
                           const QueryKey& key) {
  auto it = stats.find(key.pair_id);
  if (it == stats.end())
    throw ConfigError("pool references pair_id " + std::to_string(key.pair_id) +
                      " with no embeddings");
  return it->second;
}

}  // namespace

std::vector<AcquisitionScore> score_random(const QueryPool& pool, std::uint64_t seed) {
  if (pool.empty()) throw ConfigError("score_random: empty pool");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<AcquisitionScore> scores;
  scores.reserve(pool.size());
  for (const QueryKey& key : pool)
    scores.push_back({key.pair_id, key.concept_idx, unit(rng)});
  return scores;
}

std::vector<AcquisitionScore> score_variance(const ModelParams& params,
                                             const std::vector<PreferencePair>& pairs,
                                             const QueryPool& pool) {
  if (pool.empty()) throw ConfigError("score_variance: empty pool");
  const auto stats = pair_stats(params, pairs, /*need_gating=*/false);
  std::vector<AcquisitionScore> scores;
  scores.reserve(pool.size());
  for (const QueryKey& key : pool) {
    const PairStats& s = stats_for(stats, key);
    scores.push_back({key.pair_id, key.concept_idx, s.delta.dvar[key.concept_idx]});
  }
  return scores;
}

std::vector<AcquisitionScore> score_cwis(const ModelParams& params,
                                         const std::vector<PreferencePair>& pairs,
                                         const QueryPool& pool, double lambda,
                                         CwisIntervention intervention, double tau) {
  if (pool.empty()) throw ConfigError("score_cwis: empty pool");
  if (lambda < 0) throw ConfigError("score_cwis: lambda must be >= 0");
  const auto stats = pair_stats(params, pairs, /*need_gating=*/true);
  std::vector<AcquisitionScore> scores;
  scores.reserve(pool.size());
  for (const QueryKey& key : pool) {
    const PairStats& s = stats_for(stats, key);
    const int k = key.concept_idx;
    // dr = w.dmu. The intervened reward gap dr^(k) replaces concept k's means:
    //   clamp-to-zero: both sides to 0            -> dr^(k) = dr - w_k*dmu_k
    //   high/low:      side A to +tau, B to -tau  -> dr^(k) = dr - w_k*dmu_k + 2*tau*w_k
    const double dr = s.w.dot(s.delta.dmu);
    double dr_k = dr - s.w[k] * s.delta.dmu[k];
    if (intervention == CwisIntervention::kHighLow) dr_k += 2.0 * tau * s.w[k];
    const double influence = std::abs(dr - dr_k);
    scores.push_back({key.pair_id, k, influence + lambda * s.delta.dvar[k]});
  }
  return scores;
}

double eig_from_moments(double dmu, double dvar, int samples, std::mt19937_64& rng) {
  if (samples < 2) throw ConfigError("eig_from_moments: need at least 2 samples");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(dvar);
  double mean_p = 0.0;
  double mean_h = 0.0;
  for (int s = 0; s < samples; ++s) {
    const double p = logistic(-(dmu + sd * normal(rng)));
    mean_p += p;
    mean_h += binary_entropy(p);
  }
  mean_p /= samples;
  mean_h /= samples;
  return std::max(0.0, binary_entropy(mean_p) - mean_h);
}

std::vector<AcquisitionScore> score_eig(const ModelParams& params,
                                        const std::vector<PreferencePair>& pairs,
                                        const QueryPool& pool, int samples,
                                        std::uint64_t seed) {
  if (pool.empty()) throw ConfigError("score_eig: empty pool");
  const auto stats = pair_stats(params, pairs, /*need_gating=*/false);
  std::mt19937_64 rng(seed);
  std::vector<AcquisitionScore> scores;
  scores.reserve(pool.size());
  for (const QueryKey& key : pool) {
    const PairStats& s = stats_for(stats, key);
    const int k = key.concept_idx;
    scores.push_back(
        {key.pair_id, k, eig_from_moments(s.delta.dmu[k], s.delta.dvar[k], samples, rng)});
  }
  return scores;
}

std::vector<QueryKey> select_top_b(const std::vector<AcquisitionScore>& scores, int B) {
  if (B < 0 || static_cast<std::size_t>(B) > scores.size())
    throw ConfigError("select_top_b: B=" + std::to_string(B) + " exceeds pool size " +
                      std::to_string(scores.size()));
  std::vector<AcquisitionScore> sorted = scores;
  for (const auto& s : sorted)
    if (!std::isfinite(s.score)) throw NumericError("non-finite acquisition score");
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.pair_id != b.pair_id) return a.pair_id < b.pair_id;
    return a.concept_idx < b.concept_idx;
  });
  std::vector<QueryKey> out;
  out.reserve(B);
  for (int i = 0; i < B; ++i) out.push_back({sorted[i].pair_id, sorted[i].concept_idx});
  return out;
}

}  // namespace cbrm
