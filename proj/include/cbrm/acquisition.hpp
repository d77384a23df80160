#pragma once

#include <cstdint>
#include <vector>

#include "cbrm/model.hpp"
#include "cbrm/types.hpp"

namespace cbrm {

struct AcquisitionScore {
  std::int64_t pair_id = 0;
  int concept_idx = 0;
  double score = 0.0;  // higher = query sooner
};

// Uniform(0,1) scores, seeded; top-B selection then equals uniform sampling
// without replacement.
std::vector<AcquisitionScore> score_random(const QueryPool& pool, std::uint64_t seed);

// Predictive variance of the concept difference: dvar_k.
std::vector<AcquisitionScore> score_variance(const ModelParams& params,
                                             const std::vector<PreferencePair>& pairs,
                                             const QueryPool& pool);

// |dr - dr^(k)| + lambda * dvar_k, where dr = r(x,y) - r(x,y') in mean mode
// and dr^(k) recomputes both rewards after intervening on concept k. The
// default intervention clamps the concept-k mean to 0 on both sides.
std::vector<AcquisitionScore> score_cwis(const ModelParams& params,
                                         const std::vector<PreferencePair>& pairs,
                                         const QueryPool& pool, double lambda,
                                         CwisIntervention intervention = CwisIntervention::kClampZero,
                                         double tau = 3.0);

// BALD-style mutual information between the prospective label and the latent
// concept difference, from S Monte-Carlo samples of Delta c.
std::vector<AcquisitionScore> score_eig(const ModelParams& params,
                                        const std::vector<PreferencePair>& pairs,
                                        const QueryPool& pool, int samples,
                                        std::uint64_t seed);

// Core EIG estimator on one Gaussian (dmu, dvar); exposed for direct testing
// against quadrature. Entropies in nats; tiny negatives clamp to 0.
double eig_from_moments(double dmu, double dvar, int samples, std::mt19937_64& rng);

// The B highest scores; ties broken by ascending (pair_id, concept_idx).
std::vector<QueryKey> select_top_b(const std::vector<AcquisitionScore>& scores, int B);

}  // namespace cbrm
