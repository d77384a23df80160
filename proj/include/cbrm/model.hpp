#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>

#include "cbrm/config.hpp"
#include "cbrm/types.hpp"

namespace cbrm {

constexpr double kVarFloor = 1e-6;
constexpr double kVarCeil = 1e2;

// One-layer heads: theta = (W_mu, b_mu, W_lv, b_lv), phi = (W_g, b_g).
struct ModelParams {
  Eigen::MatrixXd W_mu;  // K x d, concept means
  Eigen::VectorXd b_mu;  // K
  Eigen::MatrixXd W_lv;  // K x d, concept log-variances
  Eigen::VectorXd b_lv;  // K
  Eigen::MatrixXd W_g;   // K x d, gating logits
  Eigen::VectorXd b_g;   // K
  GatingMode gating = GatingMode::kSoftmax;

  int K() const { return static_cast<int>(W_mu.rows()); }
  int d() const { return static_cast<int>(W_mu.cols()); }

  static ModelParams zeros(int K, int d, GatingMode gating);
  // Small random init (N(0, scale^2) weights, zero biases), deterministic.
  static ModelParams random_init(int K, int d, GatingMode gating,
                                 std::uint64_t seed, double scale = 0.05);
};

struct GaussianConcepts {
  Eigen::VectorXd mu;
  Eigen::VectorXd var;  // clamped to [kVarFloor, kVarCeil]
};

struct GatingWeights {
  Eigen::VectorXd w;
};

struct ConceptDelta {
  Eigen::VectorXd dmu;   // mu(x,y) - mu(x,y'); positive favors the FIRST response
  Eigen::VectorXd dvar;  // var(x,y) + var(x,y')
};

double logistic(double x);

GaussianConcepts predict_concepts(const ModelParams& params,
                                  const Eigen::VectorXd& pair_emb);
GatingWeights gating_weights(const ModelParams& params,
                             const Eigen::VectorXd& prompt_emb);

// Mean-mode reward w^T mu for the chosen response.
double reward_mean(const ModelParams& params, const PreferencePair& pair, Side side);
// Sampled reward w^T (mu + sqrt(var) .* eta), eta ~ N(0, I) drawn from rng.
double reward_sampled(const ModelParams& params, const PreferencePair& pair,
                      Side side, std::mt19937_64& rng);

// BTL probability that the SECOND response (y') is preferred, mean-mode rewards.
double preference_prob(const ModelParams& params, const PreferencePair& pair);

ConceptDelta concept_delta(const ModelParams& params, const PreferencePair& pair);

// Checkpoint: "CBRM" magic, u16 version, K u32, d u32, gating u8, then the six
// parameter blocks as little-endian float32 in declaration order.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

inline Eigen::VectorXd as_double(const Embedding& e) { return e.cast<double>(); }

}  // namespace cbrm
