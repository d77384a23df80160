#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cbrm/model.hpp"
#include "cbrm/types.hpp"

namespace cbrm {

// A labeled pair together with the concept labels acquired for it. This is
// also the replay-buffer item type.
struct TrainItem {
  PreferencePair pair;              // label must be present
  std::vector<ConceptLabel> labels; // all reference pair.pair_id
};

struct Batch {
  std::vector<PreferencePair> pairs;        // preference labels present
  std::vector<ConceptLabel> concept_labels; // each references a pair in `pairs`
};

Batch make_batch(std::span<const TrainItem> items);

struct Gradients {
  Eigen::MatrixXd W_mu, W_lv, W_g;
  Eigen::VectorXd b_mu, b_lv, b_g;

  static Gradients zeros(int K, int d);
};

// Adam accumulators mirroring the six parameter blocks.
struct OptimizerState {
  Gradients m, v;
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState init(int K, int d, double lr);
};

enum class ConceptProbMode { kSampled, kProbit };

// p(s^k = 1). Probit-style closed form: logistic(-dmu_k / sqrt(1 + pi*dvar_k/8)).
double concept_label_prob(const ConceptDelta& delta, int k);
// One reparameterized sample: logistic(-(dmu_k + sqrt(dvar_k)*eps)), eps from rng.
double concept_label_prob_sampled(const ConceptDelta& delta, int k, std::mt19937_64& rng);

struct LossBreakdown {
  double total = 0.0;
  double preference = 0.0;
  double concept_bce = 0.0;
};

// L = mean-BCE(preference) + mean-BCE(concept labels, one reparameterized
// sample per label). The seed fixes the reparameterization noise; loss and
// grad agree exactly at the same seed.
LossBreakdown loss(const ModelParams& params, const Batch& batch, std::uint64_t seed);

struct GradResult {
  LossBreakdown loss;
  Gradients grads;
};

GradResult grad(const ModelParams& params, const Batch& batch, std::uint64_t seed);

void adam_step(ModelParams& params, OptimizerState& opt, const Gradients& grads);

struct EpochStats {
  int batches = 0;
  double mean_loss = 0.0;
  bool skipped_empty = false;
};

// One full shuffled pass over the buffer contents in batches of
// config.batch_size; deterministic given seed. Empty input is a flagged no-op.
EpochStats train_epoch(ModelParams& params, OptimizerState& opt,
                       std::span<const TrainItem> items,
                       const ExperimentConfig& config, std::uint64_t seed);

}  // namespace cbrm
