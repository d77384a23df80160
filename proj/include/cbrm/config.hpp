#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cbrm {

enum class AcquisitionKind { kRandom, kVariance, kCwis, kEig };
enum class GatingMode { kSoftmax, kUnconstrained };
enum class CwisIntervention { kClampZero, kHighLow };

const char* to_string(AcquisitionKind a);
const char* to_string(GatingMode g);
AcquisitionKind acquisition_from_string(const std::string& s);
GatingMode gating_from_string(const std::string& s);

// Resolved experiment configuration. Serialized as JSON into every run
// directory so a run is reproducible from its artifacts alone.
struct ExperimentConfig {
  // Model / data shape
  int concept_count = 10;   // K
  int embedding_dim = 64;   // d

  // Active-learning loop
  int acquisitions_per_episode = 320;  // B
  int episodes = 30;                   // T
  std::size_t buffer_capacity = 32000;
  AcquisitionKind acquisition = AcquisitionKind::kRandom;
  bool retrain_from_scratch = false;

  // Acquisition hyperparameters
  double cwis_lambda = 0.1;
  CwisIntervention cwis_intervention = CwisIntervention::kClampZero;
  double cwis_tau = 3.0;  // only used by the high/low intervention
  int eig_samples = 64;   // S

  // Optimization
  double learning_rate = 1e-3;
  int batch_size = 256;
  int epochs_per_episode = 1;

  // Model
  GatingMode gating_mode = GatingMode::kSoftmax;

  // Split fractions
  double train_frac = 0.7;
  double val_frac = 0.1;
  double test_frac = 0.2;

  // Synthetic world
  int n_pairs = 20000;
  double concept_noise = 0.1;
  double label_flip_prob = 0.05;
  bool leakage_embeddings = false;  // identity-block concept leakage mode

  // Probe diagnostic
  double probe_ridge = 1e-3;
  double probe_leak_threshold = 0.9;

  std::uint64_t seed = 0;

  std::vector<std::string> concept_names() const;

  // Throws ConfigError on any violated invariant.
  void validate() const;
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json_text(const ExperimentConfig& cfg);
void save_config(const ExperimentConfig& cfg, const std::string& path);

}  // namespace cbrm
