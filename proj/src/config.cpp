#include "cbrm/config.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cbrm/errors.hpp"

namespace cbrm {

using nlohmann::json;

const char* to_string(AcquisitionKind a) {
  switch (a) {
    case AcquisitionKind::kRandom: return "random";
    case AcquisitionKind::kVariance: return "variance";
    case AcquisitionKind::kCwis: return "cwis";
    case AcquisitionKind::kEig: return "eig";
  }
  return "random";
}

const char* to_string(GatingMode g) {
  return g == GatingMode::kSoftmax ? "softmax" : "unconstrained";
}

AcquisitionKind acquisition_from_string(const std::string& s) {
  if (s == "random") return AcquisitionKind::kRandom;
  if (s == "variance") return AcquisitionKind::kVariance;
  if (s == "cwis") return AcquisitionKind::kCwis;
  if (s == "eig") return AcquisitionKind::kEig;
  throw ConfigError("unknown acquisition strategy '" + s +
                    "' (valid: random, variance, cwis, eig)");
}

GatingMode gating_from_string(const std::string& s) {
  if (s == "softmax") return GatingMode::kSoftmax;
  if (s == "unconstrained") return GatingMode::kUnconstrained;
  throw ConfigError("unknown gating mode '" + s + "' (valid: softmax, unconstrained)");
}

static CwisIntervention cwis_intervention_from_string(const std::string& s) {
  if (s == "zero") return CwisIntervention::kClampZero;
  if (s == "highlow") return CwisIntervention::kHighLow;
  throw ConfigError("unknown cwis_intervention '" + s + "' (valid: zero, highlow)");
}

static const char* to_string(CwisIntervention c) {
  return c == CwisIntervention::kClampZero ? "zero" : "highlow";
}

// Default concept vocabulary; for K != 10 names are generated as concept_<k>.
std::vector<std::string> ExperimentConfig::concept_names() const {
  static const std::vector<std::string> kTen = {
      "helpfulness",    "correctness", "coherence",             "complexity",
      "verbosity",      "instruction_following", "truthfulness", "honesty",
      "safety",         "readability"};
  if (concept_count == 10) return kTen;
  std::vector<std::string> names;
  names.reserve(concept_count);
  for (int k = 0; k < concept_count; ++k) names.push_back("concept_" + std::to_string(k));
  return names;
}

void ExperimentConfig::validate() const {
  if (concept_count <= 0) throw ConfigError("K must be positive");
  if (embedding_dim <= 0) throw ConfigError("d must be positive");
  if (acquisitions_per_episode <= 0) throw ConfigError("B must be positive");
  if (episodes < 0) throw ConfigError("T must be non-negative");
  if (buffer_capacity == 0) throw ConfigError("buffer_capacity must be positive");
  if (cwis_lambda < 0) throw ConfigError("lambda must be >= 0");
  if (eig_samples < 2) throw ConfigError("mc_samples must be >= 2");
  if (learning_rate < 0) throw ConfigError("lr must be >= 0");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (epochs_per_episode <= 0) throw ConfigError("epochs_per_episode must be positive");
  if (train_frac <= 0 || val_frac < 0 || test_frac < 0)
    throw ConfigError("split fractions must be positive (train) / non-negative");
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  if (n_pairs < 1) throw ConfigError("n_pairs must be >= 1");
  if (concept_noise < 0) throw ConfigError("concept_noise must be >= 0");
  if (label_flip_prob < 0 || label_flip_prob >= 0.5)
    throw ConfigError("label_flip_prob must be in [0, 0.5)");
  if (probe_ridge < 0) throw ConfigError("probe_ridge must be >= 0");
  if (leakage_embeddings && embedding_dim < concept_count)
    throw ConfigError("leakage mode requires d >= K");
}

static json to_json(const ExperimentConfig& c) {
  return json{{"K", c.concept_count},
              {"d", c.embedding_dim},
              {"B", c.acquisitions_per_episode},
              {"T", c.episodes},
              {"buffer_capacity", c.buffer_capacity},
              {"acquisition", to_string(c.acquisition)},
              {"retrain_from_scratch", c.retrain_from_scratch},
              {"lambda", c.cwis_lambda},
              {"cwis_intervention", to_string(c.cwis_intervention)},
              {"cwis_tau", c.cwis_tau},
              {"mc_samples", c.eig_samples},
              {"lr", c.learning_rate},
              {"batch_size", c.batch_size},
              {"epochs_per_episode", c.epochs_per_episode},
              {"gating_mode", to_string(c.gating_mode)},
              {"train_frac", c.train_frac},
              {"val_frac", c.val_frac},
              {"test_frac", c.test_frac},
              {"n_pairs", c.n_pairs},
              {"concept_noise", c.concept_noise},
              {"label_flip_prob", c.label_flip_prob},
              {"leakage_embeddings", c.leakage_embeddings},
              {"probe_ridge", c.probe_ridge},
              {"probe_leak_threshold", c.probe_leak_threshold},
              {"seed", c.seed}};
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  ExperimentConfig c;
  const json defaults = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    (void)value;
  }
  try {
    c.concept_count = j.value("K", c.concept_count);
    c.embedding_dim = j.value("d", c.embedding_dim);
    c.acquisitions_per_episode = j.value("B", c.acquisitions_per_episode);
    c.episodes = j.value("T", c.episodes);
    c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
    if (j.contains("acquisition"))
      c.acquisition = acquisition_from_string(j["acquisition"].get<std::string>());
    c.retrain_from_scratch = j.value("retrain_from_scratch", c.retrain_from_scratch);
    c.cwis_lambda = j.value("lambda", c.cwis_lambda);
    if (j.contains("cwis_intervention"))
      c.cwis_intervention = cwis_intervention_from_string(j["cwis_intervention"].get<std::string>());
    c.cwis_tau = j.value("cwis_tau", c.cwis_tau);
    c.eig_samples = j.value("mc_samples", c.eig_samples);
    c.learning_rate = j.value("lr", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs_per_episode = j.value("epochs_per_episode", c.epochs_per_episode);
    if (j.contains("gating_mode"))
      c.gating_mode = gating_from_string(j["gating_mode"].get<std::string>());
    c.train_frac = j.value("train_frac", c.train_frac);
    c.val_frac = j.value("val_frac", c.val_frac);
    c.test_frac = j.value("test_frac", c.test_frac);
    c.n_pairs = j.value("n_pairs", c.n_pairs);
    c.concept_noise = j.value("concept_noise", c.concept_noise);
    c.label_flip_prob = j.value("label_flip_prob", c.label_flip_prob);
    c.leakage_embeddings = j.value("leakage_embeddings", c.leakage_embeddings);
    c.probe_ridge = j.value("probe_ridge", c.probe_ridge);
    c.probe_leak_threshold = j.value("probe_leak_threshold", c.probe_leak_threshold);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field has wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  return to_json(cfg).dump(2) + "\n";
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file: " + path);
  out << config_to_json_text(cfg);
}

}  // namespace cbrm
