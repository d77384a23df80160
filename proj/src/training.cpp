#include "cbrm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "cbrm/errors.hpp"
#include "cbrm/util.hpp"

namespace cbrm {

namespace {

double softplus(double x) {
  // log(1 + e^x), overflow-safe.
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// BCE(sigmoid(logit), target) in a numerically stable logit form.
double bce_from_logit(double logit, int target) {
  return softplus(-logit) + (1 - target) * logit;
}

// Per-pair forward pass with the raw (pre-clamp) log-variances kept around
// for the backward pass.
struct PairForward {
  Eigen::VectorXd e_x, e_a, e_b;  // double-cast embeddings
  Eigen::VectorXd w;              // gating weights
  Eigen::VectorXd mu_a, mu_b;
  Eigen::VectorXd var_a, var_b;          // clamped
  Eigen::VectorXd var_a_raw, var_b_raw;  // exp(lv), unclamped
};

PairForward forward_pair(const ModelParams& params, const PreferencePair& pair) {
  PairForward f;
  f.e_x = as_double(pair.prompt_emb);
  f.e_a = as_double(pair.resp_a_emb);
  f.e_b = as_double(pair.resp_b_emb);
  Eigen::VectorXd z = params.W_g * f.e_x + params.b_g;
  if (params.gating == GatingMode::kSoftmax) {
    const double zmax = z.maxCoeff();
    f.w = (z.array() - zmax).exp().matrix();
    f.w /= f.w.sum();
  } else {
    f.w = std::move(z);
  }
  f.mu_a = params.W_mu * f.e_a + params.b_mu;
  f.mu_b = params.W_mu * f.e_b + params.b_mu;
  f.var_a_raw = (params.W_lv * f.e_a + params.b_lv).array().exp().matrix();
  f.var_b_raw = (params.W_lv * f.e_b + params.b_lv).array().exp().matrix();
  f.var_a = f.var_a_raw.array().max(kVarFloor).min(kVarCeil).matrix();
  f.var_b = f.var_b_raw.array().max(kVarFloor).min(kVarCeil).matrix();
  return f;
}

bool unclamped(double raw) { return raw > kVarFloor && raw < kVarCeil; }

}  // namespace

Batch make_batch(std::span<const TrainItem> items) {
  Batch batch;
  batch.pairs.reserve(items.size());
  for (const auto& item : items) {
    batch.pairs.push_back(item.pair);
    for (const auto& label : item.labels) batch.concept_labels.push_back(label);
  }
  return batch;
}

Gradients Gradients::zeros(int K, int d) {
  Gradients g;
  g.W_mu = Eigen::MatrixXd::Zero(K, d);
  g.W_lv = Eigen::MatrixXd::Zero(K, d);
  g.W_g = Eigen::MatrixXd::Zero(K, d);
  g.b_mu = Eigen::VectorXd::Zero(K);
  g.b_lv = Eigen::VectorXd::Zero(K);
  g.b_g = Eigen::VectorXd::Zero(K);
  return g;
}

OptimizerState OptimizerState::init(int K, int d, double lr) {
  OptimizerState opt;
  opt.m = Gradients::zeros(K, d);
  opt.v = Gradients::zeros(K, d);
  opt.lr = lr;
  return opt;
}

double concept_label_prob(const ConceptDelta& delta, int k) {
  if (k < 0 || k >= delta.dmu.size())
    throw ConfigError("concept index out of range: " + std::to_string(k));
  // Probit-style moderation of the logistic by the Gaussian spread.
  return logistic(-delta.dmu[k] / std::sqrt(1.0 + M_PI * delta.dvar[k] / 8.0));
}

double concept_label_prob_sampled(const ConceptDelta& delta, int k, std::mt19937_64& rng) {
  if (k < 0 || k >= delta.dmu.size())
    throw ConfigError("concept index out of range: " + std::to_string(k));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double dc = delta.dmu[k] + std::sqrt(delta.dvar[k]) * normal(rng);
  return logistic(-dc);
}

// loss and grad share this walk so the reparameterization noise, the term
// ordering, and the mean reductions agree exactly for a given seed.
template <typename PrefFn, typename ConceptFn>
static LossBreakdown walk_batch(const ModelParams& params, const Batch& batch,
                                std::uint64_t seed, PrefFn&& on_pref,
                                ConceptFn&& on_concept) {
  if (batch.pairs.empty()) throw ConfigError("loss/grad: empty batch");

  std::vector<PairForward> fwd;
  fwd.reserve(batch.pairs.size());
  std::unordered_map<std::int64_t, std::size_t> by_id;
  for (std::size_t j = 0; j < batch.pairs.size(); ++j) {
    fwd.push_back(forward_pair(params, batch.pairs[j]));
    by_id.emplace(batch.pairs[j].pair_id, j);
  }

  LossBreakdown out;
  std::size_t n_pref = 0;
  for (std::size_t j = 0; j < batch.pairs.size(); ++j) {
    if (!batch.pairs[j].label) continue;
    ++n_pref;
  }
  for (std::size_t j = 0; j < batch.pairs.size(); ++j) {
    if (!batch.pairs[j].label) continue;
    const PairForward& f = fwd[j];
    const double u = f.w.dot(f.mu_b - f.mu_a);  // logit of p(l=1)
    const int label = *batch.pairs[j].label;
    out.preference += bce_from_logit(u, label) / static_cast<double>(n_pref);
    on_pref(f, u, label, 1.0 / static_cast<double>(n_pref));
  }

  const std::size_t n_concept = batch.concept_labels.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const ConceptLabel& cl : batch.concept_labels) {
    auto it = by_id.find(cl.pair_id);
    if (it == by_id.end())
      throw ConfigError("concept label references pair_id " +
                        std::to_string(cl.pair_id) + " not present in batch");
    const PairForward& f = fwd[it->second];
    const int k = cl.concept_idx;
    if (k < 0 || k >= params.K())
      throw ConfigError("concept index out of range: " + std::to_string(k));
    const double eps = normal(rng);
    const double dvar = f.var_a[k] + f.var_b[k];
    const double sd = std::sqrt(dvar);
    const double dc = (f.mu_a[k] - f.mu_b[k]) + sd * eps;
    // logit of p(s=1) is -dc
    out.concept_bce += bce_from_logit(-dc, cl.value) / static_cast<double>(n_concept);
    on_concept(f, k, cl.value, eps, dc, sd, 1.0 / static_cast<double>(n_concept));
  }

  out.total = out.preference + out.concept_bce;
  if (!std::isfinite(out.total)) throw NumericError("non-finite loss");
  return out;
}

LossBreakdown loss(const ModelParams& params, const Batch& batch, std::uint64_t seed) {
  return walk_batch(
      params, batch, seed, [](const PairForward&, double, int, double) {},
      [](const PairForward&, int, int, double, double, double, double) {});
}

GradResult grad(const ModelParams& params, const Batch& batch, std::uint64_t seed) {
  GradResult result;
  result.grads = Gradients::zeros(params.K(), params.d());
  Gradients& g = result.grads;
  const bool softmax = params.gating == GatingMode::kSoftmax;

  auto on_pref = [&](const PairForward& f, double u, int label, double weight) {
    const double gu = (logistic(u) - label) * weight;  // dL/du
    const Eigen::VectorXd dmu_b = gu * f.w;            // dL/dmu_b; dL/dmu_a is its negation
    g.W_mu.noalias() += dmu_b * (f.e_b - f.e_a).transpose();
    // b_mu receives +gu*w from side B and -gu*w from side A: exactly zero.
    Eigen::VectorXd dw = gu * (f.mu_b - f.mu_a);
    Eigen::VectorXd dz;
    if (softmax) {
      const double inner = f.w.dot(dw);
      dz = (f.w.array() * (dw.array() - inner)).matrix();
    } else {
      dz = std::move(dw);
    }
    g.W_g.noalias() += dz * f.e_x.transpose();
    g.b_g += dz;
  };

  auto on_concept = [&](const PairForward& f, int k, int target, double eps,
                        double dc, double sd, double weight) {
    const double q = logistic(-dc);  // p(s=1)
    // dL/d(-dc) = q - target, hence dL/ddc = target - q.
    const double ddc = (target - q) * weight;
    // Mean path: dc depends on mu_a[k] (+1) and mu_b[k] (-1); b_mu cancels.
    g.W_mu.row(k).noalias() += ddc * (f.e_a - f.e_b).transpose();
    // Variance path: ddc/ddvar = eps / (2*sd); clamped coordinates pass zero.
    const double ddvar = ddc * eps / (2.0 * sd);
    if (unclamped(f.var_a_raw[k])) {
      const double dlv_a = ddvar * f.var_a[k];
      g.W_lv.row(k).noalias() += dlv_a * f.e_a.transpose();
      g.b_lv[k] += dlv_a;
    }
    if (unclamped(f.var_b_raw[k])) {
      const double dlv_b = ddvar * f.var_b[k];
      g.W_lv.row(k).noalias() += dlv_b * f.e_b.transpose();
      g.b_lv[k] += dlv_b;
    }
  };

  result.loss = walk_batch(params, batch, seed, on_pref, on_concept);
  return result;
}

void adam_step(ModelParams& params, OptimizerState& opt, const Gradients& grads) {
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  auto update = [&](auto& param, auto& m, auto& v, const auto& grad_block) {
    m = opt.beta1 * m + (1.0 - opt.beta1) * grad_block;
    v = (opt.beta2 * v.array() + (1.0 - opt.beta2) * grad_block.array().square()).matrix();
    param.array() -=
        opt.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + opt.eps);
  };
  update(params.W_mu, opt.m.W_mu, opt.v.W_mu, grads.W_mu);
  update(params.b_mu, opt.m.b_mu, opt.v.b_mu, grads.b_mu);
  update(params.W_lv, opt.m.W_lv, opt.v.W_lv, grads.W_lv);
  update(params.b_lv, opt.m.b_lv, opt.v.b_lv, grads.b_lv);
  update(params.W_g, opt.m.W_g, opt.v.W_g, grads.W_g);
  update(params.b_g, opt.m.b_g, opt.v.b_g, grads.b_g);
}

EpochStats train_epoch(ModelParams& params, OptimizerState& opt,
                       std::span<const TrainItem> items,
                       const ExperimentConfig& config, std::uint64_t seed) {
  EpochStats stats;
  if (items.empty()) {
    stats.skipped_empty = true;
    return stats;
  }
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x5e9));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    std::vector<TrainItem> slice;
    slice.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) slice.push_back(items[order[i]]);
    const Batch batch = make_batch(slice);
    const GradResult res = grad(params, batch, mix_seed(seed, stats.batches));
    adam_step(params, opt, res.grads);
    loss_sum += res.loss.total;
    ++stats.batches;
  }
  stats.mean_loss = loss_sum / std::max(1, stats.batches);
  return stats;
}

}  // namespace cbrm
