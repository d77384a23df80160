#include "cbrm/model.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "cbrm/errors.hpp"

namespace cbrm {

double logistic(double x) {
  // Split form avoids overflow in exp for large |x|.
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

ModelParams ModelParams::zeros(int K, int d, GatingMode gating) {
  ModelParams p;
  p.W_mu = Eigen::MatrixXd::Zero(K, d);
  p.b_mu = Eigen::VectorXd::Zero(K);
  p.W_lv = Eigen::MatrixXd::Zero(K, d);
  p.b_lv = Eigen::VectorXd::Zero(K);
  p.W_g = Eigen::MatrixXd::Zero(K, d);
  p.b_g = Eigen::VectorXd::Zero(K);
  p.gating = gating;
  return p;
}

ModelParams ModelParams::random_init(int K, int d, GatingMode gating,
                                     std::uint64_t seed, double scale) {
  ModelParams p = zeros(K, d, gating);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  auto fill = [&](Eigen::MatrixXd& m) {
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) m(r, c) = normal(rng);
  };
  fill(p.W_mu);
  fill(p.W_lv);
  fill(p.W_g);
  return p;
}

static void check_finite(const Eigen::VectorXd& e, const char* what) {
  if (!e.allFinite()) throw NumericError(std::string("non-finite ") + what);
}

GaussianConcepts predict_concepts(const ModelParams& params,
                                  const Eigen::VectorXd& pair_emb) {
  check_finite(pair_emb, "embedding in predict_concepts");
  GaussianConcepts out;
  out.mu = params.W_mu * pair_emb + params.b_mu;
  out.var = (params.W_lv * pair_emb + params.b_lv)
                .array()
                .exp()
                .max(kVarFloor)
                .min(kVarCeil)
                .matrix();
  return out;
}

GatingWeights gating_weights(const ModelParams& params,
                             const Eigen::VectorXd& prompt_emb) {
  check_finite(prompt_emb, "embedding in gating_weights");
  Eigen::VectorXd z = params.W_g * prompt_emb + params.b_g;
  if (params.gating == GatingMode::kUnconstrained) return {std::move(z)};
  const double zmax = z.maxCoeff();
  Eigen::VectorXd w = (z.array() - zmax).exp().matrix();
  w /= w.sum();
  return {std::move(w)};
}

static const Embedding& side_emb(const PreferencePair& pair, Side side) {
  return side == Side::kA ? pair.resp_a_emb : pair.resp_b_emb;
}

double reward_mean(const ModelParams& params, const PreferencePair& pair, Side side) {
  const GatingWeights w = gating_weights(params, as_double(pair.prompt_emb));
  const GaussianConcepts c = predict_concepts(params, as_double(side_emb(pair, side)));
  return w.w.dot(c.mu);
}

double reward_sampled(const ModelParams& params, const PreferencePair& pair,
                      Side side, std::mt19937_64& rng) {
  const GatingWeights w = gating_weights(params, as_double(pair.prompt_emb));
  const GaussianConcepts c = predict_concepts(params, as_double(side_emb(pair, side)));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd sample = c.mu;
  for (int k = 0; k < sample.size(); ++k)
    sample[k] += std::sqrt(c.var[k]) * normal(rng);
  return w.w.dot(sample);
}

double preference_prob(const ModelParams& params, const PreferencePair& pair) {
  // p(l=1): the second response y' is preferred.
  return logistic(reward_mean(params, pair, Side::kB) -
                  reward_mean(params, pair, Side::kA));
}

ConceptDelta concept_delta(const ModelParams& params, const PreferencePair& pair) {
  const GaussianConcepts a = predict_concepts(params, as_double(pair.resp_a_emb));
  const GaussianConcepts b = predict_concepts(params, as_double(pair.resp_b_emb));
  return {a.mu - b.mu, a.var + b.var};
}

// --- checkpoint -------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'C', 'B', 'R', 'M'};
constexpr std::uint16_t kVersion = 1;

void write_block_f32(std::ostream& out, const Eigen::MatrixXd& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      detail::write_raw(out, static_cast<float>(m(r, c)));
}

void write_block_f32(std::ostream& out, const Eigen::VectorXd& v) {
  for (int i = 0; i < v.size(); ++i) detail::write_raw(out, static_cast<float>(v[i]));
}

void read_block_f32(std::istream& in, const std::string& path, Eigen::MatrixXd& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      m(r, c) = detail::read_raw<float>(in, path, "parameter block");
}

void read_block_f32(std::istream& in, const std::string& path, Eigen::VectorXd& v) {
  for (int i = 0; i < v.size(); ++i)
    v[i] = detail::read_raw<float>(in, path, "parameter block");
}
}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  auto out = detail::open_output(path);
  out.write(kMagic, 4);
  detail::write_raw(out, kVersion);
  detail::write_raw(out, static_cast<std::uint32_t>(params.K()));
  detail::write_raw(out, static_cast<std::uint32_t>(params.d()));
  detail::write_raw(out, static_cast<std::uint8_t>(params.gating == GatingMode::kSoftmax ? 0 : 1));
  write_block_f32(out, params.W_mu);
  write_block_f32(out, params.b_mu);
  write_block_f32(out, params.W_lv);
  write_block_f32(out, params.b_lv);
  write_block_f32(out, params.W_g);
  write_block_f32(out, params.b_g);
  if (!out) throw FormatError("failed writing checkpoint: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  auto in = detail::open_input(path);
  detail::expect_magic(in, path, kMagic);
  const auto version = detail::read_raw<std::uint16_t>(in, path, "version");
  if (version != kVersion)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto K = detail::read_raw<std::uint32_t>(in, path, "K");
  const auto d = detail::read_raw<std::uint32_t>(in, path, "d");
  const auto gating = detail::read_raw<std::uint8_t>(in, path, "gating mode");
  if (gating > 1) throw FormatError(path + ": bad gating mode byte");
  ModelParams params = ModelParams::zeros(
      static_cast<int>(K), static_cast<int>(d),
      gating == 0 ? GatingMode::kSoftmax : GatingMode::kUnconstrained);
  read_block_f32(in, path, params.W_mu);
  read_block_f32(in, path, params.b_mu);
  read_block_f32(in, path, params.W_lv);
  read_block_f32(in, path, params.b_lv);
  read_block_f32(in, path, params.W_g);
  read_block_f32(in, path, params.b_g);
  return params;
}

}  // namespace cbrm
