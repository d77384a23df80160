#include "cbrm/synthetic.hpp"

#include <cmath>
#include <random>

#include "binary_io.hpp"
#include "cbrm/errors.hpp"
#include "cbrm/util.hpp"

namespace cbrm {

namespace {

// Standard normal from a single hashed state (Box-Muller on two hashed
// uniforms). Good enough for per-(pair, side, k) concept noise.
double hash_normal(std::uint64_t state) {
  const double u1 = hash_uniform(splitmix64(state));
  const double u2 = hash_uniform(splitmix64(state ^ 0xdeadbeefcafef00dull));
  const double r = std::sqrt(-2.0 * std::log(u1 + 1e-300));
  return r * std::cos(2.0 * M_PI * u2);
}

constexpr std::uint64_t kNoiseStream = 11;
constexpr std::uint64_t kFlipStream = 13;

Embedding draw_embedding(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Embedding e(d);
  // Drawn in float so CBRE round trips are bit-exact.
  for (int i = 0; i < d; ++i) e[i] = static_cast<float>(normal(rng));
  return e;
}

}  // namespace

SyntheticData generate_synthetic(int n_pairs, const ExperimentConfig& config,
                                 std::uint64_t seed) {
  if (n_pairs < 1) throw ConfigError("generate_synthetic: n_pairs must be >= 1");
  config.validate();
  const int K = config.concept_count;
  const int d = config.embedding_dim;

  SyntheticData data;
  SyntheticWorld& world = data.world;
  world.concept_noise = config.concept_noise;
  world.label_flip_prob = config.label_flip_prob;
  world.seed = seed;

  std::mt19937_64 rng(mix_seed(seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  if (config.leakage_embeddings) {
    // Identity block: the first K embedding coordinates ARE the concept scores.
    world.true_concept_map = Eigen::MatrixXd::Zero(K, d);
    world.true_concept_map.leftCols(K) = Eigen::MatrixXd::Identity(K, K);
    world.concept_bias = Eigen::VectorXd::Zero(K);
  } else {
    world.true_concept_map = Eigen::MatrixXd::NullaryExpr(
        K, d, [&](Eigen::Index, Eigen::Index) { return scale * normal(rng); });
    world.concept_bias = Eigen::VectorXd::NullaryExpr(
        K, [&](Eigen::Index) { return 0.1 * normal(rng); });
  }
  world.true_gating_map = Eigen::MatrixXd::NullaryExpr(
      K, d, [&](Eigen::Index, Eigen::Index) { return scale * normal(rng); });

  std::mt19937_64 emb_rng(mix_seed(seed, 2));
  data.pairs.reserve(n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    PreferencePair pair;
    pair.pair_id = i;
    pair.prompt_emb = draw_embedding(d, emb_rng);
    pair.resp_a_emb = draw_embedding(d, emb_rng);
    pair.resp_b_emb = draw_embedding(d, emb_rng);
    pair.label = oracle_preference(world, pair);
    data.pairs.push_back(std::move(pair));
  }
  return data;
}

double true_concept_score(const SyntheticWorld& world, const PreferencePair& pair,
                          Side side, int k) {
  if (k < 0 || k >= world.K())
    throw ConfigError("concept index out of range: " + std::to_string(k));
  const Embedding& e = side == Side::kA ? pair.resp_a_emb : pair.resp_b_emb;
  double score = world.true_concept_map.row(k).dot(e.cast<double>()) + world.concept_bias[k];
  if (world.concept_noise > 0) {
    const std::uint64_t state =
        mix_seed(world.seed, kNoiseStream,
                 static_cast<std::uint64_t>(pair.pair_id) * 2 + (side == Side::kA ? 0 : 1),
                 static_cast<std::uint64_t>(k));
    score += world.concept_noise * hash_normal(state);
  }
  return score;
}

Eigen::VectorXd true_concepts(const SyntheticWorld& world, const PreferencePair& pair,
                              Side side) {
  Eigen::VectorXd c(world.K());
  for (int k = 0; k < world.K(); ++k) c[k] = true_concept_score(world, pair, side, k);
  return c;
}

Eigen::VectorXd true_gating(const SyntheticWorld& world, const PreferencePair& pair) {
  Eigen::VectorXd z = world.true_gating_map * pair.prompt_emb.cast<double>();
  const double zmax = z.maxCoeff();
  Eigen::VectorXd w = (z.array() - zmax).exp().matrix();
  w /= w.sum();
  return w;
}

int oracle_concept_label(const SyntheticWorld& world, const PreferencePair& pair, int k) {
  const double ca = true_concept_score(world, pair, Side::kA, k);
  const double cb = true_concept_score(world, pair, Side::kB, k);
  int label = cb > ca ? 1 : 0;  // ties resolve to 0
  if (world.label_flip_prob > 0) {
    const std::uint64_t state =
        mix_seed(world.seed, kFlipStream, static_cast<std::uint64_t>(pair.pair_id),
                 static_cast<std::uint64_t>(k));
    if (hash_uniform(state) < world.label_flip_prob) label = 1 - label;
  }
  return label;
}

int oracle_preference(const SyntheticWorld& world, const PreferencePair& pair) {
  const Eigen::VectorXd w = true_gating(world, pair);
  const double ra = w.dot(true_concepts(world, pair, Side::kA));
  const double rb = w.dot(true_concepts(world, pair, Side::kB));
  return rb > ra ? 1 : 0;
}

const LabelTable::Entry& LabelTable::at(std::int64_t pair_id) const {
  auto it = entries.find(pair_id);
  if (it == entries.end())
    throw ConfigError("no labels for pair_id " + std::to_string(pair_id));
  return it->second;
}

bool LabelTable::has_concept(std::int64_t pair_id, int k) const {
  auto it = entries.find(pair_id);
  return it != entries.end() && k < static_cast<int>(it->second.concepts.size()) &&
         it->second.concepts[k].has_value();
}

LabelTable make_label_table(const SyntheticWorld& world,
                            const std::vector<PreferencePair>& pairs) {
  LabelTable table;
  table.concept_count = world.K();
  for (const auto& pair : pairs) {
    LabelTable::Entry entry;
    entry.preference = oracle_preference(world, pair);
    entry.concepts.resize(world.K());
    for (int k = 0; k < world.K(); ++k)
      entry.concepts[k] = oracle_concept_label(world, pair, k);
    table.entries.emplace(pair.pair_id, std::move(entry));
  }
  return table;
}

// --- world file --------------------------------------------------------------

namespace {
constexpr char kWorldMagic[4] = {'C', 'B', 'R', 'W'};
constexpr std::uint16_t kWorldVersion = 1;

void write_block_f64(std::ostream& out, const Eigen::MatrixXd& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) detail::write_raw(out, m(r, c));
}

void read_block_f64(std::istream& in, const std::string& path, Eigen::MatrixXd& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) m(r, c) = detail::read_raw<double>(in, path, "world block");
}
}  // namespace

void save_world(const SyntheticWorld& world, const std::string& path) {
  auto out = detail::open_output(path);
  out.write(kWorldMagic, 4);
  detail::write_raw(out, kWorldVersion);
  detail::write_raw(out, static_cast<std::uint32_t>(world.K()));
  detail::write_raw(out, static_cast<std::uint32_t>(world.d()));
  detail::write_raw(out, world.concept_noise);
  detail::write_raw(out, world.label_flip_prob);
  detail::write_raw(out, world.seed);
  write_block_f64(out, world.true_concept_map);
  Eigen::MatrixXd b = world.concept_bias;
  write_block_f64(out, b);
  write_block_f64(out, world.true_gating_map);
  if (!out) throw FormatError("failed writing world file: " + path);
}

SyntheticWorld load_world(const std::string& path) {
  auto in = detail::open_input(path);
  detail::expect_magic(in, path, kWorldMagic);
  const auto version = detail::read_raw<std::uint16_t>(in, path, "version");
  if (version != kWorldVersion)
    throw FormatError(path + ": unsupported world version " + std::to_string(version));
  const auto K = detail::read_raw<std::uint32_t>(in, path, "K");
  const auto d = detail::read_raw<std::uint32_t>(in, path, "d");
  SyntheticWorld world;
  world.concept_noise = detail::read_raw<double>(in, path, "concept_noise");
  world.label_flip_prob = detail::read_raw<double>(in, path, "label_flip_prob");
  world.seed = detail::read_raw<std::uint64_t>(in, path, "seed");
  world.true_concept_map.resize(K, d);
  read_block_f64(in, path, world.true_concept_map);
  Eigen::MatrixXd b(K, 1);
  read_block_f64(in, path, b);
  world.concept_bias = b.col(0);
  world.true_gating_map.resize(K, d);
  read_block_f64(in, path, world.true_gating_map);
  return world;
}

}  // namespace cbrm
