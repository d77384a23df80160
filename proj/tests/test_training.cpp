#include <doctest.h>

#include <cmath>
#include <vector>

#include "cbrm/errors.hpp"
#include "cbrm/training.hpp"
#include "test_support.hpp"

using namespace cbrm;
using namespace cbrm::testing;

namespace {

// A small batch with preference labels on every pair and a few concept labels.
Batch mixed_batch(int K, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Batch batch;
  for (int i = 0; i < 4; ++i) {
    auto p = random_pair(i, d, rng);
    p.label = i % 2;
    batch.pairs.push_back(std::move(p));
  }
  batch.concept_labels = {{0, 0, 1}, {0, 2, 0}, {1, 1, 1}, {3, 0, 0}, {3, 2, 1}};
  for (auto& cl : batch.concept_labels) cl.concept_idx %= K;
  return batch;
}

double bce(double p, int target) {
  return -(target * std::log(p) + (1 - target) * std::log(1.0 - p));
}

std::vector<double*> param_coords(ModelParams& p) {
  std::vector<double*> out;
  for (Eigen::MatrixXd* m : {&p.W_mu, &p.W_lv, &p.W_g})
    for (int i = 0; i < m->size(); ++i) out.push_back(m->data() + i);
  for (Eigen::VectorXd* v : {&p.b_mu, &p.b_lv, &p.b_g})
    for (int i = 0; i < v->size(); ++i) out.push_back(v->data() + i);
  return out;
}

std::vector<double> flatten_grads(const Gradients& g) {
  std::vector<double> out;
  for (const Eigen::MatrixXd* m : {&g.W_mu, &g.W_lv, &g.W_g})
    for (int i = 0; i < m->size(); ++i) out.push_back(*(m->data() + i));
  for (const Eigen::VectorXd* v : {&g.b_mu, &g.b_lv, &g.b_g})
    for (int i = 0; i < v->size(); ++i) out.push_back(*(v->data() + i));
  return out;
}

}  // namespace

TEST_CASE("probit concept probability matches the closed form") {
  ConceptDelta delta;
  delta.dmu = Eigen::VectorXd::Zero(2);
  delta.dvar = Eigen::VectorXd::Constant(2, 2.0);
  CHECK(concept_label_prob(delta, 0) == 0.5);  // no mean difference

  delta.dmu << 1.5, -0.75;
  delta.dvar << 0.5, 3.0;
  CHECK(concept_label_prob(delta, 0) ==
        doctest::Approx(logistic(-1.5 / std::sqrt(1.0 + M_PI * 0.5 / 8.0))).epsilon(1e-14));
  CHECK(concept_label_prob(delta, 1) ==
        doctest::Approx(logistic(0.75 / std::sqrt(1.0 + M_PI * 3.0 / 8.0))).epsilon(1e-14));
  CHECK_THROWS_AS(concept_label_prob(delta, 5), ConfigError);
}

TEST_CASE("sampled concept probability agrees with quadrature in expectation") {
  ConceptDelta delta;
  delta.dmu = Eigen::VectorXd::Zero(1);
  delta.dvar = Eigen::VectorXd::Zero(1);
  for (auto [dmu, dvar] : std::vector<std::pair<double, double>>{
           {0.0, 1.0}, {1.2, 0.3}, {-2.0, 4.0}, {0.4, 2.5}}) {
    delta.dmu[0] = dmu;
    delta.dvar[0] = dvar;
    const double want =
        gaussian_expectation([](double z) { return logistic(-z); }, dmu, dvar);

    std::mt19937_64 rng(7);
    const int n = 50000;
    double acc = 0;
    for (int i = 0; i < n; ++i) acc += concept_label_prob_sampled(delta, 0, rng);
    CHECK(acc / n == doctest::Approx(want).epsilon(0.01));
    // The probit-style closed form should sit close to the true expectation.
    CHECK(std::abs(concept_label_prob(delta, 0) - want) < 0.02);
  }
}

TEST_CASE("preference loss term matches an independent BCE computation") {
  const auto params = ModelParams::random_init(3, 5, GatingMode::kSoftmax, 11, 0.4);
  Batch batch = mixed_batch(3, 5, 2);
  batch.concept_labels.clear();  // isolate the preference term

  double want = 0;
  for (const auto& p : batch.pairs)
    want += bce(preference_prob(params, p), *p.label) / double(batch.pairs.size());
  const auto got = loss(params, batch, 0);
  CHECK(got.preference == doctest::Approx(want).epsilon(1e-10));
  CHECK(got.concept_bce == 0.0);
  CHECK(got.total == got.preference);
}

TEST_CASE("concept loss term matches BCE in the tiny-variance regime") {
  auto params = ModelParams::random_init(3, 5, GatingMode::kSoftmax, 13, 0.4);
  params.b_lv.array() = -50.0;  // variance clamps to the floor: near-deterministic
  params.W_lv.setZero();
  const Batch batch = mixed_batch(3, 5, 4);

  double want = 0;
  for (const auto& cl : batch.concept_labels) {
    const PreferencePair* pair = nullptr;
    for (const auto& p : batch.pairs)
      if (p.pair_id == cl.pair_id) pair = &p;
    REQUIRE(pair != nullptr);
    const auto delta = concept_delta(params, *pair);
    want += bce(logistic(-delta.dmu[cl.concept_idx]), cl.value) /
            double(batch.concept_labels.size());
  }
  CHECK(loss(params, batch, 9).concept_bce == doctest::Approx(want).epsilon(1e-2));
}

TEST_CASE("zero parameters give ln 2 preference loss") {
  const auto params = ModelParams::zeros(3, 5, GatingMode::kSoftmax);
  Batch batch = mixed_batch(3, 5, 6);
  batch.concept_labels.clear();
  CHECK(loss(params, batch, 0).preference == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences") {
  auto params = ModelParams::random_init(3, 5, GatingMode::kSoftmax, 31, 0.3);
  const Batch batch = mixed_batch(3, 5, 8);
  const std::uint64_t seed = 17;  // fixed: loss is deterministic in params

  const auto analytic = flatten_grads(grad(params, batch, seed).grads);
  const auto coords = param_coords(params);
  REQUIRE(analytic.size() == coords.size());

  const double h = 1e-5;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double saved = *coords[i];
    *coords[i] = saved + h;
    const double up = loss(params, batch, seed).total;
    *coords[i] = saved - h;
    const double down = loss(params, batch, seed).total;
    *coords[i] = saved;
    const double fd = (up - down) / (2 * h);
    num += (fd - analytic[i]) * (fd - analytic[i]);
    den += fd * fd;
  }
  CHECK(std::sqrt(num) / std::max(1.0, std::sqrt(den)) < 1e-4);
}

TEST_CASE("concept-mean bias receives exactly zero gradient") {
  // b_mu cancels in every difference the loss uses, so its gradient is 0.
  const auto params = ModelParams::random_init(4, 6, GatingMode::kSoftmax, 41, 0.5);
  const auto g = grad(params, mixed_batch(4, 6, 10), 3).grads;
  CHECK(g.b_mu.isZero(0.0));
}

TEST_CASE("without concept labels the variance head gets no gradient") {
  const auto params = ModelParams::random_init(3, 5, GatingMode::kSoftmax, 43, 0.5);
  Batch batch = mixed_batch(3, 5, 12);
  batch.concept_labels.clear();
  const auto g = grad(params, batch, 0).grads;
  CHECK(g.W_lv.isZero(0.0));
  CHECK(g.b_lv.isZero(0.0));
  CHECK_FALSE(g.W_mu.isZero(0.0));
  CHECK_FALSE(g.W_g.isZero(0.0));
}

TEST_CASE("duplicating a preference-only batch leaves the mean loss unchanged") {
  const auto params = ModelParams::random_init(3, 5, GatingMode::kSoftmax, 47, 0.4);
  Batch batch = mixed_batch(3, 5, 14);
  batch.concept_labels.clear();
  Batch doubled = batch;
  for (const auto& p : batch.pairs) doubled.pairs.push_back(p);
  CHECK(loss(params, doubled, 0).total ==
        doctest::Approx(loss(params, batch, 0).total).epsilon(1e-13));
}

TEST_CASE("loss and grad are bitwise deterministic in the seed") {
  const auto params = ModelParams::random_init(3, 5, GatingMode::kSoftmax, 53, 0.4);
  const Batch batch = mixed_batch(3, 5, 16);
  const auto a = grad(params, batch, 123);
  const auto b = grad(params, batch, 123);
  CHECK(a.loss.total == b.loss.total);
  CHECK(a.grads.W_mu == b.grads.W_mu);
  CHECK(a.grads.W_lv == b.grads.W_lv);
  CHECK(a.grads.W_g == b.grads.W_g);
  // A different seed redraws the reparameterization noise.
  CHECK(grad(params, batch, 124).loss.concept_bce != a.loss.concept_bce);
}

TEST_CASE("one Adam step from rest follows the bias-corrected update") {
  auto params = ModelParams::zeros(2, 2, GatingMode::kSoftmax);
  auto opt = OptimizerState::init(2, 2, 0.01);
  Gradients g = Gradients::zeros(2, 2);
  g.W_mu(0, 0) = 0.5;
  g.W_mu(1, 1) = -2.0;
  adam_step(params, opt, g);
  // With zero state, bias correction makes m_hat = g and v_hat = g^2, so the
  // first step is -lr * g / (|g| + eps).
  CHECK(params.W_mu(0, 0) == doctest::Approx(-0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(params.W_mu(1, 1) == doctest::Approx(0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
  CHECK(params.W_mu(0, 1) == 0.0);
  CHECK(opt.step == 1);
}

TEST_CASE("zero learning rate makes training a no-op") {
  auto params = ModelParams::random_init(3, 5, GatingMode::kSoftmax, 59, 0.4);
  const auto before = params;
  auto opt = OptimizerState::init(3, 5, 0.0);

  std::mt19937_64 rng(0);
  std::vector<TrainItem> items;
  for (int i = 0; i < 6; ++i) {
    TrainItem item;
    item.pair = random_pair(i, 5, rng);
    item.pair.label = i % 2;
    item.labels.push_back({i, i % 3, 1});
    items.push_back(std::move(item));
  }
  ExperimentConfig cfg;
  cfg.concept_count = 3;
  cfg.embedding_dim = 5;
  cfg.batch_size = 4;
  const auto stats = train_epoch(params, opt, items, cfg, 1);
  CHECK(stats.batches == 2);
  CHECK(params.W_mu == before.W_mu);
  CHECK(params.W_g == before.W_g);
  CHECK(params.b_lv == before.b_lv);
}

TEST_CASE("train_epoch is deterministic and skips empty input") {
  std::mt19937_64 rng(1);
  std::vector<TrainItem> items;
  for (int i = 0; i < 10; ++i) {
    TrainItem item;
    item.pair = random_pair(i, 5, rng);
    item.pair.label = (i * 7) % 2;
    item.labels.push_back({i, i % 3, i % 2});
    items.push_back(std::move(item));
  }
  ExperimentConfig cfg;
  cfg.concept_count = 3;
  cfg.embedding_dim = 5;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.01;

  auto pa = ModelParams::random_init(3, 5, GatingMode::kSoftmax, 61, 0.2);
  auto pb = pa;
  auto oa = OptimizerState::init(3, 5, cfg.learning_rate);
  auto ob = OptimizerState::init(3, 5, cfg.learning_rate);
  const auto sa = train_epoch(pa, oa, items, cfg, 7);
  const auto sb = train_epoch(pb, ob, items, cfg, 7);
  CHECK(sa.mean_loss == sb.mean_loss);
  CHECK(pa.W_mu == pb.W_mu);
  CHECK(pa.W_lv == pb.W_lv);
  CHECK(pa.W_g == pb.W_g);

  auto pc = pa;
  auto oc = OptimizerState::init(3, 5, cfg.learning_rate);
  const auto sc = train_epoch(pc, oc, std::span<const TrainItem>{}, cfg, 7);
  CHECK(sc.skipped_empty);
  CHECK(sc.batches == 0);
  CHECK(pc.W_mu == pa.W_mu);
}

TEST_CASE("repeated epochs drive the preference loss toward zero") {
  std::mt19937_64 rng(2);
  std::vector<TrainItem> items;
  for (int i = 0; i < 4; ++i) {
    TrainItem item;
    item.pair = random_pair(i, 5, rng);
    item.pair.label = i % 2;
    items.push_back(std::move(item));
  }
  ExperimentConfig cfg;
  cfg.concept_count = 3;
  cfg.embedding_dim = 5;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.05;

  auto params = ModelParams::random_init(3, 5, GatingMode::kSoftmax, 67, 0.1);
  auto opt = OptimizerState::init(3, 5, cfg.learning_rate);
  const Batch batch = make_batch(items);
  const double initial = loss(params, batch, 0).total;
  for (int epoch = 0; epoch < 200; ++epoch)
    train_epoch(params, opt, items, cfg, 1000 + epoch);
  const double final_loss = loss(params, batch, 0).total;
  CHECK(final_loss < 0.01);
  CHECK(final_loss < 0.1 * initial);
}

TEST_CASE("batch validation rejects dangling labels and empty batches") {
  const auto params = ModelParams::zeros(2, 3, GatingMode::kSoftmax);
  Batch empty;
  CHECK_THROWS_AS(loss(params, empty, 0), ConfigError);

  Batch bad = mixed_batch(2, 3, 20);
  bad.concept_labels.push_back({999, 0, 1});  // no such pair in the batch
  CHECK_THROWS_AS(loss(params, bad, 0), ConfigError);

  Batch oob = mixed_batch(2, 3, 22);
  oob.concept_labels.push_back({0, 7, 1});  // concept index out of range
  CHECK_THROWS_AS(grad(params, oob, 0), ConfigError);
}
