#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cbrm/errors.hpp"
#include "cbrm/model.hpp"
#include "test_support.hpp"

using namespace cbrm;
using namespace cbrm::testing;

TEST_CASE("logistic is exact, symmetric, and overflow-safe") {
  CHECK(logistic(0.0) == 0.5);
  CHECK(logistic(2.0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK(logistic(800.0) == 1.0);
  CHECK(logistic(-800.0) == 0.0);
  for (double x : {-5.0, -0.3, 0.7, 4.2})
    CHECK(logistic(x) + logistic(-x) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("zero parameters give unit variance, uniform gating, 0.5 preference") {
  const auto params = ModelParams::zeros(3, 4, GatingMode::kSoftmax);
  Eigen::VectorXd e = Eigen::VectorXd::LinSpaced(4, -1.0, 2.0);
  const auto c = predict_concepts(params, e);
  CHECK(c.mu.isZero(0.0));
  for (int k = 0; k < 3; ++k) CHECK(c.var[k] == 1.0);
  const auto w = gating_weights(params, e);
  for (int k = 0; k < 3; ++k) CHECK(w.w[k] == doctest::Approx(1.0 / 3).epsilon(1e-15));

  std::mt19937_64 rng(0);
  const auto pair = random_pair(0, 4, rng);
  CHECK(reward_mean(params, pair, Side::kA) == 0.0);
  CHECK(preference_prob(params, pair) == 0.5);
}

TEST_CASE("concept head matches a hand-computed affine map") {
  // K = 2, d = 2, numbers small enough to verify on paper.
  auto params = ModelParams::zeros(2, 2, GatingMode::kSoftmax);
  params.W_mu << 1.0, -2.0, 0.5, 0.25;
  params.b_mu << 0.1, -0.1;
  params.W_lv << 0.0, 0.0, 1.0, 0.0;
  params.b_lv << std::log(2.0), 0.0;
  Eigen::VectorXd e(2);
  e << 3.0, 1.0;

  const auto c = predict_concepts(params, e);
  CHECK(c.mu[0] == doctest::Approx(1.0 * 3 - 2.0 * 1 + 0.1).epsilon(1e-15));   // 1.1
  CHECK(c.mu[1] == doctest::Approx(0.5 * 3 + 0.25 * 1 - 0.1).epsilon(1e-15)); // 1.65
  CHECK(c.var[0] == doctest::Approx(2.0).epsilon(1e-15));          // exp(log 2)
  CHECK(c.var[1] == doctest::Approx(std::exp(3.0)).epsilon(1e-12)); // exp(1*3)
}

TEST_CASE("predicted variance is clamped to [1e-6, 1e2]") {
  auto params = ModelParams::zeros(2, 1, GatingMode::kSoftmax);
  params.b_lv << -50.0, 50.0;
  Eigen::VectorXd e = Eigen::VectorXd::Zero(1);
  const auto c = predict_concepts(params, e);
  CHECK(c.var[0] == kVarFloor);
  CHECK(c.var[1] == kVarCeil);
}

TEST_CASE("softmax gating sums to one and ignores logit shifts") {
  std::mt19937_64 rng(3);
  auto params = ModelParams::random_init(5, 8, GatingMode::kSoftmax, 99, 0.7);
  Eigen::VectorXd e = random_embedding(8, rng).cast<double>();
  const auto w = gating_weights(params, e);
  CHECK(w.w.sum() == doctest::Approx(1.0).epsilon(1e-12));
  for (int k = 0; k < 5; ++k) CHECK(w.w[k] > 0.0);

  auto shifted = params;
  shifted.b_g.array() += 123.0;  // common shift cancels in softmax
  const auto w2 = gating_weights(shifted, e);
  for (int k = 0; k < 5; ++k) CHECK(w.w[k] == doctest::Approx(w2.w[k]).epsilon(1e-9));

  auto raw = params;
  raw.gating = GatingMode::kUnconstrained;
  const auto z = gating_weights(raw, e);
  const Eigen::VectorXd expect = params.W_g * e + params.b_g;
  for (int k = 0; k < 5; ++k) CHECK(z.w[k] == doctest::Approx(expect[k]).epsilon(1e-15));
}

TEST_CASE("mean reward equals the gated dot product") {
  std::mt19937_64 rng(12);
  const auto params = ModelParams::random_init(4, 6, GatingMode::kSoftmax, 21, 0.4);
  const auto pair = random_pair(1, 6, rng);
  const auto w = gating_weights(params, as_double(pair.prompt_emb));
  const auto c = predict_concepts(params, as_double(pair.resp_b_emb));
  double expect = 0;
  for (int k = 0; k < 4; ++k) expect += w.w[k] * c.mu[k];
  CHECK(reward_mean(params, pair, Side::kB) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("sampled reward matches the mean reward in expectation") {
  std::mt19937_64 rng(5);
  const auto params = ModelParams::random_init(3, 5, GatingMode::kSoftmax, 17, 0.5);
  const auto pair = random_pair(2, 5, rng);
  const double mean = reward_mean(params, pair, Side::kA);

  std::mt19937_64 sample_rng(404);
  const int n = 20000;
  double acc = 0, acc2 = 0;
  for (int i = 0; i < n; ++i) {
    const double r = reward_sampled(params, pair, Side::kA, sample_rng);
    acc += r;
    acc2 += r * r;
  }
  const double mc_mean = acc / n;
  const double mc_var = acc2 / n - mc_mean * mc_mean;
  const double se = std::sqrt(mc_var / n);
  CHECK(std::abs(mc_mean - mean) < 3.0 * se + 1e-12);

  // The sampled-reward variance should match w^T diag(var) w analytically.
  const auto w = gating_weights(params, as_double(pair.prompt_emb));
  const auto c = predict_concepts(params, as_double(pair.resp_a_emb));
  double want_var = 0;
  for (int k = 0; k < 3; ++k) want_var += w.w[k] * w.w[k] * c.var[k];
  CHECK(mc_var == doctest::Approx(want_var).epsilon(0.05));
}

TEST_CASE("concept delta moments and BTL antisymmetry") {
  std::mt19937_64 rng(8);
  const auto params = ModelParams::random_init(4, 7, GatingMode::kSoftmax, 33, 0.6);
  auto pair = random_pair(3, 7, rng);

  const auto d = concept_delta(params, pair);
  const auto ca = predict_concepts(params, as_double(pair.resp_a_emb));
  const auto cb = predict_concepts(params, as_double(pair.resp_b_emb));
  for (int k = 0; k < 4; ++k) {
    CHECK(d.dmu[k] == doctest::Approx(ca.mu[k] - cb.mu[k]).epsilon(1e-14));
    CHECK(d.dvar[k] == doctest::Approx(ca.var[k] + cb.var[k]).epsilon(1e-14));
    CHECK(d.dvar[k] >= 2 * kVarFloor);
  }

  auto swapped = pair;
  std::swap(swapped.resp_a_emb, swapped.resp_b_emb);
  const auto ds = concept_delta(params, swapped);
  for (int k = 0; k < 4; ++k) {
    CHECK(ds.dmu[k] == doctest::Approx(-d.dmu[k]).epsilon(1e-12));
    CHECK(ds.dvar[k] == doctest::Approx(d.dvar[k]).epsilon(1e-14));
  }
  CHECK(preference_prob(params, swapped) ==
        doctest::Approx(1.0 - preference_prob(params, pair)).epsilon(1e-12));
}

TEST_CASE("checkpoints round trip bitwise after float32 quantization") {
  const auto params = ModelParams::random_init(6, 9, GatingMode::kUnconstrained, 555, 0.3);
  const auto dir = std::filesystem::temp_directory_path() / "cbrm_tests";
  std::filesystem::create_directories(dir);
  const auto p1 = (dir / "model_a.cbrm").string();
  const auto p2 = (dir / "model_b.cbrm").string();

  save_checkpoint(params, p1);
  const auto once = load_checkpoint(p1);
  CHECK(once.gating == GatingMode::kUnconstrained);
  CHECK(once.K() == 6);
  CHECK(once.d() == 9);
  // Values agree to float32 precision...
  CHECK((once.W_mu - params.W_mu).cwiseAbs().maxCoeff() < 1e-7);
  // ...and a second round trip is exact, since storage is already float32.
  save_checkpoint(once, p2);
  const auto twice = load_checkpoint(p2);
  CHECK(twice.W_mu == once.W_mu);
  CHECK(twice.b_lv == once.b_lv);
  CHECK(twice.W_g == once.W_g);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string bytes1((std::istreambuf_iterator<char>(f1)), {});
  const std::string bytes2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(bytes1 == bytes2);
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  const auto dir = std::filesystem::temp_directory_path() / "cbrm_tests";
  std::filesystem::create_directories(dir);
  const auto bad = (dir / "bad.cbrm").string();
  std::ofstream(bad, std::ios::binary) << "XXXX";
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);

  const auto params = ModelParams::zeros(2, 3, GatingMode::kSoftmax);
  const auto trunc = (dir / "trunc.cbrm").string();
  save_checkpoint(params, trunc);
  std::filesystem::resize_file(trunc, std::filesystem::file_size(trunc) - 3);
  CHECK_THROWS_AS(load_checkpoint(trunc), FormatError);
}

TEST_CASE("non-finite embeddings raise a numeric error") {
  const auto params = ModelParams::zeros(2, 2, GatingMode::kSoftmax);
  Eigen::VectorXd e(2);
  e << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(predict_concepts(params, e), NumericError);
  CHECK_THROWS_AS(gating_weights(params, e), NumericError);
}
