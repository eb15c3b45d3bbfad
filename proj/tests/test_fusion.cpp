#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "mmfuse/fusion.hpp"
#include "mmfuse/rng.hpp"
#include "testutil.hpp"

using namespace mmfuse;
using testutil::check_loss_gradients;
using testutil::make_bundle;
using testutil::random_batch;
using testutil::random_prob_vectors;
using testutil::random_tensor;

namespace {

// Direct evaluation of the down-weighting factor and class losses, coded
// independently of the library (the test oracle).
double oracle_q(const std::vector<std::vector<double>>& p, std::size_t k, std::size_t i,
                double beta) {
  if (p.size() == 1) return 1.0;
  double prod = 1.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (j != i) prod *= 1.0 - p[j][k];
  }
  return std::pow(prod, beta / static_cast<double>(p.size() - 1));
}

std::vector<double> oracle_losses(const std::vector<std::vector<double>>& p, double beta,
                                  const std::vector<double>& w = {}) {
  std::vector<double> out(p.front().size(), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double wi = w.empty() ? 1.0 : w[i];
      out[k] -= wi * oracle_q(p, k, i, beta) * std::log(p[i][k]);
    }
  }
  return out;
}

// high-precision direct evaluation of the spec's running example
constexpr double kExampleLoss0 = 0.09322676863972959;
constexpr double kExampleLoss1 = 2.206212714483167;

}  // namespace

TEST_CASE("q_factor is 1 when beta is 0 or M is 1") {
  std::vector<std::vector<double>> probs{{0.7, 0.3}, {0.2, 0.8}};
  CHECK(q_factor(probs, 0, 0, 0.0) == 1.0);
  CHECK(q_factor(probs, 1, 1, 0.0) == 1.0);
  std::vector<std::vector<double>> single{{0.7, 0.3}};
  CHECK(q_factor(single, 0, 0, 1.0) == 1.0);
}

TEST_CASE("q_factor direct arithmetic: M=2, beta=1") {
  // q for the first modality at class 0 is 1 - p_2^0 = 0.4
  std::vector<std::vector<double>> probs{{0.9, 0.1}, {0.6, 0.4}};
  CHECK(q_factor(probs, 0, 0, 1.0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(q_factor(probs, 0, 1, 1.0) == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("q_factor symmetric closed form: all p = 1/K") {
  for (std::size_t k_classes : {2, 4, 5}) {
    for (double beta : {0.2, 0.5, 0.7, 1.0}) {
      std::vector<std::vector<double>> probs(
          3, std::vector<double>(k_classes, 1.0 / static_cast<double>(k_classes)));
      const double expect = std::pow(1.0 - 1.0 / static_cast<double>(k_classes), beta);
      for (std::size_t i = 0; i < 3; ++i) {
        CHECK(q_factor(probs, 0, i, beta) == doctest::Approx(expect).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("q monotonicity: raising another modality's p lowers q") {
  std::vector<std::vector<double>> probs{{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}};
  const double before = q_factor(probs, 0, 0, 0.7);
  probs[1][0] = 0.8;
  const double after = q_factor(probs, 0, 0, 0.7);
  CHECK(after < before);
  // but beta = 0 stays flat
  probs[1][0] = 0.5;
  const double b0 = q_factor(probs, 0, 0, 0.0);
  probs[1][0] = 0.8;
  CHECK(q_factor(probs, 0, 0, 0.0) == b0);
}

TEST_CASE("mul_class_losses frozen example: M=2, K=2, beta=1") {
  std::vector<std::vector<double>> probs{{0.9, 0.1}, {0.6, 0.4}};
  std::vector<double> losses = mul_class_losses(probs, 1.0);
  REQUIRE(losses.size() == 2);
  CHECK(std::abs(losses[0] - kExampleLoss0) < 1e-12);
  CHECK(std::abs(losses[1] - kExampleLoss1) < 1e-12);
}

TEST_CASE("mul_class_losses with beta 0 is exactly the plain sum") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto probs = random_prob_vectors(rng, 3, 4);
    std::vector<double> losses = mul_class_losses(probs, 0.0);
    for (std::size_t k = 0; k < 4; ++k) {
      double expect = 0.0;
      for (const auto& p : probs) expect -= std::log(p[k]);
      CHECK(std::abs(losses[k] - expect) < 1e-12);
    }
  }
}

TEST_CASE("mul_class_losses: confident agreement drives the loss to ~0") {
  const double eps = kProbClamp;
  std::vector<std::vector<double>> probs(3, std::vector<double>{1.0 - eps, eps});
  std::vector<double> losses = mul_class_losses(probs, 0.5);
  CHECK(losses[0] < 1e-9);
  CHECK(losses[0] > 0.0);
  CHECK(losses[1] > 1.0);  // the wrong class stays expensive
}

TEST_CASE("mul_class_losses oracle equivalence on random configurations") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t models = 1 + rng.index(4);
    const std::size_t classes = 2 + rng.index(4);
    const double beta = std::vector<double>{0.0, 0.3, 0.5, 1.0}[rng.index(4)];
    auto probs = random_prob_vectors(rng, models, classes);
    std::vector<double> w;
    if (trial % 3 == 0) {
      for (std::size_t i = 0; i < models; ++i) w.push_back(rng.uniform(0.1, 2.0));
    }
    std::vector<double> got = mul_class_losses(probs, beta, w);
    std::vector<double> expect = oracle_losses(probs, beta, w);
    for (std::size_t k = 0; k < classes; ++k) CHECK(std::abs(got[k] - expect[k]) < 1e-12);
  }
}

TEST_CASE("predict_argmin picks the smallest loss, ties to the lowest index") {
  CHECK(predict_argmin({0.093, 2.206}) == 0);
  CHECK(predict_argmin({2.206, 0.093}) == 1);
  CHECK(predict_argmin({0.5, 0.5, 0.4, 0.4}) == 2);
  CHECK(predict_argmin({0.5, 0.5}) == 0);
  CHECK_THROWS_AS(predict_argmin({0.1, std::nan("")}), MetricError);
  CHECK_THROWS_AS(predict_argmin({}), ShapeError);
}

TEST_CASE("boosted_gate margin semantics") {
  CHECK(boosted_gate({kExampleLoss0, kExampleLoss1}, 0, 0.1));       // wins by margin
  CHECK(!boosted_gate({0.5, 0.55}, 0, 0.1));                        // 0.5 + 0.1 >= 0.55
  CHECK(boosted_gate({0.5, 0.55}, 0, 0.0));                         // delta=0, strictly smallest
  CHECK(!boosted_gate({0.5, 0.5}, 0, 0.0));                         // tie is not a win
  CHECK(!boosted_gate({0.6, 0.2, 0.9}, 0, 0.0));
  CHECK(boosted_gate({0.6, 0.2, 0.9}, 1, 0.3));
  CHECK_THROWS_AS(boosted_gate({0.1, 0.2}, 5, 0.0), ShapeError);
}

TEST_CASE("enumerate_candidates counts and order") {
  for (std::size_t m = 1; m <= 8; ++m) {
    std::vector<MixtureCandidate> cands = enumerate_candidates(m);
    CHECK(cands.size() == (1ull << m) - 1);
    // completeness: every non-empty subset appears exactly once
    std::set<std::uint64_t> masks;
    for (const MixtureCandidate& c : cands) {
      std::uint64_t mask = 0;
      for (std::size_t mem : c.members) mask |= 1ull << mem;
      CHECK(masks.insert(mask).second);
    }
    CHECK(masks.size() == (1ull << m) - 1);
    // every modality appears in exactly 2^(m-1) candidates
    for (std::size_t mod = 0; mod < m; ++mod) {
      std::size_t count = 0;
      for (const MixtureCandidate& c : cands) count += c.contains(mod) ? 1 : 0;
      CHECK(count == (1ull << (m - 1)));
    }
    // ordered by size then lexicographically
    for (std::size_t i = 1; i < cands.size(); ++i) {
      const auto& a = cands[i - 1].members;
      const auto& b = cands[i].members;
      CHECK((a.size() < b.size() || (a.size() == b.size() && a < b)));
    }
  }
  std::vector<MixtureCandidate> single = enumerate_candidates(1);
  REQUIRE(single.size() == 1);
  CHECK(single[0].members == std::vector<std::size_t>{0});
}

TEST_CASE("enumerate_candidates cap error explains the blowup") {
  try {
    enumerate_candidates(9);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("2^9") != std::string::npos);
  }
  CHECK(enumerate_candidates(9, 10).size() == 511);
}

TEST_CASE("early fusion with M=1 equals a plain classifier") {
  ModelBundle bundle = make_bundle(FusionKind::kEarly, 1, 2, 44);
  Rng rng(3);
  MultimodalBatch batch = random_batch(rng, 4, {3}, 2);
  Tape tape;
  const Tensor& fused = early_fusion_forward(tape, bundle, batch).value();
  const Tensor& plain = predict_head(tape, bundle, 0, tape.leaf(batch.modalities[0])).value();
  for (std::size_t i = 0; i < fused.size(); ++i) CHECK(fused[i] == plain[i]);
}

TEST_CASE("early fusion consumes the concatenation of all modalities") {
  ModelBundle bundle = make_bundle(FusionKind::kEarly, 3, 2, 44);
  CHECK(bundle.heads[0].input_dim() == 9);  // sum of modality dims
  Rng rng(4);
  MultimodalBatch batch = random_batch(rng, 2, {3, 3, 3}, 2);
  Tape tape;
  const Tensor& p = early_fusion_forward(tape, bundle, batch).value();
  // composition oracle: head applied to the hand-built concatenation
  Tensor joint({2, 9});
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t m = 0; m < 3; ++m) {
      for (std::size_t j = 0; j < 3; ++j) {
        joint.at(r, m * 3 + j) = batch.modalities[m].at(r, j);
      }
    }
  }
  Tensor expect = predict_head_value(bundle, 0, joint);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i] == doctest::Approx(expect[i]).epsilon(1e-14));
  }
}

TEST_CASE("late fusion averages per-modality probabilities") {
  // raw-input single-layer heads with hand-set weights give exact
  // probability vectors: softmax(ln p) = p
  std::vector<EncoderSpec> encoders;
  std::vector<HeadSpec> heads(2, HeadSpec{1, {}, 2, Activation::kIdentity});
  ModelBundle bundle = init_bundle(FusionKind::kLate, encoders, heads, 1, true);
  bundle.heads[0].weights[0] = Tensor::matrix(1, 2, {std::log(0.9), std::log(0.1)});
  bundle.heads[1].weights[0] = Tensor::matrix(1, 2, {std::log(0.6), std::log(0.4)});

  MultimodalBatch batch;
  batch.modalities = {Tensor::matrix(1, 1, {1.0}), Tensor::matrix(1, 1, {1.0})};
  batch.labels = {0};
  Tape tape;
  const Tensor& p = late_fusion_forward(tape, bundle, batch).value();
  CHECK(std::abs(p[0] - 0.75) < 1e-12);
  CHECK(std::abs(p[1] - 0.25) < 1e-12);
}

TEST_CASE("late fusion of identical models is that model; rows sum to 1") {
  ModelBundle bundle = make_bundle(FusionKind::kLate, 2, 3, 7);
  bundle.encoders[1] = bundle.encoders[0];
  bundle.heads[1] = bundle.heads[0];
  Rng rng(8);
  Tensor shared = random_tensor(rng, {3, 3});
  MultimodalBatch batch;
  batch.modalities = {shared, shared};
  batch.labels = {0, 1, 2};
  Tape tape;
  const Tensor& fused = late_fusion_forward(tape, bundle, batch).value();
  const Tensor& one = per_model_probs(tape, bundle, batch)[0].value();
  for (std::size_t i = 0; i < fused.size(); ++i) {
    CHECK(fused[i] == doctest::Approx(one[i]).epsilon(1e-14));
  }
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 3; ++c) total += fused.at(r, c);
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("additive fusion: zeroed encoder equals dropping the modality") {
  ModelBundle bundle = make_bundle(FusionKind::kAdd, 2, 2, 15);
  for (Tensor& w : bundle.encoders[1].weights) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.0;
  }
  for (Tensor& b : bundle.encoders[1].biases) {
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.0;
  }
  Rng rng(9);
  MultimodalBatch batch = random_batch(rng, 3, {3, 3}, 2);
  Tape tape;
  const Tensor& p = additive_forward(tape, bundle, batch).value();
  // dropping modality 1: u = f_0(v_0) alone
  Var u0 = encode(tape, bundle, 0, tape.leaf(batch.modalities[0]));
  const Tensor& expect = predict_head(tape, bundle, 0, u0).value();
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == expect[i]);
}

TEST_CASE("additive fusion sum variant matches independent vector addition") {
  ModelBundle bundle = make_bundle(FusionKind::kAdd, 3, 2, 16);
  Rng rng(10);
  MultimodalBatch batch = random_batch(rng, 2, {3, 3, 3}, 2);
  Tape tape;
  const Tensor& p = additive_forward(tape, bundle, batch).value();
  Tensor u({2, 3});
  for (std::size_t m = 0; m < 3; ++m) {
    Tensor e = encode(tape, bundle, m, tape.leaf(batch.modalities[m])).value();
    for (std::size_t i = 0; i < u.size(); ++i) u.values()[i] += e[i];
  }
  Tensor expect = predict_head_value(bundle, 0, u);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i] == doctest::Approx(expect[i]).epsilon(1e-13));
  }
}

TEST_CASE("additive fusion concat variant feeds M*d to the head") {
  std::vector<EncoderSpec> encoders(3, EncoderSpec{3, {4}, 5, Activation::kTanh});
  std::vector<HeadSpec> heads{{15, {4}, 2, Activation::kTanh}};
  ModelBundle bundle =
      init_bundle(FusionKind::kAdd, encoders, heads, 3, false, false, AddCombine::kConcat);
  CHECK(bundle.heads[0].input_dim() == 15);
  Rng rng(11);
  MultimodalBatch batch = random_batch(rng, 2, {3, 3, 3}, 2);
  Tape tape;
  const Tensor& p = additive_forward(tape, bundle, batch).value();
  CHECK(p.cols() == 2);
}

TEST_CASE("mixture_forward identities") {
  ModelBundle bundle = make_bundle(FusionKind::kMulMix, 2, 2, 20);
  Rng rng(12);
  MultimodalBatch batch = random_batch(rng, 2, {3, 3}, 2);
  Tape tape;

  // singleton candidate {m} equals head(f_m(v_m))
  const Tensor& p0 = mixture_forward(tape, bundle, batch, bundle.candidates[0]).value();
  Var u0 = encode(tape, bundle, 0, tape.leaf(batch.modalities[0]));
  const Tensor& expect0 = predict_head(tape, bundle, 0, u0).value();
  for (std::size_t i = 0; i < p0.size(); ++i) CHECK(p0[i] == expect0[i]);

  // pair candidate embedding is the sum of the singleton embeddings
  REQUIRE(bundle.candidates[2].members == std::vector<std::size_t>{0, 1});
  const Tensor& p01 = mixture_forward(tape, bundle, batch, bundle.candidates[2]).value();
  Tensor usum = encode(tape, bundle, 0, tape.leaf(batch.modalities[0])).value();
  {
    Tensor u1 = encode(tape, bundle, 1, tape.leaf(batch.modalities[1])).value();
    for (std::size_t i = 0; i < usum.size(); ++i) usum.values()[i] += u1[i];
  }
  Tensor expect01 = predict_head_value(bundle, 2, usum);
  for (std::size_t i = 0; i < p01.size(); ++i) {
    CHECK(p01[i] == doctest::Approx(expect01[i]).epsilon(1e-13));
  }
}

TEST_CASE("mulmix M=1 equals mul M=1 exactly") {
  // identical seed and specs make the parameters bit-identical
  ModelBundle mul = make_bundle(FusionKind::kMul, 1, 3, 321);
  ModelBundle mulmix = make_bundle(FusionKind::kMulMix, 1, 3, 321);
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    MultimodalBatch sample = random_batch(rng, 1, {3}, 3);
    std::vector<double> lm = mulmix_class_losses(mulmix, sample, 0.7);
    Tape tape;
    std::vector<Var> probs = per_model_probs(tape, mul, sample);
    const Tensor& ml = class_loss_matrix(tape, probs, 0.7, {}, QGradientMode::kFull).value();
    for (std::size_t k = 0; k < 3; ++k) CHECK(lm[k] == ml[k]);
  }
}

TEST_CASE("mulmix class losses match a brute-force oracle over candidates") {
  ModelBundle bundle = make_bundle(FusionKind::kMulMix, 2, 2, 31);
  Rng rng(15);
  for (double beta : {0.0, 0.5, 1.0}) {
    MultimodalBatch sample = random_batch(rng, 1, {3, 3}, 2);
    // candidate probabilities via the library forward, class losses via
    // the test oracle
    std::vector<std::vector<double>> cand_probs;
    Tape tape;
    for (const MixtureCandidate& c : bundle.candidates) {
      cand_probs.push_back(mixture_forward(tape, bundle, sample, c).value().values());
    }
    REQUIRE(cand_probs.size() == 3);
    std::vector<double> expect = oracle_losses(cand_probs, beta);
    std::vector<double> got = mulmix_class_losses(bundle, sample, beta);
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(got[k] == doctest::Approx(expect[k]).epsilon(1e-11));
    }
    if (beta == 0.0) {
      // plain sum of candidate cross entropies
      for (std::size_t k = 0; k < 2; ++k) {
        double ce = 0.0;
        for (const auto& p : cand_probs) ce -= std::log(p[k]);
        CHECK(std::abs(got[k] - ce) < 1e-12);
      }
    }
  }
}

TEST_CASE("training_loss on a single sample equals the per-sample objective") {
  ModelBundle bundle = make_bundle(FusionKind::kMul, 2, 2, 61);
  FusionConfig config;
  config.kind = FusionKind::kMul;
  config.beta = 0.5;
  Rng rng(16);
  MultimodalBatch sample = random_batch(rng, 1, {3, 3}, 2);
  Tape tape;
  const double loss = training_loss(tape, bundle, sample, config).value().item();
  std::vector<Var> probs = per_model_probs(tape, bundle, sample);
  std::vector<std::vector<double>> p;
  for (const Var& v : probs) p.push_back(v.value().values());
  const double expect = oracle_losses(p, 0.5)[static_cast<std::size_t>(sample.labels[0])];
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("training_loss is invariant to duplicating the batch") {
  ModelBundle bundle = make_bundle(FusionKind::kMul, 2, 2, 62);
  FusionConfig config;
  config.kind = FusionKind::kMul;
  Rng rng(17);
  MultimodalBatch batch = random_batch(rng, 3, {3, 3}, 2);
  MultimodalBatch doubled;
  doubled.labels = batch.labels;
  doubled.labels.insert(doubled.labels.end(), batch.labels.begin(), batch.labels.end());
  for (const Tensor& m : batch.modalities) {
    Tensor twice({6, 3});
    std::copy(m.data(), m.data() + m.size(), twice.data());
    std::copy(m.data(), m.data() + m.size(), twice.data() + m.size());
    doubled.modalities.push_back(twice);
  }
  Tape t1, t2;
  const double once = training_loss(t1, bundle, batch, config).value().item();
  const double twice = training_loss(t2, bundle, doubled, config).value().item();
  CHECK(once == doctest::Approx(twice).epsilon(1e-15));
}

TEST_CASE("training_loss rejects empty batches and mismatched kinds") {
  ModelBundle bundle = make_bundle(FusionKind::kMul, 2, 2, 63);
  FusionConfig config;
  config.kind = FusionKind::kMul;
  MultimodalBatch empty;
  empty.modalities = {Tensor({0, 3}), Tensor({0, 3})};
  Tape tape;
  CHECK_THROWS_AS(training_loss(tape, bundle, empty, config), ShapeError);
  config.kind = FusionKind::kAdd;
  Rng rng(18);
  MultimodalBatch batch = random_batch(rng, 2, {3, 3}, 2);
  CHECK_THROWS_AS(training_loss(tape, bundle, batch, config), ConfigError);
}

TEST_CASE("fusion config invariants") {
  FusionConfig config;
  config.kind = FusionKind::kAdd;
  config.beta = 1.5;
  std::vector<std::string> violations;
  config.collect_violations(2, violations);
  REQUIRE(!violations.empty());
  CHECK(violations[0].find("beta") != std::string::npos);
  CHECK(violations[0].find("[0, 1]") != std::string::npos);

  FusionConfig boosted_add;
  boosted_add.kind = FusionKind::kAdd;
  boosted_add.boosted = true;
  violations.clear();
  boosted_add.collect_violations(2, violations);
  CHECK(!violations.empty());

  FusionConfig mulmix_big;
  mulmix_big.kind = FusionKind::kMulMix;
  violations.clear();
  mulmix_big.collect_violations(9, violations);
  REQUIRE(!violations.empty());
  CHECK(violations[0].find("2^M") != std::string::npos);
}

TEST_CASE("training_loss gradients pass finite differences (mul/mulmix, full q)") {
  Rng rng(19);
  for (FusionKind kind : {FusionKind::kMul, FusionKind::kMulMix}) {
    for (double beta : {0.0, 0.5, 1.0}) {
      ModelBundle bundle = make_bundle(kind, 2, 2, 800 + static_cast<std::uint64_t>(10 * beta));
      MultimodalBatch batch = random_batch(rng, 4, {3, 3}, 2);
      FusionConfig config;
      config.kind = kind;
      config.beta = beta;
      std::vector<Tensor*> params;
      for (const ParamRef& p : bundle.params()) params.push_back(p.tensor);
      auto build = [&](Tape& tape) { return training_loss(tape, bundle, batch, config); };
      GradCheckReport report = check_loss_gradients(params, build, 1e-5, 1e-4);
      INFO("kind " << to_string(kind) << " beta " << beta << ": " << report.summary());
      REQUIRE(report.passed());
    }
  }
}

TEST_CASE("stop-mode q gradients equal the frozen-q objective's gradients") {
  ModelBundle bundle = make_bundle(FusionKind::kMul, 3, 2, 900);
  Rng rng(20);
  MultimodalBatch batch = random_batch(rng, 4, {3, 3, 3}, 2);
  FusionConfig config;
  config.kind = FusionKind::kMul;
  config.beta = 0.7;
  config.q_gradient_mode = QGradientMode::kStop;

  // Freeze q at the base point with the test oracle.
  std::vector<std::vector<double>> frozen_q;  // [model][sample]
  {
    Tape tape;
    std::vector<Var> probs = per_model_probs(tape, bundle, batch);
    for (std::size_t n = 0; n < batch.size(); ++n) {
      std::vector<std::vector<double>> row;
      for (const Var& p : probs) {
        row.push_back({p.value().at(n, 0), p.value().at(n, 1)});
      }
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (frozen_q.size() <= i) frozen_q.emplace_back();
        frozen_q[i].push_back(
            oracle_q(row, static_cast<std::size_t>(batch.labels[n]), i, config.beta));
      }
    }
  }

  // f(theta) = mean_n sum_i qbar_i[n] * (-log p_i(theta)[n, y_n])
  auto eval_frozen = [&]() {
    Tape tape;
    std::vector<Var> probs = per_model_probs(tape, bundle, batch);
    double total = 0.0;
    for (std::size_t n = 0; n < batch.size(); ++n) {
      for (std::size_t i = 0; i < probs.size(); ++i) {
        total -= frozen_q[i][n] *
                 std::log(probs[i].value().at(n, static_cast<std::size_t>(batch.labels[n])));
      }
    }
    return total / static_cast<double>(batch.size());
  };
  auto grads = [&]() {
    bundle.zero_grads();
    Tape tape;
    Var loss = training_loss(tape, bundle, batch, config);
    tape.backward(loss);
  };
  std::vector<Tensor*> params;
  for (const ParamRef& p : bundle.params()) params.push_back(p.tensor);
  GradCheckReport report = finite_difference_check(eval_frozen, grads, params, 1e-5, 1e-4);
  INFO(report.summary());
  REQUIRE(report.passed());
}

TEST_CASE("stop and full q modes produce the same loss but different gradients") {
  ModelBundle bundle = make_bundle(FusionKind::kMul, 2, 2, 901);
  Rng rng(21);
  MultimodalBatch batch = random_batch(rng, 4, {3, 3}, 2);
  FusionConfig full;
  full.kind = FusionKind::kMul;
  full.beta = 0.8;
  FusionConfig stop = full;
  stop.q_gradient_mode = QGradientMode::kStop;

  bundle.zero_grads();
  Tape t1;
  Var l1 = training_loss(t1, bundle, batch, full);
  t1.backward(l1);
  std::vector<double> g_full;
  for (const ParamRef& p : bundle.params()) {
    g_full.insert(g_full.end(), p.tensor->grad().begin(), p.tensor->grad().end());
  }

  bundle.zero_grads();
  Tape t2;
  Var l2 = training_loss(t2, bundle, batch, stop);
  t2.backward(l2);
  std::vector<double> g_stop;
  for (const ParamRef& p : bundle.params()) {
    g_stop.insert(g_stop.end(), p.tensor->grad().begin(), p.tensor->grad().end());
  }

  CHECK(l1.value().item() == l2.value().item());
  CHECK(g_full != g_stop);
}

TEST_CASE("boosted zeroing: margin-correct batches give exactly zero loss and gradient") {
  ModelBundle bundle = make_bundle(FusionKind::kMul, 2, 2, 902);
  FusionConfig config;
  config.kind = FusionKind::kMul;
  config.beta = 0.5;
  config.boosted = true;
  config.delta = 0.05;

  // find a batch where every sample is correct by margin: label by the
  // model's own argmin, then keep only clearly gated samples
  Rng rng(22);
  MultimodalBatch batch;
  std::size_t kept = 0;
  std::vector<std::vector<double>> rows(2);
  std::vector<int> labels;
  while (kept < 4) {
    MultimodalBatch probe = random_batch(rng, 1, {3, 3}, 2);
    Tape tape;
    std::vector<Var> probs = per_model_probs(tape, bundle, probe);
    std::vector<std::vector<double>> p;
    for (const Var& v : probs) p.push_back(v.value().values());
    std::vector<double> losses = oracle_losses(p, config.beta);
    const std::size_t y = predict_argmin(losses);
    if (!boosted_gate(losses, y, config.delta + 1e-3)) continue;  // want real margin
    for (std::size_t m = 0; m < 2; ++m) {
      rows[m].insert(rows[m].end(), probe.modalities[m].values().begin(),
                     probe.modalities[m].values().end());
    }
    labels.push_back(static_cast<int>(y));
    ++kept;
  }
  for (std::size_t m = 0; m < 2; ++m) batch.modalities.push_back(Tensor({kept, 3}, rows[m]));
  batch.labels = labels;

  bundle.zero_grads();
  Tape tape;
  Var loss = training_loss(tape, bundle, batch, config);
  CHECK(loss.value().item() == 0.0);  // exactly, not approximately
  tape.backward(loss);
  for (const ParamRef& p : bundle.params()) {
    for (double g : p.tensor->grad()) CHECK(g == 0.0);
  }
}

TEST_CASE("boosted loss keeps non-gated samples") {
  ModelBundle bundle = make_bundle(FusionKind::kMul, 2, 2, 903);
  FusionConfig boosted;
  boosted.kind = FusionKind::kMul;
  boosted.beta = 0.5;
  boosted.boosted = true;
  boosted.delta = 1e6;  // nothing can win by this margin
  FusionConfig vanilla = boosted;
  vanilla.boosted = false;
  Rng rng(23);
  MultimodalBatch batch = random_batch(rng, 5, {3, 3}, 2);
  Tape t1, t2;
  CHECK(training_loss(t1, bundle, batch, boosted).value().item() ==
        training_loss(t2, bundle, batch, vanilla).value().item());
}

TEST_CASE("beta=0 prediction equals argmax of the probability product") {
  Rng rng(24);
  for (int trial = 0; trial < 100; ++trial) {
    auto probs = random_prob_vectors(rng, 3, 4);
    const std::size_t by_loss = predict_argmin(mul_class_losses(probs, 0.0));
    std::size_t by_product = 0;
    double best = -1.0;
    for (std::size_t k = 0; k < 4; ++k) {
      double prod = 1.0;
      for (const auto& p : probs) prod *= p[k];
      if (prod > best) {
        best = prod;
        by_product = k;
      }
    }
    CHECK(by_loss == by_product);
  }
}

TEST_CASE("modality relabeling permutes q factors consistently") {
  Rng rng(25);
  for (int trial = 0; trial < 50; ++trial) {
    auto probs = random_prob_vectors(rng, 4, 3);
    std::vector<double> weights{0.5, 1.0, 1.5, 2.0};
    std::vector<std::size_t> perm{2, 0, 3, 1};
    std::vector<std::vector<double>> probs_p(4);
    std::vector<double> weights_p(4);
    for (std::size_t i = 0; i < 4; ++i) {
      probs_p[i] = probs[perm[i]];
      weights_p[i] = weights[perm[i]];
    }
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t i = 0; i < 4; ++i) {
        CHECK(q_factor(probs_p, k, i, 0.6) ==
              doctest::Approx(q_factor(probs, k, perm[i], 0.6)).epsilon(1e-14));
      }
    }
    // prediction is invariant to the relabeling
    CHECK(predict_argmin(mul_class_losses(probs, 0.6, weights)) ==
          predict_argmin(mul_class_losses(probs_p, 0.6, weights_p)));
  }
}

TEST_CASE("predictions never depend on labels") {
  ModelBundle bundle = make_bundle(FusionKind::kMul, 2, 3, 904);
  FusionConfig config;
  config.kind = FusionKind::kMul;
  Rng rng(26);
  MultimodalBatch batch = random_batch(rng, 6, {3, 3}, 3);
  EvalOutput a = evaluate(bundle, batch, config);
  for (int& y : batch.labels) y = (y + 1) % 3;
  EvalOutput b = evaluate(bundle, batch, config);
  CHECK(a.predicted == b.predicted);
  CHECK(a.positive_score == b.positive_score);
}

TEST_CASE("named loss-weight presets resolve and apply") {
  std::vector<double> w = named_loss_weights("cifar-layers");
  CHECK(w == std::vector<double>{0.3, 0.3, 1.0});
  CHECK_THROWS_AS(named_loss_weights("nope"), ConfigError);
  // weighting scales each modality's loss term
  std::vector<std::vector<double>> probs{{0.9, 0.1}, {0.6, 0.4}, {0.5, 0.5}};
  std::vector<double> weighted = mul_class_losses(probs, 0.0, w);
  const double expect0 =
      -(0.3 * std::log(0.9) + 0.3 * std::log(0.6) + 1.0 * std::log(0.5));
  CHECK(weighted[0] == doctest::Approx(expect0).epsilon(1e-14));
}

TEST_CASE("per-candidate encoder ablation gives every candidate its own encoders") {
  std::vector<EncoderSpec> encoders(2, EncoderSpec{3, {4}, 3, Activation::kTanh});
  std::vector<HeadSpec> heads(3, HeadSpec{3, {4}, 2, Activation::kTanh});
  ModelBundle bundle =
      init_bundle(FusionKind::kMulMix, encoders, heads, 60, false, /*per_candidate=*/true);
  // candidates {0}, {1}, {0,1}: 1 + 1 + 2 encoder networks
  CHECK(bundle.encoders.size() == 4);
  CHECK(bundle.encoder_index(0, 0) == 0);
  CHECK(bundle.encoder_index(1, 1) == 1);
  CHECK(bundle.encoder_index(2, 0) == 2);
  CHECK(bundle.encoder_index(2, 1) == 3);
  CHECK_THROWS_AS(bundle.encoder_index(1, 0), ShapeError);

  // mutating the pair candidate's encoder leaves singleton outputs alone
  Rng rng(28);
  MultimodalBatch sample = random_batch(rng, 1, {3, 3}, 2);
  auto probs_of = [&](std::size_t c) {
    Tape tape;
    return mixture_forward(tape, bundle, sample, bundle.candidates[c]).value().values();
  };
  const auto before0 = probs_of(0), before2 = probs_of(2);
  bundle.encoders[2].weights[0][0] += 0.5;
  CHECK(probs_of(0) == before0);
  CHECK(probs_of(2) != before2);

  // gradients stay correct with the ablation enabled
  FusionConfig config;
  config.kind = FusionKind::kMulMix;
  config.beta = 0.5;
  MultimodalBatch batch = random_batch(rng, 3, {3, 3}, 2);
  std::vector<Tensor*> params;
  for (const ParamRef& p : bundle.params()) params.push_back(p.tensor);
  auto build = [&](Tape& tape) { return training_loss(tape, bundle, batch, config); };
  GradCheckReport report = check_loss_gradients(params, build, 1e-5, 1e-4);
  INFO(report.summary());
  CHECK(report.passed());
}

TEST_CASE("evaluate chunking does not change results") {
  ModelBundle bundle = make_bundle(FusionKind::kMulMix, 2, 2, 905);
  FusionConfig config;
  config.kind = FusionKind::kMulMix;
  Rng rng(27);
  MultimodalBatch batch = random_batch(rng, 23, {3, 3}, 2);
  EvalOutput big = evaluate(bundle, batch, config, 1024);
  EvalOutput small = evaluate(bundle, batch, config, 5);
  CHECK(big.predicted == small.predicted);
  CHECK(big.positive_score == small.positive_score);
  CHECK(big.per_modality_predicted == small.per_modality_predicted);
}
