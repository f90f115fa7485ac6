#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"

#include "c2d/checkpoint.hpp"
#include "c2d/divide.hpp"
#include "c2d/error.hpp"
#include "c2d/mixtrain.hpp"
#include "c2d/warmup.hpp"
#include "support.hpp"

using namespace c2d;
using namespace c2d::num;
using namespace c2d::mixtrain;
using testsup::random_tensor;

namespace {

const data::AugmentationSpec kNoAug{0.0, 1.0, 1.0, 0.0};

void check_distribution_rows(const Tensor& t) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (double v : t.row(i)) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

std::vector<const Parameter*> params_of(const Model& m) { return m.parameters(); }

bool same_weights(const Model& a, const Model& b) {
  return encode_checkpoint(params_of(a)) == encode_checkpoint(params_of(b));
}

std::array<Model, 2> warmed_pair(const data::LabeledDataset& train, const data::LabeledDataset& test,
                                 std::uint64_t seed, bool ssl) {
  std::array<Model, 2> out;
  for (int k = 0; k < 2; ++k) {
    Model m = ssl ? testsup::ssl_model(seed) : testsup::random_model(seed);
    m.reset_classifier(seed * 10 + static_cast<std::uint64_t>(k));
    warmup::WarmupConfig wc;
    wc.epochs = ssl ? 5 : 15;
    wc.probe = false;
    out[k] = warmup::run_warmup(train, test, std::move(m), wc, seed * 100 + static_cast<std::uint64_t>(k)).model;
  }
  return out;
}

}  // namespace

TEST_CASE("sharpen examples") {
  const std::vector<double> p{0.8, 0.2};
  CHECK(sharpen(p, 1.0) == p);
  const auto q = sharpen(p, 0.5);
  CHECK(q[0] == doctest::Approx(0.64 / 0.68).epsilon(1e-12));
  CHECK(q[0] == doctest::Approx(0.9412).epsilon(1e-4));
  CHECK(q[1] == doctest::Approx(0.0588).epsilon(1e-3));
  const std::vector<double> u(4, 0.25);
  for (double v : sharpen(u, 0.3)) CHECK(v == doctest::Approx(0.25));
  CHECK_THROWS_AS(sharpen(p, 0.0), ConfigError);
}

TEST_CASE("co-refine examples") {
  const std::vector<double> y{0, 1, 0};
  const std::vector<double> p{0.2, 0.3, 0.5};
  CHECK(co_refine(y, 1.0, p, 1.0) == y);
  const auto r0 = co_refine(y, 0.0, p, 1.0);
  for (std::size_t c = 0; c < 3; ++c) CHECK(r0[c] == doctest::Approx(p[c]));
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const Tensor probs = softmax_rows(random_tensor(1, 5, rng, -3, 3));
    std::vector<double> onehot(5, 0.0);
    onehot[rng() % 5] = 1.0;
    const auto r = co_refine(onehot, uniform01(rng), probs.row(0), 0.5);
    CHECK(std::abs(std::accumulate(r.begin(), r.end(), 0.0) - 1.0) <= 1e-9);
  }
  CHECK_THROWS_AS(co_refine(y, 1.5, p, 1.0), ConfigError);
}

TEST_CASE("co-guess properties") {
  Rng data_rng(2);
  const Tensor x = random_tensor(10, 16, data_rng, -3, 3);
  const Model a = testsup::random_model(1);
  const Model b = testsup::random_model(2);

  Rng r1(5);
  const Tensor single = co_guess(x, a, a, kNoAug, 2, 0.5, r1);
  const Tensor expect = sharpen_rows(a.probabilities(x), 0.5);
  for (std::size_t k = 0; k < single.size(); ++k) CHECK(single.data()[k] == doctest::Approx(expect.data()[k]).epsilon(1e-12));

  const data::AugmentationSpec aug;
  Rng r2(6), r3(6);
  const Tensor ab = co_guess(x, a, b, aug, 2, 0.5, r2);
  const Tensor ba = co_guess(x, b, a, aug, 2, 0.5, r3);
  check_distribution_rows(ab);
  for (std::size_t k = 0; k < ab.size(); ++k) CHECK(ab.data()[k] == doctest::Approx(ba.data()[k]).epsilon(1e-12));
}

TEST_CASE("co-divide: each model's partition comes from the other model's losses") {
  Rng rng(3);
  std::vector<double> la(200), lb(200), lb2(200);
  for (std::size_t i = 0; i < 200; ++i) {
    la[i] = (i % 4 == 0 ? 2.0 : 0.2) + 0.1 * uniform01(rng);
    lb[i] = (i % 3 == 0 ? 2.0 : 0.2) + 0.1 * uniform01(rng);
    lb2[i] = (i % 5 == 0 ? 2.0 : 0.2) + 0.1 * uniform01(rng);
  }
  const auto d = co_divide(la, lb, 0.5);
  CHECK(d.for_a.w == divide::divide_losses(lb, 0.5).w);
  CHECK(d.for_b.w == divide::divide_losses(la, 0.5).w);
  const auto d2 = co_divide(la, lb2, 0.5);
  CHECK(d2.for_b.w == d.for_b.w);
  CHECK(d2.for_a.labeled_idx != d.for_a.labeled_idx);
}

TEST_CASE("lnl config validation and method names") {
  LnlConfig c;
  c.sharpen_t = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.elr_beta = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.tau = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_lnl_method("oracle-mixmatch") == LnlMethod::OracleMixMatch);
  CHECK(std::string(to_string(LnlMethod::Elr)) == "elr");
  CHECK_THROWS_AS(parse_lnl_method("coteaching"), ConfigError);
}

TEST_CASE("mixmatch step returns finite loss components and moves the model") {
  const auto b = testsup::default_benchmark(1);
  Model m = testsup::random_model(1);
  const Model peer = testsup::random_model(2);
  Model before = m;
  const std::vector<std::size_t> li{0, 300, 600, 900}, ui{1, 2, 3, 4};
  const Tensor xl = gather_rows(b.train.features, li);
  const Tensor yl = warmup::one_hot(std::vector<int>{0, 1, 2, 3}, 8);
  const std::vector<double> w{1.0, 0.5, 0.9, 0.2};
  LnlConfig cfg;
  SgdState sgd(cfg.sgd);
  Rng rng(4);
  const auto l = mixmatch_step(m, peer, xl, yl, w, gather_rows(b.train.features, ui), cfg, sgd, rng);
  CHECK(std::isfinite(l.total));
  CHECK(l.labeled > 0.0);
  CHECK(l.unlabeled >= 0.0);
  CHECK(l.prior >= -1e-12);
  CHECK(l.total == doctest::Approx(l.labeled + cfg.lambda_u * l.unlabeled + cfg.prior_weight * l.prior));
  CHECK_FALSE(same_weights(m, before));
  CHECK(m.projection_parameters().front()->value == before.projection_parameters().front()->value);
}

TEST_CASE("lambda_u = 0 without co-guessing is supervised training on the labeled subset") {
  const auto b = testsup::default_benchmark(1);
  const auto train = data::inject_symmetric_noise(b.train, 0.5, 2);
  std::array<Model, 2> models{testsup::random_model(1), testsup::random_model(2)};
  const std::array<Model, 2> start = models;
  std::vector<double> w(train.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = train.noise_flags[i] ? 0.01 : 0.9;
  const auto div = divide::split(w, 0.5);
  LnlConfig cfg;
  cfg.lambda_u = 0.0;
  cfg.co_guess = false;
  std::array<SgdState, 2> sgd{SgdState(cfg.sgd), SgdState(cfg.sgd)};
  Rng rng(9);
  dividemix_epoch(train, models, {div, div}, cfg, sgd, rng);

  Rng seeds(9);
  const std::uint64_t s0 = seeds(), s1 = seeds();
  const Tensor xl = gather_rows(train.features, div.labeled_idx);
  std::vector<int> yl;
  for (auto i : div.labeled_idx) yl.push_back(train.observed_labels[i]);
  const warmup::SupervisedEpochOptions opts{cfg.batch_size, cfg.mixup_alpha, false};
  for (int k = 0; k < 2; ++k) {
    Model ref = start[k];
    SgdState ref_sgd(cfg.sgd);
    Rng local(k == 0 ? s0 : s1);
    warmup::supervised_epoch(ref, xl, warmup::one_hot(yl, 8), opts, ref_sgd, local);
    CHECK(same_weights(ref, models[k]));
  }
}

TEST_CASE("empty labeled set is an error") {
  const auto b = testsup::default_benchmark(1);
  std::array<Model, 2> models{testsup::random_model(1), testsup::random_model(2)};
  divide::DivideResult empty;
  empty.w.assign(b.train.size(), 0.0);
  for (std::size_t i = 0; i < b.train.size(); ++i) empty.unlabeled_idx.push_back(i);
  LnlConfig cfg;
  std::array<SgdState, 2> sgd{SgdState(cfg.sgd), SgdState(cfg.sgd)};
  Rng rng(1);
  CHECK_THROWS_AS(dividemix_epoch(b.train, models, {empty, empty}, cfg, sgd, rng), NumericalError);
}

TEST_CASE("elr loss examples") {
  Rng rng(5);
  const Tensor logits = random_tensor(4, 3, rng, -2, 2);
  const std::vector<int> y{0, 2, 1, 1};
  Graph g;
  const double zero_t = elr_loss(g.constant(logits), y, Tensor(4, 3), 3.0).value().item();
  const double ce = warmup::cross_entropy_logits(g.constant(logits), warmup::one_hot(y, 3)).value().item();
  CHECK(zero_t == doctest::Approx(ce).epsilon(1e-12));

  // Prediction and target agree on one class: <p,t> is clamped below 1.
  const Tensor sure = Tensor::from_rows({{60, -60, -60}});
  const Tensor t = Tensor::from_rows({{1, 0, 0}});
  const double v = elr_loss(g.constant(sure), std::vector<int>{0}, t, 3.0).value().item();
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(3.0 * std::log(1e-6)).epsilon(1e-6));
}

TEST_CASE("elr gradient matches finite differences with targets fixed") {
  Rng side(6);
  const Tensor t = softmax_rows(random_tensor(5, 4, side, -2, 2));
  Tensor scaled = t;
  for (auto& v : scaled.data()) v *= 0.8;
  const std::vector<int> y{0, 3, 1, 2, 2};
  const testsup::ScalarFn f = [&](Graph&, Var x) { return elr_loss(x, y, scaled, 3.0); };
  CHECK(testsup::fd_worst(f, [](Rng& r) { return random_tensor(5, 4, r, -2, 2); }, 100, 51) <= 1e-4);
}

TEST_CASE("elr state converges geometrically to constant predictions") {
  ElrState s(2, 3);
  const Tensor p = Tensor::from_rows({{0.2, 0.3, 0.5}});
  const std::vector<std::size_t> idx{1};
  const double beta = 0.7;
  for (int n = 1; n <= 30; ++n) {
    s.update(idx, p, beta);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(std::abs(p(0, c) - s.targets(1, c)) == doctest::Approx(std::pow(beta, n) * p(0, c)).epsilon(1e-9));
      CHECK(s.targets(0, c) == 0.0);
    }
  }
}

TEST_CASE("elr step updates state and trains") {
  const auto b = testsup::default_benchmark(1);
  Model m = testsup::random_model(1);
  LnlConfig cfg;
  ElrState st(b.train.size(), 8);
  SgdState sgd(cfg.sgd);
  const std::vector<std::size_t> idx{3, 4, 5};
  const double loss = elr_step(m, b.train.features, b.train.observed_labels, idx, st, cfg, sgd);
  CHECK(std::isfinite(loss));
  double row_sum = 0.0;
  for (double v : st.targets.row(4)) row_sum += v;
  CHECK(row_sum == doctest::Approx(1.0 - cfg.elr_beta));
  CHECK(st.targets(0, 0) == 0.0);
}

TEST_CASE("oracle split has zero effective noise rate") {
  const auto b = testsup::default_benchmark(2);
  const auto train = data::inject_symmetric_noise(b.train, 0.8, 3);
  LnlConfig cfg;
  cfg.epochs = 1;
  const auto res = oracle_split_train(train, b.test, {testsup::random_model(1), testsup::random_model(2)}, cfg, 4);
  REQUIRE(res.rows.size() == 1);
  CHECK(res.rows[0].eff_noise_rate == 0.0);
  CHECK(res.rows[0].labeled_frac == doctest::Approx(1.0 - train.noisy_fraction()));
  CHECK(res.models.size() == 2);

  const auto clean = oracle_split_train(b.train, b.test, {testsup::random_model(1), testsup::random_model(2)}, cfg, 4);
  CHECK(clean.rows[0].labeled_frac == 1.0);
}

TEST_CASE("elr and cross-entropy runs log one row per epoch") {
  const auto b = testsup::default_benchmark(2);
  const auto train = data::inject_symmetric_noise(b.train, 0.5, 3);
  LnlConfig cfg;
  cfg.epochs = 2;
  int hooks = 0;
  const auto elr = run_elr(train, b.test, testsup::random_model(1), cfg, 5, [&](const metrics::MetricRow&) { ++hooks; });
  CHECK(elr.rows.size() == 2);
  CHECK(hooks == 2);
  CHECK(elr.rows[1].method == "elr");
  const auto ce = run_cross_entropy(train, b.test, testsup::random_model(1), cfg, 5);
  CHECK(ce.rows.size() == 2);
  CHECK(ce.rows[0].method == "ce+mixup");
  CHECK(ce.peak_test_acc >= ce.final_test_acc);
}

TEST_CASE("ensemble accuracy of identical models equals single-model accuracy") {
  const auto b = testsup::default_benchmark(2);
  const std::vector<Model> ms{testsup::random_model(3), testsup::random_model(3)};
  CHECK(ensemble_accuracy(ms, b.test) == metrics::accuracy(ms[0].logits(b.test.features), b.test.true_labels));
}

TEST_CASE("slow: clean labels, dividemix matches cross-entropy with mixup within 1 point") {
  double dm = 0.0, ce = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto b = testsup::default_benchmark(seed);
    const auto models = warmed_pair(b.train, b.test, seed, true);
    LnlConfig cfg;
    cfg.tau = 0.5;
    dm += run_dividemix(b.train, b.test, models, cfg, seed).final_test_acc / 5.0;
    ce += run_cross_entropy(b.train, b.test, models[0], cfg, seed).final_test_acc / 5.0;
  }
  MESSAGE("dividemix " << dm << " ce+mixup " << ce);
  CHECK(std::abs(dm - ce) <= 0.01);
}

TEST_CASE("slow: 80% noise, oracle split is at least dividemix minus 2 points") {
  double dm = 0.0, oracle = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto b = testsup::default_benchmark(seed);
    const auto train = data::inject_symmetric_noise(b.train, 0.8, seed + 50);
    const auto models = warmed_pair(train, b.test, seed, true);
    LnlConfig cfg;
    const auto r = run_dividemix(train, b.test, models, cfg, seed);
    CHECK(r.rows.back().eff_noise_rate <= 0.8);
    dm += r.final_test_acc / 5.0;
    oracle += oracle_split_train(train, b.test, models, cfg, seed).final_test_acc / 5.0;
  }
  MESSAGE("dividemix " << dm << " oracle " << oracle);
  CHECK(oracle >= dm - 0.02);
}
