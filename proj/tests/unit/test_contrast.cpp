#include <cmath>
#include <vector>

#include "doctest.h"

#include "c2d/checkpoint.hpp"
#include "c2d/contrast.hpp"
#include "c2d/error.hpp"
#include "c2d/metrics.hpp"
#include "support.hpp"

using namespace c2d;
using namespace c2d::num;
using testsup::random_tensor;

namespace {

// Independent evaluation of NT-Xent straight from the definition.
double nt_xent_brute(const Tensor& z, double t) {
  const std::size_t n = z.rows();
  auto dot = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) s += z(a, j) * z(b, j);
    return s;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = i ^ 1U;
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) denom += std::exp(dot(i, k) / t);
    total += -std::log(std::exp(dot(i, pos) / t) / denom);
  }
  return total / static_cast<double>(n);
}

double barlow_brute(const Tensor& z1, const Tensor& z2, double lambda) {
  const std::size_t b = z1.rows(), p = z1.cols();
  double loss = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double c = 0.0;
      for (std::size_t r = 0; r < b; ++r) c += z1(r, i) * z2(r, j);
      c /= static_cast<double>(b);
      loss += i == j ? (1.0 - c) * (1.0 - c) : lambda * c * c;
    }
  }
  return loss;
}

Tensor random_rotation(std::size_t d, Rng& rng) {
  Tensor q(d, d);
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> v(d);
    for (auto& x : v) x = normal(rng);
    for (std::size_t p = 0; p < c; ++p) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += v[i] * q(i, p);
      for (std::size_t i = 0; i < d; ++i) v[i] -= s * q(i, p);
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    for (std::size_t i = 0; i < d; ++i) q(i, c) = v[i] / std::sqrt(n);
  }
  return q;
}

double probe_acc(const Model& m, const data::Benchmark& b) {
  return metrics::linear_probe(m.features(b.train.features), b.train.true_labels, m.features(b.test.features),
                               b.test.true_labels, b.train.num_classes)
      .test_acc;
}

}  // namespace

TEST_CASE("nt-xent examples") {
  CHECK(contrast::nt_xent_loss(Tensor::from_rows({{1, 0}, {1, 0}}), 0.5) == doctest::Approx(0.0));
  const Tensor z = Tensor::from_rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
  CHECK(contrast::nt_xent_loss(z, 1.0) == doctest::Approx(std::log(1.0 + 2.0 / std::exp(1.0))).epsilon(1e-12));
  CHECK(contrast::nt_xent_loss(z, 1.0) == doctest::Approx(0.5514).epsilon(1e-4));
}

TEST_CASE("nt-xent input validation") {
  CHECK_THROWS_AS(contrast::nt_xent_loss(Tensor(0, 2), 0.5), ConfigError);
  CHECK_THROWS_AS(contrast::nt_xent_loss(Tensor::from_rows({{1, 0}, {1, 0}, {0, 1}}), 0.5), ConfigError);
  CHECK_THROWS_AS(contrast::nt_xent_loss(Tensor::from_rows({{2, 0}, {1, 0}}), 0.5), ConfigError);
  CHECK_THROWS_AS(contrast::nt_xent_loss(Tensor::from_rows({{1, 0}, {1, 0}}), 0.0), ConfigError);
}

TEST_CASE("nt-xent matches a brute-force evaluation") {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    const Tensor z = l2_normalize_rows(random_tensor(8, 5, rng));
    CHECK(contrast::nt_xent_loss(z, 0.3) == doctest::Approx(nt_xent_brute(z, 0.3)).epsilon(1e-12));
    Graph g;
    CHECK(contrast::nt_xent_loss(g.constant(z), 0.3).value().item() == contrast::nt_xent_loss(z, 0.3));
  }
}

TEST_CASE("nt-xent is invariant under a common rotation") {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const Tensor z = l2_normalize_rows(random_tensor(6, 4, rng));
    const Tensor rotated = matmul(z, random_rotation(4, rng));
    CHECK(std::abs(contrast::nt_xent_loss(z, 0.5) - contrast::nt_xent_loss(rotated, 0.5)) <= 1e-8);
  }
}

TEST_CASE("nt-xent gradient matches finite differences") {
  const testsup::ScalarFn f = [](Graph&, Var x) { return contrast::nt_xent_loss(l2_normalize_rows(x), 0.5); };
  CHECK(testsup::fd_worst(f, [](Rng& r) { return random_tensor(6, 4, r); }, 100, 31) <= 1e-4);
}

TEST_CASE("barlow twins examples") {
  const Tensor white = Tensor::from_rows({{1, 1}, {1, -1}, {-1, 1}, {-1, -1}});
  CHECK(contrast::barlow_twins_loss(white, white, 0.005) == doctest::Approx(0.0));
  const Tensor other = Tensor::from_rows({{1, 1}, {-1, -1}, {1, -1}, {-1, 1}});
  CHECK(contrast::barlow_twins_loss(white, other, 0.0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(contrast::barlow_twins_loss(Tensor(1, 2, 1.0), Tensor(1, 2, 1.0), 0.005), ConfigError);
}

TEST_CASE("barlow twins matches a brute-force evaluation and is nonnegative") {
  Rng rng(10);
  for (int t = 0; t < 30; ++t) {
    Graph g;
    const Tensor z1 = contrast::batch_standardize(g.constant(random_tensor(7, 3, rng))).value();
    const Tensor z2 = contrast::batch_standardize(g.constant(random_tensor(7, 3, rng))).value();
    CHECK(contrast::barlow_twins_loss(z1, z2, 0.1) == doctest::Approx(barlow_brute(z1, z2, 0.1)).epsilon(1e-12));
    CHECK(contrast::barlow_twins_loss(z1, z1, 0.1) >= 0.0);
  }
}

TEST_CASE("batch standardization uses batch statistics") {
  Rng rng(12);
  Graph g;
  const Tensor z = contrast::batch_standardize(g.constant(random_tensor(50, 3, rng, 2.0, 9.0))).value();
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 50; ++i) m += z(i, j);
    m /= 50;
    for (std::size_t i = 0; i < 50; ++i) v += (z(i, j) - m) * (z(i, j) - m);
    CHECK(std::abs(m) <= 1e-12);
    CHECK(v / 50 == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("barlow twins gradient matches finite differences") {
  Rng side(13);
  const Tensor other = random_tensor(6, 4, side);
  const testsup::ScalarFn f = [&](Graph& g, Var x) {
    return contrast::barlow_twins_loss(contrast::batch_standardize(x),
                                       contrast::batch_standardize(g.constant(other)), 0.05);
  };
  CHECK(testsup::fd_worst(f, [](Rng& r) { return random_tensor(6, 4, r); }, 100, 32) <= 1e-4);
}

TEST_CASE("ssl config validation") {
  contrast::SslConfig c;
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(contrast::parse_ssl_method("barlow") == contrast::SslMethod::BarlowTwins);
  CHECK_THROWS_AS(contrast::parse_ssl_method("moco"), ConfigError);
}

TEST_CASE("pretraining is a function of features and seed only") {
  const auto b = testsup::default_benchmark(3);
  contrast::SslConfig cfg;
  cfg.epochs = 2;
  auto run = [&](contrast::SslMethod m) {
    cfg.method = m;
    const Model out = contrast::pretrain_ssl(b.train.features, testsup::random_model(3), cfg, {}, 44);
    std::vector<const Parameter*> ps;
    for (const auto* p : out.parameters()) ps.push_back(p);
    return encode_checkpoint(ps);
  };
  CHECK(run(contrast::SslMethod::SimClr) == run(contrast::SslMethod::SimClr));
  CHECK(run(contrast::SslMethod::BarlowTwins) == run(contrast::SslMethod::BarlowTwins));
  CHECK(run(contrast::SslMethod::SimClr) != run(contrast::SslMethod::BarlowTwins));
}

TEST_CASE("pretraining leaves the classifier alone and logs one row per epoch") {
  const auto b = testsup::default_benchmark(3);
  contrast::SslConfig cfg;
  cfg.epochs = 3;
  const Model init = testsup::random_model(3);
  std::vector<metrics::MetricRow> rows;
  const Model out = contrast::pretrain_ssl(b.train.features, init, cfg, {}, 44, &rows);
  CHECK(out.classifier().weight.value == init.classifier().weight.value);
  CHECK_FALSE(out.encoder().layers[0].weight.value == init.encoder().layers[0].weight.value);
  REQUIRE(rows.size() == 3);
  CHECK(rows[2].epoch == 3);
  CHECK(rows[0].stage == "pretrain");
}

TEST_CASE("proxy pretraining checks dimensions") {
  const auto b = testsup::default_benchmark(3);
  CHECK_THROWS_AS(contrast::pretrain_supervised_proxy(b.proxy, testsup::random_model(3), {}, 1, 12), ConfigError);
}

TEST_CASE("slow: ssl loss decreases and the probe beats a random encoder by 10 points") {
  double ssl = 0.0, rnd = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto& pre = testsup::ssl_pretrained(seed);
    CHECK(pre.rows.back().train_loss < pre.rows.front().train_loss);
    const auto b = testsup::default_benchmark(seed);
    ssl += probe_acc(pre.model, b);
    rnd += probe_acc(testsup::random_model(seed), b);
  }
  CHECK(ssl / 5 >= rnd / 5 + 0.10);
}

TEST_CASE("slow: proxy pretraining") {
  double ssl = 0.0, proxy = 0.0, rnd = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto b = testsup::default_benchmark(seed);
    const Model init = testsup::random_model(seed);
    const Model m = contrast::pretrain_supervised_proxy(b.proxy, init, {}, seed, 16);
    // Fresh classifier: unrelated to the one trained on the proxy.
    CHECK_FALSE(m.classifier().weight.value == init.classifier().weight.value);
    CHECK(metrics::accuracy(m.logits(b.proxy.features), b.proxy.true_labels) < 0.5);
    proxy += probe_acc(m, b);
    ssl += probe_acc(testsup::ssl_model(seed), b);
    rnd += probe_acc(init, b);

    if (seed == 1) {
      // No domain gap: the transferred encoder is as good as the raw-feature ceiling.
      const Model same = contrast::pretrain_supervised_proxy(b.train, init, {}, seed, 16);
      const double ceiling = metrics::linear_probe(b.train.features, b.train.true_labels, b.test.features,
                                                   b.test.true_labels, 8)
                                 .test_acc;
      CHECK(probe_acc(same, b) >= ceiling - 0.03);
    }
  }
  CHECK(proxy > rnd);
  CHECK(proxy < ssl);
}
