#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include "doctest.h"

#include "c2d/divide.hpp"
#include "c2d/error.hpp"
#include "c2d/random.hpp"

using namespace c2d;
using namespace c2d::divide;

namespace {

struct Fixture {
  std::vector<double> values;
  std::vector<int> component;
};

Fixture bimodal(double m0, double m1, double sd, std::size_t per, std::uint64_t seed) {
  Rng rng(seed);
  Fixture f;
  for (std::size_t i = 0; i < per; ++i) {
    f.values.push_back(normal(rng, m0, sd));
    f.component.push_back(0);
    f.values.push_back(normal(rng, m1, sd));
    f.component.push_back(1);
  }
  return f;
}

double density(double x, double m, double var) {
  return std::exp(-(x - m) * (x - m) / (2 * var)) / std::sqrt(2 * std::numbers::pi * var);
}

}  // namespace

TEST_CASE("normalize examples") {
  CHECK(normalize_losses(std::vector<double>{1, 3}) == std::vector<double>{0, 1});
  const auto n = normalize_losses(std::vector<double>{0.2, 0.4, 0.6});
  CHECK(n[0] == 0.0);
  CHECK(n[1] == doctest::Approx(0.5));
  CHECK(n[2] == 1.0);
  CHECK_THROWS_WITH_AS(normalize_losses(std::vector<double>{2, 2, 2}), "degenerate loss vector", NumericalError);
}

TEST_CASE("normalize is affine invariant") {
  Rng rng(1);
  std::vector<double> x(40), y(40);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = uniform01(rng) * 5;
    y[i] = 3.5 * x[i] + 7.0;
  }
  const auto a = normalize_losses(x), b = normalize_losses(y);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("gmm recovers a tight bimodal fixture") {
  const auto f = bimodal(0.1, 0.9, 0.001, 500, 2);
  const auto fit = fit_gmm2(f.values);
  CHECK(std::abs(fit.means[0] - 0.1) <= 1e-3);
  CHECK(std::abs(fit.means[1] - 0.9) <= 1e-3);
  CHECK(std::abs(fit.weights[0] - 0.5) <= 0.02);
  CHECK(std::abs(fit.weights[0] + fit.weights[1] - 1.0) <= 1e-9);
  CHECK(fit.variances[0] >= 1e-6);
  CHECK(fit.variances[1] >= 1e-6);
  CHECK(fit.converged);
}

TEST_CASE("gmm log-likelihood never decreases") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    std::vector<double> v;
    for (int i = 0; i < 300; ++i) v.push_back(i % 3 == 0 ? normal(rng, 0.7, 0.2) : std::abs(normal(rng, 0.1, 0.1)));
    const auto fit = fit_gmm2(v);
    REQUIRE(fit.ll_history.size() >= 2);
    for (std::size_t k = 1; k < fit.ll_history.size(); ++k)
      CHECK(fit.ll_history[k] >= fit.ll_history[k - 1] - 1e-9 * std::abs(fit.ll_history[k - 1]));
    CHECK(fit.log_likelihood == fit.ll_history.back());
    CHECK(fit.means[0] <= fit.means[1]);
  }
}

TEST_CASE("gmm on a single tight cluster") {
  Rng rng(4);
  const double sd = 0.01;
  std::vector<double> v;
  for (int i = 0; i < 200; ++i) v.push_back(normal(rng, 0.4, sd));
  const auto fit = fit_gmm2(v);
  CHECK(std::abs(fit.means[0] - 0.4) <= 2 * sd);
  CHECK(std::abs(fit.means[1] - 0.4) <= 2 * sd);
  CHECK(std::isfinite(fit.log_likelihood));
  // EM crawls along the one-cluster ridge; it needs more than the default 200 iterations.
  GmmOptions longer;
  longer.max_iter = 5000;
  const auto slow = fit_gmm2(v, longer);
  CHECK(slow.converged);
  const int heavy = slow.weights[0] >= slow.weights[1] ? 0 : 1;
  CHECK(std::abs(slow.means[heavy] - 0.4) <= 2 * sd);

  std::vector<double> dup(50, 0.3);
  dup[0] = 0.31;
  const auto d = fit_gmm2(dup);
  CHECK(d.variances[0] >= 1e-6);
  CHECK(std::isfinite(d.log_likelihood));
}

TEST_CASE("gmm errors") {
  CHECK_THROWS_AS(fit_gmm2(std::vector<double>{0.1, 0.2, 0.3}), NumericalError);
  CHECK_THROWS_AS(fit_gmm2(std::vector<double>{0.1, 0.2, NAN, 0.3}), NumericalError);
}

TEST_CASE("gmm does not depend on the order of the values") {
  auto f = bimodal(0.2, 0.6, 0.1, 200, 5);
  const auto a = fit_gmm2(f.values);
  std::reverse(f.values.begin(), f.values.end());
  const auto b = fit_gmm2(f.values);
  CHECK(a.means[0] == doctest::Approx(b.means[0]).epsilon(1e-9));
  CHECK(a.means[1] == doctest::Approx(b.means[1]).epsilon(1e-9));
}

TEST_CASE("posterior examples") {
  GmmFit fit;
  fit.means = {0.2, 0.8};
  fit.variances = {0.01, 0.01};
  fit.weights = {0.5, 0.5};
  const auto w = posterior_clean(fit, std::vector<double>{0.5, 0.2 - 1.0});
  CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w[1] > 0.999);
  const auto odds = noisy_log_odds(fit, std::vector<double>{0.1, 0.5, 0.9});
  CHECK(odds[0] < odds[1]);
  CHECK(odds[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(odds[1] < odds[2]);
}

TEST_CASE("posterior matches a direct density evaluation") {
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    GmmFit fit;
    fit.means = {uniform01(rng) * 0.5, 0.5 + uniform01(rng) * 0.5};
    fit.variances = {0.005 + uniform01(rng) * 0.05, 0.005 + uniform01(rng) * 0.05};
    fit.weights[0] = 0.1 + 0.8 * uniform01(rng);
    fit.weights[1] = 1.0 - fit.weights[0];
    std::vector<double> v(20);
    for (auto& x : v) x = uniform01(rng);
    const auto w = posterior_clean(fit, v);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double p0 = fit.weights[0] * density(v[i], fit.means[0], fit.variances[0]);
      const double p1 = fit.weights[1] * density(v[i], fit.means[1], fit.variances[1]);
      CHECK(std::abs(w[i] - p0 / (p0 + p1)) <= 1e-12);
    }
  }
}

TEST_CASE("split examples") {
  const auto d = split(std::vector<double>{0.9, 0.01}, 0.03);
  CHECK(d.labeled_idx == std::vector<std::size_t>{0});
  CHECK(d.unlabeled_idx == std::vector<std::size_t>{1});
  CHECK(d.labeled_fraction() == 0.5);
  CHECK_THROWS_AS(split(std::vector<double>{0.01, 0.02}, 0.5), NumericalError);
  CHECK_THROWS_AS(split(std::vector<double>{0.9}, 0.0), ConfigError);
  CHECK_THROWS_AS(split(std::vector<double>{0.9}, 1.0), ConfigError);
}

TEST_CASE("split is a partition and monotone in tau") {
  Rng rng(7);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> w(60);
    for (auto& x : w) x = uniform01(rng);
    w[0] = 0.99;
    const auto lo = split(w, 0.03), hi = split(w, 0.5);
    std::set<std::size_t> all(lo.labeled_idx.begin(), lo.labeled_idx.end());
    for (auto i : lo.unlabeled_idx) CHECK(all.insert(i).second);
    CHECK(all.size() == w.size());
    for (auto i : hi.labeled_idx)
      CHECK(std::find(lo.labeled_idx.begin(), lo.labeled_idx.end(), i) != lo.labeled_idx.end());
    for (auto i : hi.labeled_idx) CHECK(w[i] >= 0.5);
  }
}

TEST_CASE("divide recovers component membership on the bimodal fixture") {
  const auto f = bimodal(0.1, 0.9, 0.001, 500, 2);
  const auto d = divide_losses(f.values, 0.5);
  std::vector<int> assigned(f.values.size(), 1);
  for (auto i : d.labeled_idx) assigned[i] = 0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < assigned.size(); ++i) agree += assigned[i] == f.component[i] ? 1 : 0;
  CHECK(static_cast<double>(agree) / static_cast<double>(assigned.size()) >= 0.99);
}
