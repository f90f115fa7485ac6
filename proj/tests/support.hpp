#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "c2d/autodiff.hpp"
#include "c2d/contrast.hpp"
#include "c2d/data.hpp"
#include "c2d/model.hpp"
#include "c2d/random.hpp"
#include "c2d/runner.hpp"

namespace testsup {

using c2d::num::Graph;
using c2d::num::Tensor;
using c2d::num::Var;

using ScalarFn = std::function<Var(Graph&, Var)>;

inline Tensor random_tensor(std::size_t r, std::size_t c, c2d::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline double eval_scalar(const ScalarFn& fn, const Tensor& x) {
  Graph g;
  return fn(g, g.input(x)).value().item();
}

/// Relative error ||autodiff - central FD|| / max(norms) of d fn / d x.
inline double fd_rel_error(const ScalarFn& fn, const Tensor& x, double h = 1e-5) {
  Graph g;
  Var in = g.input(x);
  Var out = fn(g, in);
  g.backward(out);
  const Tensor analytic = in.grad();

  Tensor numeric(x.rows(), x.cols());
  Tensor xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = xp.data()[i];
    xp.data()[i] = keep + h;
    const double fp = eval_scalar(fn, xp);
    xp.data()[i] = keep - h;
    const double fm = eval_scalar(fn, xp);
    xp.data()[i] = keep;
    numeric.data()[i] = (fp - fm) / (2.0 * h);
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff += std::pow(analytic.data()[i] - numeric.data()[i], 2);
    na += analytic.data()[i] * analytic.data()[i];
    nn += numeric.data()[i] * numeric.data()[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
  return std::sqrt(diff) / denom;
}

/// Worst relative error over `trials` random points drawn by make_point.
inline double fd_worst(const ScalarFn& fn, const std::function<Tensor(c2d::Rng&)>& make_point, int trials,
                       std::uint64_t seed) {
  c2d::Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) worst = std::max(worst, fd_rel_error(fn, make_point(rng)));
  return worst;
}

inline Tensor unit_rows(Tensor t) { return c2d::num::l2_normalize_rows(t); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("c2d-test-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Default benchmark of a seed, built the way the runner builds it.
inline c2d::data::Benchmark default_benchmark(std::uint64_t seed) {
  c2d::runner::ExperimentConfig cfg;
  cfg.seed = seed;
  return c2d::data::make_benchmark(cfg.data, c2d::runner::stage_seed(cfg, "gen-data"));
}

struct Pretrained {
  c2d::Model model;
  std::vector<c2d::metrics::MetricRow> rows;
};

/// SSL-pretrained model on the default benchmark's training features, cached
/// per seed for the lifetime of the test process.
inline const Pretrained& ssl_pretrained(std::uint64_t seed) {
  static std::map<std::uint64_t, Pretrained> cache;
  auto it = cache.find(seed);
  if (it != cache.end()) return it->second;
  c2d::runner::ExperimentConfig cfg;
  cfg.seed = seed;
  cfg = cfg.resolved();
  const auto bench = default_benchmark(seed);
  c2d::Model init(cfg.model, c2d::runner::stage_seed(cfg, "model-init"));
  Pretrained p;
  p.model = c2d::contrast::pretrain_ssl(bench.train.features, std::move(init), cfg.ssl, cfg.aug,
                                        c2d::runner::stage_seed(cfg, "pretrain"), &p.rows);
  return cache.emplace(seed, std::move(p)).first->second;
}

inline const c2d::Model& ssl_model(std::uint64_t seed) { return ssl_pretrained(seed).model; }

inline c2d::Model random_model(std::uint64_t seed) {
  c2d::runner::ExperimentConfig cfg;
  cfg.seed = seed;
  cfg = cfg.resolved();
  return c2d::Model(cfg.model, c2d::runner::stage_seed(cfg, "model-init"));
}

}  // namespace testsup
