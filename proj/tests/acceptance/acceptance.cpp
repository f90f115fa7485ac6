// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "c2d/contrast.hpp"
#include "c2d/data.hpp"
#include "c2d/divide.hpp"
#include "c2d/io.hpp"
#include "c2d/metrics.hpp"
#include "c2d/mixtrain.hpp"
#include "c2d/runner.hpp"
#include "c2d/warmup.hpp"
#include "support.hpp"

using namespace c2d;
using num::Graph;
using num::Tensor;
using num::Var;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kFdTol = 1e-4;
constexpr int kFdPoints = 100;
constexpr double kFdSeconds = 60.0;
constexpr double kSigmas = 3.0;
constexpr double kGmmMeanTol = 0.02;
constexpr double kGmmAgreement = 0.98;
constexpr double kAucMargin = 0.05;
constexpr double kGainVsCe = 0.15;
constexpr double kGainVsMixup = 0.02;
constexpr double kOracleGap = 0.05;
constexpr double kNoiseRate = 0.8;
constexpr int kSeeds = 5;

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_distribution_rows(std::size_t r, std::size_t c, Rng& rng) {
  return num::softmax_rows(testsup::random_tensor(r, c, rng, -2, 2));
}

void gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng side(101);
  auto point = [](Rng& r) { return testsup::random_tensor(6, 4, r, -2, 2); };
  const Tensor soft = random_distribution_rows(6, 4, side);
  const Tensor hard = warmup::one_hot(std::vector<int>{0, 2, 1, 3, 3, 0}, 4);

  // Mixup of inputs through a fixed linear map, mixed targets.
  const Tensor w = testsup::random_tensor(4, 4, side);
  Tensor perm(6, 6);
  for (std::size_t i = 0; i < 6; ++i) perm(i, (i + 2) % 6) = 1.0;
  const double lam = warmup::sample_mixup_lambda(4.0, side);
  Tensor mixed_targets = hard;
  const Tensor shuffled = num::matmul(perm, hard);
  for (std::size_t i = 0; i < mixed_targets.size(); ++i)
    mixed_targets.data()[i] = lam * hard.data()[i] + (1 - lam) * shuffled.data()[i];

  const Tensor other = testsup::random_tensor(6, 4, side);
  const Tensor elr_t = [&] {
    Tensor t = random_distribution_rows(6, 4, side);
    for (auto& v : t.data()) v *= 0.8;
    return t;
  }();
  const std::vector<int> observed{0, 3, 1, 2, 2, 1};

  struct Case {
    const char* name;
    testsup::ScalarFn fn;
  };
  const std::vector<Case> cases{
      {"ce", [&](Graph&, Var x) { return warmup::cross_entropy(num::softmax_rows(x), soft); }},
      {"ce-logits", [&](Graph&, Var x) { return warmup::cross_entropy_logits(x, hard); }},
      {"ce+mixup",
       [&](Graph& g, Var x) {
         Var mix = num::add(num::scale(x, lam), num::scale(num::matmul(g.constant(perm), x), 1 - lam));
         return warmup::cross_entropy_logits(num::matmul(mix, g.constant(w)), mixed_targets);
       }},
      {"nt-xent", [](Graph&, Var x) { return contrast::nt_xent_loss(num::l2_normalize_rows(x), 0.5); }},
      {"barlow",
       [&](Graph& g, Var x) {
         return contrast::barlow_twins_loss(contrast::batch_standardize(x),
                                            contrast::batch_standardize(g.constant(other)), 0.05);
       }},
      {"elr", [&](Graph&, Var x) { return mixtrain::elr_loss(x, observed, elr_t, 3.0); }},
  };
  double worst = 0.0;
  std::string detail;
  std::uint64_t seed = 1000;
  for (const auto& c : cases) {
    const double e = testsup::fd_worst(c.fn, point, kFdPoints, ++seed);
    worst = std::max(worst, e);
    detail += c.name + fmt("=%.1e ", e);
  }
  const double secs = seconds_since(t0);
  report(1, worst <= kFdTol && secs < kFdSeconds, detail + fmt("(%.1fs)", secs));
}

void noise_statistics() {
  const int classes = 10;
  const std::size_t per_class = 1000;
  const auto clean = data::gen_gaussian_blobs(classes, per_class, 4, 3.0, 5);
  const double n = static_cast<double>(clean.size());
  bool ok = true;
  std::string detail;
  for (double r : {0.2, 0.5, 0.9}) {
    const double p = r * (1.0 - 1.0 / classes);
    double mean = 0.0;
    for (int s = 1; s <= 20; ++s) mean += data::inject_symmetric_noise(clean, r, 700 + s).noisy_fraction() / 20;
    const double sigma = std::sqrt(p * (1 - p) / (n * 20));
    ok = ok && std::abs(mean - p) <= kSigmas * sigma;
    detail += fmt("r=%.1f mean=%.4f expect=%.4f; ", r, mean, p);
  }
  report(2, ok, detail);
}

void gmm_oracle() {
  Rng rng(31);
  std::vector<double> v;
  std::vector<int> comp;
  for (int i = 0; i < 1000; ++i) {
    const int k = i % 2;
    v.push_back(normal(rng, k ? 0.9 : 0.1, 0.05));
    comp.push_back(k);
  }
  const auto fit = divide::fit_gmm2(v);
  bool monotone = true;
  for (std::size_t k = 1; k < fit.ll_history.size(); ++k)
    monotone = monotone && fit.ll_history[k] >= fit.ll_history[k - 1];
  const auto w = divide::posterior_clean(fit, v);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < v.size(); ++i) agree += (w[i] >= 0.5 ? 0 : 1) == comp[i] ? 1 : 0;
  const double agreement = static_cast<double>(agree) / static_cast<double>(v.size());
  const bool ok = std::abs(fit.means[0] - 0.1) <= kGmmMeanTol && std::abs(fit.means[1] - 0.9) <= kGmmMeanTol &&
                  agreement >= kGmmAgreement && monotone;
  report(3, ok,
         fmt("means=%.4f/%.4f agreement=%.4f ll_monotone=%.0f", fit.means[0], fit.means[1], agreement, monotone));
}

void roc_exact() {
  Rng rng(41);
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng() % 49;
    std::vector<double> s(n);
    std::vector<std::uint8_t> f(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 8) * 0.125;
      f[i] = static_cast<std::uint8_t>(rng() % 2);
    }
    const std::size_t a0 = rng() % n, a1 = (a0 + 1 + rng() % (n - 1)) % n;
    f[a0] = 0;
    f[a1] = 1;
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        if (f[i] && !f[k]) {
          pairs += 1;
          wins += s[i] > s[k] ? 1.0 : (s[i] == s[k] ? 0.5 : 0.0);
        }
    if (metrics::roc_auc(s, f) != wins / pairs) ++mismatches;
  }
  report(4, mismatches == 0, fmt("mismatches=%.0f of 1000", mismatches));
}

// End-to-end arms -----------------------------------------------------------

runner::ExperimentConfig base_config(std::uint64_t seed, const fs::path& dir) {
  runner::ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.noise.rate = kNoiseRate;
  cfg.output_dir = dir.string();
  return cfg;
}

void copy_dir(const fs::path& from, const fs::path& to) {
  fs::remove_all(to);
  fs::copy(from, to, fs::copy_options::recursive);
}

// Re-runs the listed stages of a copied run directory under a changed config.
void rerun(const runner::ExperimentConfig& cfg, const std::vector<std::string>& stages) {
  const auto r = cfg.resolved();
  r.validate();
  const runner::RunPaths run{r.output_dir};
  runner::save_config(r, run.config());
  for (const auto& s : stages) runner::run_stage(s, r, run);
}

struct Arms {
  runner::RunLog c2d, oracle, mixup, ce;
  double injected = 0.0;
};

double final_acc(const runner::RunLog& log) { return log.stage_rows("train").back().test_acc; }

Arms run_arms(std::uint64_t seed, const fs::path& root) {
  const fs::path c2d_dir = root / ("c2d_s" + std::to_string(seed));
  auto cfg = base_config(seed, c2d_dir);
  runner::run_pipeline(cfg);

  const fs::path oracle_dir = root / ("oracle_s" + std::to_string(seed));
  copy_dir(c2d_dir, oracle_dir);
  auto oc = base_config(seed, oracle_dir);
  runner::set_value(oc, "lnl.method", "oracle");
  rerun(oc, {"train"});

  const fs::path mix_dir = root / ("cemixup_s" + std::to_string(seed));
  copy_dir(c2d_dir, mix_dir);
  auto mc = base_config(seed, mix_dir);
  mc.warmup.mixup_alpha = 4.0;
  mc.lnl.mixup_alpha = 4.0;
  runner::set_value(mc, "lnl.method", "ce");
  rerun(mc, {"warmup", "divide", "train", "probe"});

  const fs::path ce_dir = root / ("ce_s" + std::to_string(seed));
  fs::remove_all(ce_dir);
  auto cc = base_config(seed, ce_dir);
  runner::set_value(cc, "warmup.init", "random");
  runner::set_value(cc, "warmup.epochs", "5");
  runner::set_value(cc, "lnl.method", "ce");
  cc.lnl.mixup_alpha = 0.0;
  runner::run_pipeline(cc);

  Arms a;
  a.c2d = runner::RunLog::load(runner::RunPaths{c2d_dir}.runlog());
  a.oracle = runner::RunLog::load(runner::RunPaths{oracle_dir}.runlog());
  a.mixup = runner::RunLog::load(runner::RunPaths{mix_dir}.runlog());
  a.ce = runner::RunLog::load(runner::RunPaths{ce_dir}.runlog());
  a.injected = data::load_dataset(runner::RunPaths{c2d_dir}.train_data()).noisy_fraction();
  std::printf("  seed %llu: c2d=%.4f oracle=%.4f ce+mixup=%.4f ce=%.4f\n", static_cast<unsigned long long>(seed),
              final_acc(a.c2d), final_acc(a.oracle), final_acc(a.mixup), final_acc(a.ce));
  std::fflush(stdout);
  return a;
}

void end_to_end(const fs::path& root) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Arms> arms;
  for (int s = 1; s <= kSeeds; ++s) arms.push_back(run_arms(static_cast<std::uint64_t>(s), root));
  const double n = kSeeds;

  // 5: warm-up rows of the ssl run (c2d) vs the random-init run (ce).
  {
    const auto ssl0 = arms[0].c2d.stage_rows("warmup");
    const auto rnd0 = arms[0].ce.stage_rows("warmup");
    const std::size_t epochs = std::min(ssl0.size(), rnd0.size());
    bool ok = epochs > 0;
    double auc_gap = 0.0, probe_gap = 0.0;
    for (std::size_t e = 0; e < epochs; ++e) {
      double sa = 0, ra = 0, sp = 0, rp = 0;
      for (const auto& a : arms) {
        const auto s = a.c2d.stage_rows("warmup"), r = a.ce.stage_rows("warmup");
        sa += s[e].roc_auc / n;
        ra += r[e].roc_auc / n;
        sp += s[e].probe_acc / n;
        rp += r[e].probe_acc / n;
      }
      ok = ok && sa > ra && sp > rp;
      auc_gap = sa - ra;
      probe_gap = sp - rp;
    }
    ok = ok && auc_gap >= kAucMargin;
    report(5, ok, fmt("final-epoch gap roc_auc=%.4f probe=%.4f over %.0f matched epochs", auc_gap, probe_gap,
                      static_cast<double>(epochs)));
  }

  double c2d = 0, oracle = 0, mixup = 0, ce = 0, oracle_noise = 0, first = 0, last = 0, injected = 0;
  for (const auto& a : arms) {
    c2d += final_acc(a.c2d) / n;
    oracle += final_acc(a.oracle) / n;
    mixup += final_acc(a.mixup) / n;
    ce += final_acc(a.ce) / n;
    for (const auto& r : a.oracle.stage_rows("train")) oracle_noise = std::max(oracle_noise, r.eff_noise_rate);
    const auto rows = a.c2d.stage_rows("train");
    first += rows.front().eff_noise_rate / n;
    last += rows.back().eff_noise_rate / n;
    injected += a.injected / n;
  }
  report(6, c2d - ce >= kGainVsCe && c2d - mixup >= kGainVsMixup,
         fmt("c2d=%.4f ce=%.4f ce+mixup=%.4f", c2d, ce, mixup));
  report(7, oracle - c2d <= kOracleGap && oracle_noise == 0.0,
         fmt("oracle=%.4f c2d=%.4f oracle max eff_noise=%.4f", oracle, c2d, oracle_noise));
  report(8, last <= injected && last <= first && last <= kNoiseRate,
         fmt("eff_noise epoch1=%.4f final=%.4f injected=%.4f", first, last, injected));
  std::printf("  end-to-end arms took %.0fs\n", seconds_since(t0));

  // 9: label-blind pre-training on a copy of seed 1 with permuted labels.
  {
    const fs::path src = root / "c2d_s1", dst = root / "permuted_s1";
    copy_dir(src, dst);
    const runner::RunPaths run{dst};
    auto ds = data::load_dataset(run.train_data());
    Rng rng(99);
    std::shuffle(ds.observed_labels.begin(), ds.observed_labels.end(), rng);
    ds.recompute_flags();
    data::save_dataset(ds, run.train_data());
    fs::remove(run.encoder());
    rerun(base_config(1, dst), {"pretrain"});
    const bool ok = io::read_file(run.encoder()) == io::read_file(runner::RunPaths{src}.encoder());
    report(9, ok, ok ? "encoder checkpoints identical" : "encoder checkpoints differ");
  }

  // 10: identical config and seed, fresh directory.
  {
    const fs::path again = root / "c2d_s1_again";
    fs::remove_all(again);
    runner::run_pipeline(base_config(1, again));
    const bool ok = io::read_file(runner::RunPaths{again}.runlog()) ==
                    io::read_file(runner::RunPaths{root / "c2d_s1"}.runlog());
    report(10, ok, ok ? "runlog.csv identical" : "runlog.csv differs");
  }
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "c2d-acceptance";
  for (int i = 1; i + 1 < argc; ++i)
    if (std::strcmp(argv[i], "--work-dir") == 0) work = argv[i + 1];
  fs::create_directories(work);
  try {
    gradients();
    noise_statistics();
    gmm_oracle();
    roc_exact();
    end_to_end(work);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
