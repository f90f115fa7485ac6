#include "c2d/warmup.hpp"

#include <algorithm>
#include <cmath>

#include "c2d/error.hpp"

namespace c2d::warmup {

using num::Tensor;
using num::Var;

const char* to_string(InitKind k) {
  switch (k) {
    case InitKind::Random: return "random";
    case InitKind::Ssl: return "ssl";
    case InitKind::SupervisedProxy: return "proxy";
  }
  return "?";
}

InitKind parse_init_kind(const std::string& s) {
  if (s == "random") return InitKind::Random;
  if (s == "ssl") return InitKind::Ssl;
  if (s == "proxy" || s == "supervised-proxy") return InitKind::SupervisedProxy;
  throw ConfigError("unknown init '" + s + "' (expected random|ssl|proxy)");
}

void WarmupConfig::validate() const {
  if (epochs < 1) throw ConfigError("warmup: epochs must be positive");
  if (!(mixup_alpha >= 0.0)) throw ConfigError("warmup: mixup_alpha must be >= 0");
  if (batch_size < 1) throw ConfigError("warmup: batch_size must be positive");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("warmup: tau must lie in (0,1)");
}

const std::vector<double>& LossTrace::final_losses() const {
  if (per_sample_loss.empty()) throw ConfigError("loss trace is empty");
  return per_sample_loss.back();
}

namespace {

void require_distributions(const Tensor& t, const char* what) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (double v : t.row(i)) {
      if (!(v >= 0.0)) throw ConfigError(std::string("cross_entropy: negative entry in ") + what);
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw ConfigError(std::string("cross_entropy: ") + what + " row " + std::to_string(i) +
                        " sums to " + std::to_string(s));
    }
  }
}

}  // namespace

Var cross_entropy(Var probs, const Tensor& targets) {
  num::require_same_shape(probs.value(), targets, "cross_entropy");
  require_distributions(probs.value(), "probs");
  require_distributions(targets, "targets");
  Var t = probs.graph->constant(targets);
  const double inv = -1.0 / static_cast<double>(targets.rows());
  return num::scale(num::sum(num::mul(t, num::log(probs, 1e-12))), inv);
}

double cross_entropy(const Tensor& probs, const Tensor& targets) {
  num::Graph g;
  return cross_entropy(g.constant(probs), targets).value().item();
}

Var cross_entropy_logits(Var logits, const Tensor& targets) {
  num::require_same_shape(logits.value(), targets, "cross_entropy_logits");
  Var t = logits.graph->constant(targets);
  const double inv = -1.0 / static_cast<double>(targets.rows());
  return num::scale(num::sum(num::mul(t, num::log_softmax_rows(logits))), inv);
}

Tensor one_hot(std::span<const int> labels, int num_classes) {
  Tensor t(labels.size(), static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ConfigError("one_hot: label out of range");
    t(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

double sample_mixup_lambda(double alpha, Rng& rng) {
  if (!(alpha >= 0.0)) throw ConfigError("mixup: alpha must be >= 0");
  if (alpha == 0.0) return 1.0;
  const double l = beta_sample(rng, alpha, alpha);
  return std::max(l, 1.0 - l);
}

Mixup mix_with(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2, double lambda) {
  num::require_same_shape(x1, x2, "mixup x");
  num::require_same_shape(y1, y2, "mixup y");
  Mixup m{x1, y1, lambda};
  if (lambda == 1.0) return m;
  for (std::size_t k = 0; k < m.x.size(); ++k)
    m.x.data()[k] = lambda * x1.data()[k] + (1.0 - lambda) * x2.data()[k];
  for (std::size_t k = 0; k < m.y.size(); ++k)
    m.y.data()[k] = lambda * y1.data()[k] + (1.0 - lambda) * y2.data()[k];
  return m;
}

Mixup mixup(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2, double alpha,
            Rng& rng) {
  return mix_with(x1, y1, x2, y2, sample_mixup_lambda(alpha, rng));
}

Mixup mixup(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2, double alpha,
            std::uint64_t seed) {
  Rng rng(seed);
  return mixup(x1, y1, x2, y2, alpha, rng);
}

std::vector<double> per_sample_losses(const Model& model, const Tensor& x, std::span<const int> labels) {
  if (x.rows() != labels.size()) throw ConfigError("per_sample_losses: row/label count mismatch");
  const Tensor p = model.probabilities(x);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = -std::log(std::max(p(i, static_cast<std::size_t>(labels[i])), 1e-12));
  }
  return out;
}

double supervised_epoch(Model& model, const Tensor& x, const Tensor& targets,
                        const SupervisedEpochOptions& opts, num::SgdState& sgd, Rng& rng) {
  if (x.rows() != targets.rows()) throw ConfigError("supervised_epoch: row count mismatch");
  if (x.rows() == 0) throw ConfigError("supervised_epoch: empty training set");
  auto params = opts.freeze_encoder ? model.classifier_parameters() : [&] {
    auto p = model.encoder_parameters();
    for (auto* c : model.classifier_parameters()) p.push_back(c);
    return p;
  }();
  const auto order = permutation(x.rows(), rng);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
    const std::size_t end = std::min(order.size(), start + opts.batch_size);
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    Tensor xb = num::gather_rows(x, idx);
    Tensor yb = num::gather_rows(targets, idx);
    if (opts.mixup_alpha > 0.0) {
      const auto mate = permutation(idx.size(), rng);
      const double lambda = sample_mixup_lambda(opts.mixup_alpha, rng);
      auto mixed = mix_with(xb, yb, num::gather_rows(xb, mate), num::gather_rows(yb, mate), lambda);
      xb = std::move(mixed.x);
      yb = std::move(mixed.y);
    }
    num::zero_grad(params);
    num::Graph g;
    Var logits = model.logits(g, model.features(g, g.constant(std::move(xb))));
    Var loss = cross_entropy_logits(logits, yb);
    g.backward(loss);
    sgd.step(params);
    total += loss.value().item();
    ++batches;
  }
  return total / static_cast<double>(batches);
}

Separability assess_losses(std::span<const double> losses, std::span<const std::uint8_t> noise_flags,
                           double tau) {
  Separability s;
  const auto norm = divide::normalize_losses(losses);
  s.fit = divide::fit_gmm2(norm);
  s.w = divide::posterior_clean(s.fit, norm);
  const bool has_noisy = std::any_of(noise_flags.begin(), noise_flags.end(), [](auto f) { return f != 0; });
  const bool has_clean = std::any_of(noise_flags.begin(), noise_flags.end(), [](auto f) { return f == 0; });
  if (has_noisy && has_clean) s.roc_auc = metrics::roc_auc(divide::noisy_log_odds(s.fit, norm), noise_flags);
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < s.w.size(); ++i)
    if (s.w[i] >= tau) labeled.push_back(i);
  s.labeled_frac = static_cast<double>(labeled.size()) / static_cast<double>(s.w.size());
  if (!labeled.empty()) s.eff_noise_rate = metrics::effective_noise_rate(labeled, noise_flags);
  return s;
}

WarmupResult run_warmup(const data::LabeledDataset& train, const data::LabeledDataset& test,
                        Model model, const WarmupConfig& cfg, std::uint64_t seed, const EvalHook& hook,
                        const std::string& stage, int first_epoch) {
  cfg.validate();
  train.validate();
  if (train.size() == 0) throw ConfigError("warmup: empty training set");
  if (train.dim() != model.shape().input_dim) throw ConfigError("warmup: dataset/model dimension mismatch");

  Rng rng(seed);
  num::SgdState sgd(cfg.sgd);
  const Tensor targets = one_hot(train.observed_labels, train.num_classes);
  const SupervisedEpochOptions opts{cfg.batch_size, cfg.mixup_alpha, cfg.freeze_encoder};
  const std::string method = cfg.mixup_alpha > 0.0 ? "ce+mixup" : "ce";

  WarmupResult res;
  for (int e = 0; e < cfg.epochs; ++e) {
    const int epoch = first_epoch + e;
    double train_loss = 0.0;
    try {
      train_loss = supervised_epoch(model, train.features, targets, opts, sgd, rng);
    } catch (const NumericalError& err) {
      throw NumericalError(stage + " diverged at epoch " + std::to_string(epoch) + ": " + err.what());
    }
    if (!std::isfinite(train_loss)) {
      throw NumericalError(stage + " diverged at epoch " + std::to_string(epoch) + ": non-finite loss");
    }

    auto losses = per_sample_losses(model, train.features, train.observed_labels);
    const Separability sep = assess_losses(losses, train.noise_flags, cfg.tau);

    metrics::MetricRow row;
    row.stage = stage;
    row.epoch = epoch;
    row.method = method;
    row.train_loss = train_loss;
    row.test_acc = test.size() ? metrics::accuracy(model.logits(test.features), test.true_labels) : metrics::kMissing;
    row.roc_auc = sep.roc_auc;
    row.eff_noise_rate = sep.eff_noise_rate;
    row.labeled_frac = sep.labeled_frac;
    if (cfg.probe && test.size()) {
      const auto probe = metrics::linear_probe(model.features(train.features), train.true_labels,
                                               model.features(test.features), test.true_labels,
                                               train.num_classes);
      row.probe_acc = probe.test_acc;
      if (!probe.converged) row.note = "probe-not-converged";
    }
    res.trace.epochs.push_back(epoch);
    res.trace.per_sample_loss.push_back(std::move(losses));
    res.rows.push_back(row);
    if (std::isfinite(row.test_acc)) {
      res.peak_test_acc = std::max(res.peak_test_acc, row.test_acc);
      res.final_test_acc = row.test_acc;
    }
    if (hook) hook(EpochReport{epoch, &model, &res.trace.per_sample_loss.back(), &res.rows.back()});
  }
  res.model = std::move(model);
  return res;
}

}  // namespace c2d::warmup
