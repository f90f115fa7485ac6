#include "c2d/mixtrain.hpp"

#include <algorithm>
#include <cmath>

#include "c2d/error.hpp"
#include "c2d/warmup.hpp"

namespace c2d::mixtrain {

using num::Tensor;
using num::Var;

const char* to_string(LnlMethod m) {
  switch (m) {
    case LnlMethod::DivideMix: return "dividemix";
    case LnlMethod::Elr: return "elr";
    case LnlMethod::OracleMixMatch: return "oracle";
    case LnlMethod::CrossEntropy: return "ce";
  }
  return "?";
}

LnlMethod parse_lnl_method(const std::string& s) {
  if (s == "dividemix") return LnlMethod::DivideMix;
  if (s == "elr") return LnlMethod::Elr;
  if (s == "oracle" || s == "oracle-mixmatch") return LnlMethod::OracleMixMatch;
  if (s == "ce") return LnlMethod::CrossEntropy;
  throw ConfigError("unknown method '" + s + "' (expected dividemix|elr|oracle|ce)");
}

void LnlConfig::validate() const {
  if (!(lambda_u >= 0.0)) throw ConfigError("lnl: lambda_u must be >= 0");
  if (!(sharpen_t > 0.0)) throw ConfigError("lnl: sharpen_t must be > 0");
  if (!(mixup_alpha >= 0.0)) throw ConfigError("lnl: mixup_alpha must be >= 0");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("lnl: tau must lie in (0,1)");
  if (epochs < 1) throw ConfigError("lnl: epochs must be positive");
  if (!(elr_lambda >= 0.0)) throw ConfigError("lnl: elr_lambda must be >= 0");
  if (!(elr_beta >= 0.0 && elr_beta < 1.0)) throw ConfigError("lnl: elr_beta must lie in [0,1)");
  if (batch_size < 1) throw ConfigError("lnl: batch_size must be positive");
  if (views < 1) throw ConfigError("lnl: views must be >= 1");
  if (!(prior_weight >= 0.0)) throw ConfigError("lnl: prior_weight must be >= 0");
  aug.validate();
}

std::vector<double> sharpen(std::span<const double> p, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("sharpen: temperature must be > 0");
  std::vector<double> q(p.size());
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    q[c] = temperature == 1.0 ? p[c] : std::pow(p[c], 1.0 / temperature);
    s += q[c];
  }
  if (!(s > 0.0)) throw NumericalError("sharpen: distribution vanished");
  for (double& v : q) v /= s;
  return q;
}

Tensor sharpen_rows(const Tensor& p, double temperature) {
  Tensor out(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto q = sharpen(p.row(i), temperature);
    std::copy(q.begin(), q.end(), out.row(i).begin());
  }
  return out;
}

std::vector<double> co_refine(std::span<const double> observed_onehot, double w,
                              std::span<const double> model_probs, double temperature) {
  if (observed_onehot.size() != model_probs.size()) throw ConfigError("co_refine: length mismatch");
  if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("co_refine: w must lie in [0,1]");
  std::vector<double> mixed(model_probs.size());
  for (std::size_t c = 0; c < mixed.size(); ++c) {
    mixed[c] = w * observed_onehot[c] + (1.0 - w) * model_probs[c];
  }
  return sharpen(mixed, temperature);
}

namespace {

std::vector<Tensor> make_views(const Tensor& x, const data::AugmentationSpec& aug, std::size_t k, Rng& rng) {
  std::vector<Tensor> views;
  for (std::size_t v = 0; v < k; ++v) views.push_back(data::augment_batch(x, aug, rng));
  return views;
}

// Mean of each model's probabilities over the given views.
Tensor mean_probabilities(std::span<const Model* const> models, const std::vector<Tensor>& views) {
  Tensor acc(views.front().rows(), models.front()->shape().num_classes);
  for (const Tensor& v : views)
    for (const Model* m : models) {
      const Tensor p = m->probabilities(v);
      for (std::size_t k = 0; k < acc.size(); ++k) acc.data()[k] += p.data()[k];
    }
  const double inv = 1.0 / static_cast<double>(views.size() * models.size());
  for (double& v : acc.data()) v *= inv;
  return acc;
}

std::vector<std::size_t> all_indices_where(std::span<const std::uint8_t> flags, bool value) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < flags.size(); ++i)
    if ((flags[i] != 0) == value) out.push_back(i);
  return out;
}

std::vector<num::Parameter*> trainable(Model& m) {
  auto p = m.encoder_parameters();
  for (auto* c : m.classifier_parameters()) p.push_back(c);
  return p;
}

}  // namespace

Tensor co_guess(const Tensor& x_unlabeled, const Model& a, const Model& b, const data::AugmentationSpec& aug,
                std::size_t views, double temperature, Rng& rng) {
  if (views < 1) throw ConfigError("co_guess: views must be >= 1");
  const auto v = make_views(x_unlabeled, aug, views, rng);
  const Model* models[] = {&a, &b};
  return sharpen_rows(mean_probabilities(models, v), temperature);
}

CoDivision co_divide(std::span<const double> losses_a, std::span<const double> losses_b, double tau,
                     const divide::GmmOptions& gmm) {
  return CoDivision{divide::divide_losses(losses_b, tau, gmm), divide::divide_losses(losses_a, tau, gmm)};
}

StepLosses mixmatch_step(Model& model, const Model& peer, const Tensor& x_labeled, const Tensor& onehot_labeled,
                         std::span<const double> w_labeled, const Tensor& x_unlabeled, const LnlConfig& cfg,
                         num::SgdState& sgd, Rng& rng) {
  const std::size_t bl = x_labeled.rows();
  const std::size_t bu = x_unlabeled.rows();
  if (bl == 0) throw ConfigError("mixmatch_step: empty labeled batch");
  if (w_labeled.size() != bl || onehot_labeled.rows() != bl) throw ConfigError("mixmatch_step: batch size mismatch");
  const std::size_t k = cfg.views;

  // Co-refinement of labeled targets with the model's own predictions.
  const auto xl_views = make_views(x_labeled, cfg.aug, k, rng);
  const Model* self[] = {&model};
  const Tensor own = mean_probabilities(self, xl_views);
  Tensor refined(bl, onehot_labeled.cols());
  for (std::size_t i = 0; i < bl; ++i) {
    const auto r = co_refine(onehot_labeled.row(i), w_labeled[i], own.row(i), cfg.sharpen_t);
    std::copy(r.begin(), r.end(), refined.row(i).begin());
  }

  Tensor all_x, all_y;
  for (const Tensor& v : xl_views) {
    all_x = num::concat_rows(all_x, v);
    all_y = num::concat_rows(all_y, refined);
  }
  if (bu > 0) {
    // Co-guessing on the unlabeled batch with both networks.
    const auto xu_views = make_views(x_unlabeled, cfg.aug, k, rng);
    const Model* both[] = {&model, &peer};
    const Tensor guess = sharpen_rows(mean_probabilities(both, xu_views), cfg.sharpen_t);
    for (const Tensor& v : xu_views) {
      all_x = num::concat_rows(all_x, v);
      all_y = num::concat_rows(all_y, guess);
    }
  }

  const double lambda = warmup::sample_mixup_lambda(cfg.mixup_alpha, rng);
  const auto mate = permutation(all_x.rows(), rng);
  auto mixed = warmup::mix_with(all_x, all_y, num::gather_rows(all_x, mate), num::gather_rows(all_y, mate), lambda);

  auto params = trainable(model);
  num::zero_grad(params);
  num::Graph g;
  Var logits = model.logits(g, model.features(g, g.constant(std::move(mixed.x))));
  const std::size_t nl = k * bl;
  Var lx = warmup::cross_entropy_logits(num::slice_rows(logits, 0, nl), num::slice_rows(mixed.y, 0, nl));
  StepLosses out;
  out.labeled = lx.value().item();
  Var loss = lx;
  if (bu > 0) {
    Var pu = num::softmax_rows(num::slice_rows(logits, nl, logits.rows()));
    Var target_u = g.constant(num::slice_rows(mixed.y, nl, mixed.y.rows()));
    Var lu = num::mean(num::square(num::sub(pu, target_u)));
    out.unlabeled = lu.value().item();
    loss = num::add(lx, num::scale(lu, cfg.lambda_u));
  }
  if (cfg.prior_weight > 0.0) {
    const double c = static_cast<double>(logits.cols());
    Var mean_pred = num::mean_cols(num::softmax_rows(logits));
    Var penalty = num::add_scalar(num::scale(num::sum(num::log(mean_pred, 1e-12)), -1.0 / c), -std::log(c));
    out.prior = penalty.value().item();
    loss = num::add(loss, num::scale(penalty, cfg.prior_weight));
  }
  g.backward(loss);
  sgd.step(params);
  out.total = loss.value().item();
  return out;
}

std::array<EpochStats, 2> dividemix_epoch(const data::LabeledDataset& ds, std::array<Model, 2>& models,
                                          const std::array<divide::DivideResult, 2>& divisions,
                                          const LnlConfig& cfg, std::array<num::SgdState, 2>& sgd, Rng& rng) {
  cfg.validate();
  // Peers are frozen at epoch entry so both passes are independent.
  const std::array<Model, 2> peers{models[1], models[0]};
  const std::array<std::uint64_t, 2> seeds{rng(), rng()};
  const Tensor onehot = warmup::one_hot(ds.observed_labels, ds.num_classes);
  std::array<EpochStats, 2> stats{};

  for (std::size_t k = 0; k < 2; ++k) {
    const auto& div = divisions[k];
    if (div.w.size() != ds.size()) throw ConfigError("dividemix_epoch: division does not match dataset size");
    if (div.labeled_idx.empty()) {
      throw NumericalError("dividemix_epoch: labeled set is empty; lower tau");
    }
    Rng local(seeds[k]);
    Model& model = models[k];

    if (!cfg.co_guess && cfg.lambda_u == 0.0) {
      const Tensor xl = num::gather_rows(ds.features, div.labeled_idx);
      const Tensor yl = num::gather_rows(onehot, div.labeled_idx);
      const warmup::SupervisedEpochOptions opts{cfg.batch_size, cfg.mixup_alpha, false};
      stats[k].train_loss = warmup::supervised_epoch(model, xl, yl, opts, sgd[k], local);
      stats[k].steps = (xl.rows() + cfg.batch_size - 1) / cfg.batch_size;
      continue;
    }

    const auto& labeled = div.labeled_idx;
    const auto& unlabeled = div.unlabeled_idx;
    const auto order = permutation(labeled.size(), local);
    std::vector<std::size_t> u_order = permutation(unlabeled.size(), local);
    std::size_t u_pos = 0;
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> li, ui;
      std::vector<double> wl;
      for (std::size_t p = start; p < end; ++p) {
        li.push_back(labeled[order[p]]);
        wl.push_back(div.w[labeled[order[p]]]);
      }
      if (cfg.co_guess && !unlabeled.empty()) {
        // Unlabeled batches cycle through reshuffled passes of the unlabeled set.
        for (std::size_t p = 0; p < li.size(); ++p) {
          if (u_pos == u_order.size()) {
            u_order = permutation(unlabeled.size(), local);
            u_pos = 0;
          }
          ui.push_back(unlabeled[u_order[u_pos++]]);
        }
      }
      const Tensor xl = num::gather_rows(ds.features, li);
      const Tensor yl = num::gather_rows(onehot, li);
      const Tensor xu = ui.empty() ? Tensor() : num::gather_rows(ds.features, ui);
      const auto losses = mixmatch_step(model, peers[k], xl, yl, wl, xu, cfg, sgd[k], local);
      total += losses.total;
      ++stats[k].steps;
    }
    stats[k].train_loss = total / static_cast<double>(stats[k].steps);
  }
  return stats;
}

void ElrState::update(std::span<const std::size_t> idx, const Tensor& probs, double beta) {
  if (probs.rows() != idx.size() || probs.cols() != targets.cols()) throw ConfigError("ElrState::update: shape mismatch");
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto t = targets.row(idx[r]);
    const auto p = probs.row(r);
    for (std::size_t c = 0; c < t.size(); ++c) t[c] = beta * t[c] + (1.0 - beta) * p[c];
  }
}

Var elr_loss(Var logits, std::span<const int> observed, const Tensor& targets, double lambda) {
  num::require_same_shape(logits.value(), targets, "elr_loss");
  num::Graph& g = *logits.graph;
  const Tensor y = warmup::one_hot(observed, static_cast<int>(logits.cols()));
  Var ce = warmup::cross_entropy_logits(logits, y);
  Var agreement = num::sum_rows(num::mul(num::softmax_rows(logits), g.constant(targets)));
  Var reg = num::mean(num::log(num::add_scalar(num::scale(num::clamp(agreement, 0.0, 1.0 - 1e-6), -1.0), 1.0)));
  return num::add(ce, num::scale(reg, lambda));
}

double elr_step(Model& model, const Tensor& x, std::span<const int> observed, std::span<const std::size_t> idx,
                ElrState& state, const LnlConfig& cfg, num::SgdState& sgd) {
  const Tensor xb = num::gather_rows(x, idx);
  std::vector<int> yb;
  for (std::size_t i : idx) yb.push_back(observed[i]);
  auto params = trainable(model);
  num::zero_grad(params);
  num::Graph g;
  Var logits = model.logits(g, model.features(g, g.constant(xb)));
  state.update(idx, num::softmax_rows(logits.value()), cfg.elr_beta);
  Var loss = elr_loss(logits, yb, num::gather_rows(state.targets, idx), cfg.elr_lambda);
  g.backward(loss);
  sgd.step(params);
  return loss.value().item();
}

double ensemble_accuracy(std::span<const Model> models, const data::LabeledDataset& test) {
  if (models.empty()) throw ConfigError("ensemble_accuracy: no models");
  Tensor acc = models.front().probabilities(test.features);
  for (std::size_t k = 1; k < models.size(); ++k) {
    const Tensor p = models[k].probabilities(test.features);
    for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += p.data()[i];
  }
  return metrics::accuracy(acc, test.true_labels);
}

namespace {

void record(TrainResult& res, metrics::MetricRow row, const EpochHook& hook) {
  if (std::isfinite(row.test_acc)) {
    res.peak_test_acc = std::max(res.peak_test_acc, row.test_acc);
    res.final_test_acc = row.test_acc;
  }
  res.rows.push_back(row);
  if (hook) hook(res.rows.back());
}

double mean_defined(double a, double b) {
  if (std::isfinite(a) && std::isfinite(b)) return 0.5 * (a + b);
  return std::isfinite(a) ? a : b;
}

void check_inputs(const data::LabeledDataset& train, const LnlConfig& cfg) {
  cfg.validate();
  train.validate();
  if (train.size() < 4) throw ConfigError("training set too small");
}

// Shared epoch loop for DivideMix (refit == true) and the oracle split.
TrainResult run_two_network(const data::LabeledDataset& train, const data::LabeledDataset& test,
                            std::array<Model, 2> models, const LnlConfig& cfg, std::uint64_t seed,
                            const EpochHook& hook, bool refit, std::array<divide::DivideResult, 2> divisions) {
  Rng rng(seed);
  std::array<num::SgdState, 2> sgd{num::SgdState(cfg.sgd), num::SgdState(cfg.sgd)};
  TrainResult res;
  const std::string method = to_string(cfg.method);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::array<EpochStats, 2> stats;
    try {
      stats = dividemix_epoch(train, models, divisions, cfg, sgd, rng);
    } catch (const NumericalError& err) {
      throw NumericalError(method + " failed at epoch " + std::to_string(epoch) + ": " + err.what());
    }
    const auto la = warmup::per_sample_losses(models[0], train.features, train.observed_labels);
    const auto lb = warmup::per_sample_losses(models[1], train.features, train.observed_labels);
    const auto sa = warmup::assess_losses(la, train.noise_flags, cfg.tau);
    const auto sb = warmup::assess_losses(lb, train.noise_flags, cfg.tau);
    if (refit) {
      // Model A trains on the division from B's losses and vice versa.
      const auto next = co_divide(la, lb, cfg.tau, cfg.gmm);
      divisions = {next.for_a, next.for_b};
    }
    metrics::MetricRow row;
    row.stage = "train";
    row.epoch = epoch;
    row.method = method;
    row.train_loss = 0.5 * (stats[0].train_loss + stats[1].train_loss);
    row.test_acc = test.size() ? ensemble_accuracy(models, test) : metrics::kMissing;
    row.roc_auc = mean_defined(sa.roc_auc, sb.roc_auc);
    row.eff_noise_rate = 0.5 * (metrics::effective_noise_rate(divisions[0].labeled_idx, train.noise_flags) +
                                metrics::effective_noise_rate(divisions[1].labeled_idx, train.noise_flags));
    row.labeled_frac = 0.5 * (divisions[0].labeled_fraction() + divisions[1].labeled_fraction());
    record(res, row, hook);
  }
  res.models.assign(models.begin(), models.end());
  return res;
}

}  // namespace

TrainResult run_dividemix(const data::LabeledDataset& train, const data::LabeledDataset& test,
                          std::array<Model, 2> models, const LnlConfig& cfg, std::uint64_t seed,
                          const EpochHook& hook) {
  check_inputs(train, cfg);
  const auto la = warmup::per_sample_losses(models[0], train.features, train.observed_labels);
  const auto lb = warmup::per_sample_losses(models[1], train.features, train.observed_labels);
  const auto initial = co_divide(la, lb, cfg.tau, cfg.gmm);
  return run_two_network(train, test, std::move(models), cfg, seed, hook, true, {initial.for_a, initial.for_b});
}

TrainResult run_dividemix(const data::LabeledDataset& train, const data::LabeledDataset& test,
                          std::array<Model, 2> models, std::array<divide::DivideResult, 2> divisions,
                          const LnlConfig& cfg, std::uint64_t seed, const EpochHook& hook) {
  check_inputs(train, cfg);
  return run_two_network(train, test, std::move(models), cfg, seed, hook, true, std::move(divisions));
}

TrainResult oracle_split_train(const data::LabeledDataset& train, const data::LabeledDataset& test,
                               std::array<Model, 2> models, const LnlConfig& cfg, std::uint64_t seed,
                               const EpochHook& hook) {
  check_inputs(train, cfg);
  divide::DivideResult oracle;
  oracle.tau = cfg.tau;
  oracle.w.resize(train.size());
  oracle.labeled_idx = all_indices_where(train.noise_flags, false);
  oracle.unlabeled_idx = all_indices_where(train.noise_flags, true);
  for (std::size_t i : oracle.labeled_idx) oracle.w[i] = 1.0;
  if (oracle.labeled_idx.empty()) throw NumericalError("oracle_split_train: no clean samples");
  return run_two_network(train, test, std::move(models), cfg, seed, hook, false, {oracle, oracle});
}

TrainResult run_elr(const data::LabeledDataset& train, const data::LabeledDataset& test, Model model,
                    const LnlConfig& cfg, std::uint64_t seed, const EpochHook& hook) {
  check_inputs(train, cfg);
  Rng rng(seed);
  num::SgdState sgd(cfg.sgd);
  ElrState state(train.size(), static_cast<std::size_t>(train.num_classes));
  TrainResult res;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = permutation(train.size(), rng);
    double total = 0.0;
    std::size_t steps = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        const std::span<const std::size_t> idx(order.data() + start, end - start);
        total += elr_step(model, train.features, train.observed_labels, idx, state, cfg, sgd);
        ++steps;
      }
    } catch (const NumericalError& err) {
      throw NumericalError("elr failed at epoch " + std::to_string(epoch) + ": " + err.what());
    }
    const auto losses = warmup::per_sample_losses(model, train.features, train.observed_labels);
    const auto sep = warmup::assess_losses(losses, train.noise_flags, cfg.tau);
    metrics::MetricRow row;
    row.stage = "train";
    row.epoch = epoch;
    row.method = "elr";
    row.train_loss = total / static_cast<double>(steps);
    row.test_acc = test.size() ? metrics::accuracy(model.logits(test.features), test.true_labels) : metrics::kMissing;
    row.roc_auc = sep.roc_auc;
    row.eff_noise_rate = sep.eff_noise_rate;
    row.labeled_frac = sep.labeled_frac;
    record(res, row, hook);
  }
  res.models.push_back(std::move(model));
  return res;
}

TrainResult run_cross_entropy(const data::LabeledDataset& train, const data::LabeledDataset& test, Model model,
                              const LnlConfig& cfg, std::uint64_t seed, const EpochHook& hook) {
  check_inputs(train, cfg);
  Rng rng(seed);
  num::SgdState sgd(cfg.sgd);
  const Tensor targets = warmup::one_hot(train.observed_labels, train.num_classes);
  const warmup::SupervisedEpochOptions opts{cfg.batch_size, cfg.mixup_alpha, false};
  TrainResult res;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss = 0.0;
    try {
      loss = warmup::supervised_epoch(model, train.features, targets, opts, sgd, rng);
    } catch (const NumericalError& err) {
      throw NumericalError("ce failed at epoch " + std::to_string(epoch) + ": " + err.what());
    }
    const auto losses = warmup::per_sample_losses(model, train.features, train.observed_labels);
    const auto sep = warmup::assess_losses(losses, train.noise_flags, cfg.tau);
    metrics::MetricRow row;
    row.stage = "train";
    row.epoch = epoch;
    row.method = cfg.mixup_alpha > 0.0 ? "ce+mixup" : "ce";
    row.train_loss = loss;
    row.test_acc = test.size() ? metrics::accuracy(model.logits(test.features), test.true_labels) : metrics::kMissing;
    row.roc_auc = sep.roc_auc;
    row.eff_noise_rate = sep.eff_noise_rate;
    row.labeled_frac = sep.labeled_frac;
    record(res, row, hook);
  }
  res.models.push_back(std::move(model));
  return res;
}

}  // namespace c2d::mixtrain
