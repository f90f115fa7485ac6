#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "c2d/autodiff.hpp"
#include "c2d/data.hpp"
#include "c2d/divide.hpp"
#include "c2d/metrics.hpp"
#include "c2d/model.hpp"
#include "c2d/sgd.hpp"

namespace c2d::warmup {

enum class InitKind { Random, Ssl, SupervisedProxy };

const char* to_string(InitKind k);
InitKind parse_init_kind(const std::string& s);

struct WarmupConfig {
  int epochs = 5;
  double mixup_alpha = 0.0;  // 0 disables mixup
  InitKind init = InitKind::Ssl;
  std::size_t batch_size = 64;
  num::SgdConfig sgd{0.02, 0.9, 5e-4};
  bool freeze_encoder = false;
  /// Linear probe every epoch (the costliest instrumentation).
  bool probe = true;
  /// Threshold used to log the labeled fraction / effective noise rate.
  double tau = 0.5;

  void validate() const;
};

/// Per-sample, per-epoch losses; row e belongs to epochs[e].
struct LossTrace {
  std::vector<int> epochs;
  std::vector<std::vector<double>> per_sample_loss;

  const std::vector<double>& final_losses() const;
};

/// Mean over rows of -sum_c t_c log(max(p_c, 1e-12)). Rows of probs and
/// targets must be distributions (checked, tolerance 1e-6).
num::Var cross_entropy(num::Var probs, const num::Tensor& targets);
double cross_entropy(const num::Tensor& probs, const num::Tensor& targets);
/// Same loss computed from logits through log-softmax (training path).
num::Var cross_entropy_logits(num::Var logits, const num::Tensor& targets);

num::Tensor one_hot(std::span<const int> labels, int num_classes);

struct Mixup {
  num::Tensor x;
  num::Tensor y;
  double lambda = 1.0;
};

/// lambda ~ Beta(alpha, alpha) folded to max(lambda, 1 - lambda); alpha 0 gives 1.
double sample_mixup_lambda(double alpha, Rng& rng);
Mixup mixup(const num::Tensor& x1, const num::Tensor& y1, const num::Tensor& x2,
            const num::Tensor& y2, double alpha, Rng& rng);
Mixup mixup(const num::Tensor& x1, const num::Tensor& y1, const num::Tensor& x2,
            const num::Tensor& y2, double alpha, std::uint64_t seed);
/// Convex combination with a fixed lambda.
Mixup mix_with(const num::Tensor& x1, const num::Tensor& y1, const num::Tensor& x2,
               const num::Tensor& y2, double lambda);

/// Evaluation-mode cross-entropy of every sample against labels.
std::vector<double> per_sample_losses(const Model& model, const num::Tensor& x,
                                      std::span<const int> labels);

struct SupervisedEpochOptions {
  std::size_t batch_size = 64;
  double mixup_alpha = 0.0;
  bool freeze_encoder = false;
};

/// One shuffled pass of cross-entropy SGD over (x, soft targets). With
/// mixup, each batch is mixed with a permutation of itself. Returns the mean
/// batch loss.
double supervised_epoch(Model& model, const num::Tensor& x, const num::Tensor& targets,
                        const SupervisedEpochOptions& opts, num::SgdState& sgd, Rng& rng);

/// Noise-detection diagnostics for one set of per-sample losses.
struct Separability {
  divide::GmmFit fit;
  std::vector<double> w;
  double roc_auc = metrics::kMissing;
  double eff_noise_rate = metrics::kMissing;
  double labeled_frac = metrics::kMissing;
};

Separability assess_losses(std::span<const double> losses, std::span<const std::uint8_t> noise_flags,
                           double tau);

struct EpochReport {
  int epoch = 0;
  const Model* model = nullptr;
  const std::vector<double>* losses = nullptr;
  const metrics::MetricRow* row = nullptr;
};
using EvalHook = std::function<void(const EpochReport&)>;

struct WarmupResult {
  Model model;
  LossTrace trace;
  std::vector<metrics::MetricRow> rows;
  double peak_test_acc = 0.0;
  double final_test_acc = 0.0;
};

/// Cross-entropy training on the observed labels. After each epoch records
/// evaluation-mode per-sample losses, GMM noise-detection ROC-AUC, test
/// accuracy and (if enabled) linear-probe accuracy, then calls hook.
WarmupResult run_warmup(const data::LabeledDataset& train, const data::LabeledDataset& test,
                        Model model, const WarmupConfig& cfg, std::uint64_t seed,
                        const EvalHook& hook = {}, const std::string& stage = "warmup",
                        int first_epoch = 1);

}  // namespace c2d::warmup
