#pragma once

#include <array>
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

namespace c2d::mixtrain {

enum class LnlMethod { DivideMix, Elr, OracleMixMatch, CrossEntropy };

const char* to_string(LnlMethod m);
LnlMethod parse_lnl_method(const std::string& s);

struct LnlConfig {
  LnlMethod method = LnlMethod::DivideMix;
  double lambda_u = 25.0;
  double sharpen_t = 0.5;
  double mixup_alpha = 4.0;
  double tau = 0.03;
  int epochs = 20;
  double elr_lambda = 3.0;
  double elr_beta = 0.7;
  std::size_t batch_size = 64;
  num::SgdConfig sgd{0.02, 0.9, 5e-4};
  /// Augmented views per sample for label refinement and co-guessing.
  std::size_t views = 2;
  /// false: no co-guessing, co-refinement or unlabeled branch. Combined with
  /// lambda_u = 0 this is plain supervised training on the labeled subset.
  bool co_guess = true;
  /// Weight of KL(uniform || mean prediction over the mixed batch); keeps
  /// classes absent from the labeled set from being absorbed by others.
  double prior_weight = 1.0;
  data::AugmentationSpec aug{};
  divide::GmmOptions gmm{};

  void validate() const;
};

/// q_c = p_c^(1/T) / sum_k p_k^(1/T).
std::vector<double> sharpen(std::span<const double> p, double temperature);
num::Tensor sharpen_rows(const num::Tensor& p, double temperature);

/// sharpen(w * observed + (1 - w) * model_probs, T).
std::vector<double> co_refine(std::span<const double> observed_onehot, double w,
                              std::span<const double> model_probs, double temperature);

/// Sharpened mean of both models' probabilities over `views` augmentations.
num::Tensor co_guess(const num::Tensor& x_unlabeled, const Model& a, const Model& b,
                     const data::AugmentationSpec& aug, std::size_t views, double temperature,
                     Rng& rng);

/// Partitions for the next epoch: model k is trained with the division
/// computed from the other model's losses.
struct CoDivision {
  divide::DivideResult for_a;  // from losses_b
  divide::DivideResult for_b;  // from losses_a
};
CoDivision co_divide(std::span<const double> losses_a, std::span<const double> losses_b,
                     double tau, const divide::GmmOptions& gmm = {});

struct StepLosses {
  double total = 0.0;
  double labeled = 0.0;
  double unlabeled = 0.0;
  double prior = 0.0;
};

/// One MixMatch-style update of `model` (peer only guesses labels).
/// Exposed for tests; returns the loss components.
StepLosses mixmatch_step(Model& model, const Model& peer, const num::Tensor& x_labeled,
                         const num::Tensor& onehot_labeled, std::span<const double> w_labeled,
                         const num::Tensor& x_unlabeled, const LnlConfig& cfg, num::SgdState& sgd,
                         Rng& rng);

struct EpochStats {
  double train_loss = 0.0;
  std::size_t steps = 0;
};

/// Trains both models for one epoch. divisions[k] is the partition used for
/// models[k]. Reads the models' state at entry only for co-guessing.
std::array<EpochStats, 2> dividemix_epoch(const data::LabeledDataset& ds, std::array<Model, 2>& models,
                                          const std::array<divide::DivideResult, 2>& divisions,
                                          const LnlConfig& cfg, std::array<num::SgdState, 2>& sgd,
                                          Rng& rng);

/// Exponential moving average of model predictions per sample.
struct ElrState {
  num::Tensor targets;  // N x C, rows start at 0

  ElrState() = default;
  ElrState(std::size_t n, std::size_t classes) : targets(n, classes) {}
  /// t_i <- beta * t_i + (1 - beta) * p_i for the given rows.
  void update(std::span<const std::size_t> idx, const num::Tensor& probs, double beta);
};

/// CE(p, observed) + lambda * mean log(1 - clamp(<p, t>, 0, 1 - 1e-6)) with t fixed.
num::Var elr_loss(num::Var logits, std::span<const int> observed, const num::Tensor& targets,
                  double lambda);

/// Updates state rows for idx from the current predictions, then takes one
/// SGD step on the ELR loss. Returns the loss value.
double elr_step(Model& model, const num::Tensor& x, std::span<const int> observed,
                std::span<const std::size_t> idx, ElrState& state, const LnlConfig& cfg,
                num::SgdState& sgd);

struct TrainResult {
  std::vector<Model> models;
  std::vector<metrics::MetricRow> rows;
  double peak_test_acc = 0.0;
  double final_test_acc = 0.0;
};

using EpochHook = std::function<void(const metrics::MetricRow&)>;

/// Full DivideMix phase from two warmed-up models.
TrainResult run_dividemix(const data::LabeledDataset& train, const data::LabeledDataset& test,
                          std::array<Model, 2> models, const LnlConfig& cfg, std::uint64_t seed,
                          const EpochHook& hook = {});

/// Same, starting from an existing co-division (divisions[k] is for models[k]).
TrainResult run_dividemix(const data::LabeledDataset& train, const data::LabeledDataset& test,
                          std::array<Model, 2> models, std::array<divide::DivideResult, 2> divisions,
                          const LnlConfig& cfg, std::uint64_t seed, const EpochHook& hook = {});

/// Single-network ELR training.
TrainResult run_elr(const data::LabeledDataset& train, const data::LabeledDataset& test, Model model,
                    const LnlConfig& cfg, std::uint64_t seed, const EpochHook& hook = {});

/// MixMatch with the true clean/noisy split as the division (simulation only).
TrainResult oracle_split_train(const data::LabeledDataset& train, const data::LabeledDataset& test,
                               std::array<Model, 2> models, const LnlConfig& cfg, std::uint64_t seed,
                               const EpochHook& hook = {});

/// Continued cross-entropy training (+mixup when cfg.mixup_alpha > 0).
TrainResult run_cross_entropy(const data::LabeledDataset& train, const data::LabeledDataset& test,
                              Model model, const LnlConfig& cfg, std::uint64_t seed,
                              const EpochHook& hook = {});

/// Ensemble accuracy of the mean predicted distribution.
double ensemble_accuracy(std::span<const Model> models, const data::LabeledDataset& test);

}  // namespace c2d::mixtrain
