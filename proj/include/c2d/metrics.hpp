#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "c2d/data.hpp"
#include "c2d/model.hpp"
#include "c2d/tensor.hpp"

namespace c2d::metrics {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// One per-epoch log record. NaN marks a quantity not measured in a stage.
struct MetricRow {
  std::string stage;
  int epoch = 0;
  std::string method;
  double test_acc = kMissing;
  double train_loss = kMissing;
  double roc_auc = kMissing;
  double eff_noise_rate = kMissing;
  double labeled_frac = kMissing;
  double probe_acc = kMissing;
  std::string note;
};

/// P(score of a random noisy sample > score of a random clean one), ties
/// counted 1/2, via the Mann-Whitney rank sum with midranks.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> is_noisy);

/// Share of noisy samples among labeled_idx.
double effective_noise_rate(std::span<const std::size_t> labeled_idx,
                            std::span<const std::uint8_t> noise_flags);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const num::Tensor& scores, std::span<const int> labels);

struct ProbeConfig {
  double l2 = 1e-4;
  double grad_tol = 1e-5;
  std::size_t max_iter = 5000;
};

struct ProbeResult {
  double test_acc = 0.0;
  double train_acc = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  double grad_norm = 0.0;
};

/// Multinomial logistic regression on frozen features (z-scored with train
/// statistics), fitted by accelerated full-batch gradient descent.
ProbeResult linear_probe(const num::Tensor& train_features, std::span<const int> train_labels,
                         const num::Tensor& test_features, std::span<const int> test_labels,
                         int num_classes, const ProbeConfig& cfg = {});

struct LossHistogram {
  std::vector<double> bin_lo;
  std::vector<double> bin_hi;
  std::vector<std::size_t> clean;
  std::vector<std::size_t> noisy;

  /// bin_lo,bin_hi,clean_count,noisy_count
  std::string to_csv() const;
};

/// Equal-width bins over [min, max]; the maximum lands in the last bin.
LossHistogram loss_histogram(std::span<const double> losses, std::span<const std::uint8_t> noise_flags,
                             std::size_t bins);

/// index,true_label,observed_label,feat_0..feat_{F-1} of evaluation-mode encoder outputs.
std::string encode_features(const data::LabeledDataset& ds, const Model& model);
void export_features(const data::LabeledDataset& ds, const Model& model,
                     const std::filesystem::path& path);

}  // namespace c2d::metrics
