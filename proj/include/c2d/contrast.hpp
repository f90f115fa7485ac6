#pragma once

#include <cstdint>
#include <vector>

#include "c2d/autodiff.hpp"
#include "c2d/data.hpp"
#include "c2d/metrics.hpp"
#include "c2d/model.hpp"
#include "c2d/sgd.hpp"

namespace c2d::contrast {

enum class SslMethod { SimClr, BarlowTwins };

const char* to_string(SslMethod m);
SslMethod parse_ssl_method(const std::string& s);

struct SslConfig {
  SslMethod method = SslMethod::SimClr;
  double temperature = 0.5;
  double barlow_lambda = 0.005;
  int epochs = 200;
  std::size_t batch_size = 128;
  num::SgdConfig sgd{0.05, 0.9, 5e-4};

  void validate() const;
};

/// NT-Xent over 2B unit rows where rows 2k and 2k+1 are views of one sample.
/// Mean over anchors of -log(exp(s_pos/t) / sum_{j != anchor} exp(s_j/t)).
num::Var nt_xent_loss(num::Var projections, double temperature);
double nt_xent_loss(const num::Tensor& projections, double temperature);

/// Per-column (z - mean) / sqrt(var + eps) using batch statistics.
num::Var batch_standardize(num::Var z, double eps = 1e-5);

/// sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2 with C = z1^T z2 / B.
/// Inputs are expected to be batch-standardized already.
num::Var barlow_twins_loss(num::Var z1, num::Var z2, double lambda);
double barlow_twins_loss(const num::Tensor& z1, const num::Tensor& z2, double lambda);

/// Trains encoder and projection head on the SSL objective. Only features
/// are passed in, so the result cannot depend on any label. Appends one
/// "pretrain" row per epoch (train_loss = mean SSL loss) to log when given.
Model pretrain_ssl(const num::Tensor& features, Model model, const SslConfig& cfg,
                   const data::AugmentationSpec& aug, std::uint64_t seed,
                   std::vector<metrics::MetricRow>* log = nullptr);

struct ProxyConfig {
  int epochs = 30;
  std::size_t batch_size = 64;
  num::SgdConfig sgd{0.05, 0.9, 5e-4};
};

/// Supervised cross-entropy pre-training on a clean proxy dataset; the
/// encoder is kept and the classifier re-initialized from seed.
Model pretrain_supervised_proxy(const data::LabeledDataset& proxy, Model model,
                                const ProxyConfig& cfg, std::uint64_t seed,
                                std::size_t target_dim,
                                std::vector<metrics::MetricRow>* log = nullptr);

}  // namespace c2d::contrast
