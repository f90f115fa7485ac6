#pragma once

#include <array>
#include <span>
#include <vector>

namespace c2d::divide {

/// Two-component 1-D Gaussian mixture; component 0 has the lower mean.
struct GmmFit {
  std::array<double, 2> means{};
  std::array<double, 2> variances{};
  std::array<double, 2> weights{};
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Log-likelihood at every E-step, in order.
  std::vector<double> ll_history;
};

struct GmmOptions {
  int max_iter = 200;
  double tol = 1e-7;
  double variance_floor = 1e-6;
};

struct DivideResult {
  std::vector<double> w;  // clean posterior per sample
  double tau = 0.5;
  std::vector<std::size_t> labeled_idx;
  std::vector<std::size_t> unlabeled_idx;

  double labeled_fraction() const;
};

/// Min-max scaling to [0,1]. Throws NumericalError("degenerate loss vector")
/// when all values are equal.
std::vector<double> normalize_losses(std::span<const double> losses);

/// EM started from a 2-means clustering seeded at the 25th/75th
/// percentiles (cluster means, variances and sizes). Stops when the
/// log-likelihood improves by less than tol. Throws NumericalError if the
/// log-likelihood ever decreases (beyond round-off) or the input is not finite.
GmmFit fit_gmm2(std::span<const double> values, const GmmOptions& opts = {});

/// Posterior responsibility of component 0.
std::vector<double> posterior_clean(const GmmFit& fit, std::span<const double> values);

/// log(p(noisy component | v) / p(clean component | v)); monotone in
/// 1 - w without saturating at 0 or 1.
std::vector<double> noisy_log_odds(const GmmFit& fit, std::span<const double> values);

/// labeled = { i : w_i >= tau }. Throws NumericalError when nothing is labeled.
DivideResult split(std::span<const double> w, double tau);

/// normalize_losses -> fit_gmm2 -> posterior_clean -> split.
DivideResult divide_losses(std::span<const double> losses, double tau, const GmmOptions& opts = {});

}  // namespace c2d::divide
