#include "c2d/divide.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "c2d/error.hpp"

namespace c2d::divide {

namespace {

double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

double percentile(std::vector<double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

double DivideResult::labeled_fraction() const {
  return w.empty() ? 0.0 : static_cast<double>(labeled_idx.size()) / static_cast<double>(w.size());
}

std::vector<double> normalize_losses(std::span<const double> losses) {
  if (losses.size() < 2) throw NumericalError("normalize_losses: need at least 2 values");
  const auto [mn, mx] = std::minmax_element(losses.begin(), losses.end());
  const double lo = *mn, hi = *mx;
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw NumericalError("normalize_losses: non-finite loss");
  if (!(hi > lo)) throw NumericalError("degenerate loss vector");
  std::vector<double> out(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) out[i] = (losses[i] - lo) / (hi - lo);
  return out;
}

GmmFit fit_gmm2(std::span<const double> values, const GmmOptions& opts) {
  const std::size_t n = values.size();
  if (n < 4) throw NumericalError("fit_gmm2: need at least 4 values");
  for (double v : values)
    if (!std::isfinite(v)) throw NumericalError("fit_gmm2: non-finite input");
  if (opts.max_iter < 1 || !(opts.tol > 0.0) || !(opts.variance_floor > 0.0)) {
    throw ConfigError("fit_gmm2: invalid options");
  }

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double mean_all = 0.0;
  for (double v : values) mean_all += v;
  mean_all /= static_cast<double>(n);
  double var_all = 0.0;
  for (double v : values) var_all += (v - mean_all) * (v - mean_all);
  var_all = std::max(var_all / static_cast<double>(n), opts.variance_floor);

  GmmFit fit;
  fit.means = {percentile(sorted, 0.25), percentile(sorted, 0.75)};
  fit.variances = {var_all, var_all};
  fit.weights = {0.5, 0.5};
  // 2-means from the percentile seeds; the clusters give the EM start.
  if (fit.means[0] < fit.means[1]) {
    std::size_t split_at = 0;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (fit.means[0] + fit.means[1]);
      const auto cut = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), mid) - sorted.begin());
      if (cut == 0 || cut == n) break;
      double lo = 0.0, hi = 0.0;
      for (std::size_t i = 0; i < cut; ++i) lo += sorted[i];
      for (std::size_t i = cut; i < n; ++i) hi += sorted[i];
      fit.means = {lo / static_cast<double>(cut), hi / static_cast<double>(n - cut)};
      if (cut == split_at) break;
      split_at = cut;
    }
    if (split_at > 0 && split_at < n) {
      double v0 = 0.0, v1 = 0.0;
      for (std::size_t i = 0; i < split_at; ++i) v0 += (sorted[i] - fit.means[0]) * (sorted[i] - fit.means[0]);
      for (std::size_t i = split_at; i < n; ++i) v1 += (sorted[i] - fit.means[1]) * (sorted[i] - fit.means[1]);
      fit.variances = {std::max(v0 / static_cast<double>(split_at), opts.variance_floor),
                       std::max(v1 / static_cast<double>(n - split_at), opts.variance_floor)};
      const double w0 = static_cast<double>(split_at) / static_cast<double>(n);
      fit.weights = {w0, 1.0 - w0};
    }
  }

  std::vector<double> resp(n);  // responsibility of component 0
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 1; it <= opts.max_iter; ++it) {
    // E-step with the current parameters; its log-likelihood is the one
    // EM guarantees to be non-decreasing.
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double l0 = std::log(fit.weights[0]) + log_normal_pdf(values[i], fit.means[0], fit.variances[0]);
      const double l1 = std::log(fit.weights[1]) + log_normal_pdf(values[i], fit.means[1], fit.variances[1]);
      const double m = std::max(l0, l1);
      const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
      ll += lse;
      resp[i] = std::exp(l0 - lse);
    }
    fit.ll_history.push_back(ll);
    fit.iterations = it;
    if (ll < prev_ll - 1e-9 * (1.0 + std::abs(prev_ll))) {
      throw NumericalError("fit_gmm2: log-likelihood decreased at iteration " + std::to_string(it));
    }
    if (ll - prev_ll < opts.tol) {
      fit.converged = true;
      fit.log_likelihood = ll;
      break;
    }
    prev_ll = ll;
    fit.log_likelihood = ll;

    // M-step.
    double n0 = 0.0, s0 = 0.0, s1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      n0 += resp[i];
      s0 += resp[i] * values[i];
      s1 += (1.0 - resp[i]) * values[i];
    }
    const double n1 = static_cast<double>(n) - n0;
    // A component that lost all mass keeps its previous location.
    const double tiny = 1e-12 * static_cast<double>(n);
    if (n0 > tiny) fit.means[0] = s0 / n0;
    if (n1 > tiny) fit.means[1] = s1 / n1;
    double v0 = 0.0, v1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d0 = values[i] - fit.means[0];
      const double d1 = values[i] - fit.means[1];
      v0 += resp[i] * d0 * d0;
      v1 += (1.0 - resp[i]) * d1 * d1;
    }
    if (n0 > tiny) fit.variances[0] = std::max(v0 / n0, opts.variance_floor);
    if (n1 > tiny) fit.variances[1] = std::max(v1 / n1, opts.variance_floor);
    fit.weights[0] = std::clamp(n0 / static_cast<double>(n), 1e-12, 1.0 - 1e-12);
    fit.weights[1] = 1.0 - fit.weights[0];
  }

  if (fit.means[0] > fit.means[1]) {
    std::swap(fit.means[0], fit.means[1]);
    std::swap(fit.variances[0], fit.variances[1]);
    std::swap(fit.weights[0], fit.weights[1]);
  }
  return fit;
}

std::vector<double> posterior_clean(const GmmFit& fit, std::span<const double> values) {
  std::vector<double> w(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double l0 = std::log(fit.weights[0]) + log_normal_pdf(values[i], fit.means[0], fit.variances[0]);
    const double l1 = std::log(fit.weights[1]) + log_normal_pdf(values[i], fit.means[1], fit.variances[1]);
    w[i] = 1.0 / (1.0 + std::exp(l1 - l0));
  }
  return w;
}

std::vector<double> noisy_log_odds(const GmmFit& fit, std::span<const double> values) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double l0 = std::log(fit.weights[0]) + log_normal_pdf(values[i], fit.means[0], fit.variances[0]);
    const double l1 = std::log(fit.weights[1]) + log_normal_pdf(values[i], fit.means[1], fit.variances[1]);
    out[i] = l1 - l0;
  }
  return out;
}

DivideResult split(std::span<const double> w, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("split: tau must lie in (0,1)");
  DivideResult r;
  r.tau = tau;
  r.w.assign(w.begin(), w.end());
  for (std::size_t i = 0; i < w.size(); ++i) {
    (w[i] >= tau ? r.labeled_idx : r.unlabeled_idx).push_back(i);
  }
  if (r.labeled_idx.empty()) {
    throw NumericalError("split: labeled set is empty at tau=" + std::to_string(tau) +
                         "; lower tau");
  }
  return r;
}

DivideResult divide_losses(std::span<const double> losses, double tau, const GmmOptions& opts) {
  const auto norm = normalize_losses(losses);
  const auto fit = fit_gmm2(norm, opts);
  return split(posterior_clean(fit, norm), tau);
}

}  // namespace c2d::divide
