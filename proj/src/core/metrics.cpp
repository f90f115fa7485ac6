#include "c2d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "c2d/error.hpp"
#include "c2d/io.hpp"

namespace c2d::metrics {

using num::Tensor;

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> is_noisy) {
  if (scores.size() != is_noisy.size()) throw ConfigError("roc_auc: scores/flags length mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (auto f : is_noisy) n_pos += f ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ConfigError("roc_auc: need at least one noisy and one clean sample");
  for (double s : scores)
    if (std::isnan(s)) throw NumericalError("roc_auc: NaN score");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the midrank is an integer: (first + last) for 1-based positions.
  std::int64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const auto twice_mid = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (is_noisy[order[k]]) twice_rank_sum += twice_mid;
    i = j + 1;
  }
  const auto np = static_cast<std::int64_t>(n_pos);
  const std::int64_t twice_u = twice_rank_sum - np * (np + 1);
  return (static_cast<double>(twice_u) / 2.0) / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double effective_noise_rate(std::span<const std::size_t> labeled_idx,
                            std::span<const std::uint8_t> noise_flags) {
  if (labeled_idx.empty()) throw ConfigError("effective_noise_rate: labeled set is empty");
  std::size_t noisy = 0;
  for (std::size_t i : labeled_idx) {
    if (i >= noise_flags.size()) throw ConfigError("effective_noise_rate: index out of range");
    noisy += noise_flags[i] ? 1 : 0;
  }
  return static_cast<double>(noisy) / static_cast<double>(labeled_idx.size());
}

double accuracy(const Tensor& scores, std::span<const int> labels) {
  if (scores.rows() != labels.size()) throw ConfigError("accuracy: row/label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto r = scores.row(i);
    const auto best = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    hits += best == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace {

struct Standardizer {
  std::vector<double> mean, inv_std;

  explicit Standardizer(const Tensor& x) : mean(x.cols(), 0.0), inv_std(x.cols(), 0.0) {
    const double n = static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += x(i, j) / n;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double v = 0.0;
      for (std::size_t i = 0; i < x.rows(); ++i) v += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
      const double sd = std::sqrt(v / n);
      inv_std[j] = sd > 1e-12 ? 1.0 / sd : 0.0;  // constant (e.g. dead ReLU) columns drop out
    }
  }

  // Appends a constant 1 column for the bias.
  Tensor apply(const Tensor& x) const {
    Tensor out(x.rows(), x.cols() + 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean[j]) * inv_std[j];
      out(i, x.cols()) = 1.0;
    }
    return out;
  }
};

// Largest eigenvalue of X^T X / n by power iteration.
double top_eigenvalue(const Tensor& x) {
  const std::size_t d = x.cols();
  Tensor v(d, 1, 1.0 / std::sqrt(static_cast<double>(d)));
  double lambda = 1.0;
  for (int it = 0; it < 100; ++it) {
    Tensor w = num::matmul_tn(x, num::matmul(x, v));
    double norm = 0.0;
    for (double& e : w.data()) {
      e /= static_cast<double>(x.rows());
      norm += e * e;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) return 1.0;
    const double prev = lambda;
    lambda = norm;
    for (std::size_t i = 0; i < d; ++i) v(i, 0) = w(i, 0) / norm;
    if (std::abs(lambda - prev) < 1e-6 * lambda) break;
  }
  return lambda;
}

// Mean cross-entropy gradient plus L2 on the weights (not the bias row).
double probe_gradient(const Tensor& x, std::span<const int> y, const Tensor& w, double l2, Tensor& grad) {
  Tensor p = num::softmax_rows(num::matmul(x, w));
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) p(i, static_cast<std::size_t>(y[i])) -= 1.0;
  for (double& e : p.data()) e *= inv_n;
  grad = num::matmul_tn(x, p);
  const std::size_t bias_row = w.rows() - 1;
  double sq = 0.0;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      if (i != bias_row) grad(i, j) += l2 * w(i, j);
      sq += grad(i, j) * grad(i, j);
    }
  return std::sqrt(sq);
}

}  // namespace

ProbeResult linear_probe(const Tensor& train_features, std::span<const int> train_labels,
                         const Tensor& test_features, std::span<const int> test_labels,
                         int num_classes, const ProbeConfig& cfg) {
  if (train_features.rows() != train_labels.size() || test_features.rows() != test_labels.size()) {
    throw ConfigError("linear_probe: feature/label count mismatch");
  }
  if (train_features.rows() == 0 || train_features.cols() != test_features.cols()) {
    throw ConfigError("linear_probe: incompatible feature matrices " + train_features.shape_str() +
                      " vs " + test_features.shape_str());
  }
  for (int y : train_labels)
    if (y < 0 || y >= num_classes) throw ConfigError("linear_probe: label out of range");

  const Standardizer stdz(train_features);
  const Tensor x = stdz.apply(train_features);
  const Tensor xt = stdz.apply(test_features);
  const auto c = static_cast<std::size_t>(num_classes);

  // Softmax cross-entropy Hessian is bounded by 0.5 * X^T X / n.
  const double lipschitz = 0.5 * top_eigenvalue(x) + cfg.l2;
  const double step = 1.0 / lipschitz;

  // Nesterov-accelerated gradient descent with adaptive restart. Convergence
  // is tested at the look-ahead point, which coincides with the iterate at a
  // fixed point.
  ProbeResult res;
  Tensor w(x.cols(), c), look(x.cols(), c), grad;
  double t = 1.0;
  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    res.grad_norm = probe_gradient(x, train_labels, look, cfg.l2, grad);
    res.iterations = it;
    if (res.grad_norm < cfg.grad_tol) {
      w = look;
      res.converged = true;
      break;
    }
    Tensor w_next = look;
    for (std::size_t k = 0; k < w_next.size(); ++k) w_next.data()[k] -= step * grad.data()[k];
    double uphill = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) uphill += grad.data()[k] * (w_next.data()[k] - w.data()[k]);
    if (uphill > 0.0) {
      t = 1.0;
      w = w_next;
      look = w;
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double beta = (t - 1.0) / t_next;
    look = w_next;
    for (std::size_t k = 0; k < look.size(); ++k) look.data()[k] += beta * (w_next.data()[k] - w.data()[k]);
    w = std::move(w_next);
    t = t_next;
  }
  res.train_acc = accuracy(num::matmul(x, w), train_labels);
  res.test_acc = test_labels.empty() ? 0.0 : accuracy(num::matmul(xt, w), test_labels);
  return res;
}

std::string LossHistogram::to_csv() const {
  std::string out = "bin_lo,bin_hi,clean_count,noisy_count\n";
  for (std::size_t b = 0; b < clean.size(); ++b) {
    out += io::format_double(bin_lo[b]) + "," + io::format_double(bin_hi[b]) + "," +
           std::to_string(clean[b]) + "," + std::to_string(noisy[b]) + "\n";
  }
  return out;
}

LossHistogram loss_histogram(std::span<const double> losses, std::span<const std::uint8_t> noise_flags,
                             std::size_t bins) {
  if (bins < 2) throw ConfigError("loss_histogram: bins must be >= 2");
  if (losses.size() != noise_flags.size()) throw ConfigError("loss_histogram: length mismatch");
  LossHistogram h;
  h.clean.assign(bins, 0);
  h.noisy.assign(bins, 0);
  if (losses.empty()) return h;
  const auto [mn, mx] = std::minmax_element(losses.begin(), losses.end());
  const double lo = *mn;
  const double width = (*mx - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    h.bin_lo.push_back(lo + width * static_cast<double>(b));
    h.bin_hi.push_back(b + 1 == bins ? *mx : lo + width * static_cast<double>(b + 1));
  }
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((losses[i] - lo) / width) : 0;
    b = std::min(b, bins - 1);
    (noise_flags[i] ? h.noisy : h.clean)[b] += 1;
  }
  return h;
}

std::string encode_features(const data::LabeledDataset& ds, const Model& model) {
  const Tensor f = model.features(ds.features);
  std::string out = "index,true_label,observed_label";
  for (std::size_t j = 0; j < f.cols(); ++j) out += ",feat_" + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < f.rows(); ++i) {
    out += std::to_string(i) + "," + std::to_string(ds.true_labels[i]) + "," +
           std::to_string(ds.observed_labels[i]);
    for (double v : f.row(i)) out += "," + io::format_double(v);
    out += "\n";
  }
  return out;
}

void export_features(const data::LabeledDataset& ds, const Model& model,
                     const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_features(ds, model));
}

}  // namespace c2d::metrics
