#include "c2d/contrast.hpp"

#include <cmath>

#include "c2d/error.hpp"
#include "c2d/warmup.hpp"

namespace c2d::contrast {

using num::Tensor;
using num::Var;

const char* to_string(SslMethod m) { return m == SslMethod::SimClr ? "simclr" : "barlow"; }

SslMethod parse_ssl_method(const std::string& s) {
  if (s == "simclr") return SslMethod::SimClr;
  if (s == "barlow" || s == "barlow-twins") return SslMethod::BarlowTwins;
  throw ConfigError("unknown ssl method '" + s + "' (expected simclr|barlow)");
}

void SslConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("ssl: temperature must be > 0");
  if (!(barlow_lambda > 0.0)) throw ConfigError("ssl: barlow lambda must be > 0");
  if (epochs < 1) throw ConfigError("ssl: epochs must be positive");
  if (batch_size < 2) throw ConfigError("ssl: batch_size must be >= 2");
}

Var nt_xent_loss(Var projections, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("nt_xent_loss: temperature must be > 0");
  const Tensor& z = projections.value();
  if (z.rows() < 2 || z.rows() % 2 != 0) {
    throw ConfigError("nt_xent_loss: need 2B rows with B >= 1, got " + z.shape_str());
  }
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double s = 0.0;
    for (double v : z.row(i)) s += v * v;
    if (std::abs(std::sqrt(s) - 1.0) > 1e-6) {
      throw ConfigError("nt_xent_loss: row " + std::to_string(i) + " is not unit-norm");
    }
  }
  num::Graph& g = *projections.graph;
  const std::size_t n = z.rows();
  Var sim = num::scale(num::matmul(projections, num::transpose(projections)), 1.0 / temperature);
  // Self-similarities are removed from every denominator.
  Tensor mask(n, n);
  for (std::size_t i = 0; i < n; ++i) mask(i, i) = -1e300;
  Var lse = num::logsumexp_rows(num::add(sim, g.constant(std::move(mask))));
  std::vector<std::size_t> positive(n);
  for (std::size_t i = 0; i < n; ++i) positive[i] = i ^ 1U;
  return num::mean(num::sub(lse, num::pick(sim, positive)));
}

double nt_xent_loss(const Tensor& projections, double temperature) {
  num::Graph g;
  return nt_xent_loss(g.constant(projections), temperature).value().item();
}

Var batch_standardize(Var z, double eps) {
  if (z.value().rows() < 2) throw ConfigError("batch_standardize: need at least 2 rows");
  Var centered = num::sub(z, num::mean_cols(z));
  Var var = num::mean_cols(num::square(centered));
  return num::div(centered, num::sqrt(num::add_scalar(var, eps)));
}

Var barlow_twins_loss(Var z1, Var z2, double lambda) {
  num::require_same_shape(z1.value(), z2.value(), "barlow_twins_loss");
  const std::size_t b = z1.value().rows();
  const std::size_t p = z1.value().cols();
  if (b < 2) throw ConfigError("barlow_twins_loss: batch size must be >= 2");
  num::Graph& g = *z1.graph;
  Var c = num::scale(num::matmul(num::transpose(z1), z2), 1.0 / static_cast<double>(b));
  Tensor diag(p, p), off(p, p, lambda);
  for (std::size_t i = 0; i < p; ++i) {
    diag(i, i) = 1.0;
    off(i, i) = 0.0;
  }
  Var on_diag = num::sum(num::mul(num::square(num::sub(c, g.constant(Tensor::identity(p)))), g.constant(diag)));
  Var off_diag = num::sum(num::mul(num::square(c), g.constant(std::move(off))));
  return num::add(on_diag, off_diag);
}

double barlow_twins_loss(const Tensor& z1, const Tensor& z2, double lambda) {
  num::Graph g;
  return barlow_twins_loss(g.constant(z1), g.constant(z2), lambda).value().item();
}

namespace {

// Rows 2k and 2k+1 are the two views of sample k.
Tensor interleave(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows() * 2, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i).begin(), a.row(i).end(), out.row(2 * i).begin());
    std::copy(b.row(i).begin(), b.row(i).end(), out.row(2 * i + 1).begin());
  }
  return out;
}

}  // namespace

Model pretrain_ssl(const Tensor& features, Model model, const SslConfig& cfg,
                   const data::AugmentationSpec& aug, std::uint64_t seed,
                   std::vector<metrics::MetricRow>* log) {
  cfg.validate();
  aug.validate();
  if (features.rows() < 2) throw ConfigError("pretrain_ssl: need at least 2 samples");
  if (features.cols() != model.shape().input_dim) throw ConfigError("pretrain_ssl: feature/model dimension mismatch");

  Rng rng(seed);
  num::SgdState sgd(cfg.sgd);
  auto params = model.encoder_parameters();
  for (auto* p : model.projection_parameters()) params.push_back(p);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = permutation(features.rows(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;  // a single sample has no statistics / negatives
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor xb = num::gather_rows(features, idx);
      const Tensor v1 = data::augment_batch(xb, aug, rng);
      const Tensor v2 = data::augment_batch(xb, aug, rng);

      num::zero_grad(params);
      num::Graph g;
      try {
        Var loss;
        if (cfg.method == SslMethod::SimClr) {
          Var z = model.project(g, model.features(g, g.constant(interleave(v1, v2))));
          loss = nt_xent_loss(num::l2_normalize_rows(z), cfg.temperature);
        } else {
          Var z1 = model.project(g, model.features(g, g.constant(v1)));
          Var z2 = model.project(g, model.features(g, g.constant(v2)));
          loss = barlow_twins_loss(batch_standardize(z1), batch_standardize(z2), cfg.barlow_lambda);
        }
        g.backward(loss);
        sgd.step(params);
        total += loss.value().item();
      } catch (const NumericalError& err) {
        throw NumericalError("pretrain_ssl diverged at epoch " + std::to_string(epoch) + ": " + err.what());
      }
      ++batches;
    }
    if (log && batches > 0) {
      metrics::MetricRow row;
      row.stage = "pretrain";
      row.epoch = epoch;
      row.method = to_string(cfg.method);
      row.train_loss = total / static_cast<double>(batches);
      log->push_back(row);
    }
  }
  return model;
}

Model pretrain_supervised_proxy(const data::LabeledDataset& proxy, Model model, const ProxyConfig& cfg,
                                std::uint64_t seed, std::size_t target_dim,
                                std::vector<metrics::MetricRow>* log) {
  proxy.validate();
  if (proxy.dim() != target_dim || proxy.dim() != model.shape().input_dim) {
    throw ConfigError("pretrain_supervised_proxy: proxy dimension " + std::to_string(proxy.dim()) +
                      " does not match target dimension " + std::to_string(target_dim));
  }
  if (cfg.epochs < 1) throw ConfigError("proxy: epochs must be positive");
  Rng rng(derive_seed(seed, "proxy-train"));
  num::SgdState sgd(cfg.sgd);
  const Tensor targets = warmup::one_hot(proxy.true_labels, proxy.num_classes);
  const warmup::SupervisedEpochOptions opts{cfg.batch_size, 0.0, false};
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double loss = warmup::supervised_epoch(model, proxy.features, targets, opts, sgd, rng);
    if (log) {
      metrics::MetricRow row;
      row.stage = "pretrain";
      row.epoch = epoch;
      row.method = "proxy";
      row.train_loss = loss;
      log->push_back(row);
    }
  }
  model.reset_classifier(derive_seed(seed, "proxy-classifier-reset"));
  return model;
}

}  // namespace c2d::contrast
