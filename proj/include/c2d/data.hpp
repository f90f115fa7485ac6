#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "c2d/random.hpp"
#include "c2d/tensor.hpp"

namespace c2d::data {

/// Features with true and observed labels. noise_flags[i] is
/// observed_labels[i] != true_labels[i].
struct LabeledDataset {
  num::Tensor features;
  std::vector<int> true_labels;
  std::vector<int> observed_labels;
  std::vector<std::uint8_t> noise_flags;
  int num_classes = 0;

  std::size_t size() const noexcept { return true_labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  double noisy_fraction() const;
  void recompute_flags();
  /// Checks every structural invariant; throws ConfigError.
  void validate() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

enum class NoiseKind { Symmetric, Asymmetric };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::Symmetric;
  double rate = 0.0;
  /// Asymmetric only; empty means cyclic c -> (c+1) mod C.
  std::vector<int> flip_map;
};

struct AugmentationSpec {
  double jitter_sigma = 0.5;
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double mask_fraction = 0.2;

  void validate() const;
};

/// Class means with pairwise distance >= separation, deterministic in seed.
num::Tensor blob_means(int num_classes, std::size_t dim, double separation, std::uint64_t seed);

/// per_class isotropic Gaussian samples around each row of means, in class order.
LabeledDataset sample_blobs(const num::Tensor& means, std::size_t per_class, double sigma,
                            std::uint64_t seed);

LabeledDataset gen_gaussian_blobs(int num_classes, std::size_t per_class, std::size_t dim,
                                  double separation, std::uint64_t seed, double sigma = 1.0);

/// Exactly round(rate*N) samples, chosen without replacement, get a label
/// redrawn uniformly over all classes (the true label included).
LabeledDataset inject_symmetric_noise(const LabeledDataset& ds, double rate, std::uint64_t seed);

/// Each sample independently with probability rate gets flip_map[true label].
LabeledDataset inject_asymmetric_noise(const LabeledDataset& ds, double rate,
                                       std::span<const int> flip_map, std::uint64_t seed);

std::vector<int> cyclic_flip_map(int num_classes);
LabeledDataset inject_noise(const LabeledDataset& ds, const NoiseSpec& spec, std::uint64_t seed);

/// Rows of ds at idx, in that order.
LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> idx);

/// One augmented view: mask(scale(x + jitter)).
void augment_into(std::span<const double> x, std::span<double> out, const AugmentationSpec& spec,
                  Rng& rng);
std::pair<std::vector<double>, std::vector<double>> make_views(std::span<const double> x,
                                                               const AugmentationSpec& spec,
                                                               std::uint64_t seed);
/// One independent view per row.
num::Tensor augment_batch(const num::Tensor& x, const AugmentationSpec& spec, Rng& rng);

// CSV with a leading "# classes=C" line and header
// feat_0,...,feat_{D-1},true_label,observed_label.
void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);
std::string encode_dataset(const LabeledDataset& ds);
LabeledDataset decode_dataset(const std::vector<std::string>& lines, const std::string& origin);

struct BenchmarkSpec {
  int num_classes = 8;
  std::size_t train_per_class = 250;
  std::size_t test_per_class = 100;
  std::size_t dim = 16;
  double separation = 5.0;
  double sigma = 1.0;
  /// Norm of the per-class mean displacement for the proxy domain.
  double proxy_shift = 2.0;
  std::size_t proxy_per_class = 250;
};

struct Benchmark {
  LabeledDataset train;  // clean; noise is injected separately
  LabeledDataset test;
  LabeledDataset proxy;
};

Benchmark make_benchmark(const BenchmarkSpec& spec, std::uint64_t seed);

}  // namespace c2d::data
