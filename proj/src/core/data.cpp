#include "c2d/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "c2d/error.hpp"
#include "c2d/io.hpp"

namespace c2d::data {

using num::Tensor;

double LabeledDataset::noisy_fraction() const {
  if (noise_flags.empty()) return 0.0;
  std::size_t n = 0;
  for (auto f : noise_flags) n += f ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(noise_flags.size());
}

void LabeledDataset::recompute_flags() {
  noise_flags.resize(true_labels.size());
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    noise_flags[i] = true_labels[i] != observed_labels[i] ? 1 : 0;
  }
}

void LabeledDataset::validate() const {
  if (num_classes < 2) throw ConfigError("dataset: num_classes must be >= 2");
  const std::size_t n = true_labels.size();
  if (features.rows() != n || observed_labels.size() != n || noise_flags.size() != n) {
    throw ConfigError("dataset: inconsistent sample counts");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (true_labels[i] < 0 || true_labels[i] >= num_classes || observed_labels[i] < 0 ||
        observed_labels[i] >= num_classes) {
      throw ConfigError("dataset: label out of range at sample " + std::to_string(i));
    }
    if ((noise_flags[i] != 0) != (true_labels[i] != observed_labels[i])) {
      throw ConfigError("dataset: noise flag inconsistent at sample " + std::to_string(i));
    }
  }
}

void AugmentationSpec::validate() const {
  if (!(jitter_sigma >= 0.0)) throw ConfigError("augmentation: jitter_sigma must be >= 0");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) {
    throw ConfigError("augmentation: need 0 < scale_lo <= scale_hi");
  }
  if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) {
    throw ConfigError("augmentation: mask_fraction must lie in [0,1)");
  }
}

namespace {

// Columns of a random orthogonal matrix (Gram-Schmidt on Gaussian draws).
Tensor random_orthonormal_columns(std::size_t dim, std::size_t count, Rng& rng) {
  Tensor q(dim, count);
  for (std::size_t c = 0; c < count; ++c) {
    while (true) {
      std::vector<double> v(dim);
      for (double& x : v) x = normal(rng);
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dot += v[i] * q(i, p);
        for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * q(i, p);
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-8) continue;
      for (std::size_t i = 0; i < dim; ++i) q(i, c) = v[i] / norm;
      break;
    }
  }
  return q;
}

double min_pairwise_distance(const Tensor& means) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < means.rows(); ++a)
    for (std::size_t b = a + 1; b < means.rows(); ++b) {
      double d = 0.0;
      for (std::size_t j = 0; j < means.cols(); ++j) {
        const double t = means(a, j) - means(b, j);
        d += t * t;
      }
      best = std::min(best, std::sqrt(d));
    }
  return best;
}

}  // namespace

Tensor blob_means(int num_classes, std::size_t dim, double separation, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("gen_gaussian_blobs: num_classes must be >= 2");
  if (dim == 0) throw ConfigError("gen_gaussian_blobs: dim must be >= 1");
  if (!(separation > 0.0)) throw ConfigError("gen_gaussian_blobs: separation must be > 0");
  Rng rng(seed);
  const auto c = static_cast<std::size_t>(num_classes);
  Tensor means(c, dim);
  if (c <= dim) {
    // Scaled orthonormal directions: every pair sits exactly `separation` apart.
    const Tensor q = random_orthonormal_columns(dim, c, rng);
    const double r = separation / std::sqrt(2.0);
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t j = 0; j < dim; ++j) means(k, j) = r * q(j, k);
    return means;
  }
  for (double spread = separation;; spread *= 1.25) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      for (double& v : means.data()) v = normal(rng, 0.0, spread);
      if (min_pairwise_distance(means) >= separation) return means;
    }
  }
}

LabeledDataset sample_blobs(const Tensor& means, std::size_t per_class, double sigma,
                            std::uint64_t seed) {
  if (per_class < 1) throw ConfigError("gen_gaussian_blobs: per_class must be >= 1");
  if (!(sigma >= 0.0)) throw ConfigError("gen_gaussian_blobs: sigma must be >= 0");
  Rng rng(seed);
  const std::size_t c = means.rows();
  const std::size_t dim = means.cols();
  LabeledDataset ds;
  ds.num_classes = static_cast<int>(c);
  ds.features = Tensor(c * per_class, dim);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t s = 0; s < per_class; ++s) {
      const std::size_t i = k * per_class + s;
      for (std::size_t j = 0; j < dim; ++j) ds.features(i, j) = means(k, j) + normal(rng, 0.0, sigma);
      ds.true_labels.push_back(static_cast<int>(k));
    }
  }
  ds.observed_labels = ds.true_labels;
  ds.noise_flags.assign(ds.size(), 0);
  return ds;
}

LabeledDataset gen_gaussian_blobs(int num_classes, std::size_t per_class, std::size_t dim,
                                  double separation, std::uint64_t seed, double sigma) {
  const Tensor means = blob_means(num_classes, dim, separation, derive_seed(seed, "blob-means"));
  return sample_blobs(means, per_class, sigma, derive_seed(seed, "blob-samples"));
}

LabeledDataset inject_symmetric_noise(const LabeledDataset& ds, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("symmetric noise rate must lie in [0,1]");
  LabeledDataset out = ds;
  Rng rng(seed);
  const std::size_t n = ds.size();
  const auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  const auto order = permutation(n, rng);
  std::uniform_int_distribution<int> label(0, ds.num_classes - 1);
  for (std::size_t k = 0; k < count; ++k) out.observed_labels[order[k]] = label(rng);
  out.recompute_flags();
  return out;
}

std::vector<int> cyclic_flip_map(int num_classes) {
  std::vector<int> m(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) m[static_cast<std::size_t>(c)] = (c + 1) % num_classes;
  return m;
}

LabeledDataset inject_asymmetric_noise(const LabeledDataset& ds, double rate,
                                       std::span<const int> flip_map, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("asymmetric noise rate must lie in [0,1]");
  if (flip_map.size() != static_cast<std::size_t>(ds.num_classes)) {
    throw ConfigError("flip_map must have one entry per class");
  }
  std::vector<bool> used(flip_map.size(), false);
  for (std::size_t c = 0; c < flip_map.size(); ++c) {
    const int t = flip_map[c];
    if (t < 0 || t >= ds.num_classes) throw ConfigError("flip_map target out of range");
    if (static_cast<std::size_t>(t) == c) {
      throw ConfigError("flip_map maps class " + std::to_string(c) + " to itself");
    }
    if (used[static_cast<std::size_t>(t)]) {
      throw ConfigError("flip_map targets class " + std::to_string(t) + " twice");
    }
    used[static_cast<std::size_t>(t)] = true;
  }
  LabeledDataset out = ds;
  Rng rng(seed);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (uniform01(rng) < rate) {
      out.observed_labels[i] = flip_map[static_cast<std::size_t>(ds.true_labels[i])];
    }
  }
  out.recompute_flags();
  return out;
}

LabeledDataset inject_noise(const LabeledDataset& ds, const NoiseSpec& spec, std::uint64_t seed) {
  if (spec.kind == NoiseKind::Symmetric) return inject_symmetric_noise(ds, spec.rate, seed);
  const auto map = spec.flip_map.empty() ? cyclic_flip_map(ds.num_classes) : spec.flip_map;
  return inject_asymmetric_noise(ds, spec.rate, map, seed);
}

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> idx) {
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  out.features = num::gather_rows(ds.features, idx);
  for (std::size_t i : idx) {
    out.true_labels.push_back(ds.true_labels[i]);
    out.observed_labels.push_back(ds.observed_labels[i]);
    out.noise_flags.push_back(ds.noise_flags[i]);
  }
  return out;
}

void augment_into(std::span<const double> x, std::span<double> out, const AugmentationSpec& spec,
                  Rng& rng) {
  const double scale =
      spec.scale_hi > spec.scale_lo
          ? std::uniform_real_distribution<double>(spec.scale_lo, spec.scale_hi)(rng)
          : spec.scale_lo;
  for (std::size_t j = 0; j < x.size(); ++j) {
    double v = x[j];
    if (spec.jitter_sigma > 0.0) v += normal(rng, 0.0, spec.jitter_sigma);
    v *= scale;
    if (spec.mask_fraction > 0.0 && uniform01(rng) < spec.mask_fraction) v = 0.0;
    out[j] = v;
  }
}

std::pair<std::vector<double>, std::vector<double>> make_views(std::span<const double> x,
                                                               const AugmentationSpec& spec,
                                                               std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<double> a(x.size()), b(x.size());
  augment_into(x, a, spec, rng);
  augment_into(x, b, spec, rng);
  return {std::move(a), std::move(b)};
}

Tensor augment_batch(const Tensor& x, const AugmentationSpec& spec, Rng& rng) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) augment_into(x.row(i), out.row(i), spec, rng);
  return out;
}

std::string encode_dataset(const LabeledDataset& ds) {
  ds.validate();
  std::string out = "# classes=" + std::to_string(ds.num_classes) + "\n";
  for (std::size_t j = 0; j < ds.dim(); ++j) out += "feat_" + std::to_string(j) + ",";
  out += "true_label,observed_label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features.row(i)) out += io::format_double(v) + ",";
    out += std::to_string(ds.true_labels[i]) + "," + std::to_string(ds.observed_labels[i]) + "\n";
  }
  return out;
}

LabeledDataset decode_dataset(const std::vector<std::string>& lines, const std::string& origin) {
  auto fail = [&](std::size_t line, const std::string& msg) -> IoError {
    return IoError(origin + ":" + std::to_string(line) + ": " + msg);
  };
  if (lines.empty()) throw fail(1, "empty dataset file");
  const std::string_view meta = io::trim(lines[0]);
  constexpr std::string_view kMeta = "# classes=";
  if (meta.substr(0, kMeta.size()) != kMeta) throw fail(1, "expected '# classes=C' metadata line");
  const long long classes = io::parse_int(meta.substr(kMeta.size()), origin + ":1");
  if (classes < 2) throw fail(1, "classes must be >= 2");
  if (lines.size() < 2) throw fail(2, "missing header");

  const auto header = io::split(io::trim(lines[1]), ',');
  if (header.size() < 3 || header[header.size() - 2] != "true_label" || header.back() != "observed_label") {
    throw fail(2, "header must end with true_label,observed_label");
  }
  const std::size_t dim = header.size() - 2;
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[j] != "feat_" + std::to_string(j)) throw fail(2, "expected column feat_" + std::to_string(j));
  }

  LabeledDataset ds;
  ds.num_classes = static_cast<int>(classes);
  std::vector<double> feats;
  for (std::size_t ln = 2; ln < lines.size(); ++ln) {
    const std::size_t line_no = ln + 1;
    const auto row = io::trim(lines[ln]);
    if (row.empty()) continue;
    const auto cells = io::split(row, ',');
    if (cells.size() != dim + 2) {
      throw fail(line_no, "expected " + std::to_string(dim + 2) + " fields, found " +
                              std::to_string(cells.size()));
    }
    const std::string ctx = origin + ":" + std::to_string(line_no);
    for (std::size_t j = 0; j < dim; ++j) feats.push_back(io::parse_double(cells[j], ctx));
    const long long t = io::parse_int(cells[dim], ctx);
    const long long o = io::parse_int(cells[dim + 1], ctx);
    if (t < 0 || t >= classes || o < 0 || o >= classes) {
      throw fail(line_no, "class index out of range [0," + std::to_string(classes) + ")");
    }
    ds.true_labels.push_back(static_cast<int>(t));
    ds.observed_labels.push_back(static_cast<int>(o));
  }
  ds.features = Tensor(ds.true_labels.size(), dim, std::move(feats));
  ds.recompute_flags();
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_dataset(ds));
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(io::read_lines(path), path.string());
}

Benchmark make_benchmark(const BenchmarkSpec& spec, std::uint64_t seed) {
  const Tensor means = blob_means(spec.num_classes, spec.dim, spec.separation, derive_seed(seed, "blob-means"));
  Benchmark b;
  b.train = sample_blobs(means, spec.train_per_class, spec.sigma, derive_seed(seed, "train"));
  b.test = sample_blobs(means, spec.test_per_class, spec.sigma, derive_seed(seed, "test"));

  // Proxy domain: each class mean displaced by a random vector of norm proxy_shift.
  Rng rng(derive_seed(seed, "proxy-shift"));
  Tensor shifted = means;
  for (std::size_t k = 0; k < shifted.rows(); ++k) {
    std::vector<double> d(spec.dim);
    double norm = 0.0;
    for (double& v : d) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < spec.dim; ++j) shifted(k, j) += spec.proxy_shift * d[j] / norm;
  }
  b.proxy = sample_blobs(shifted, spec.proxy_per_class, spec.sigma, derive_seed(seed, "proxy"));
  return b;
}

}  // namespace c2d::data
