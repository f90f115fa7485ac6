#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "c2d/autodiff.hpp"
#include "c2d/random.hpp"

namespace c2d {

struct ModelShape {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t feature_dim = 32;
  std::vector<std::size_t> proj_hidden{};
  std::size_t proj_dim = 16;
  std::size_t num_classes = 8;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// y = x W + b with W stored in_dim x out_dim.
struct Linear {
  num::Parameter weight;
  num::Parameter bias;

  Linear() = default;
  Linear(std::string name, std::size_t in_dim, std::size_t out_dim, Rng& rng);

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }
  num::Var forward(num::Graph& g, num::Var x);
  num::Tensor forward(const num::Tensor& x) const;
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void reset(Rng& rng);
};

/// Linear layers with ReLU between them; relu_output also rectifies the last.
struct Mlp {
  std::vector<Linear> layers;
  bool relu_output = false;

  Mlp() = default;
  Mlp(const std::string& name, std::vector<std::size_t> dims, bool relu_output, Rng& rng);

  num::Var forward(num::Graph& g, num::Var x);
  num::Tensor forward(const num::Tensor& x) const;
  void collect(std::vector<num::Parameter*>& out);
  void collect(std::vector<const num::Parameter*>& out) const;
};

/// Encoder, projection head and linear classifier sharing the feature space.
class Model {
 public:
  Model() = default;
  Model(const ModelShape& shape, std::uint64_t seed);

  const ModelShape& shape() const noexcept { return shape_; }

  num::Var features(num::Graph& g, num::Var x) { return encoder_.forward(g, x); }
  num::Var project(num::Graph& g, num::Var feats) { return projection_.forward(g, feats); }
  num::Var logits(num::Graph& g, num::Var feats) { return classifier_.forward(g, feats); }

  // Evaluation-mode forward passes (no graph).
  num::Tensor features(const num::Tensor& x) const { return encoder_.forward(x); }
  num::Tensor logits(const num::Tensor& x) const { return classifier_.forward(encoder_.forward(x)); }
  num::Tensor probabilities(const num::Tensor& x) const;

  std::vector<num::Parameter*> encoder_parameters();
  std::vector<num::Parameter*> projection_parameters();
  std::vector<num::Parameter*> classifier_parameters();
  std::vector<num::Parameter*> parameters();
  std::vector<const num::Parameter*> parameters() const;

  const Mlp& encoder() const noexcept { return encoder_; }
  const Linear& classifier() const noexcept { return classifier_; }

  void reset_classifier(std::uint64_t seed);
  /// Copies encoder weights from another model of identical encoder shape.
  void copy_encoder_from(const Model& other);

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);
  static Model from_parameters(std::vector<num::Parameter> params);

 private:
  ModelShape shape_;
  Mlp encoder_;
  Mlp projection_;
  Linear classifier_;
};

}  // namespace c2d
