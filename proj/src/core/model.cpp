#include "c2d/model.hpp"

#include <cmath>
#include <map>

#include "c2d/checkpoint.hpp"
#include "c2d/error.hpp"

namespace c2d {

using num::Graph;
using num::Parameter;
using num::Tensor;
using num::Var;

Linear::Linear(std::string name, std::size_t in_dim, std::size_t out_dim, Rng& rng)
    : weight(name + ".weight", Tensor(in_dim, out_dim)), bias(name + ".bias", Tensor(1, out_dim)) {
  reset(rng);
}

void Linear::reset(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : weight.value.data()) v = dist(rng);
  for (double& v : bias.value.data()) v = dist(rng);
  weight.zero_grad();
  bias.zero_grad();
}

Var Linear::forward(Graph& g, Var x) {
  return num::add(num::matmul(x, g.param(weight)), g.param(bias));
}

Tensor Linear::forward(const Tensor& x) const {
  return num::add_row_bias(num::matmul(x, weight.value), bias.value);
}

Mlp::Mlp(const std::string& name, std::vector<std::size_t> dims, bool relu_out, Rng& rng)
    : relu_output(relu_out) {
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    layers.emplace_back(name + "." + std::to_string(i), dims[i], dims[i + 1], rng);
  }
}

Var Mlp::forward(Graph& g, Var x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(g, x);
    if (i + 1 < layers.size() || relu_output) x = num::relu(x);
  }
  return x;
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size() || relu_output) h = num::relu(h);
  }
  return h;
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

void Mlp::collect(std::vector<const Parameter*>& out) const {
  for (const auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

Model::Model(const ModelShape& shape, std::uint64_t seed) : shape_(shape) {
  if (shape.input_dim == 0 || shape.feature_dim == 0 || shape.proj_dim == 0 || shape.num_classes < 2) {
    throw ConfigError("model: dimensions must be positive and num_classes >= 2");
  }
  Rng rng(seed);
  std::vector<std::size_t> enc{shape.input_dim};
  enc.insert(enc.end(), shape.hidden.begin(), shape.hidden.end());
  enc.push_back(shape.feature_dim);
  encoder_ = Mlp("encoder", enc, /*relu_output=*/true, rng);
  std::vector<std::size_t> proj{shape.feature_dim};
  proj.insert(proj.end(), shape.proj_hidden.begin(), shape.proj_hidden.end());
  proj.push_back(shape.proj_dim);
  projection_ = Mlp("projection", proj, /*relu_output=*/false, rng);
  classifier_ = Linear("classifier", shape.feature_dim, shape.num_classes, rng);
}

Tensor Model::probabilities(const Tensor& x) const { return num::softmax_rows(logits(x)); }

std::vector<Parameter*> Model::encoder_parameters() {
  std::vector<Parameter*> out;
  encoder_.collect(out);
  return out;
}

std::vector<Parameter*> Model::projection_parameters() {
  std::vector<Parameter*> out;
  projection_.collect(out);
  return out;
}

std::vector<Parameter*> Model::classifier_parameters() {
  return {&classifier_.weight, &classifier_.bias};
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  encoder_.collect(out);
  projection_.collect(out);
  out.push_back(&classifier_.weight);
  out.push_back(&classifier_.bias);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  std::vector<const Parameter*> out;
  encoder_.collect(out);
  projection_.collect(out);
  out.push_back(&classifier_.weight);
  out.push_back(&classifier_.bias);
  return out;
}

void Model::reset_classifier(std::uint64_t seed) {
  Rng rng(seed);
  classifier_.reset(rng);
}

void Model::copy_encoder_from(const Model& other) {
  if (other.encoder_.layers.size() != encoder_.layers.size()) {
    throw ConfigError("copy_encoder_from: encoder depth mismatch");
  }
  for (std::size_t i = 0; i < encoder_.layers.size(); ++i) {
    auto& dst = encoder_.layers[i];
    const auto& src = other.encoder_.layers[i];
    num::require_same_shape(dst.weight.value, src.weight.value, "copy_encoder_from");
    dst.weight.value = src.weight.value;
    dst.bias.value = src.bias.value;
  }
}

void Model::save(const std::filesystem::path& path) const {
  const auto params = parameters();
  num::save_checkpoint(path, params);
}

Model Model::load(const std::filesystem::path& path) {
  return from_parameters(num::load_checkpoint(path));
}

Model Model::from_parameters(std::vector<Parameter> params) {
  std::map<std::string, Parameter> by_name;
  for (auto& p : params) by_name.emplace(p.name, std::move(p));
  auto take = [&](const std::string& name) -> Parameter& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint is missing tensor " + name);
    return it->second;
  };
  auto count_layers = [&](const std::string& prefix) {
    std::size_t n = 0;
    while (by_name.count(prefix + "." + std::to_string(n) + ".weight")) ++n;
    return n;
  };

  Model m;
  const std::size_t enc_layers = count_layers("encoder");
  const std::size_t proj_layers = count_layers("projection");
  if (enc_layers == 0 || proj_layers == 0) throw IoError("checkpoint lacks encoder or projection layers");
  m.encoder_.relu_output = true;
  m.projection_.relu_output = false;
  auto load_mlp = [&](Mlp& mlp, const std::string& prefix, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      Linear l;
      const std::string base = prefix + "." + std::to_string(i);
      l.weight = take(base + ".weight");
      l.bias = take(base + ".bias");
      l.weight.grad = Tensor(l.weight.value.rows(), l.weight.value.cols());
      l.bias.grad = Tensor(l.bias.value.rows(), l.bias.value.cols());
      if (l.bias.value.rows() != 1 || l.bias.value.cols() != l.weight.value.cols()) {
        throw IoError("checkpoint bias shape mismatch for " + base);
      }
      if (!mlp.layers.empty() && mlp.layers.back().out_dim() != l.in_dim()) {
        throw IoError("checkpoint layer chain mismatch at " + base);
      }
      mlp.layers.push_back(std::move(l));
    }
  };
  load_mlp(m.encoder_, "encoder", enc_layers);
  load_mlp(m.projection_, "projection", proj_layers);
  m.classifier_.weight = take("classifier.weight");
  m.classifier_.bias = take("classifier.bias");
  m.classifier_.weight.grad = Tensor(m.classifier_.weight.value.rows(), m.classifier_.weight.value.cols());
  m.classifier_.bias.grad = Tensor(1, m.classifier_.bias.value.cols());

  ModelShape s;
  s.input_dim = m.encoder_.layers.front().in_dim();
  s.hidden.clear();
  for (std::size_t i = 0; i + 1 < enc_layers; ++i) s.hidden.push_back(m.encoder_.layers[i].out_dim());
  s.feature_dim = m.encoder_.layers.back().out_dim();
  s.proj_hidden.clear();
  for (std::size_t i = 0; i + 1 < proj_layers; ++i) s.proj_hidden.push_back(m.projection_.layers[i].out_dim());
  s.proj_dim = m.projection_.layers.back().out_dim();
  s.num_classes = m.classifier_.out_dim();
  if (m.projection_.layers.front().in_dim() != s.feature_dim || m.classifier_.in_dim() != s.feature_dim) {
    throw IoError("checkpoint heads disagree with encoder feature dimension");
  }
  m.shape_ = s;
  return m;
}

}  // namespace c2d
