#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "forms/tensor.hpp"

namespace forms {

struct Shape3 {
  std::size_t c = 1, h = 1, w = 1;
  std::size_t size() const { return c * h * w; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

enum class LayerKind { conv, dense, relu, maxpool };

const char* to_string(LayerKind kind);

struct Layer {
  LayerKind kind = LayerKind::relu;
  std::string name;
  WeightTensor weight;       // conv: (F, C, kh, kw); dense: (out, in)
  std::vector<double> bias;  // one per filter / output
  std::size_t pool = 2;      // maxpool window and stride
  // Fixed-point exponent of this layer's 16-bit input activations:
  // real = code * 2^-act_exponent. Only used by the hardware path.
  int act_exponent = 0;

  bool has_weights() const { return kind == LayerKind::conv || kind == LayerKind::dense; }
};

struct ModelGraph {
  Shape3 input;
  std::vector<Layer> layers;

  std::vector<std::size_t> weighted_layers() const;
  // Shape of the tensor entering layer i (i == layers.size() gives the output).
  Shape3 shape_at(std::size_t i) const;
  // Throws ShapeError when adjacent layers disagree.
  void validate() const;
  // True when a maxpool directly follows layer i (optionally after a relu).
  bool pooled_after(std::size_t i) const;
  std::size_t macs() const;
};

// Seeded He-initialised reference networks.
ModelGraph make_mlp(Shape3 input, std::size_t hidden, std::size_t classes, std::uint64_t seed);
// conv(c1, 3x3) -> relu -> conv(c2, 3x3) -> relu -> maxpool(2) -> dense(classes)
ModelGraph make_toy_cnn(Shape3 input, std::size_t c1, std::size_t c2, std::size_t classes,
                        std::uint64_t seed);

struct Dataset {
  Shape3 shape;
  std::size_t classes = 10;
  std::vector<double> images;  // sample-major, each sample shape.size() values
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> image(std::size_t i) const {
    return {images.data() + i * shape.size(), shape.size()};
  }
};

// im2col lowering for a stride-1 valid convolution. Row k = (c * kh + i) * kw + j
// matches the filter-shape row order; column p = oy * ow + ox.
template <typename T>
std::vector<T> im2col(std::span<const T> x, Shape3 in, std::size_t kh, std::size_t kw);

struct ForwardResult {
  // activations[i] is the input to layer i; activations.back() holds logits.
  std::vector<std::vector<double>> activations;
  std::vector<std::vector<std::size_t>> pool_argmax;
  std::span<const double> logits() const { return activations.back(); }
};

ForwardResult forward(const ModelGraph& model, std::span<const double> input);
int predict(const ModelGraph& model, std::span<const double> input);
double accuracy(const ModelGraph& model, const Dataset& data);

// Per-layer gradients; empty vectors for layers without weights.
struct Gradients {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;
  static Gradients zeros_like(const ModelGraph& model);
};

// Mean softmax cross-entropy over the batch and its gradient.
double task_loss_and_grad(const ModelGraph& model, const Dataset& data,
                          std::span<const std::size_t> batch, Gradients& grads);

// Auxiliary and dual variables of the augmented Lagrangian, one entry per
// weighted layer (in weighted_layers() order), laid out like the weights.
struct AdmmState {
  std::vector<std::vector<double>> z;
  std::vector<std::vector<double>> u;
  std::vector<double> rho;

  static AdmmState init(const ModelGraph& model, std::span<const double> rho);
  void check_shapes(const ModelGraph& model) const;
};

struct LossAndGrad {
  double loss = 0.0;
  double task_loss = 0.0;
  double penalty = 0.0;
  Gradients grads;
};

// f(W) + sum_i rho_i / 2 * ||W_i - Z_i + U_i||_F^2. Throws Error(divergence) when
// the loss is not finite.
LossAndGrad admm_loss_and_grad(const ModelGraph& model, const Dataset& data,
                               std::span<const std::size_t> batch, const AdmmState& state);

// W <- W - lr * grad, b <- b - lr * grad_b.
void sgd_step(ModelGraph& model, const Gradients& grads, double lr);

}  // namespace forms
