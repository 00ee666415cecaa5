#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gditd/matrix.hpp"

namespace gditd {

// One affine map; weight is out x in so each output unit owns a contiguous row.
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

inline constexpr std::size_t kLayerCount = 3;
using LayerDims = std::array<std::size_t, kLayerCount + 1>;

// Intermediate values of one forward pass, kept for backprop.
struct ForwardTrace {
  // activations[0] is the input batch, activations[3] the embeddings.
  std::array<Matrix, kLayerCount + 1> activations;
};

struct MlpGradients {
  std::array<Matrix, kLayerCount> weight;
  std::array<std::vector<double>, kLayerCount> bias;
  Matrix input;  // d loss / d input batch

  std::vector<std::span<double>> blocks();
  bool all_finite() const;
};

// Three dense layers: ReLU after the first two, identity on the latent output.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::array<DenseLayer, kLayerCount> layers);

  // Glorot-uniform weights, zero biases.
  static Mlp create(const LayerDims& dims, std::uint64_t seed);
  static Mlp zeros(const LayerDims& dims);

  LayerDims dims() const;
  std::size_t input_dim() const { return layers_[0].in_dim(); }
  std::size_t latent_dim() const { return layers_[kLayerCount - 1].out_dim(); }

  const std::array<DenseLayer, kLayerCount>& layers() const { return layers_; }
  std::array<DenseLayer, kLayerCount>& layers() { return layers_; }

  Matrix forward(const Matrix& batch) const;
  ForwardTrace forward_trace(const Matrix& batch) const;

  // Gradients of sum(upstream * forward(batch)) for the batch recorded in trace.
  MlpGradients backward(const ForwardTrace& trace, const Matrix& upstream) const;

  MlpGradients zero_gradients() const;

  // Parameter blocks in the order W0, b0, W1, b1, W2, b2; same order as
  // MlpGradients::blocks().
  std::vector<std::span<double>> parameter_blocks();
  static std::vector<std::string> block_names();

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::array<DenseLayer, kLayerCount> layers_;
};

}  // namespace gditd
