#include "gditd/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "gditd/error.hpp"
#include "gditd/kernels.hpp"
#include "gditd/rng.hpp"

namespace gditd {
namespace {

void check_chain(const std::array<DenseLayer, kLayerCount>& layers) {
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    require(layers[l].bias.size() == layers[l].out_dim(), "Mlp: bias length must equal layer output dim");
    require(layers[l].in_dim() > 0 && layers[l].out_dim() > 0, "Mlp: layer dims must be positive");
    if (l > 0) require(layers[l].in_dim() == layers[l - 1].out_dim(), "Mlp: layer shapes do not chain");
  }
}

// out[s, o] = bias[o] + <in[s], weight[o]>
void affine(const DenseLayer& layer, const Matrix& in, Matrix& out) {
  const auto& k = kernels::active();
  const std::size_t n_in = layer.in_dim();
  for (std::size_t s = 0; s < in.rows(); ++s) {
    const double* x = in.row(s).data();
    double* y = out.row(s).data();
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      y[o] = layer.bias[o] + k.dot(x, layer.weight.row(o).data(), n_in);
    }
  }
}

void relu_inplace(Matrix& m) {
  for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
}

}  // namespace

std::vector<std::span<double>> MlpGradients::blocks() {
  std::vector<std::span<double>> out;
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    out.emplace_back(weight[l].values());
    out.emplace_back(bias[l]);
  }
  return out;
}

bool MlpGradients::all_finite() const {
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    if (!weight[l].all_finite()) return false;
    for (double v : bias[l]) {
      if (!std::isfinite(v)) return false;
    }
  }
  return input.all_finite();
}

Mlp::Mlp(std::array<DenseLayer, kLayerCount> layers) : layers_(std::move(layers)) { check_chain(layers_); }

Mlp Mlp::create(const LayerDims& dims, std::uint64_t seed) {
  Rng rng(seed);
  std::array<DenseLayer, kLayerCount> layers;
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    require(dims[l] > 0 && dims[l + 1] > 0, "Mlp::create: layer dims must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    layers[l].weight = Matrix(dims[l + 1], dims[l]);
    for (double& w : layers[l].weight.values()) w = rng.uniform(-limit, limit);
    layers[l].bias.assign(dims[l + 1], 0.0);
  }
  return Mlp(std::move(layers));
}

Mlp Mlp::zeros(const LayerDims& dims) {
  std::array<DenseLayer, kLayerCount> layers;
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    layers[l].weight = Matrix(dims[l + 1], dims[l]);
    layers[l].bias.assign(dims[l + 1], 0.0);
  }
  return Mlp(std::move(layers));
}

LayerDims Mlp::dims() const {
  LayerDims d{};
  d[0] = layers_[0].in_dim();
  for (std::size_t l = 0; l < kLayerCount; ++l) d[l + 1] = layers_[l].out_dim();
  return d;
}

Matrix Mlp::forward(const Matrix& batch) const {
  require(batch.cols() == input_dim(), "Mlp::forward: batch has " + std::to_string(batch.cols()) +
                                           " columns, network expects " + std::to_string(input_dim()));
  require(batch.rows() >= 1, "Mlp::forward: empty batch");
  Matrix current = batch;
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    Matrix next(batch.rows(), layers_[l].out_dim());
    affine(layers_[l], current, next);
    if (l + 1 < kLayerCount) relu_inplace(next);
    current = std::move(next);
  }
  return current;
}

ForwardTrace Mlp::forward_trace(const Matrix& batch) const {
  require(batch.cols() == input_dim(), "Mlp::forward_trace: batch column count does not match input dim");
  require(batch.rows() >= 1, "Mlp::forward_trace: empty batch");
  ForwardTrace trace;
  trace.activations[0] = batch;
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    Matrix next(batch.rows(), layers_[l].out_dim());
    affine(layers_[l], trace.activations[l], next);
    if (l + 1 < kLayerCount) relu_inplace(next);
    trace.activations[l + 1] = std::move(next);
  }
  return trace;
}

MlpGradients Mlp::zero_gradients() const {
  MlpGradients g;
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    g.weight[l] = Matrix(layers_[l].out_dim(), layers_[l].in_dim());
    g.bias[l].assign(layers_[l].out_dim(), 0.0);
  }
  return g;
}

MlpGradients Mlp::backward(const ForwardTrace& trace, const Matrix& upstream) const {
  const Matrix& input = trace.activations[0];
  require(input.cols() == input_dim(), "Mlp::backward: trace does not belong to this network");
  require(upstream.rows() == input.rows() && upstream.cols() == latent_dim(),
          "Mlp::backward: upstream shape must match forward output");
  const auto& k = kernels::active();
  MlpGradients grads = zero_gradients();
  Matrix delta = upstream;
  for (std::size_t li = kLayerCount; li-- > 0;) {
    const DenseLayer& layer = layers_[li];
    const Matrix& a_in = trace.activations[li];
    Matrix& gw = grads.weight[li];
    auto& gb = grads.bias[li];
    Matrix delta_in(a_in.rows(), layer.in_dim());
    for (std::size_t s = 0; s < a_in.rows(); ++s) {
      const double* x = a_in.row(s).data();
      double* dx = delta_in.row(s).data();
      for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        const double g = delta(s, o);
        if (g == 0.0) continue;
        gb[o] += g;
        k.axpy(g, x, gw.row(o).data(), layer.in_dim());
        k.axpy(g, layer.weight.row(o).data(), dx, layer.in_dim());
      }
    }
    if (li > 0) {
      // a_in is the ReLU output of the previous layer; its derivative is
      // 1 exactly where the output is positive.
      for (std::size_t i = 0; i < delta_in.size(); ++i) {
        if (!(a_in.values()[i] > 0.0)) delta_in.values()[i] = 0.0;
      }
    }
    delta = std::move(delta_in);
  }
  grads.input = std::move(delta);
  return grads;
}

std::vector<std::span<double>> Mlp::parameter_blocks() {
  std::vector<std::span<double>> out;
  for (auto& layer : layers_) {
    out.emplace_back(layer.weight.values());
    out.emplace_back(layer.bias);
  }
  return out;
}

std::vector<std::string> Mlp::block_names() {
  return {"W0", "b0", "W1", "b1", "W2", "b2"};
}

}  // namespace gditd
