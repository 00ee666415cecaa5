#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gditd/adam.hpp"
#include "gditd/descriptor_head.hpp"
#include "gditd/matrix.hpp"
#include "gditd/mlp.hpp"

namespace gditd {

enum class BetaMode {
  effective,      // beta = 1 - 1/|B|
  paper_literal,  // beta = 1/|B|
};

std::string to_string(BetaMode mode);
BetaMode beta_mode_from_string(const std::string& text);

struct TrainConfig {
  std::size_t batch_size = 200;
  std::size_t max_epochs = 100;
  double learning_rate = 1e-3;
  double gamma = 1.0;
  BetaMode beta_mode = BetaMode::effective;
  std::uint64_t seed = 0;
  std::size_t latent_dim = 128;
  std::size_t hidden_dim = 0;  // 0: same as latent_dim
  LossTerms terms;

  std::size_t hidden() const { return hidden_dim == 0 ? latent_dim : hidden_dim; }
  void validate() const;
};

// Focal-loss beta for a mini-batch of the given size.
double focal_beta(BetaMode mode, std::size_t batch_size);

struct EpochRecord {
  LossBreakdown mean;  // per-sample averages over the epoch
  double objective = 0.0;
};

struct TrainState {
  Mlp net;
  GaussianDescriptors desc;
  Adam net_optimizer;
  Adam descriptor_optimizer;
  std::size_t epoch = 0;
  std::vector<EpochRecord> history;
};

// Fresh network from the config seed; mu_i set to the mean embedding of
// class i over `features`, every sigma_i = 1.
TrainState initialize_state(const Matrix& features, std::span<const int> labels, std::size_t classes,
                            const TrainConfig& config);

// One block coordinate descent step on a mini-batch: an Adam step on the
// network with the descriptors frozen, then an Adam step on (mu, log sigma)
// with the network frozen, each at freshly computed gradients. Returns the
// loss measured before the step. Throws NumericError on a non-finite loss
// or gradient.
LossBreakdown bcd_step(TrainState& state, const Matrix& batch, std::span<const int> labels,
                       const TrainConfig& config);

// Shuffled mini-batch training for config.max_epochs epochs. Labels are
// head indices 0..classes-1. Deterministic given config.seed.
TrainState fit(const Matrix& features, std::span<const int> labels, std::size_t classes, const TrainConfig& config);

}  // namespace gditd
