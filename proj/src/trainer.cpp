#include "gditd/trainer.hpp"

#include <cmath>
#include <numeric>

#include "gditd/error.hpp"
#include "gditd/rng.hpp"

namespace gditd {
namespace {

constexpr std::uint64_t kInitStream = 0x11;
constexpr std::uint64_t kShuffleStream = 0x22;

std::vector<std::size_t> sizes_of(std::vector<std::span<double>> blocks) {
  std::vector<std::size_t> out;
  for (auto b : blocks) out.push_back(b.size());
  return out;
}

void check_finite(const LossBreakdown& loss) {
  const std::pair<const char*, double> terms[] = {
      {"pull", loss.pull}, {"score", loss.score}, {"efl1", loss.efl1}, {"efl2", loss.efl2}};
  for (auto [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericError(std::string("non-finite ") + name + " loss (" + std::to_string(value) + ")");
    }
  }
}

}  // namespace

std::string to_string(BetaMode mode) { return mode == BetaMode::effective ? "effective" : "paper-literal"; }

BetaMode beta_mode_from_string(const std::string& text) {
  if (text == "effective") return BetaMode::effective;
  if (text == "paper-literal") return BetaMode::paper_literal;
  throw ContractError("unknown beta mode '" + text + "'");
}

void TrainConfig::validate() const {
  require(batch_size >= 2, "batch size must be at least 2");
  require(learning_rate >= 0.0, "learning rate must be non-negative");
  require(gamma >= 0.0, "gamma must be non-negative");
  require(latent_dim >= 1, "latent dim must be positive");
}

double focal_beta(BetaMode mode, std::size_t batch_size) {
  require(batch_size >= 2, "focal_beta: batch of at least 2 needed");
  const double inv = 1.0 / static_cast<double>(batch_size);
  return mode == BetaMode::effective ? 1.0 - inv : inv;
}

TrainState initialize_state(const Matrix& features, std::span<const int> labels, std::size_t classes,
                            const TrainConfig& config) {
  config.validate();
  require(features.rows() >= 1, "fit: empty training set");
  require(features.rows() == labels.size(), "fit: one label per row required");
  require(classes >= 1, "fit: need at least one class");
  TrainState state;
  state.net = Mlp::create({features.cols(), config.hidden(), config.hidden(), config.latent_dim},
                          mix_seed(config.seed, kInitStream));
  const Matrix emb = state.net.forward(features);
  state.desc = GaussianDescriptors(classes, config.latent_dim);
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t s = 0; s < emb.rows(); ++s) {
    const int y = labels[s];
    require(y >= 0 && static_cast<std::size_t>(y) < classes, "fit: label outside 0..classes-1");
    auto mu = state.desc.mu.row(static_cast<std::size_t>(y));
    auto z = emb.row(s);
    for (std::size_t j = 0; j < mu.size(); ++j) mu[j] += z[j];
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t i = 0; i < classes; ++i) {
    if (counts[i] == 0) continue;
    for (double& v : state.desc.mu.row(i)) v /= static_cast<double>(counts[i]);
  }
  const AdamSettings adam{config.learning_rate};
  state.net_optimizer = Adam(adam, sizes_of(state.net.parameter_blocks()));
  state.descriptor_optimizer = Adam(adam, {state.desc.mu.size(), state.desc.log_sigma.size()});
  return state;
}

LossBreakdown bcd_step(TrainState& state, const Matrix& batch, std::span<const int> labels,
                       const TrainConfig& config) {
  const FocalParams focal{focal_beta(config.beta_mode, std::max<std::size_t>(batch.rows(), 2)), config.gamma};

  // (a) network block, descriptors frozen
  const ForwardTrace trace = state.net.forward_trace(batch);
  const HeadGradients head = loss_gradients(state.desc, trace.activations.back(), labels, focal, config.terms);
  check_finite(head.loss);
  if (!head.embedding.all_finite()) throw NumericError("non-finite embedding gradient");
  MlpGradients net_grads = state.net.backward(trace, head.embedding);
  if (!net_grads.all_finite()) throw NumericError("non-finite network gradient");
  {
    auto params = state.net.parameter_blocks();
    auto grads = net_grads.blocks();
    state.net_optimizer.step(params, grads);
  }

  // (b) descriptor block, network frozen at its updated value
  const Matrix emb = state.net.forward(batch);
  HeadGradients desc_grads = loss_gradients(state.desc, emb, labels, focal, config.terms);
  check_finite(desc_grads.loss);
  if (!desc_grads.mu.all_finite()) throw NumericError("non-finite mu gradient");
  for (double g : desc_grads.log_sigma) {
    if (!std::isfinite(g)) throw NumericError("non-finite sigma gradient");
  }
  {
    const std::span<double> params[] = {state.desc.mu.values(), state.desc.log_sigma};
    const std::span<double> grads[] = {desc_grads.mu.values(), desc_grads.log_sigma};
    state.descriptor_optimizer.step(params, grads);
  }
  return head.loss;
}

TrainState fit(const Matrix& features, std::span<const int> labels, std::size_t classes, const TrainConfig& config) {
  TrainState state = initialize_state(features, labels, classes, config);
  Rng rng(mix_seed(config.seed, kShuffleStream));
  const std::size_t n = features.rows();
  std::vector<std::size_t> order(n);
  std::vector<int> batch_labels;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    LossBreakdown sum;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix batch = features.gather_rows(idx);
      batch_labels.clear();
      for (std::size_t r : idx) batch_labels.push_back(labels[r]);
      const LossBreakdown loss = bcd_step(state, batch, batch_labels, config);
      sum.pull += loss.pull;
      sum.score += loss.score;
      sum.efl1 += loss.efl1;
      sum.efl2 += loss.efl2;
    }
    const double inv = 1.0 / static_cast<double>(n);
    EpochRecord record;
    record.mean = {sum.pull * inv, sum.score * inv, sum.efl1 * inv, sum.efl2 * inv, 0.0};
    record.mean.net = record.mean.pull + record.mean.score + record.mean.efl1 + record.mean.efl2;
    record.objective = record.mean.objective(config.terms);
    state.history.push_back(record);
    ++state.epoch;
  }
  return state;
}

}  // namespace gditd
