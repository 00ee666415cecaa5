#include "gditd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "gditd/error.hpp"
#include "gditd/rng.hpp"

namespace gditd {
namespace {

constexpr int kCheckpointVersion = 1;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

nlohmann::json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", std::vector<double>(m.values().begin(), m.values().end())}};
}

Matrix matrix_from(const nlohmann::json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("values").get<std::vector<double>>());
}

nlohmann::json network_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers()) layers.push_back({{"weight", matrix_json(layer.weight)}, {"bias", layer.bias}});
  return {{"dims", net.dims()}, {"layers", layers}};
}

Mlp network_from(const nlohmann::json& j) {
  std::array<DenseLayer, kLayerCount> layers;
  const auto& arr = j.at("layers");
  require(arr.size() == kLayerCount, "checkpoint: network must have exactly 3 layers");
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    layers[l].weight = matrix_from(arr[l].at("weight"));
    layers[l].bias = arr[l].at("bias").get<std::vector<double>>();
  }
  return Mlp(std::move(layers));
}

nlohmann::json config_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},   {"max_epochs", c.max_epochs},
          {"learning_rate", c.learning_rate}, {"gamma", c.gamma},
          {"beta_mode", to_string(c.beta_mode)}, {"seed", c.seed},
          {"latent_dim", c.latent_dim},   {"hidden_dim", c.hidden()},
          {"loss_terms", to_string(c.terms)}};
}

LossTerms terms_from_string(const std::string& text) {
  LossTerms t{false, false, false, false};
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, '+')) {
    if (part == "pull") t.pull = true;
    else if (part == "score") t.score = true;
    else if (part == "efl1") t.efl1 = true;
    else if (part == "efl2") t.efl2 = true;
    else if (!part.empty()) throw ContractError("unknown loss term '" + part + "'");
  }
  return t;
}

TrainConfig config_from(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.beta_mode = beta_mode_from_string(j.at("beta_mode").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.terms = terms_from_string(j.at("loss_terms").get<std::string>());
  return c;
}

std::uint64_t double_bits(double v) { return std::bit_cast<std::uint64_t>(v); }

void check_training_rows(const TabularDataset& raw, std::span<const std::size_t> rows) {
  require(!rows.empty(), "training split is empty");
  for (std::size_t r : rows) {
    require(r < raw.rows(), "training row index out of range");
    require(!raw.is_ood_row(r), "OOD rows must not be used for training");
  }
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::gditd: return "gditd";
    case Method::softmax: return "softmax";
    case Method::mahalanobis: return "mahalanobis";
  }
  return "unknown";
}

Method method_from_string(const std::string& text) {
  if (text == "gditd") return Method::gditd;
  if (text == "softmax") return Method::softmax;
  if (text == "mahalanobis") return Method::mahalanobis;
  throw ContractError("unknown method '" + text + "'");
}

std::string to_string(const LossTerms& terms) {
  std::string out;
  auto add = [&out](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(terms.pull, "pull");
  add(terms.score, "score");
  add(terms.efl1, "efl1");
  add(terms.efl2, "efl2");
  return out;
}

std::vector<std::string> TrainedModel::head_class_names() const {
  std::vector<std::string> out;
  for (int c : class_map.classes()) out.push_back(class_names.at(static_cast<std::size_t>(c)));
  return out;
}

std::vector<ConfidencePrediction> TrainedModel::score(const Matrix& raw_features) const {
  const Matrix x = apply_zscore(normalization, raw_features);
  std::vector<ConfidencePrediction> out;
  out.reserve(x.rows());
  std::visit(overloaded{
                 [&](const GditdModel& m) {
                   const Matrix emb = m.net.forward(x);
                   for (std::size_t s = 0; s < emb.rows(); ++s) {
                     auto scores = class_scores(m.desc, emb.row(s));
                     const Prediction p = predict_from_scores(scores);
                     out.push_back({p.label, p.confidence, std::move(scores)});
                   }
                 },
                 [&](const SoftmaxModel& m) {
                   const Matrix logits = m.logits(x);
                   for (std::size_t s = 0; s < logits.rows(); ++s) out.push_back(softmax_confidence_from_logits(logits.row(s)));
                 },
                 [&](const MahalanobisModel& m) {
                   const Matrix emb = m.net.forward(x);
                   for (std::size_t s = 0; s < emb.rows(); ++s) out.push_back(mahalanobis_confidence_embedding(m, emb.row(s)));
                 },
             },
             body);
  return out;
}

std::string LossTable::csv() const {
  std::ostringstream out;
  for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << nlohmann::json(row[c]).dump();
    out << '\n';
  }
  return out.str();
}

TrainOutcome train_model(Method method, const TabularDataset& raw, std::span<const std::size_t> train_rows,
                         const TrainConfig& config) {
  config.validate();
  check_training_rows(raw, train_rows);
  TrainOutcome out;
  TrainedModel& model = out.model;
  model.method = method;
  model.config = config;
  model.class_map = ClassMap::from(raw);
  model.class_names = raw.class_names;
  model.minority_class = raw.minority_class;
  model.normalization = fit_zscore(raw.features, train_rows);

  const Matrix x = apply_zscore(model.normalization, raw.features.gather_rows(train_rows));
  std::vector<int> y;
  for (std::size_t r : train_rows) y.push_back(model.class_map.head_index(raw.labels[r]));
  const std::size_t k = model.class_map.size();

  if (method == Method::gditd) {
    TrainState state = fit(x, y, k, config);
    out.losses.columns = {"epoch", "pull", "score", "efl1", "efl2", "net", "objective"};
    for (std::size_t e = 0; e < state.history.size(); ++e) {
      const auto& h = state.history[e];
      out.losses.rows.push_back({static_cast<double>(e + 1), h.mean.pull, h.mean.score, h.mean.efl1, h.mean.efl2,
                                 h.mean.net, h.objective});
    }
    model.body = GditdModel{std::move(state.net), std::move(state.desc)};
  } else {
    SoftmaxTrainResult trained = softmax_fit(x, y, k, config);
    out.losses.columns = {"epoch", "cross_entropy"};
    for (std::size_t e = 0; e < trained.loss_history.size(); ++e) {
      out.losses.rows.push_back({static_cast<double>(e + 1), trained.loss_history[e]});
    }
    if (method == Method::softmax) {
      model.body = std::move(trained.model);
    } else {
      model.body = mahalanobis_fit(trained.model.net, x, y, k);
    }
  }
  return out;
}

EvalOutcome evaluate_model(const TrainedModel& model, const TabularDataset& raw,
                           std::span<const std::size_t> test_rows, const RunEcho& echo) {
  require(!test_rows.empty(), "evaluate: empty test split");
  const auto predictions = model.score(raw.features.gather_rows(test_rows));
  std::vector<ScoredSample> samples;
  samples.reserve(test_rows.size());
  for (std::size_t i = 0; i < test_rows.size(); ++i) {
    const std::size_t r = test_rows[i];
    ScoredSample s;
    s.confidence = predictions[i].confidence;
    s.is_ood = raw.is_ood_row(r);
    s.true_class = s.is_ood ? kOodLabel : model.class_map.head_index(raw.labels[r]);
    s.predicted_class = predictions[i].label;
    s.class_confidence = predictions[i].class_confidence;
    samples.push_back(std::move(s));
  }
  std::optional<int> minority;
  if (model.minority_class) {
    const int head = model.class_map.head_index(*model.minority_class);
    if (head >= 0) minority = head;
  }
  EvalOutcome out;
  out.report = evaluate(samples, model.head_class_names(), minority, echo);
  if (out.report.ood_samples > 0) {
    std::vector<double> scores;
    std::vector<std::uint8_t> ood;
    for (const auto& s : samples) {
      scores.push_back(ood_score(s.confidence));
      ood.push_back(s.is_ood ? 1 : 0);
    }
    out.roc = roc_curve(scores, ood);
    out.pr = pr_curve(scores, ood);
  }
  return out;
}

nlohmann::json checkpoint_json(const TrainedModel& model) {
  nlohmann::json j;
  j["format"] = "gditd-checkpoint";
  j["version"] = kCheckpointVersion;
  j["kind"] = to_string(model.method);
  j["config"] = config_json(model.config);
  j["normalization"] = {{"mean", model.normalization.mean}, {"scale", model.normalization.scale}};
  j["class_names"] = model.class_names;
  j["id_classes"] = model.class_map.classes();
  j["minority_class"] = model.minority_class ? nlohmann::json(*model.minority_class) : nlohmann::json();
  std::visit(overloaded{
                 [&](const GditdModel& m) {
                   j["network"] = network_json(m.net);
                   j["descriptors"] = {{"mu", matrix_json(m.desc.mu)}, {"log_sigma", m.desc.log_sigma}};
                 },
                 [&](const SoftmaxModel& m) {
                   j["network"] = network_json(m.net);
                   j["head"] = {{"weight", matrix_json(m.weight)}, {"bias", m.bias}};
                 },
                 [&](const MahalanobisModel& m) {
                   j["network"] = network_json(m.net);
                   j["mahalanobis"] = {{"means", matrix_json(m.means)},
                                       {"covariance", matrix_json(m.covariance)},
                                       {"precision", matrix_json(m.precision)},
                                       {"ridge", m.ridge}};
                 },
             },
             model.body);
  return j;
}

TrainedModel checkpoint_from_json(const nlohmann::json& j) {
  try {
    require(j.at("format").get<std::string>() == "gditd-checkpoint", "checkpoint: unrecognized format tag");
    require(j.at("version").get<int>() == kCheckpointVersion, "checkpoint: unsupported version");
    TrainedModel model;
    model.method = method_from_string(j.at("kind").get<std::string>());
    model.config = config_from(j.at("config"));
    model.normalization.mean = j.at("normalization").at("mean").get<std::vector<double>>();
    model.normalization.scale = j.at("normalization").at("scale").get<std::vector<double>>();
    model.class_names = j.at("class_names").get<std::vector<std::string>>();
    model.class_map = ClassMap(j.at("id_classes").get<std::vector<int>>());
    if (!j.at("minority_class").is_null()) model.minority_class = j.at("minority_class").get<int>();
    Mlp net = network_from(j.at("network"));
    switch (model.method) {
      case Method::gditd:
        model.body = GditdModel{std::move(net), GaussianDescriptors(matrix_from(j.at("descriptors").at("mu")),
                                                                    j.at("descriptors").at("log_sigma").get<std::vector<double>>())};
        break;
      case Method::softmax: {
        SoftmaxModel m;
        m.net = std::move(net);
        m.weight = matrix_from(j.at("head").at("weight"));
        m.bias = j.at("head").at("bias").get<std::vector<double>>();
        model.body = std::move(m);
        break;
      }
      case Method::mahalanobis: {
        MahalanobisModel m;
        m.net = std::move(net);
        const auto& mj = j.at("mahalanobis");
        m.means = matrix_from(mj.at("means"));
        m.covariance = matrix_from(mj.at("covariance"));
        m.precision = matrix_from(mj.at("precision"));
        m.ridge = mj.at("ridge").get<double>();
        model.body = std::move(m);
        break;
      }
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_json(model).dump() << '\n';
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

std::uint64_t cell_seed(std::uint64_t master, Method method, double mdsr, std::size_t fold) {
  std::uint64_t s = mix_seed(master, fnv1a(to_string(method)));
  s = mix_seed(s, double_bits(mdsr));
  return mix_seed(s, fold);
}

std::uint64_t split_seed(std::uint64_t master, double mdsr) {
  return mix_seed(mix_seed(master, fnv1a("split")), double_bits(mdsr));
}

std::uint64_t mdsr_seed(std::uint64_t master, double mdsr) {
  return mix_seed(mix_seed(master, fnv1a("mdsr")), double_bits(mdsr));
}

RunEcho make_echo(Method method, const TrainConfig& config, const Protocol& protocol) {
  RunEcho e;
  e.method = to_string(method);
  e.beta_mode = to_string(config.beta_mode);
  e.mdsr = protocol.mdsr;
  e.seed = config.seed;
  e.epochs = config.max_epochs;
  e.folds = protocol.folds;
  e.loss_terms = method == Method::gditd ? to_string(config.terms) : "cross_entropy";
  return e;
}

namespace {

TabularDataset prepared(const TabularDataset& raw, const TrainConfig& config, const Protocol& protocol) {
  require(protocol.mdsr > 0.0 && protocol.mdsr <= 1.0, "MDSR must lie in (0, 1]");
  if (protocol.mdsr == 1.0) return raw;
  return apply_mdsr(raw, protocol.mdsr, mdsr_seed(config.seed, protocol.mdsr));
}

TrainConfig fold_config(Method method, const TrainConfig& config, const Protocol& protocol, std::size_t fold) {
  TrainConfig c = config;
  // Mahalanobis reuses the softmax network, so it draws the softmax seed.
  const Method seed_method = method == Method::mahalanobis ? Method::softmax : method;
  c.seed = cell_seed(config.seed, seed_method, protocol.mdsr, fold);
  return c;
}

std::vector<std::size_t> test_rows_for(const SplitPlan& plan, std::size_t fold) {
  auto rows = plan.validation_rows(fold);
  rows.insert(rows.end(), plan.ood_rows.begin(), plan.ood_rows.end());
  return rows;
}

std::vector<std::string> fold_warnings(const TabularDataset& data, const SplitPlan& plan, std::size_t fold) {
  std::vector<std::string> out;
  for (int cls : data.id_classes()) {
    bool in_val = false, in_train = false;
    for (std::size_t r = 0; r < data.rows(); ++r) {
      if (data.labels[r] != cls || plan.fold_of_row[r] < 0) continue;
      (plan.fold_of_row[r] == static_cast<int>(fold) ? in_val : in_train) = true;
    }
    const auto& name = data.class_names[static_cast<std::size_t>(cls)];
    if (!in_val) out.push_back("class '" + name + "' absent from validation fold " + std::to_string(fold));
    if (!in_train) out.push_back("class '" + name + "' absent from training folds of fold " + std::to_string(fold));
  }
  return out;
}

}  // namespace

RunResult holdout_run(Method method, const TabularDataset& raw, const TrainConfig& config, const Protocol& protocol) {
  const TabularDataset data = prepared(raw, config, protocol);
  const SplitPlan plan = stratified_folds(data, protocol.folds, split_seed(config.seed, protocol.mdsr), false);
  const auto train_rows = plan.training_rows(0);
  RunResult result{train_model(method, data, train_rows, fold_config(method, config, protocol, 0)), {}};
  result.eval = evaluate_model(result.trained.model, data, test_rows_for(plan, 0), make_echo(method, config, protocol));
  auto warnings = fold_warnings(data, plan, 0);
  result.eval.report.warnings.insert(result.eval.report.warnings.end(), warnings.begin(), warnings.end());
  return result;
}

std::size_t worker_limit() {
  if (const char* env = std::getenv("GDITD_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

KFoldResult kfold_fit_eval(Method method, const TabularDataset& raw, const TrainConfig& config,
                           const Protocol& protocol) {
  const TabularDataset data = prepared(raw, config, protocol);
  const SplitPlan plan = stratified_folds(data, protocol.folds, split_seed(config.seed, protocol.mdsr), false);
  const RunEcho echo = make_echo(method, config, protocol);

  KFoldResult result;
  result.folds.resize(protocol.folds);
  std::vector<std::exception_ptr> errors(protocol.folds);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t f = next++; f < protocol.folds; f = next++) {
      try {
        const auto train_rows = plan.training_rows(f);
        const TrainOutcome trained = train_model(method, data, train_rows, fold_config(method, config, protocol, f));
        EvalReport report = evaluate_model(trained.model, data, test_rows_for(plan, f), echo).report;
        auto warnings = fold_warnings(data, plan, f);
        report.warnings.insert(report.warnings.end(), warnings.begin(), warnings.end());
        result.folds[f] = std::move(report);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(worker_limit(), protocol.folds);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  result.mean = mean_report(result.folds);
  return result;
}

std::vector<std::pair<std::string, LossTerms>> ablation_variants() {
  std::vector<std::pair<std::string, LossTerms>> out;
  const char* names[] = {"pull", "score", "efl1", "efl2"};
  auto with_only = [](int i, bool value) {
    LossTerms t{!value, !value, !value, !value};
    bool* fields[] = {&t.pull, &t.score, &t.efl1, &t.efl2};
    *fields[i] = value;
    return t;
  };
  for (int i = 0; i < 4; ++i) out.emplace_back(std::string("only_") + names[i], with_only(i, true));
  for (int i = 0; i < 4; ++i) out.emplace_back(std::string("without_") + names[i], with_only(i, false));
  out.emplace_back("full", LossTerms{});
  return out;
}

std::vector<AblationRow> ablate(const TabularDataset& raw, const TrainConfig& config, const Protocol& protocol) {
  std::vector<AblationRow> rows;
  for (const auto& [name, terms] : ablation_variants()) {
    TrainConfig c = config;
    c.terms = terms;
    RunResult run = holdout_run(Method::gditd, raw, c, protocol);
    rows.push_back({name, terms, std::move(run.eval.report)});
  }
  return rows;
}

}  // namespace gditd
