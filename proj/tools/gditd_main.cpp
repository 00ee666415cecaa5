// gditd command-line front end: train, evaluate, benchmark, ablate, blobs.
//
// Exit codes: 0 success, 1 I/O or data error, 2 usage error, 3 numeric
// failure during training.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gditd/dataset.hpp"
#include "gditd/error.hpp"
#include "gditd/experiment.hpp"
#include "gditd/kernels.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct CommonArgs {
  std::string data;
  std::string manifest;
  std::string method = "gditd";
  std::vector<double> mdsr{1.0};
  std::size_t folds = 5;
  std::size_t epochs = 100;
  std::size_t batch_size = 200;
  double lr = 1e-3;
  double gamma = 1.0;
  bool beta_literal = false;
  std::size_t latent_dim = 128;
  std::size_t hidden_dim = 0;
  std::uint64_t seed = 0;
  std::string out = "out";
};

void add_training_flags(CLI::App& cmd, CommonArgs& a) {
  cmd.add_option("--epochs", a.epochs, "Training epochs")->capture_default_str()->check(CLI::Range(0, 100000));
  cmd.add_option("--batch-size", a.batch_size, "Mini-batch size")->capture_default_str()->check(CLI::Range(2, 1000000));
  cmd.add_option("--lr", a.lr, "Adam learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd.add_option("--gamma", a.gamma, "Focal-loss focus parameter")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd.add_flag("--beta-literal", a.beta_literal, "Use beta = 1/|B| instead of 1 - 1/|B|");
  cmd.add_option("--latent-dim", a.latent_dim, "Embedding dimension")->capture_default_str()->check(CLI::PositiveNumber);
  cmd.add_option("--hidden-dim", a.hidden_dim, "Hidden layer width (0: latent dim)")->capture_default_str();
  cmd.add_option("--seed", a.seed, "Master seed")->capture_default_str();
  cmd.add_option("--folds", a.folds, "Stratified folds")->capture_default_str()->check(CLI::Range(2, 1000));
}

void add_data_flags(CLI::App& cmd, CommonArgs& a) {
  cmd.add_option("--data", a.data, "Dataset CSV")->required();
  cmd.add_option("--manifest", a.manifest, "Dataset manifest JSON (default: <data>.manifest.json if present)");
  cmd.add_option("--out", a.out, "Output directory")->capture_default_str();
}

gditd::TrainConfig config_of(const CommonArgs& a) {
  gditd::TrainConfig c;
  c.batch_size = a.batch_size;
  c.max_epochs = a.epochs;
  c.learning_rate = a.lr;
  c.gamma = a.gamma;
  c.beta_mode = a.beta_literal ? gditd::BetaMode::paper_literal : gditd::BetaMode::effective;
  c.seed = a.seed;
  c.latent_dim = a.latent_dim;
  c.hidden_dim = a.hidden_dim;
  return c;
}

std::string manifest_path_for(const CommonArgs& a) {
  if (!a.manifest.empty()) return a.manifest;
  fs::path p(a.data);
  fs::path sidecar = p;
  sidecar.replace_extension(".manifest.json");
  return fs::exists(sidecar) ? sidecar.string() : std::string();
}

gditd::TabularDataset load_dataset(const CommonArgs& a) {
  const std::string mpath = manifest_path_for(a);
  const gditd::CsvSchema schema = mpath.empty() ? gditd::CsvSchema{} : gditd::load_manifest(mpath);
  return gditd::load_csv(a.data, schema);
}

// Writes through a temporary file so readers never see a partial file.
void write_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw gditd::DataError("cannot write " + tmp.string());
    out << content;
    if (!out) throw gditd::DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json config_echo(const gditd::TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"epochs", c.max_epochs}, {"learning_rate", c.learning_rate},
          {"gamma", c.gamma}, {"beta_mode", gditd::to_string(c.beta_mode)}, {"latent_dim", c.latent_dim},
          {"hidden_dim", c.hidden()}, {"seed", c.seed}};
}

void write_manifest(const fs::path& dir, const std::string& command, const CommonArgs& a, const json& config,
                    const std::vector<std::string>& outputs, const json& extra = json::object()) {
  json m;
  m["command"] = command;
  m["tool_version"] = kToolVersion;
  m["kernels"] = std::string(gditd::kernels::active().name);
  m["config"] = config;
  m["data"] = a.data;
  m["dataset_manifest"] = manifest_path_for(a);
  m["seed"] = a.seed;
  m["output_dir"] = dir.string();
  m["outputs"] = outputs;
  m["created_at"] = utc_timestamp();
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  write_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

std::string num(const std::optional<double>& v) { return v ? json(*v).dump() : std::string(); }

int run_train(const CommonArgs& a) {
  const auto method = gditd::method_from_string(a.method);
  const auto data = load_dataset(a);
  const auto config = config_of(a);
  const gditd::Protocol protocol{a.folds, a.mdsr.at(0)};
  const fs::path dir(a.out);
  fs::create_directories(dir);
  const auto run = gditd::holdout_run(method, data, config, protocol);
  gditd::save_checkpoint(run.trained.model, dir / "checkpoint.json.tmp");
  fs::rename(dir / "checkpoint.json.tmp", dir / "checkpoint.json");
  write_atomic(dir / "losses.csv", run.trained.losses.csv());
  write_atomic(dir / "report.json", gditd::to_json(run.eval.report).dump(2) + "\n");
  write_atomic(dir / "roc.csv", gditd::curve_csv(run.eval.roc, "fpr", "tpr"));
  write_atomic(dir / "pr.csv", gditd::curve_csv(run.eval.pr, "recall", "precision"));
  json cfg = config_echo(config);
  cfg["method"] = a.method;
  cfg["mdsr"] = protocol.mdsr;
  cfg["folds"] = protocol.folds;
  write_manifest(dir, "train", a, cfg, {"checkpoint.json", "losses.csv", "report.json", "roc.csv", "pr.csv"});
  std::cout << gditd::to_json(run.eval.report).dump(2) << "\n";
  return 0;
}

int run_evaluate(const CommonArgs& a, const std::string& checkpoint) {
  const auto model = gditd::load_checkpoint(checkpoint);
  const auto data = load_dataset(a);
  gditd::require(data.class_names == model.class_names, "dataset classes differ from the checkpoint's classes");
  std::vector<std::size_t> rows(data.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  gditd::Protocol protocol{0, 1.0};
  const auto echo = gditd::make_echo(model.method, model.config, protocol);
  const auto eval = gditd::evaluate_model(model, data, rows, echo);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_atomic(dir / "report.json", gditd::to_json(eval.report).dump(2) + "\n");
  write_atomic(dir / "roc.csv", gditd::curve_csv(eval.roc, "fpr", "tpr"));
  write_atomic(dir / "pr.csv", gditd::curve_csv(eval.pr, "recall", "precision"));
  json cfg = config_echo(model.config);
  cfg["method"] = gditd::to_string(model.method);
  write_manifest(dir, "evaluate", a, cfg, {"report.json", "roc.csv", "pr.csv"}, {{"checkpoint", checkpoint}});
  std::cout << gditd::to_json(eval.report).dump(2) << "\n";
  return 0;
}

std::vector<gditd::Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<gditd::Method> out;
  for (const auto& n : names) out.push_back(gditd::method_from_string(n));
  return out;
}

std::string mdsr_tag(double v) {
  std::string s = json(v).dump();
  for (char& c : s) {
    if (c == '.') c = 'p';
  }
  return s;
}

int run_benchmark(const CommonArgs& a, const std::vector<std::string>& method_names) {
  const auto methods = parse_methods(method_names);
  for (double m : a.mdsr) gditd::require(m > 0.0 && m <= 1.0, "--mdsr values must lie in (0, 1]");
  const auto data = load_dataset(a);
  const auto config = config_of(a);
  const fs::path dir(a.out);
  fs::create_directories(dir / "cells");
  std::ostringstream table;
  table << "method,mdsr,metric,value,status,report\n";
  std::vector<std::string> outputs{"table.csv"};
  json failures = json::array();
  int status = 0;
  const char* metrics[] = {"id_accuracy", "minority_aupr", "ood_tnr_at_85tpr", "ood_auroc", "ood_aupr"};
  for (auto method : methods) {
    for (double mdsr : a.mdsr) {
      const std::string name = gditd::to_string(method);
      const std::string rel = "cells/" + name + "_mdsr" + mdsr_tag(mdsr) + ".json";
      try {
        const auto result = gditd::kfold_fit_eval(method, data, config, gditd::Protocol{a.folds, mdsr});
        json cell = gditd::to_json(result.mean);
        cell["folds"] = json::array();
        for (const auto& f : result.folds) cell["folds"].push_back(gditd::to_json(f));
        write_atomic(dir / rel, cell.dump(2) + "\n");
        outputs.push_back(rel);
        for (const char* metric : metrics) {
          const auto& v = cell[metric];
          table << name << ',' << json(mdsr).dump() << ',' << metric << ',' << (v.is_null() ? "" : v.dump())
                << ",ok," << rel << '\n';
        }
      } catch (const gditd::NumericError& e) {
        std::cerr << "cell " << name << " mdsr=" << mdsr << " failed: " << e.what() << "\n";
        failures.push_back({{"method", name}, {"mdsr", mdsr}, {"error", e.what()}});
        for (const char* metric : metrics) table << name << ',' << json(mdsr).dump() << ',' << metric << ",,failed,\n";
        status = 3;
      }
    }
  }
  write_atomic(dir / "table.csv", table.str());
  json cfg = config_echo(config);
  cfg["methods"] = method_names;
  cfg["mdsr"] = a.mdsr;
  cfg["folds"] = a.folds;
  write_manifest(dir, "benchmark", a, cfg, outputs, {{"failed_cells", failures}});
  std::cout << table.str();
  return status;
}

int run_ablate(const CommonArgs& a) {
  gditd::require(a.method == "gditd", "ablate supports --method gditd only");
  const auto data = load_dataset(a);
  const auto config = config_of(a);
  const gditd::Protocol protocol{a.folds, a.mdsr.at(0)};
  const fs::path dir(a.out);
  fs::create_directories(dir / "variants");
  const auto rows = gditd::ablate(data, config, protocol);
  std::ostringstream table;
  table << "variant,loss_terms,id_accuracy,ood_aupr,minority_aupr,report\n";
  std::vector<std::string> outputs{"table.csv"};
  for (const auto& row : rows) {
    const std::string rel = "variants/" + row.variant + ".json";
    const json j = gditd::to_json(row.report);
    write_atomic(dir / rel, j.dump(2) + "\n");
    outputs.push_back(rel);
    table << row.variant << ',' << gditd::to_string(row.terms) << ',' << j["id_accuracy"].dump() << ','
          << num(row.report.ood_aupr) << ',' << num(row.report.minority_aupr) << ',' << rel << '\n';
  }
  write_atomic(dir / "table.csv", table.str());
  json cfg = config_echo(config);
  cfg["mdsr"] = protocol.mdsr;
  cfg["folds"] = protocol.folds;
  write_manifest(dir, "ablate", a, cfg, outputs);
  std::cout << table.str();
  return 0;
}

struct BlobArgs {
  gditd::BlobSpec spec;
  std::string out = "blobs.csv";
};

int run_blobs(const BlobArgs& b) {
  const auto data = gditd::make_blobs(b.spec);
  fs::path csv(b.out);
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  gditd::save_csv(data, csv, "label");
  fs::path sidecar = csv;
  sidecar.replace_extension(".manifest.json");
  gditd::save_manifest(gditd::schema_of(data, "label"), sidecar);
  std::cout << "wrote " << csv.string() << " (" << data.rows() << " rows) and " << sidecar.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-descriptor OOD detection for imbalanced tabular data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  CommonArgs train_args, eval_args, bench_args, ablate_args;
  std::string checkpoint;
  std::vector<std::string> methods{"gditd", "softmax", "mahalanobis"};
  BlobArgs blob_args;

  auto* train = app.add_subcommand("train", "Train one model on a holdout split and report");
  add_data_flags(*train, train_args);
  add_training_flags(*train, train_args);
  train->add_option("--method", train_args.method, "gditd | softmax | mahalanobis")
      ->capture_default_str()
      ->check(CLI::IsMember({"gditd", "softmax", "mahalanobis"}));
  train->add_option("--mdsr", train_args.mdsr, "Minority down-sampling ratio")->expected(1)->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "Score a dataset with a saved checkpoint");
  add_data_flags(*evaluate, eval_args);
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();

  auto* bench = app.add_subcommand("benchmark", "Cross-validated MDSR sweep across methods");
  add_data_flags(*bench, bench_args);
  add_training_flags(*bench, bench_args);
  bench->add_option("--method,--methods", methods, "Methods to compare")
      ->delimiter(',')
      ->check(CLI::IsMember({"gditd", "softmax", "mahalanobis"}))
      ->capture_default_str();
  bench->add_option("--mdsr", bench_args.mdsr, "MDSR values, comma separated")->delimiter(',')->capture_default_str();

  auto* abl = app.add_subcommand("ablate", "Loss-term ablation: each term alone, each left out, all");
  add_data_flags(*abl, ablate_args);
  add_training_flags(*abl, ablate_args);
  abl->add_option("--method", ablate_args.method, "Must be gditd")->capture_default_str();
  abl->add_option("--mdsr", ablate_args.mdsr, "Minority down-sampling ratio")->expected(1)->capture_default_str();

  auto* blobs = app.add_subcommand("blobs", "Write a synthetic Gaussian-blob dataset with manifest");
  blobs->add_option("--out", blob_args.out, "Output CSV path")->capture_default_str();
  blobs->add_option("--classes", blob_args.spec.classes, "ID classes")->capture_default_str();
  blobs->add_option("--per-class", blob_args.spec.per_class, "Rows per class")->capture_default_str();
  blobs->add_option("--dim", blob_args.spec.dim, "Feature dimension")->capture_default_str();
  blobs->add_option("--separation", blob_args.spec.separation, "Distance between ID centers")->capture_default_str();
  blobs->add_option("--ood-offset", blob_args.spec.ood_offset, "Distance of the OOD center")->capture_default_str();
  blobs->add_option("--imbalance", blob_args.spec.imbalance, "Per-class fractions")->delimiter(',');
  blobs->add_option("--seed", blob_args.spec.seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return run_train(train_args);
    if (*evaluate) return run_evaluate(eval_args, checkpoint);
    if (*bench) return run_benchmark(bench_args, methods);
    if (*abl) return run_ablate(ablate_args);
    if (*blobs) return run_blobs(blob_args);
  } catch (const gditd::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const gditd::ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
