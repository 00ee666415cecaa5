#include <cstdlib>
#include <set>

#include "doctest.h"
#include "gditd/experiment.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using gditd::Method;

namespace {

gditd::TabularDataset blobs(std::size_t per_class, std::uint64_t seed) {
  gditd::BlobSpec spec;
  spec.per_class = per_class;
  spec.seed = seed;
  return gditd::make_blobs(spec);
}

gditd::TrainConfig quick(std::uint64_t seed) {
  gditd::TrainConfig c;
  c.max_epochs = 3;
  c.latent_dim = 16;
  c.batch_size = 32;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("method names") {
  for (Method m : {Method::gditd, Method::softmax, Method::mahalanobis}) {
    CHECK(gditd::method_from_string(gditd::to_string(m)) == m);
  }
  CHECK_THROWS_AS(gditd::method_from_string("svm"), gditd::ContractError);
  CHECK(gditd::to_string(gditd::LossTerms{}) == "pull+score+efl1+efl2");
  CHECK(gditd::to_string(gditd::LossTerms{false, true, false, true}) == "score+efl2");
}

TEST_CASE("checkpoints reproduce predictions exactly") {
  const auto data = blobs(40, 81);
  const auto rows = data.id_rows();
  gditd::Rng rng(81);
  const gditd::Matrix probe = oracle::random_matrix(rng, 1000, data.feature_count(), 15.0);
  TempDir dir;
  for (Method m : {Method::gditd, Method::softmax, Method::mahalanobis}) {
    const auto trained = gditd::train_model(m, data, rows, quick(81)).model;
    const auto path = dir / (gditd::to_string(m) + ".json");
    gditd::save_checkpoint(trained, path);
    const auto loaded = gditd::load_checkpoint(path);
    const auto a = trained.score(probe);
    const auto b = loaded.score(probe);
    REQUIRE(a.size() == 1000);
    REQUIRE(b.size() == 1000);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].label == b[i].label);
      CHECK(a[i].confidence == b[i].confidence);
      CHECK(a[i].class_confidence == b[i].class_confidence);
    }
    CHECK(gditd::checkpoint_json(loaded) == gditd::checkpoint_json(trained));
    CHECK(loaded.method == m);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  TempDir dir;
  CHECK_THROWS(gditd::load_checkpoint(dir.write("bad.json", "{\"format\": \"other\"}")));
  CHECK_THROWS(gditd::load_checkpoint(dir.write("junk.json", "not json")));
}

TEST_CASE("training rejects OOD rows") {
  const auto data = blobs(10, 82);
  std::vector<std::size_t> all(data.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  CHECK_THROWS_AS(gditd::train_model(Method::gditd, data, all, quick(1)), gditd::ContractError);
}

TEST_CASE("loss table has one row per epoch") {
  const auto data = blobs(20, 83);
  const auto out = gditd::train_model(Method::gditd, data, data.id_rows(), quick(83));
  CHECK(out.losses.rows.size() == 3);
  CHECK(out.losses.columns.front() == "epoch");
  const auto soft = gditd::train_model(Method::softmax, data, data.id_rows(), quick(83));
  CHECK(soft.losses.rows.size() == 3);
}

TEST_CASE("cell seeds depend on every coordinate only") {
  std::set<std::uint64_t> seen;
  for (Method m : {Method::gditd, Method::softmax}) {
    for (double mdsr : {1.0, 0.3, 0.1}) {
      for (std::size_t f = 0; f < 5; ++f) seen.insert(gditd::cell_seed(7, m, mdsr, f));
    }
  }
  CHECK(seen.size() == 30);
  CHECK(gditd::cell_seed(7, Method::gditd, 0.1, 2) == gditd::cell_seed(7, Method::gditd, 0.1, 2));
  CHECK(gditd::cell_seed(7, Method::gditd, 0.1, 2) != gditd::cell_seed(8, Method::gditd, 0.1, 2));
}

TEST_CASE("mahalanobis scores the softmax network of the same cell") {
  const auto data = blobs(20, 87);
  const gditd::Protocol protocol{5, 1.0};
  const auto soft = gditd::holdout_run(Method::softmax, data, quick(87), protocol);
  const auto maha = gditd::holdout_run(Method::mahalanobis, data, quick(87), protocol);
  CHECK(std::get<gditd::MahalanobisModel>(maha.trained.model.body).net ==
        std::get<gditd::SoftmaxModel>(soft.trained.model.body).net);
}

TEST_CASE("cross-validation does not depend on the worker count") {
  const auto data = blobs(30, 84);
  const gditd::Protocol protocol{3, 0.5};
  ::setenv("GDITD_THREADS", "1", 1);
  const auto serial = gditd::kfold_fit_eval(Method::gditd, data, quick(84), protocol);
  ::setenv("GDITD_THREADS", "3", 1);
  const auto parallel = gditd::kfold_fit_eval(Method::gditd, data, quick(84), protocol);
  ::unsetenv("GDITD_THREADS");
  REQUIRE(serial.folds.size() == 3);
  for (std::size_t f = 0; f < 3; ++f) CHECK(gditd::to_json(serial.folds[f]) == gditd::to_json(parallel.folds[f]));
  CHECK(gditd::to_json(serial.mean) == gditd::to_json(parallel.mean));
}

TEST_CASE("holdout runs are reproducible") {
  const auto data = blobs(30, 85);
  const gditd::Protocol protocol{5, 0.5};
  const auto a = gditd::holdout_run(Method::gditd, data, quick(85), protocol);
  const auto b = gditd::holdout_run(Method::gditd, data, quick(85), protocol);
  CHECK(gditd::to_json(a.eval.report).dump() == gditd::to_json(b.eval.report).dump());
  CHECK(a.eval.report.ood_samples == 30);
  CHECK(a.eval.report.echo.mdsr == 0.5);
}

TEST_CASE("ablation covers nine variants and the full row matches a plain run") {
  const auto variants = gditd::ablation_variants();
  REQUIRE(variants.size() == 9);
  std::set<std::string> names;
  for (const auto& [name, terms] : variants) names.insert(name);
  CHECK(names.size() == 9);
  CHECK(variants.back().second == gditd::LossTerms{});

  const auto data = blobs(20, 86);
  const gditd::Protocol protocol{5, 1.0};
  auto cfg = quick(86);
  cfg.max_epochs = 2;
  const auto rows = gditd::ablate(data, cfg, protocol);
  REQUIRE(rows.size() == 9);
  const auto plain = gditd::holdout_run(Method::gditd, data, cfg, protocol);
  CHECK(gditd::to_json(rows.back().report) == gditd::to_json(plain.eval.report));
}
