// Experiment orchestration: identity-map universality, determinism under a
// fixed master seed (including across thread counts), emission formats,
// UMDS-backed sources, ensembles, exact test-error helper.
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ulab/experiment.hpp"
#include "ulab/umds.hpp"

using namespace ulab;
namespace fs = std::filesystem;

namespace {

MixtureSpec latent_two_cluster(int d, double mean_norm, double var) {
  Vec mu = Vec::Zero(d);
  mu(0) = mean_norm;
  MixtureSpec spec;
  spec.p = d;
  for (int c = 0; c < 2; ++c) {
    ClusterSpec cl;
    cl.weight = 0.5;
    cl.mean = c == 0 ? mu : Vec(-mu);
    cl.diagonal = true;
    cl.cov_diag = Vec::Constant(d, var);
    spec.clusters.push_back(cl);
  }
  return spec;
}

ExperimentConfig small_universality(bool identity) {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::universality_curve;
  cfg.data.kind = DataSourceConfig::Kind::feature_map;
  cfg.data.mixture = latent_two_cluster(24, 1.0, 1.0);
  cfg.data.feature_p = 36;
  cfg.data.activation = identity ? "identity" : "tanh-centered";
  cfg.data.teacher.rule = LabelRule::cluster_index;
  cfg.data.labels_pm1 = true;
  cfg.problem.loss = Loss::squared;
  cfg.problem.lambda = 0.01;
  cfg.metric_train = Metric::mse;
  cfg.metric_test = Metric::mse;
  cfg.alpha_grid = {0.5, 2.0};
  cfg.n_test = 3000;
  cfg.seeds = 5;
  cfg.moment_samples = 30000;
  return cfg;
}

}  // namespace

TEST_CASE("universality curve: identity features make data and gmm statistically equal") {
  const ExperimentConfig cfg = small_universality(true);
  const ResultTable table = run_universality_curve(cfg, Rng(21));
  CHECK(table.failures.empty());
  CHECK(table.rows.size() == 2 * 2 * 5);

  // every (alpha, seed) appears for both variants
  for (double alpha : cfg.alpha_grid)
    for (int seed = 0; seed < cfg.seeds; ++seed) {
      int found = 0;
      for (const ResultRow& row : table.rows)
        if (row.alpha == alpha && row.seed == seed) ++found;
      CHECK(found == 2);
    }

  const auto aggs = aggregate_table(table);
  for (double alpha : cfg.alpha_grid) {
    const Aggregate *data = nullptr, *gmm = nullptr;
    for (const Aggregate& a : aggs) {
      if (a.alpha == alpha && a.variant == "data") data = &a;
      if (a.alpha == alpha && a.variant == "gmm") gmm = &a;
    }
    REQUIRE(data != nullptr);
    REQUIRE(gmm != nullptr);
    const double se = std::sqrt(data->test_se * data->test_se + gmm->test_se * gmm->test_se);
    CHECK(std::abs(data->test_mean - gmm->test_mean) <= 3.5 * std::max(se, 1e-12));
  }
}

TEST_CASE("full-run determinism, including across thread counts") {
  ExperimentConfig cfg = small_universality(false);
  cfg.seeds = 3;
  cfg.n_test = 1000;
  cfg.moment_samples = 10000;
  const ResultTable t1 = run_universality_curve(cfg, Rng(33));
  const ResultTable t2 = run_universality_curve(cfg, Rng(33));
  CHECK(results_to_csv(t1) == results_to_csv(t2));

  ExperimentConfig threaded = cfg;
  threaded.threads = 3;
  const ResultTable t3 = run_universality_curve(threaded, Rng(33));
  CHECK(results_to_csv(t1) == results_to_csv(t3));
  CHECK(aggregates_to_csv(t1) == aggregates_to_csv(t3));

  // different master seed changes the table
  const ResultTable t4 = run_universality_curve(cfg, Rng(34));
  CHECK(results_to_csv(t1) != results_to_csv(t4));
}

TEST_CASE("emission: empty table, csv layout, json schema round trip") {
  ResultTable empty;
  CHECK(results_to_csv(empty) ==
        "kind,alpha,seed,variant,train_error,test_error,metric_name,metric_value\n");

  ResultTable table;
  ResultRow row;
  row.kind = "universality-curve";
  row.alpha = 0.5;
  row.seed = 1;
  row.variant = "data";
  row.train_error = 0.25;
  row.test_error = 0.5;
  row.extras = {{"overlap", 0.125}};
  table.rows.push_back(row);
  const std::string csv = results_to_csv(table);
  CHECK(csv.find("universality-curve,0.5,1,data,0.25,0.5,,\n") != std::string::npos);
  CHECK(csv.find("universality-curve,0.5,1,data,0.25,0.5,overlap,0.125\n") != std::string::npos);

  const std::string json_text = results_to_json(table);
  validate_results_json(json_text);
  CHECK_THROWS_AS(validate_results_json("{\"rows\": [{}]}"), ConfigError);

  const fs::path dir = fs::temp_directory_path() / "ulab_emit_test";
  fs::remove_all(dir);
  emit_results(table, "csv", dir.string());
  CHECK(fs::exists(dir / "results.csv"));
  CHECK(fs::exists(dir / "aggregates.csv"));
  emit_results(table, "json", dir.string());
  CHECK(fs::exists(dir / "results.json"));
  CHECK_THROWS_AS(emit_results(table, "yaml", dir.string()), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("umds-backed source runs the identical pipeline") {
  // export a synthetic labeled dataset, then ingest it as an external source
  const fs::path dir = fs::temp_directory_path() / "ulab_umds_source";
  fs::remove_all(dir);
  MixtureSpec spec = latent_two_cluster(10, 0.9, 1.0);
  Rng rng(44);
  Dataset ds = sample_mixture(spec, 4000, rng);
  TeacherSpec teacher;
  teacher.rule = LabelRule::cluster_index;
  ds = label_dataset(ds, teacher, rng);
  for (int i = 0; i < ds.n(); ++i) ds.y(i, 0) = ds.y(i, 0) == 0.0 ? 1.0 : -1.0;
  ds.label_kind = LabelKind::real;
  save_external_dataset(ds, dir.string());

  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::universality_curve;
  cfg.data.kind = DataSourceConfig::Kind::umds;
  cfg.data.umds_path = dir.string();
  cfg.problem.loss = Loss::squared;
  cfg.problem.lambda = 0.05;
  cfg.alpha_grid = {1.0};
  cfg.n_test = 500;
  cfg.seeds = 2;
  const ResultTable table = run_universality_curve(cfg, Rng(45));
  CHECK(table.failures.empty());
  CHECK(table.rows.size() == 4);
  fs::remove_all(dir);
}

TEST_CASE("ensemble: M=1 degenerates, M=2 helps on a symmetric instance") {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::ensemble;
  cfg.data.kind = DataSourceConfig::Kind::feature_map;
  cfg.data.mixture = latent_two_cluster(20, 1.2, 1.0);
  cfg.data.feature_p = 30;
  cfg.data.activation = "tanh-centered";
  cfg.problem.loss = Loss::logistic_binary;
  cfg.problem.lambda = 0.01;
  cfg.metric_train = Metric::zero_one_sign;
  cfg.metric_test = Metric::zero_one_sign;
  cfg.alpha_grid = {2.0};
  cfg.n_test = 4000;
  cfg.seeds = 3;
  cfg.moment_samples = 20000;
  cfg.ensemble_m = 2;

  const ResultTable table = run_ensemble(cfg, Rng(55));
  CHECK(table.failures.empty());
  for (const ResultRow& row : table.rows) {
    double individual = -1.0;
    for (const auto& [name, value] : row.extras)
      if (name == "individual_test_error") individual = value;
    REQUIRE(individual >= 0.0);
    const double se = 3.0 * std::sqrt(0.25 / cfg.n_test);
    CHECK(row.test_error <= individual + 3.0 * se);  // averaging does not hurt
  }

  // data and gmm ensemble errors agree within combined error bars
  const auto aggs = aggregate_table(table);
  REQUIRE(aggs.size() == 2);
  const double se = std::sqrt(aggs[0].test_se * aggs[0].test_se + aggs[1].test_se * aggs[1].test_se);
  CHECK(std::abs(aggs[0].test_mean - aggs[1].test_mean) <= 4.0 * std::max(se, 1e-3));

  ExperimentConfig single = cfg;
  single.ensemble_m = 1;
  single.seeds = 2;
  const ResultTable solo = run_ensemble(single, Rng(56));
  CHECK(solo.failures.empty());
  for (const ResultRow& row : solo.rows) {
    double individual = -1.0;
    for (const auto& [name, value] : row.extras)
      if (name == "individual_test_error") individual = value;
    CHECK(row.test_error == doctest::Approx(individual));  // M=1: ensemble == single
  }
}

TEST_CASE("exact gmm test error matches a Monte Carlo evaluation") {
  MixtureSpec spec = latent_two_cluster(8, 0.8, 0.9);
  Rng rng(66);
  Dataset train = sample_mixture(spec, 400, rng, "train");
  TeacherSpec teacher;
  teacher.rule = LabelRule::cluster_index;
  train = label_dataset(train, teacher, rng);
  for (int i = 0; i < train.n(); ++i) train.y(i, 0) = train.y(i, 0) == 0.0 ? 1.0 : -1.0;
  train.label_kind = LabelKind::real;
  const Estimator est = fit_ridge(train, 0.05);

  const double exact = exact_gmm_test_error(est, spec, teacher, 0.0, Metric::zero_one_sign, true);
  Dataset big = sample_mixture(spec, 200000, rng, "test");
  big = label_dataset(big, teacher, rng);
  for (int i = 0; i < big.n(); ++i) big.y(i, 0) = big.y(i, 0) == 0.0 ? 1.0 : -1.0;
  big.label_kind = LabelKind::real;
  const double mc = test_error(est, big, Metric::zero_one_sign);
  CHECK(std::abs(exact - mc) < 3.0 * std::sqrt(0.25 / 200000.0) + 1e-3);
}

TEST_CASE("experiment config json: parsing and validation errors") {
  const std::string good = R"({
    "kind": "universality-curve",
    "data": {
      "kind": "feature-map",
      "latent_mixture": {"p": 4, "clusters": [
        {"weight": 0.5, "mean": [1, 0, 0, 0], "cov": {"kind": "diag", "data": [1, 1, 1, 1]}},
        {"weight": 0.5, "mean": [-1, 0, 0, 0], "cov": {"kind": "diag", "data": [1, 1, 1, 1]}}
      ]},
      "p": 6,
      "activation": "tanh-centered",
      "teacher": {"rule": "cluster-index"},
      "labels_pm1": true
    },
    "problem": {"loss": "squared", "lambda": 0.01},
    "metric_train": "mse",
    "metric_test": "mse",
    "alpha_grid": [0.5, 1.0],
    "n_test": 100,
    "seeds": 2,
    "moment_samples": 5000
  })";
  const ExperimentConfig cfg = experiment_config_from_json(good);
  CHECK(cfg.data.feature_p == 6);
  CHECK(cfg.alpha_grid.size() == 2);
  const ResultTable table = run_experiment(cfg, Rng(77));
  CHECK(table.rows.size() == 8);

  CHECK_THROWS_AS(experiment_config_from_json("{\"kind\": \"nope\"}"), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json("not json"), ConfigError);
}

TEST_CASE("replica-validation runner produces replica and finite-size rows") {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::replica_validation;
  cfg.data.kind = DataSourceConfig::Kind::mixture;
  const int d = 60;
  MixtureSpec spec;
  spec.p = d;
  {
    ClusterSpec cl;
    cl.weight = 1.0;
    cl.mean = Vec::Zero(d);
    cl.diagonal = true;
    cl.cov_diag = Vec::Constant(d, 1.0);
    spec.clusters.push_back(cl);
  }
  cfg.data.mixture = spec;
  Rng trng(7);
  RngStream ts = trng.stream("teacher");
  Mat theta_star(1, d);
  for (int j = 0; j < d; ++j) theta_star(0, j) = ts.normal();
  theta_star /= theta_star.norm();
  cfg.data.teacher.rule = LabelRule::linear_regression;
  cfg.data.teacher.theta_star = theta_star;
  cfg.data.teacher.noise_scale = 0.5;
  cfg.problem.loss = Loss::squared;
  cfg.problem.lambda = 0.1;
  cfg.alpha_grid = {2.0};
  cfg.seeds = 3;
  cfg.moment_samples = 20000;
  cfg.n_test = 100;

  const ResultTable table = run_replica_validation(cfg, Rng(88));
  CHECK(table.failures.empty());
  int replica_rows = 0, data_rows = 0, gmm_rows = 0, measure_extras = 0;
  for (const ResultRow& row : table.rows) {
    if (row.variant == "replica") ++replica_rows;
    if (row.variant == "data") ++data_rows;
    if (row.variant == "gmm") ++gmm_rows;
    for (const auto& [name, value] : row.extras)
      if (name.rfind("measure/", 0) == 0) {
        ++measure_extras;
        CHECK(std::isfinite(value));
      }
  }
  CHECK(replica_rows == 1);
  CHECK(data_rows == 3);
  CHECK(gmm_rows == 3);
  CHECK(measure_extras >= 3);

  // the replica prediction sits near the finite-size rows even at d=60
  const auto aggs = aggregate_table(table);
  double rep_test = -1.0, data_test = -1.0;
  for (const Aggregate& a : aggs) {
    if (a.variant == "replica") rep_test = a.test_mean;
    if (a.variant == "data") data_test = a.test_mean;
  }
  CHECK(std::abs(rep_test - data_test) / data_test < 0.2);
}

TEST_CASE("gibbs-overlap runner reports overlaps and q(s) diagnostics") {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::gibbs_overlap;
  cfg.data.kind = DataSourceConfig::Kind::mixture;
  cfg.data.mixture = latent_two_cluster(12, 1.0, 1.0);
  cfg.data.teacher.rule = LabelRule::cluster_index;
  cfg.data.labels_pm1 = true;
  cfg.problem.loss = Loss::squared;
  cfg.problem.lambda = 0.1;
  cfg.metric_train = Metric::mse;
  cfg.metric_test = Metric::zero_one_sign;
  cfg.alpha_grid = {2.0};
  cfg.seeds = 2;
  cfg.n_test = 500;
  cfg.moment_samples = 10000;
  cfg.gibbs.beta = 2.0;
  cfg.gibbs.n_steps = 12000;
  cfg.gibbs.burn_in = 2000;
  cfg.gibbs.thinning = 5;
  cfg.gibbs.step_size = 0.2;
  cfg.s_grid = {-0.1, 0.0, 0.1};

  const ResultTable table = run_gibbs_overlap(cfg, Rng(89));
  CHECK(table.failures.empty());
  int overlap_rows = 0, qofs_rows = 0;
  for (const ResultRow& row : table.rows) {
    bool has_overlap = false, has_acceptance = false;
    for (const auto& [name, value] : row.extras) {
      if (name == "overlap_erm_bayes") has_overlap = true;
      if (name == "acceptance_rate") has_acceptance = std::isfinite(value);
      if (name == "max_second_difference") {
        ++qofs_rows;
        CHECK(value <= 1e-6);  // concave within solver tolerance
      }
    }
    if (has_overlap && has_acceptance) ++overlap_rows;
  }
  CHECK(overlap_rows == 4);  // 2 seeds x 2 variants
  CHECK(qofs_rows == 2);     // one diagnostics row per variant
}
