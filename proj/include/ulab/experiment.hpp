// End-to-end experiment orchestration: universality learning curves, replica
// validation, Gibbs/ERM overlap, ensembling, CLT decay. Seeds split into
// named streams (data, gmm, moments, test, chain, features/m) so variants
// never share randomness.
#pragma once

#include <optional>

#include "ulab/clt.hpp"
#include "ulab/erm.hpp"
#include "ulab/feature_map.hpp"
#include "ulab/gibbs.hpp"
#include "ulab/moments.hpp"
#include "ulab/replica.hpp"

namespace ulab {

enum class ExperimentKind {
  universality_curve,
  replica_validation,
  gibbs_overlap,
  ensemble,
  clt_decay
};

struct DataSourceConfig {
  enum class Kind { mixture, feature_map, umds } kind = Kind::mixture;
  MixtureSpec mixture;  // the mixture itself, or the latent mixture of a feature map
  int feature_p = 0;
  std::string activation = "tanh-centered";
  std::string umds_path;
  TeacherSpec teacher;
  bool labels_pm1 = false;  // store cluster-index labels as +-1 reals
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::universality_curve;
  DataSourceConfig data;
  ErmProblem problem;
  Metric metric_train = Metric::mse;
  Metric metric_test = Metric::mse;
  std::vector<double> alpha_grid;
  int n_test = 10000;
  int seeds = 10;
  long long moment_samples = 100000;
  int threads = 1;
  std::string output;

  // replica-validation
  double replica_damping = 0.5;
  double replica_tol = 1e-8;
  int replica_max_iter = 500;
  double teacher_noise_var = 0.0;

  // gibbs-overlap
  GibbsConfig gibbs;
  std::vector<double> s_grid;

  // ensemble
  int ensemble_m = 2;

  // clt-decay; the study lives in the proportional regime, so the per-cluster
  // sample budget scales with p (alpha-style), floored at a minimum count
  std::vector<int> p_grid;
  int n_random_directions = 64;
  int n_spike_directions = 8;
  int clt_samples_per_p = 25;          // samples per cluster = this * p
  int clt_samples_per_cluster = 2000;  // lower bound on the per-cluster budget
  std::string contrast_activation = "sign";
  double clt_latent_ratio = 1.5;       // p / d
  double clt_latent_mean_norm = 1.5;   // latent cluster means +-mu with this norm
  double clt_latent_sd = 3.0;          // latent coordinate standard deviation
  int contrast_seeds = 2;

  void validate() const;
};

struct ResultRow {
  std::string kind;
  double alpha = 0.0;
  int seed = 0;
  std::string variant;  // data | gmm | replica | ...
  double train_error = 0.0;
  double test_error = 0.0;
  std::vector<std::pair<std::string, double>> extras;
};

struct FailureRecord {
  double alpha = 0.0;
  int seed = 0;
  std::string variant;
  std::string message;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<FailureRecord> failures;
};

struct Aggregate {
  double alpha = 0.0;
  std::string variant;
  long long count = 0;
  double train_mean = 0.0, train_se = 0.0;
  double test_mean = 0.0, test_se = 0.0;
};

// Rows are sorted by (alpha, variant, seed) before reduction, so aggregates
// are bit-identical regardless of execution order.
std::vector<Aggregate> aggregate_table(const ResultTable& table);

ResultTable run_universality_curve(const ExperimentConfig& cfg, const Rng& rng);
ResultTable run_replica_validation(const ExperimentConfig& cfg, const Rng& rng);
ResultTable run_gibbs_overlap(const ExperimentConfig& cfg, const Rng& rng);
ResultTable run_ensemble(const ExperimentConfig& cfg, const Rng& rng);
ResultTable run_clt_decay(const ExperimentConfig& cfg, const Rng& rng);
ResultTable run_experiment(const ExperimentConfig& cfg, const Rng& rng);

// Deterministic column order (kind, alpha, seed, variant, train_error,
// test_error, metric_name, metric_value); extras become extra rows.
std::string results_to_csv(const ResultTable& table);
std::string aggregates_to_csv(const ResultTable& table);
std::string results_to_json(const ResultTable& table);
// Structural check of the emitted JSON; throws ConfigError on violations.
void validate_results_json(const std::string& text);

void emit_results(const ResultTable& table, const std::string& format, const std::string& dir);

ExperimentConfig experiment_config_from_json(const std::string& text);

// Exact test error of an estimator under a known Gaussian mixture + teacher:
// closed form per cluster (mse for linear teachers, sign error for +-1
// cluster labels).
double exact_gmm_test_error(const Estimator& est, const MixtureSpec& spec,
                            const TeacherSpec& teacher, double noise_var, Metric metric,
                            bool labels_pm1);

}  // namespace ulab
