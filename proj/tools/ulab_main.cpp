// ulab: mixture universality lab command line.
//
//   ulab gen        sample a labeled mixture dataset to UMDS
//   ulab moments    class-conditional moments of a UMDS dataset
//   ulab erm        fit an estimator and report train/test metrics
//   ulab gibbs      sample the Gibbs measure, summarize the chain
//   ulab replica    solve the replica fixed point, predict errors
//   ulab clt        conditional-CLT distance report for two datasets
//   ulab experiment orchestrated multi-seed experiment runs
//
// Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "ulab/clt.hpp"
#include "ulab/experiment.hpp"
#include "ulab/gibbs.hpp"
#include "ulab/moments.hpp"
#include "ulab/replica.hpp"
#include "ulab/umds.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace ulab;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& text) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failure for " + path);
}

int cmd_gen(const std::string& config, long long n, std::uint64_t seed, const std::string& out,
            const std::string& rule, double noise_scale, bool pm1) {
  const MixtureSpec spec = mixture_from_json(slurp(config));
  const Rng rng(seed);
  Dataset ds = sample_mixture(spec, static_cast<int>(n), rng, "gen");
  TeacherSpec teacher;
  teacher.rule = label_rule_from_string(rule);
  teacher.noise_scale = noise_scale;
  if (teacher.rule != LabelRule::cluster_index) {
    // default linear teacher: uniform direction on the sphere
    RngStream s = rng.stream("gen/teacher");
    Vec t(spec.p);
    for (int j = 0; j < spec.p; ++j) t(j) = s.normal();
    t.normalize();
    teacher.theta_star = t.transpose();
  }
  ds = label_dataset(ds, teacher, rng, "gen/labels");
  if (pm1) {
    if (spec.k() != 2 || teacher.rule != LabelRule::cluster_index)
      throw ConfigError("--pm1 needs a 2-cluster mixture with cluster-index labels");
    for (int i = 0; i < ds.n(); ++i) ds.y(i, 0) = ds.y(i, 0) == 0.0 ? 1.0 : -1.0;
    ds.label_kind = LabelKind::real;
  }
  save_external_dataset(ds, out);
  std::cout << "wrote UMDS dataset: n=" << ds.n() << " p=" << ds.p() << " -> " << out << "\n";
  return 0;
}

int cmd_moments(const std::string& in, const std::string& out, bool diagonal) {
  const Dataset ds = load_external_dataset(in);
  const ClassMoments m = estimate_class_moments(ds, diagonal);
  spit(out, moments_to_json(m));
  std::cout << "wrote class moments: k=" << m.k() << " p=" << m.p() << " -> " << out << "\n";
  return 0;
}

int cmd_erm(const std::string& data, const std::string& config, const std::string& test,
            const std::string& out, double tol) {
  const Dataset train = load_external_dataset(data);
  const ErmProblem prob = erm_problem_from_json(slurp(config));
  Estimator est;
  switch (prob.loss) {
    case Loss::squared: est = fit_ridge(train, prob.lambda); break;
    case Loss::logistic_binary: est = fit_logistic(train, prob.lambda, tol); break;
    case Loss::multiclass_xent: est = fit_multiclass(train, prob, tol); break;
  }
  fs::create_directories(out);
  spit((fs::path(out) / "estimator.json").string(), estimator_to_json(est));
  const Metric metric = prob.loss == Loss::squared          ? Metric::mse
                        : prob.loss == Loss::logistic_binary ? Metric::zero_one_sign
                                                              : Metric::zero_one_argmax;
  json metrics;
  metrics["train"] = {{"metric", metric_to_string(metric)},
                      {"value", test_error(est, train, metric)},
                      {"objective", empirical_risk(est, train, prob)}};
  if (!test.empty()) {
    const Dataset testset = load_external_dataset(test);
    metrics["test"] = {{"metric", metric_to_string(metric)},
                       {"value", test_error(est, testset, metric)}};
  }
  spit((fs::path(out) / "metrics.json").string(), metrics.dump(2));
  std::cout << "fit converged=" << est.report.converged << " grad_norm=" << est.report.grad_norm
            << " -> " << out << "\n";
  return 0;
}

GibbsConfig gibbs_config_from_json(const json& g) {
  GibbsConfig cfg;
  cfg.beta = g.value("beta", 1.0);
  cfg.n_steps = g.value("n_steps", 20000);
  cfg.burn_in = g.value("burn_in", 2000);
  cfg.thinning = g.value("thinning", 1);
  cfg.step_size = g.value("step_size", 0.1);
  if (g.contains("prior")) {
    const auto& pr = g["prior"];
    cfg.prior.kind = pr.value("kind", "gaussian") == std::string("uniform-ball")
                         ? PriorKind::uniform_ball
                         : PriorKind::gaussian;
    cfg.prior.tau2 = pr.value("tau2", 1.0);
    cfg.prior.radius = pr.value("radius", 1.0);
  }
  return cfg;
}

int cmd_gibbs(const std::string& data, const std::string& config, const std::string& out,
              std::uint64_t seed, bool dump_chain) {
  const Dataset train = load_external_dataset(data);
  json root;
  try {
    root = json::parse(slurp(config));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("gibbs config parse error: ") + e.what());
  }
  if (!root.contains("problem") || !root.contains("gibbs"))
    throw ConfigError("gibbs config needs 'problem' and 'gibbs' sections");
  const ErmProblem prob = erm_problem_from_json(root["problem"].dump());
  const GibbsConfig cfg = gibbs_config_from_json(root["gibbs"]);
  const Rng rng(seed);
  RngStream stream = rng.stream("chain");
  const SampleChain chain = gibbs_chain(prob, train, cfg, stream);
  const Estimator mean = posterior_mean(chain);

  Vec var = Vec::Zero(train.p());
  for (const Vec& s : chain.samples) {
    const Vec d = s - mean.theta.row(0).transpose();
    var += d.cwiseProduct(d);
  }
  var /= std::max(1, chain.size() - 1);

  json summary;
  summary["acceptance_rate"] = chain.acceptance_rate;
  summary["n_samples"] = chain.size();
  summary["mean"] = std::vector<double>(mean.theta.data(), mean.theta.data() + train.p());
  summary["cov_diagonal"] = std::vector<double>(var.data(), var.data() + var.size());
  const std::string fe = root.value("free_energy", "none");
  if (fe == "analytic") {
    summary["free_energy"] = {{"path", "analytic"},
                              {"value", free_energy_analytic(prob, train, cfg.beta, cfg.prior).value},
                              {"std_error", 0.0}};
  } else if (fe == "ti") {
    TiOptions ti;
    ti.max_std_error = root.value("ti_max_std_error", 1e-3);
    ti.steps_per_point = root.value("ti_steps_per_point", 20000);
    const FreeEnergyResult r = free_energy_ti(prob, train, cfg.beta, cfg.prior, rng, ti);
    summary["free_energy"] = {{"path", "ti"}, {"value", r.value}, {"std_error", r.std_error}};
  }
  fs::create_directories(out);
  spit((fs::path(out) / "chain_summary.json").string(), summary.dump(2));
  if (dump_chain) {
    std::ofstream bin(fs::path(out) / "chain.bin", std::ios::binary);
    for (const Vec& s : chain.samples)
      bin.write(reinterpret_cast<const char*>(s.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(s.size())));
    json sidecar = {{"rows", chain.size()},
                    {"cols", train.p()},
                    {"dtype", "f64le"},
                    {"order", "row-major"}};
    spit((fs::path(out) / "chain.json").string(), sidecar.dump(2));
  }
  std::cout << "chain: samples=" << chain.size() << " acceptance=" << chain.acceptance_rate
            << " -> " << out << "\n";
  return 0;
}

int cmd_replica(const std::string& config, const std::string& out, std::uint64_t seed,
                double damping, double tol, int max_iter, int mc_nodes, bool restart_check) {
  json root;
  try {
    root = json::parse(slurp(config));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("replica config parse error: ") + e.what());
  }
  ReplicaProblem rp;
  if (root.contains("moments_ref")) {
    // build from a diagonal moments JSON produced by `ulab moments --diagonal`
    const ClassMoments m = moments_from_json(slurp(root["moments_ref"].get<std::string>()));
    if (!m.diagonal) throw ConfigError("replica: moments_ref must be a diagonal moments file");
    const int K = m.k(), d = m.p();
    rp.weights.resize(K);
    rp.spectra.resize(K, d);
    rp.means_scaled.resize(K, d);
    const double sqd = std::sqrt(static_cast<double>(d));
    for (int k = 0; k < K; ++k) {
      rp.weights(k) = m.weight(k);
      rp.spectra.row(k) =
          m.covariance_diags[static_cast<std::size_t>(k)].cwiseMax(1e-12).transpose();
      rp.means_scaled.row(k) = sqd * m.means[static_cast<std::size_t>(k)].transpose();
    }
    rp.alpha = root.at("alpha").get<double>();
    rp.lambda = root.at("lambda").get<double>();
    const std::string loss = root.value("loss", "logistic-binary");
    rp.loss = loss == "squared"           ? ReplicaLoss::squared
              : loss == "logistic-binary" ? ReplicaLoss::logistic_binary
                                          : ReplicaLoss::multiclass_xent;
    if (rp.loss != ReplicaLoss::multiclass_xent) {
      rp.cluster_labels.resize(K);
      for (int k = 0; k < K; ++k) rp.cluster_labels(k) = k == 0 ? 1.0 : -1.0;
      if (root.contains("labels")) {
        const auto labels = root["labels"].get<std::vector<double>>();
        for (int k = 0; k < K && k < static_cast<int>(labels.size()); ++k)
          rp.cluster_labels(k) = labels[static_cast<std::size_t>(k)];
      }
    }
    rp.fit_bias = root.value("fit_bias", false);
  } else {
    rp = replica_problem_from_json(root.dump());
  }
  ReplicaOptions opt;
  opt.damping = damping;
  opt.tol = tol;
  opt.max_iter = max_iter;
  opt.mc_nodes = mc_nodes;
  const Rng rng(seed);
  const ReplicaState state = replica_fixed_point(rp, opt, rng);
  const ReplicaPredictions pred = predict_errors(state, rp, opt);

  fs::create_directories(out);
  spit((fs::path(out) / "state.json").string(), replica_state_to_json(state));
  json predictions = {{"train_loss", pred.train_loss},
                      {"test_error", pred.test_error},
                      {"residual", state.residual},
                      {"iterations", state.iterations}};
  if (restart_check) {
    // uniqueness diagnostic: rerun on a different damping trajectory
    ReplicaOptions opt2 = opt;
    opt2.damping = std::max(0.05, 0.5 * damping);
    const ReplicaState again = replica_fixed_point(rp, opt2, rng);
    const ReplicaPredictions pred2 = predict_errors(again, rp, opt2);
    predictions["restart_check"] = {
        {"test_error_delta", std::abs(pred.test_error - pred2.test_error)},
        {"train_loss_delta", std::abs(pred.train_loss - pred2.train_loss)}};
  }
  spit((fs::path(out) / "predictions.json").string(), predictions.dump(2));
  std::cout << "replica: residual=" << state.residual << " iterations=" << state.iterations
            << " train_loss=" << pred.train_loss << " test_error=" << pred.test_error << " -> "
            << out << "\n";
  return 0;
}

int cmd_clt(const std::string& data_path, const std::string& gmm_path, const std::string& config,
            const std::string& out, std::uint64_t seed) {
  const Dataset data = load_external_dataset(data_path);
  const Dataset gmm = load_external_dataset(gmm_path);
  json root = json::object();
  if (!config.empty()) {
    try {
      root = json::parse(slurp(config));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("clt config parse error: ") + e.what());
    }
  }
  const Rng rng(seed);
  DirectionSet dirs = random_unit_directions(root.value("n_random", 64), data.p(), rng, "clt-dirs");
  const int n_spikes = root.value("n_spikes", 8);
  if (n_spikes > 0) {
    const DirectionSet spikes = coordinate_spike_directions(n_spikes, data.p());
    for (int i = 0; i < spikes.size(); ++i)
      dirs.append(spikes.directions[static_cast<std::size_t>(i)], DirectionKind::coordinate_spike,
                  spikes.labels[static_cast<std::size_t>(i)]);
  }
  if (root.contains("estimator")) {
    const Estimator est = estimator_from_json(slurp(root["estimator"].get<std::string>()));
    const DirectionSet trained = trained_row_directions(est);
    for (int i = 0; i < trained.size(); ++i)
      dirs.append(trained.directions[static_cast<std::size_t>(i)], DirectionKind::trained_rows,
                  trained.labels[static_cast<std::size_t>(i)]);
  }
  const CltReport report = clt_report(data, gmm, dirs, root.value("min_per_cluster", 1000));
  fs::create_directories(out);
  spit((fs::path(out) / "report.json").string(), report.to_json());
  spit((fs::path(out) / "table.csv").string(), report.to_csv());
  double sup = 0.0;
  for (double v : report.sup_w1) sup = std::max(sup, v);
  std::cout << "clt: directions=" << dirs.size() << " max sup-W1=" << sup << " -> " << out << "\n";
  return 0;
}

int cmd_experiment(const std::string& config, std::uint64_t seed, const std::string& out,
                   int threads, const std::string& format, bool verbose) {
  ExperimentConfig cfg = experiment_config_from_json(slurp(config));
  if (threads > 0) cfg.threads = threads;
  const std::string outdir = !out.empty() ? out : (!cfg.output.empty() ? cfg.output : "results");
  const Rng rng(seed);
  if (verbose) std::cerr << "[ulab] running experiment from " << config << " (seed " << seed << ")\n";
  const ResultTable table = run_experiment(cfg, rng);
  emit_results(table, format, outdir);
  if (verbose) {
    for (const Aggregate& a : aggregate_table(table))
      std::cerr << "  alpha=" << a.alpha << " variant=" << a.variant << " test=" << a.test_mean
                << " +- " << a.test_se << "\n";
  }
  std::cout << "experiment: rows=" << table.rows.size() << " failures=" << table.failures.size()
            << " -> " << outdir << "\n";
  return table.failures.empty() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ulab: Gaussian-mixture universality laboratory"};
  app.require_subcommand(1);

  std::string config, data, gmm, test, out = "out", rule = "cluster-index", format = "csv";
  long long n = 1000;
  std::uint64_t seed = 0;
  double noise_scale = 0.0, tol = 1e-8, damping = 0.5, rtol = 1e-8;
  int max_iter = 500, mc_nodes = 4096, threads = 0;
  bool pm1 = false, diagonal = false, dump_chain = false, restart_check = false, verbose = false;

  auto* gen = app.add_subcommand("gen", "sample a labeled mixture dataset to UMDS");
  gen->add_option("--config", config, "mixture spec JSON")->required();
  gen->add_option("--n", n, "sample count")->required();
  gen->add_option("--seed", seed, "master seed");
  gen->add_option("--out", out, "output UMDS directory")->required();
  gen->add_option("--rule", rule, "label rule");
  gen->add_option("--noise-scale", noise_scale, "label noise scale");
  gen->add_flag("--pm1", pm1, "store 2-cluster labels as +-1 reals");

  auto* mom = app.add_subcommand("moments", "class moments of a UMDS dataset");
  mom->add_option("--in", data, "UMDS directory")->required();
  mom->add_option("--out", out, "moments JSON path")->required();
  mom->add_flag("--diagonal", diagonal, "store only diagonal covariances");

  auto* erm = app.add_subcommand("erm", "fit an estimator on a UMDS dataset");
  erm->add_option("--data", data, "training UMDS directory")->required();
  erm->add_option("--config", config, "ErmProblem JSON")->required();
  erm->add_option("--test", test, "optional test UMDS directory");
  erm->add_option("--out", out, "output directory")->required();
  erm->add_option("--tol", tol, "gradient tolerance");

  auto* gib = app.add_subcommand("gibbs", "sample the Gibbs measure");
  gib->add_option("--data", data, "training UMDS directory")->required();
  gib->add_option("--config", config, "config JSON with problem+gibbs sections")->required();
  gib->add_option("--out", out, "output directory")->required();
  gib->add_option("--seed", seed, "master seed");
  gib->add_flag("--dump-chain", dump_chain, "write the full chain as f64 binary");

  auto* rep = app.add_subcommand("replica", "solve the replica fixed point");
  rep->add_option("--config", config, "ReplicaProblem JSON")->required();
  rep->add_option("--out", out, "output directory")->required();
  rep->add_option("--seed", seed, "master seed");
  rep->add_option("--damping", damping, "fixed-point damping");
  rep->add_option("--tol", rtol, "fixed-point residual tolerance");
  rep->add_option("--max-iter", max_iter, "sweep budget");
  rep->add_option("--mc-nodes", mc_nodes, "QMC nodes for K > 2 channels");
  rep->add_flag("--restart-check", restart_check, "second run as a uniqueness diagnostic");

  auto* clt = app.add_subcommand("clt", "conditional-CLT report for two datasets");
  clt->add_option("--data", data, "data UMDS directory")->required();
  clt->add_option("--gmm", gmm, "equivalent-GMM UMDS directory")->required();
  clt->add_option("--config", config, "direction config JSON");
  clt->add_option("--out", out, "output directory")->required();
  clt->add_option("--seed", seed, "master seed");

  auto* exp = app.add_subcommand("experiment", "orchestrated experiment run");
  exp->add_option("--config", config, "ExperimentConfig JSON")->required();
  exp->add_option("--seed", seed, "master seed");
  exp->add_option("--out", out, "output directory");
  exp->add_option("--threads", threads, "worker threads");
  exp->add_option("--format", format, "csv or json");
  exp->add_flag("--verbose", verbose, "progress to stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(config, n, seed, out, rule, noise_scale, pm1);
    if (mom->parsed()) return cmd_moments(data, out, diagonal);
    if (erm->parsed()) return cmd_erm(data, config, test, out, tol);
    if (gib->parsed()) return cmd_gibbs(data, config, out, seed, dump_chain);
    if (rep->parsed())
      return cmd_replica(config, out, seed, damping, rtol, max_iter, mc_nodes, restart_check);
    if (clt->parsed()) return cmd_clt(data, gmm, config, out, seed);
    if (exp->parsed()) return cmd_experiment(config, seed, out, threads, format, verbose);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
