#include "ulab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <sstream>
#include <thread>

#include "ulab/quadrature.hpp"
#include "ulab/umds.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace ulab {

void ExperimentConfig::validate() const {
  if (kind != ExperimentKind::clt_decay) {
    if (alpha_grid.empty()) throw ConfigError("experiment: alpha_grid required");
    for (double a : alpha_grid)
      if (!(a > 0.0)) throw ConfigError("experiment: alpha_grid must be positive");
  }
  if (seeds < 1) throw ConfigError("experiment: seeds must be >= 1");
  if (n_test < 1) throw ConfigError("experiment: n_test must be >= 1");
  if (threads < 1) throw ConfigError("experiment: threads must be >= 1");
  if (kind == ExperimentKind::ensemble && ensemble_m < 1)
    throw ConfigError("experiment: ensemble M must be >= 1");
  if (kind == ExperimentKind::clt_decay && p_grid.empty())
    throw ConfigError("experiment: p_grid required for clt-decay");
}

namespace {

void parallel_tasks(int n_tasks, int threads, const std::function<void(int)>& task) {
  if (threads <= 1 || n_tasks <= 1) {
    for (int i = 0; i < n_tasks; ++i) task(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n_tasks) return;
      task(i);
    }
  };
  std::vector<std::thread> pool;
  const int use = std::min(threads, n_tasks);
  pool.reserve(static_cast<std::size_t>(use));
  for (int t = 0; t < use; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

Dataset to_pm1_real(Dataset ds) {
  if (ds.label_kind != LabelKind::cls) throw ConfigError("pm1 conversion: expected class labels");
  for (int i = 0; i < ds.n(); ++i) {
    const double c = ds.y(i, 0);
    if (c != 0.0 && c != 1.0) throw ConfigError("pm1 conversion: labels must be binary");
    ds.y(i, 0) = c == 0.0 ? 1.0 : -1.0;
  }
  ds.label_kind = LabelKind::real;
  return ds;
}

// A data source bound to its fixed randomness (feature matrix, external file).
struct SourceRuntime {
  DataSourceConfig cfg;
  FeatureMatrix fm;
  const ActivationSpec* act = nullptr;
  Dataset external;

  static SourceRuntime make(const DataSourceConfig& cfg, const Rng& rng) {
    SourceRuntime src;
    src.cfg = cfg;
    switch (cfg.kind) {
      case DataSourceConfig::Kind::mixture:
        cfg.mixture.validate();
        break;
      case DataSourceConfig::Kind::feature_map:
        cfg.mixture.validate();
        src.act = &activation(cfg.activation);
        src.fm = init_random_features(cfg.mixture.p, cfg.feature_p, rng, "features");
        break;
      case DataSourceConfig::Kind::umds:
        src.external = load_external_dataset(cfg.umds_path);
        break;
    }
    return src;
  }

  int p() const {
    switch (cfg.kind) {
      case DataSourceConfig::Kind::mixture: return cfg.mixture.p;
      case DataSourceConfig::Kind::feature_map: return cfg.feature_p;
      case DataSourceConfig::Kind::umds: return external.p();
    }
    throw ConfigError("bad source kind");
  }

  int k() const {
    switch (cfg.kind) {
      case DataSourceConfig::Kind::umds: return external.num_clusters();
      default: return cfg.mixture.k();
    }
  }

  Vec weights() const {
    Vec w(k());
    if (cfg.kind == DataSourceConfig::Kind::umds) {
      w.setZero();
      for (std::uint32_t c : external.c) w(static_cast<int>(c)) += 1.0;
      w /= static_cast<double>(external.n());
    } else {
      for (int c = 0; c < k(); ++c) w(c) = cfg.mixture.clusters[static_cast<std::size_t>(c)].weight;
    }
    return w;
  }

  Dataset label(Dataset ds, const Rng& rng, const std::string& stream_label) const {
    Dataset out = label_dataset(ds, cfg.teacher, rng, stream_label);
    if (cfg.labels_pm1) out = to_pm1_real(std::move(out));
    return out;
  }

  Dataset draw(int n, const Rng& rng, const std::string& stream_label) const {
    switch (cfg.kind) {
      case DataSourceConfig::Kind::mixture: {
        Dataset ds = sample_mixture(cfg.mixture, n, rng, stream_label);
        return label(std::move(ds), rng, stream_label + "/labels");
      }
      case DataSourceConfig::Kind::feature_map: {
        Dataset latents = sample_mixture(cfg.mixture, n, rng, stream_label);
        Dataset mapped = apply_feature_map(fm, *act, latents);
        return label(std::move(mapped), rng, stream_label + "/labels");
      }
      case DataSourceConfig::Kind::umds: {
        if (n > external.n())
          throw ConfigError("umds source: requested draw larger than the external dataset");
        RngStream s = rng.stream(stream_label + "/subsample");
        std::vector<int> idx(static_cast<std::size_t>(external.n()));
        for (int i = 0; i < external.n(); ++i) idx[static_cast<std::size_t>(i)] = i;
        for (std::size_t i = idx.size() - 1; i > 0; --i)
          std::swap(idx[i], idx[static_cast<std::size_t>(s.uniform_index(i + 1))]);
        Dataset ds;
        ds.X.resize(n, external.p());
        ds.y.resize(n, external.y.cols());
        ds.label_kind = external.label_kind;
        ds.provenance = Provenance::external;
        ds.c.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
          ds.X.row(i) = external.X.row(idx[static_cast<std::size_t>(i)]);
          ds.y.row(i) = external.y.row(idx[static_cast<std::size_t>(i)]);
          ds.c[static_cast<std::size_t>(i)] = external.c[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        }
        return ds;
      }
    }
    throw ConfigError("bad source kind");
  }

  // per-cluster conditional sampler for Monte Carlo moments
  ClusterSampler cluster_sampler() const {
    if (cfg.kind == DataSourceConfig::Kind::umds)
      throw ConfigError("umds source has no generative sampler");
    const MixtureSpec& mix = cfg.mixture;
    const bool mapped = cfg.kind == DataSourceConfig::Kind::feature_map;
    const FeatureMatrix* fmp = &fm;
    const ActivationSpec* actp = act;
    return [&mix, mapped, fmp, actp](int cluster, int count, RngStream& stream) {
      const ClusterSpec& cl = mix.clusters[static_cast<std::size_t>(cluster)];
      Mat Z(count, mix.p);
      if (cl.diagonal) {
        const Vec sd = cl.cov_diag.cwiseMax(0.0).cwiseSqrt();
        for (int i = 0; i < count; ++i)
          for (int j = 0; j < mix.p; ++j) Z(i, j) = cl.mean(j) + sd(j) * stream.normal();
      } else {
        const Mat L = sampling_factor(cl.cov);
        Vec z(mix.p);
        for (int i = 0; i < count; ++i) {
          for (int j = 0; j < mix.p; ++j) z(j) = stream.normal();
          Z.row(i) = (cl.mean + L * z).transpose();
        }
      }
      if (!mapped) return Z;
      Mat U = Z * fmp->F;
      for (Eigen::Index i = 0; i < U.rows(); ++i)
        for (Eigen::Index j = 0; j < U.cols(); ++j) U(i, j) = actp->base(U(i, j)) - actp->offset;
      return U;
    };
  }
};

Estimator fit_problem(const ErmProblem& prob, const Dataset& ds, double tol = 1e-8) {
  switch (prob.loss) {
    case Loss::squared: return fit_ridge(ds, prob.lambda);
    case Loss::logistic_binary: return fit_logistic(ds, prob.lambda, tol);
    case Loss::multiclass_xent: return fit_multiclass(ds, prob, tol);
  }
  throw ConfigError("bad loss");
}

std::string kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::universality_curve: return "universality-curve";
    case ExperimentKind::replica_validation: return "replica-validation";
    case ExperimentKind::gibbs_overlap: return "gibbs-overlap";
    case ExperimentKind::ensemble: return "ensemble";
    case ExperimentKind::clt_decay: return "clt-decay";
  }
  throw ConfigError("bad experiment kind");
}

MixtureSpec equivalent_from_source(const SourceRuntime& src, const ExperimentConfig& cfg,
                                   const Rng& rng, bool diagonal = false) {
  if (src.cfg.kind == DataSourceConfig::Kind::umds)
    return build_equivalent_gmm(estimate_class_moments(src.external, diagonal));
  const ClassMoments moments = mc_class_moments(src.cluster_sampler(), src.weights(),
                                                cfg.moment_samples, rng, "moments", diagonal);
  return build_equivalent_gmm(moments);
}

}  // namespace

std::vector<Aggregate> aggregate_table(const ResultTable& table) {
  std::vector<ResultRow> rows = table.rows;
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    if (a.alpha != b.alpha) return a.alpha < b.alpha;
    if (a.variant != b.variant) return a.variant < b.variant;
    return a.seed < b.seed;
  });
  std::vector<Aggregate> out;
  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t j = i;
    double tr = 0.0, te = 0.0;
    while (j < rows.size() && rows[j].alpha == rows[i].alpha && rows[j].variant == rows[i].variant) {
      tr += rows[j].train_error;
      te += rows[j].test_error;
      ++j;
    }
    const double cnt = static_cast<double>(j - i);
    Aggregate agg;
    agg.alpha = rows[i].alpha;
    agg.variant = rows[i].variant;
    agg.count = static_cast<long long>(cnt);
    agg.train_mean = tr / cnt;
    agg.test_mean = te / cnt;
    double vtr = 0.0, vte = 0.0;
    for (std::size_t l = i; l < j; ++l) {
      vtr += (rows[l].train_error - agg.train_mean) * (rows[l].train_error - agg.train_mean);
      vte += (rows[l].test_error - agg.test_mean) * (rows[l].test_error - agg.test_mean);
    }
    if (cnt > 1.5) {
      agg.train_se = std::sqrt(vtr / (cnt * (cnt - 1.0)));
      agg.test_se = std::sqrt(vte / (cnt * (cnt - 1.0)));
    }
    out.push_back(agg);
    i = j;
  }
  return out;
}

ResultTable run_universality_curve(const ExperimentConfig& cfg, const Rng& rng) {
  cfg.validate();
  const SourceRuntime src = SourceRuntime::make(cfg.data, rng);
  const MixtureSpec eq = equivalent_from_source(src, cfg, rng);

  const int A = static_cast<int>(cfg.alpha_grid.size());
  const int n_tasks = A * cfg.seeds;
  std::vector<std::vector<ResultRow>> slots(static_cast<std::size_t>(n_tasks));
  std::vector<std::optional<FailureRecord>> fails(static_cast<std::size_t>(n_tasks));

  parallel_tasks(n_tasks, cfg.threads, [&](int t) {
    const int ai = t / cfg.seeds;
    const int seed = t % cfg.seeds;
    const double alpha = cfg.alpha_grid[static_cast<std::size_t>(ai)];
    const int n = std::max(2, static_cast<int>(std::llround(alpha * src.p())));
    try {
      const std::string suffix = "/" + std::to_string(ai) + "/" + std::to_string(seed);
      Dataset data_train = src.draw(n, rng, "data" + suffix);
      Dataset data_test = src.draw(cfg.n_test, rng, "test-data" + suffix);
      Dataset gmm_train = src.label(sample_mixture(eq, n, rng, "gmm" + suffix), rng,
                                    "gmm-labels" + suffix);
      Dataset gmm_test = src.label(sample_mixture(eq, cfg.n_test, rng, "test-gmm" + suffix), rng,
                                   "test-gmm-labels" + suffix);
      for (const auto& [variant, train, test] :
           {std::tuple<std::string, const Dataset*, const Dataset*>{"data", &data_train, &data_test},
            std::tuple<std::string, const Dataset*, const Dataset*>{"gmm", &gmm_train, &gmm_test}}) {
        const Estimator est = fit_problem(cfg.problem, *train);
        ResultRow row;
        row.kind = kind_name(cfg.kind);
        row.alpha = alpha;
        row.seed = seed;
        row.variant = variant;
        row.train_error = test_error(est, *train, cfg.metric_train);
        row.test_error = test_error(est, *test, cfg.metric_test);
        slots[static_cast<std::size_t>(t)].push_back(std::move(row));
      }
    } catch (const std::exception& e) {
      fails[static_cast<std::size_t>(t)] = FailureRecord{alpha, seed, "data+gmm", e.what()};
    }
  });

  ResultTable table;
  for (int t = 0; t < n_tasks; ++t) {
    for (auto& row : slots[static_cast<std::size_t>(t)]) table.rows.push_back(std::move(row));
    if (fails[static_cast<std::size_t>(t)]) table.failures.push_back(*fails[static_cast<std::size_t>(t)]);
  }
  return table;
}

double exact_gmm_test_error(const Estimator& est, const MixtureSpec& spec,
                            const TeacherSpec& teacher, double noise_var, Metric metric,
                            bool labels_pm1) {
  spec.validate();
  if (est.k() != 1) throw ConfigError("exact_gmm_test_error: single-row estimators only");
  if (est.scaling != Scaling::none)
    throw ConfigError("exact_gmm_test_error: unscaled estimators only");
  const Vec theta = est.theta.row(0).transpose();
  double err = 0.0;
  for (int c = 0; c < spec.k(); ++c) {
    const ClusterSpec& cl = spec.clusters[static_cast<std::size_t>(c)];
    const Mat cov = cl.dense_cov();
    const double mean_c = theta.dot(cl.mean);
    const double var_c = theta.dot(cov * theta);
    if (metric == Metric::mse) {
      if (teacher.rule != LabelRule::linear_regression)
        throw ConfigError("exact_gmm_test_error: mse path needs a linear teacher");
      const Vec tstar = teacher.theta_star.row(0).transpose();
      const Vec diff = theta - tstar;
      const double bias_c = diff.dot(cl.mean);
      const double v = diff.dot(cov * diff);
      err += cl.weight * (bias_c * bias_c + v + noise_var);
    } else if (metric == Metric::zero_one_sign) {
      if (teacher.rule != LabelRule::cluster_index || !labels_pm1)
        throw ConfigError("exact_gmm_test_error: sign path needs +-1 cluster labels");
      const double y = c == 0 ? 1.0 : -1.0;
      const double sd = std::sqrt(std::max(var_c, 0.0));
      const double perr = sd <= 1e-300 ? ((mean_c >= 0.0 ? 1.0 : -1.0) == y ? 0.0 : 1.0)
                                       : normal_cdf(-y * mean_c / sd);
      err += cl.weight * perr;
    } else {
      throw ConfigError("exact_gmm_test_error: unsupported metric");
    }
  }
  return err;
}

ResultTable run_replica_validation(const ExperimentConfig& cfg, const Rng& rng) {
  cfg.validate();
  if (cfg.data.kind != DataSourceConfig::Kind::mixture)
    throw ConfigError("replica-validation: mixture data source required");
  const MixtureSpec& mix = cfg.data.mixture;
  for (const auto& cl : mix.clusters)
    if (!cl.diagonal) throw ConfigError("replica-validation: diagonal covariances required");
  const int d = mix.p;
  const int K = mix.k();
  const bool teacher_channel = cfg.data.teacher.rule == LabelRule::linear_regression;
  if (!teacher_channel &&
      !(cfg.data.teacher.rule == LabelRule::cluster_index && cfg.data.labels_pm1))
    throw ConfigError("replica-validation: teacher must be linear-regression or +-1 cluster labels");

  const SourceRuntime src = SourceRuntime::make(cfg.data, rng);
  const MixtureSpec eq = build_equivalent_gmm(mc_class_moments(
      src.cluster_sampler(), src.weights(), cfg.moment_samples, rng, "moments", true));

  ReplicaProblem base;
  base.weights = src.weights();
  base.spectra.resize(K, d);
  base.means_scaled.resize(K, d);
  const double sqd = std::sqrt(static_cast<double>(d));
  for (int c = 0; c < K; ++c) {
    base.spectra.row(c) = mix.clusters[static_cast<std::size_t>(c)].cov_diag.transpose();
    base.means_scaled.row(c) = sqd * mix.clusters[static_cast<std::size_t>(c)].mean.transpose();
  }
  base.loss = cfg.problem.loss == Loss::squared ? ReplicaLoss::squared
                                                : ReplicaLoss::logistic_binary;
  base.fit_bias = false;
  if (teacher_channel) {
    base.has_teacher = true;
    base.teacher_scaled = sqd * cfg.data.teacher.theta_star.row(0).transpose();
    base.noise_var = cfg.data.teacher.noise_scale * cfg.data.teacher.noise_scale;
  } else {
    base.cluster_labels.resize(K);
    for (int c = 0; c < K; ++c) base.cluster_labels(c) = c == 0 ? 1.0 : -1.0;
  }

  ResultTable table;
  const Metric test_metric = teacher_channel ? Metric::mse : Metric::zero_one_sign;
  const Metric train_metric = teacher_channel ? Metric::mse : Metric::zero_one_sign;

  for (std::size_t ai = 0; ai < cfg.alpha_grid.size(); ++ai) {
    const double alpha = cfg.alpha_grid[ai];
    ReplicaProblem rp = base;
    rp.alpha = alpha;
    rp.lambda = alpha * cfg.problem.lambda;
    ReplicaOptions opt;
    opt.damping = cfg.replica_damping;
    opt.tol = cfg.replica_tol;
    opt.max_iter = cfg.replica_max_iter;
    try {
      const ReplicaState state = replica_fixed_point(rp, opt, rng);
      const ReplicaPredictions pred = predict_errors(state, rp, opt);
      ResultRow row;
      row.kind = kind_name(cfg.kind);
      row.alpha = alpha;
      row.seed = -1;
      row.variant = "replica";
      row.train_error = pred.train_loss;
      row.test_error = pred.test_error;
      row.extras = {{"residual", state.residual},
                    {"iterations", static_cast<double>(state.iterations)}};
      table.rows.push_back(std::move(row));

      // finite-size rows
      for (int seed = 0; seed < cfg.seeds; ++seed) {
        const std::string suffix = "/" + std::to_string(ai) + "/" + std::to_string(seed);
        const int n = std::max(2, static_cast<int>(std::llround(alpha * d)));
        for (const std::string variant : {std::string("data"), std::string("gmm")}) {
          const MixtureSpec& world = variant == "data" ? mix : eq;
          Dataset train = src.label(
              sample_mixture(world, n, rng, variant + suffix), rng, variant + "-labels" + suffix);
          const Estimator est = fit_problem(cfg.problem, train);
          ResultRow r;
          r.kind = kind_name(cfg.kind);
          r.alpha = alpha;
          r.seed = seed;
          r.variant = variant;
          r.train_error = test_error(est, train, train_metric);
          r.test_error = exact_gmm_test_error(
              est, world, cfg.data.teacher,
              cfg.data.teacher.noise_scale * cfg.data.teacher.noise_scale, test_metric,
              cfg.data.labels_pm1);
          if (seed == 0 && variant == "data") {
            // joint-measure discrepancies for a small bounded-Lipschitz family
            std::vector<MeasureTestFn> fns;
            fns.push_back({"const-1", [](const Vec&, const Vec&, const Vec&) { return 1.0; }});
            fns.push_back({"w-squared", [](const Vec& w, const Vec&, const Vec&) {
                             return w.squaredNorm();
                           }});
            fns.push_back({"w-clipped", [](const Vec& w, const Vec&, const Vec&) {
                             return std::max(-1.0, std::min(1.0, w(0)));
                           }});
            fns.push_back({"w-mu-cross", [](const Vec& w, const Vec& mu, const Vec&) {
                             return std::tanh(w(0)) * std::tanh(mu(0));
                           }});
            const Mat W = sqd * est.theta;
            for (const auto& mc : empirical_measure_compare(W, state, rp, fns, rng))
              r.extras.emplace_back("measure/" + mc.name, mc.discrepancy);
          }
          table.rows.push_back(std::move(r));
        }
      }
    } catch (const std::exception& e) {
      table.failures.push_back(FailureRecord{alpha, -1, "replica", e.what()});
    }
  }
  return table;
}

ResultTable run_gibbs_overlap(const ExperimentConfig& cfg, const Rng& rng) {
  cfg.validate();
  if (cfg.problem.loss == Loss::multiclass_xent)
    throw ConfigError("gibbs-overlap: binary problems only");
  const SourceRuntime src = SourceRuntime::make(cfg.data, rng);
  const MixtureSpec eq = equivalent_from_source(src, cfg, rng);

  ResultTable table;
  for (std::size_t ai = 0; ai < cfg.alpha_grid.size(); ++ai) {
    const double alpha = cfg.alpha_grid[ai];
    const int n = std::max(2, static_cast<int>(std::llround(alpha * src.p())));
    for (int seed = 0; seed < cfg.seeds; ++seed) {
      const std::string suffix = "/" + std::to_string(ai) + "/" + std::to_string(seed);
      for (const std::string variant : {std::string("data"), std::string("gmm")}) {
        try {
          Dataset train =
              variant == "data"
                  ? src.draw(n, rng, "data" + suffix)
                  : src.label(sample_mixture(eq, n, rng, "gmm" + suffix), rng,
                              "gmm-labels" + suffix);
          Dataset test =
              variant == "data"
                  ? src.draw(cfg.n_test, rng, "test-data" + suffix)
                  : src.label(sample_mixture(eq, cfg.n_test, rng, "test-gmm" + suffix), rng,
                              "test-gmm-labels" + suffix);
          const Estimator est = fit_problem(cfg.problem, train);
          RngStream chain_stream = rng.stream("chain/" + variant + suffix);
          const SampleChain chain = gibbs_chain(cfg.problem, train, cfg.gibbs, chain_stream);
          const Estimator bayes = posterior_mean(chain);
          const double p = static_cast<double>(src.p());
          ResultRow row;
          row.kind = kind_name(cfg.kind);
          row.alpha = alpha;
          row.seed = seed;
          row.variant = variant;
          row.train_error = test_error(est, train, cfg.metric_train);
          row.test_error = test_error(est, test, cfg.metric_test);
          row.extras = {
              {"overlap_erm_bayes", (est.theta * bayes.theta.transpose())(0, 0) / p},
              {"overlap_erm_erm", est.theta.squaredNorm() / p},
              {"overlap_bayes_bayes", bayes.theta.squaredNorm() / p},
              {"acceptance_rate", chain.acceptance_rate}};
          table.rows.push_back(std::move(row));
        } catch (const std::exception& e) {
          table.failures.push_back(FailureRecord{alpha, seed, variant, e.what()});
        }
      }
    }
  }

  // q(s) diagnostics at the first alpha, seeds as data replicas
  if (!cfg.s_grid.empty()) {
    const double alpha = cfg.alpha_grid.front();
    const int n = std::max(2, static_cast<int>(std::llround(alpha * src.p())));
    for (const std::string variant : {std::string("data"), std::string("gmm")}) {
      try {
        auto make_problem = [&](int replica, const Rng& rep_rng) {
          CoupledProblem cp;
          const std::string lbl = "qofs-" + variant + "/" + std::to_string(replica);
          Dataset train = variant == "data"
                              ? src.draw(n, rep_rng, lbl)
                              : src.label(sample_mixture(eq, n, rep_rng, lbl), rep_rng,
                                          lbl + "-labels");
          CoupledObjective minimized{cfg.problem, train, cfg.gibbs};
          CoupledObjective sampled{cfg.problem, train, cfg.gibbs};
          cp.objectives = {minimized, sampled};
          cp.M1 = 1;
          cp.h.kind = MetricKind::pairwise_overlap;
          return cp;
        };
        const QOfSResult q = q_of_s(make_problem, cfg.s_grid, std::max(2, cfg.seeds), rng);
        double max_violation = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i + 1 < q.s_grid.size(); ++i) {
          const double d2 = q.q_mean[i + 1] - 2.0 * q.q_mean[i] + q.q_mean[i - 1];
          max_violation = std::max(max_violation, d2);
        }
        std::size_t zero_idx = 0;
        for (std::size_t i = 0; i < q.s_grid.size(); ++i)
          if (q.s_grid[i] == 0.0) zero_idx = i;
        double central = 0.0;
        if (zero_idx > 0 && zero_idx + 1 < q.s_grid.size())
          central = (q.q_mean[zero_idx + 1] - q.q_mean[zero_idx - 1]) /
                    (q.s_grid[zero_idx + 1] - q.s_grid[zero_idx - 1]);
        ResultRow row;
        row.kind = kind_name(cfg.kind);
        row.alpha = alpha;
        row.seed = -1;
        row.variant = variant + "-qofs";
        row.train_error = 0.0;
        row.test_error = 0.0;
        row.extras = {{"max_second_difference", max_violation},
                      {"central_slope_at_0", central},
                      {"direct_h_mean", q.direct_h_mean},
                      {"direct_h_se", q.direct_h_se}};
        table.rows.push_back(std::move(row));
      } catch (const std::exception& e) {
        table.failures.push_back(FailureRecord{alpha, -1, variant + "-qofs", e.what()});
      }
    }
  }
  return table;
}

ResultTable run_ensemble(const ExperimentConfig& cfg, const Rng& rng) {
  cfg.validate();
  if (cfg.data.kind != DataSourceConfig::Kind::feature_map)
    throw ConfigError("ensemble: feature-map data source required");
  if (cfg.problem.loss == Loss::multiclass_xent)
    throw ConfigError("ensemble: binary problems only");
  const MixtureSpec& latent = cfg.data.mixture;
  latent.validate();
  const int M = cfg.ensemble_m;
  const int p = cfg.data.feature_p;
  const ActivationSpec& act = activation(cfg.data.activation);

  std::vector<FeatureMatrix> maps;
  maps.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m)
    maps.push_back(init_random_features(latent.p, p, rng, "features/" + std::to_string(m)));

  auto map_views = [&](const Dataset& latents) {
    std::vector<Dataset> views;
    views.reserve(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) views.push_back(apply_feature_map(maps[static_cast<std::size_t>(m)], act, latents));
    return views;
  };
  auto pm1_from_clusters = [](Dataset ds) {
    ds.y.resize(ds.n(), 1);
    for (int i = 0; i < ds.n(); ++i) ds.y(i, 0) = ds.c[static_cast<std::size_t>(i)] == 0 ? 1.0 : -1.0;
    ds.label_kind = LabelKind::real;
    return ds;
  };

  // stacked-view equivalent gmm (keeps cross-view covariance blocks)
  const ClusterSampler stacked = [&](int cluster, int count, RngStream& stream) {
    const ClusterSpec& cl = latent.clusters[static_cast<std::size_t>(cluster)];
    const Mat L = cl.diagonal ? Mat(cl.cov_diag.cwiseMax(0.0).cwiseSqrt().asDiagonal())
                              : sampling_factor(cl.cov);
    Mat out(count, M * p);
    Vec z(latent.p);
    for (int i = 0; i < count; ++i) {
      for (int j = 0; j < latent.p; ++j) z(j) = stream.normal();
      const Vec zz = cl.mean + L * z;
      for (int m = 0; m < M; ++m) {
        Vec u = maps[static_cast<std::size_t>(m)].F.transpose() * zz;
        for (int j = 0; j < p; ++j) out(i, m * p + j) = act.base(u(j)) - act.offset;
      }
    }
    return out;
  };
  Vec weights(latent.k());
  for (int c = 0; c < latent.k(); ++c) weights(c) = latent.clusters[static_cast<std::size_t>(c)].weight;
  const MixtureSpec eq_stacked = build_equivalent_gmm(
      mc_class_moments(stacked, weights, cfg.moment_samples, rng, "moments"));

  auto split_views = [&](const Dataset& stacked_ds) {
    std::vector<Dataset> views(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) {
      Dataset v;
      v.X = stacked_ds.X.middleCols(m * p, p);
      v.y = stacked_ds.y;
      v.label_kind = stacked_ds.label_kind;
      v.c = stacked_ds.c;
      v.provenance = stacked_ds.provenance;
      views[static_cast<std::size_t>(m)] = std::move(v);
    }
    return views;
  };

  ResultTable table;
  for (std::size_t ai = 0; ai < cfg.alpha_grid.size(); ++ai) {
    const double alpha = cfg.alpha_grid[ai];
    const int n = std::max(2, static_cast<int>(std::llround(alpha * p)));
    for (int seed = 0; seed < cfg.seeds; ++seed) {
      const std::string suffix = "/" + std::to_string(ai) + "/" + std::to_string(seed);
      for (const std::string variant : {std::string("data"), std::string("gmm")}) {
        try {
          std::vector<Dataset> train_views, test_views;
          if (variant == "data") {
            Dataset ltr = sample_mixture(latent, n, rng, "latents" + suffix);
            Dataset lte = sample_mixture(latent, cfg.n_test, rng, "test-latents" + suffix);
            train_views = map_views(ltr);
            test_views = map_views(lte);
          } else {
            Dataset str = sample_mixture(eq_stacked, n, rng, "gmm" + suffix);
            Dataset ste = sample_mixture(eq_stacked, cfg.n_test, rng, "test-gmm" + suffix);
            train_views = split_views(str);
            test_views = split_views(ste);
          }
          for (auto& v : train_views) v = pm1_from_clusters(std::move(v));
          for (auto& v : test_views) v = pm1_from_clusters(std::move(v));

          std::vector<Estimator> fits;
          double train_mean = 0.0, indiv_mean = 0.0;
          for (int m = 0; m < M; ++m) {
            fits.push_back(fit_problem(cfg.problem, train_views[static_cast<std::size_t>(m)]));
            train_mean += test_error(fits.back(), train_views[static_cast<std::size_t>(m)], cfg.metric_train);
            indiv_mean += test_error(fits.back(), test_views[static_cast<std::size_t>(m)], cfg.metric_test);
          }
          train_mean /= M;
          indiv_mean /= M;

          // ensemble-averaged score on the shared test draw
          Vec score = Vec::Zero(cfg.n_test);
          for (int m = 0; m < M; ++m)
            score += test_views[static_cast<std::size_t>(m)].X * fits[static_cast<std::size_t>(m)].theta.row(0).transpose();
          score /= static_cast<double>(M);
          const Vec y = binary_pm1_labels(test_views[0]);
          int wrong = 0;
          for (int i = 0; i < cfg.n_test; ++i)
            if ((score(i) >= 0.0 ? 1.0 : -1.0) != y(i)) ++wrong;
          const double ens_err = static_cast<double>(wrong) / static_cast<double>(cfg.n_test);

          double overlap = 0.0;
          for (int a = 0; a < M; ++a)
            for (int b = a + 1; b < M; ++b)
              overlap += (fits[static_cast<std::size_t>(a)].theta *
                          fits[static_cast<std::size_t>(b)].theta.transpose())(0, 0) /
                         static_cast<double>(p);

          ResultRow row;
          row.kind = kind_name(cfg.kind);
          row.alpha = alpha;
          row.seed = seed;
          row.variant = variant;
          row.train_error = train_mean;
          row.test_error = ens_err;
          row.extras = {{"individual_test_error", indiv_mean}, {"pairwise_overlap", overlap}};
          table.rows.push_back(std::move(row));
        } catch (const std::exception& e) {
          table.failures.push_back(FailureRecord{alpha, seed, variant, e.what()});
        }
      }
    }
  }
  return table;
}

ResultTable run_clt_decay(const ExperimentConfig& cfg, const Rng& rng) {
  cfg.validate();
  const auto make_instance = [&](const std::string& act_name, int p, int seed,
                                 bool with_spikes) {
    const int d = std::max(2, static_cast<int>(std::llround(p / cfg.clt_latent_ratio)));
    RngStream mean_stream = rng.stream("clt-mean", static_cast<std::uint64_t>(p));
    Vec mu(d);
    for (int j = 0; j < d; ++j) mu(j) = mean_stream.normal();
    mu *= cfg.clt_latent_mean_norm / mu.norm();
    MixtureSpec latent;
    latent.p = d;
    for (int c = 0; c < 2; ++c) {
      ClusterSpec cl;
      cl.weight = 0.5;
      cl.mean = c == 0 ? mu : Vec(-mu);
      cl.diagonal = true;
      cl.cov_diag = Vec::Constant(d, cfg.clt_latent_sd * cfg.clt_latent_sd);
      latent.clusters.push_back(std::move(cl));
    }
    const std::string tag = act_name + "/" + std::to_string(p) + "/" + std::to_string(seed);
    const ActivationSpec& act = activation(act_name);
    const FeatureMatrix fm = init_random_features(d, p, rng, "clt-features/" + tag);
    const int n = 2 * std::max(cfg.clt_samples_per_cluster, cfg.clt_samples_per_p * p);

    auto featurize = [&](Dataset latents) {
      Dataset out = apply_feature_map(fm, act, latents);
      out.y.resize(out.n(), 1);
      for (int i = 0; i < out.n(); ++i)
        out.y(i, 0) = out.c[static_cast<std::size_t>(i)] == 0 ? 1.0 : -1.0;
      out.label_kind = LabelKind::real;
      return out;
    };

    DecayInstance inst;
    inst.data = featurize(sample_mixture(latent, n, rng, "clt-data/" + tag));

    const ClusterSampler sampler = [&](int cluster, int count, RngStream& stream) {
      const ClusterSpec& cl = latent.clusters[static_cast<std::size_t>(cluster)];
      Mat out(count, p);
      Vec z(d);
      for (int i = 0; i < count; ++i) {
        for (int j = 0; j < d; ++j) z(j) = cl.mean(j) + cfg.clt_latent_sd * stream.normal();
        Vec u = fm.F.transpose() * z;
        for (int j = 0; j < p; ++j) out(i, j) = act.base(u(j)) - act.offset;
      }
      return out;
    };
    const MixtureSpec eq = build_equivalent_gmm(mc_class_moments(
        sampler, Vec::Constant(2, 0.5), cfg.moment_samples, rng, "clt-moments/" + tag));
    inst.gmm = sample_mixture(eq, n, rng, "clt-gmm/" + tag);

    inst.dirs = random_unit_directions(cfg.n_random_directions, p, rng, "clt-dirs/" + tag);
    // trained rows probe the data-dependent direction family; they are fit
    // on a fresh overparameterized draw (alpha = 1) so the report measures
    // the law of theta^T x for fresh x rather than in-sample residuals
    const Dataset fitset = featurize(sample_mixture(latent, p, rng, "clt-fit/" + tag));
    const Estimator ridge = fit_ridge(fitset, 1e-3);
    const Estimator logit = fit_logistic(fitset, 1e-3, 1e-6);
    for (const Estimator* est : {&ridge, &logit}) {
      Vec v = est->theta.row(0).transpose();
      v.normalize();
      v /= v.norm();
      inst.dirs.append(v, DirectionKind::trained_rows, "trained");
    }
    if (with_spikes) {
      const DirectionSet spikes = coordinate_spike_directions(cfg.n_spike_directions, p);
      for (int i = 0; i < spikes.size(); ++i)
        inst.dirs.append(spikes.directions[static_cast<std::size_t>(i)], DirectionKind::coordinate_spike,
                         spikes.labels[static_cast<std::size_t>(i)]);
    }
    return inst;
  };

  const DecayStudy study = decay_study(
      [&](int p, int seed) { return make_instance(cfg.data.activation, p, seed, false); },
      cfg.p_grid, cfg.seeds);

  ResultTable table;
  for (const DecayRow& row : study.rows) {
    ResultRow r;
    r.kind = kind_name(cfg.kind);
    r.alpha = static_cast<double>(row.p);  // alpha column carries p for this kind
    r.seed = -1;
    r.variant = cfg.data.activation;
    r.train_error = 0.0;
    r.test_error = row.mean_sup_w1;
    r.extras = {{"se_sup_w1", row.se_sup_w1},
                {"mean_sup_ks", row.mean_sup_ks},
                {"loglog_slope", study.loglog_slope}};
    table.rows.push_back(std::move(r));
  }

  // assumption-violating contrast: spike directions on sign features
  for (int p : cfg.p_grid) {
    for (int seed = 0; seed < cfg.contrast_seeds; ++seed) {
      try {
        DecayInstance inst = make_instance(cfg.contrast_activation, p, 1000 + seed, true);
        const CltReport rep = clt_report(inst.data, inst.gmm, inst.dirs, 2);
        double spike_sup = 0.0, other_sup = 0.0;
        for (const CltEntry& e : rep.entries) {
          if (e.direction.rfind("spike/", 0) == 0)
            spike_sup = std::max(spike_sup, e.w1);
          else if (e.direction.rfind("random/", 0) == 0)
            other_sup = std::max(other_sup, e.w1);
        }
        ResultRow r;
        r.kind = kind_name(cfg.kind);
        r.alpha = static_cast<double>(p);
        r.seed = seed;
        r.variant = cfg.contrast_activation + "-contrast";
        r.train_error = other_sup;
        r.test_error = spike_sup;
        r.extras = {{"ratio", other_sup > 0.0 ? spike_sup / other_sup : 0.0}};
        table.rows.push_back(std::move(r));
      } catch (const std::exception& e) {
        table.failures.push_back(FailureRecord{static_cast<double>(p), seed, "contrast", e.what()});
      }
    }
  }
  return table;
}

ResultTable run_experiment(const ExperimentConfig& cfg, const Rng& rng) {
  switch (cfg.kind) {
    case ExperimentKind::universality_curve: return run_universality_curve(cfg, rng);
    case ExperimentKind::replica_validation: return run_replica_validation(cfg, rng);
    case ExperimentKind::gibbs_overlap: return run_gibbs_overlap(cfg, rng);
    case ExperimentKind::ensemble: return run_ensemble(cfg, rng);
    case ExperimentKind::clt_decay: return run_clt_decay(cfg, rng);
  }
  throw ConfigError("bad experiment kind");
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string results_to_csv(const ResultTable& table) {
  std::ostringstream out;
  out << "kind,alpha,seed,variant,train_error,test_error,metric_name,metric_value\n";
  for (const ResultRow& row : table.rows) {
    out << row.kind << "," << fmt_double(row.alpha) << "," << row.seed << "," << row.variant << ","
        << fmt_double(row.train_error) << "," << fmt_double(row.test_error) << ",,\n";
    for (const auto& [name, value] : row.extras)
      out << row.kind << "," << fmt_double(row.alpha) << "," << row.seed << "," << row.variant
          << "," << fmt_double(row.train_error) << "," << fmt_double(row.test_error) << "," << name
          << "," << fmt_double(value) << "\n";
  }
  return out.str();
}

std::string aggregates_to_csv(const ResultTable& table) {
  std::ostringstream out;
  out << "alpha,variant,count,train_mean,train_se,test_mean,test_se\n";
  for (const Aggregate& a : aggregate_table(table))
    out << fmt_double(a.alpha) << "," << a.variant << "," << a.count << ","
        << fmt_double(a.train_mean) << "," << fmt_double(a.train_se) << ","
        << fmt_double(a.test_mean) << "," << fmt_double(a.test_se) << "\n";
  return out.str();
}

std::string results_to_json(const ResultTable& table) {
  json root;
  root["rows"] = json::array();
  for (const ResultRow& row : table.rows) {
    json jr = {{"kind", row.kind},       {"alpha", row.alpha},
               {"seed", row.seed},       {"variant", row.variant},
               {"train_error", row.train_error}, {"test_error", row.test_error}};
    json extras = json::array();
    for (const auto& [name, value] : row.extras)
      extras.push_back({{"metric_name", name}, {"metric_value", value}});
    jr["extras"] = extras;
    root["rows"].push_back(jr);
  }
  root["aggregates"] = json::array();
  for (const Aggregate& a : aggregate_table(table))
    root["aggregates"].push_back({{"alpha", a.alpha},
                                  {"variant", a.variant},
                                  {"count", a.count},
                                  {"train_mean", a.train_mean},
                                  {"train_se", a.train_se},
                                  {"test_mean", a.test_mean},
                                  {"test_se", a.test_se}});
  root["failures"] = json::array();
  for (const FailureRecord& f : table.failures)
    root["failures"].push_back(
        {{"alpha", f.alpha}, {"seed", f.seed}, {"variant", f.variant}, {"message", f.message}});
  return root.dump(2);
}

void validate_results_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("results JSON parse error: ") + e.what());
  }
  if (!root.contains("rows") || !root["rows"].is_array())
    throw ConfigError("results JSON: missing rows array");
  for (const auto& row : root["rows"]) {
    for (const char* field : {"kind", "alpha", "seed", "variant", "train_error", "test_error"})
      if (!row.contains(field)) throw ConfigError(std::string("results JSON: row missing ") + field);
    if (!row["alpha"].is_number() || !row["train_error"].is_number() ||
        !row["test_error"].is_number() || !row["seed"].is_number_integer())
      throw ConfigError("results JSON: row field types invalid");
    if (row.contains("extras"))
      for (const auto& e : row["extras"])
        if (!e.contains("metric_name") || !e.contains("metric_value"))
          throw ConfigError("results JSON: malformed extras entry");
  }
  if (!root.contains("aggregates") || !root["aggregates"].is_array())
    throw ConfigError("results JSON: missing aggregates array");
}

void emit_results(const ResultTable& table, const std::string& format, const std::string& dir) {
  if (format != "csv" && format != "json") throw ConfigError("emit_results: format must be csv or json");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("emit_results: cannot create output directory " + dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(fs::path(dir) / name);
    if (!out) throw IoError("emit_results: cannot open " + name);
    out << text;
    if (!out) throw IoError("emit_results: write failure for " + name);
  };
  if (format == "csv") {
    write("results.csv", results_to_csv(table));
    write("aggregates.csv", aggregates_to_csv(table));
  } else {
    const std::string text = results_to_json(table);
    validate_results_json(text);
    write("results.json", text);
  }
  if (!table.failures.empty()) {
    json manifest = json::array();
    for (const FailureRecord& f : table.failures)
      manifest.push_back(
          {{"alpha", f.alpha}, {"seed", f.seed}, {"variant", f.variant}, {"message", f.message}});
    write("failures.json", manifest.dump(2));
  }
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment JSON parse error: ") + e.what());
  }
  ExperimentConfig cfg;
  try {
    const std::string kind = root.at("kind").get<std::string>();
    if (kind == "universality-curve")
      cfg.kind = ExperimentKind::universality_curve;
    else if (kind == "replica-validation")
      cfg.kind = ExperimentKind::replica_validation;
    else if (kind == "gibbs-overlap")
      cfg.kind = ExperimentKind::gibbs_overlap;
    else if (kind == "ensemble")
      cfg.kind = ExperimentKind::ensemble;
    else if (kind == "clt-decay")
      cfg.kind = ExperimentKind::clt_decay;
    else
      throw ConfigError("experiment JSON: unknown kind " + kind);

    if (cfg.kind == ExperimentKind::clt_decay) {
      // this kind builds its latent mixtures internally per grid point and
      // only needs the activation name
      if (root.contains("data")) cfg.data.activation = root["data"].value("activation", "tanh-centered");
      cfg.data.kind = DataSourceConfig::Kind::feature_map;
      cfg.metric_train = metric_from_string(root.value("metric_train", "mse"));
      cfg.metric_test = metric_from_string(root.value("metric_test", "mse"));
      if (root.contains("alpha_grid")) cfg.alpha_grid = root["alpha_grid"].get<std::vector<double>>();
      cfg.n_test = root.value("n_test", 10000);
      cfg.seeds = root.value("seeds", 10);
      cfg.moment_samples = root.value("moment_samples", 100000LL);
      cfg.threads = root.value("threads", 1);
      cfg.output = root.value("output", "");
      if (root.contains("p_grid")) cfg.p_grid = root["p_grid"].get<std::vector<int>>();
      cfg.n_random_directions = root.value("n_random_directions", 64);
      cfg.n_spike_directions = root.value("n_spike_directions", 8);
      cfg.clt_samples_per_p = root.value("clt_samples_per_p", 25);
      cfg.clt_samples_per_cluster = root.value("clt_samples_per_cluster", 2000);
      cfg.contrast_activation = root.value("contrast_activation", "sign");
      cfg.clt_latent_ratio = root.value("clt_latent_ratio", 1.5);
      cfg.clt_latent_mean_norm = root.value("clt_latent_mean_norm", 1.5);
      cfg.clt_latent_sd = root.value("clt_latent_sd", 3.0);
      cfg.contrast_seeds = root.value("contrast_seeds", 2);
      cfg.validate();
      return cfg;
    }

    const auto& data = root.at("data");
    const std::string dkind = data.at("kind").get<std::string>();
    if (dkind == "mixture") {
      cfg.data.kind = DataSourceConfig::Kind::mixture;
      cfg.data.mixture = mixture_from_json(data.at("mixture").dump());
    } else if (dkind == "feature-map") {
      cfg.data.kind = DataSourceConfig::Kind::feature_map;
      cfg.data.mixture = mixture_from_json(data.at("latent_mixture").dump());
      cfg.data.feature_p = data.at("p").get<int>();
      cfg.data.activation = data.value("activation", "tanh-centered");
    } else if (dkind == "umds") {
      cfg.data.kind = DataSourceConfig::Kind::umds;
      cfg.data.umds_path = data.at("path").get<std::string>();
    } else {
      throw ConfigError("experiment JSON: unknown data kind " + dkind);
    }
    if (data.contains("teacher")) {
      const auto& t = data["teacher"];
      cfg.data.teacher.rule = label_rule_from_string(t.value("rule", "cluster-index"));
      cfg.data.teacher.noise_scale = t.value("noise_scale", 0.0);
      if (t.contains("theta_star")) {
        const auto flat = t["theta_star"].get<std::vector<double>>();
        cfg.data.teacher.theta_star =
            Eigen::Map<const Mat>(flat.data(), 1, static_cast<Eigen::Index>(flat.size()));
      }
    }
    cfg.data.labels_pm1 = data.value("labels_pm1", false);

    if (root.contains("problem")) cfg.problem = erm_problem_from_json(root["problem"].dump());
    cfg.metric_train = metric_from_string(root.value("metric_train", "mse"));
    cfg.metric_test = metric_from_string(root.value("metric_test", "mse"));
    if (root.contains("alpha_grid")) cfg.alpha_grid = root["alpha_grid"].get<std::vector<double>>();
    cfg.n_test = root.value("n_test", 10000);
    cfg.seeds = root.value("seeds", 10);
    cfg.moment_samples = root.value("moment_samples", 100000LL);
    cfg.threads = root.value("threads", 1);
    cfg.output = root.value("output", "");
    cfg.replica_damping = root.value("replica_damping", 0.5);
    cfg.replica_tol = root.value("replica_tol", 1e-8);
    cfg.replica_max_iter = root.value("replica_max_iter", 500);
    if (root.contains("gibbs")) {
      const auto& g = root["gibbs"];
      cfg.gibbs.beta = g.value("beta", 1.0);
      cfg.gibbs.n_steps = g.value("n_steps", 10000);
      cfg.gibbs.burn_in = g.value("burn_in", 1000);
      cfg.gibbs.thinning = g.value("thinning", 1);
      cfg.gibbs.step_size = g.value("step_size", 0.1);
      if (g.contains("prior")) {
        const auto& pr = g["prior"];
        const std::string pk = pr.value("kind", "gaussian");
        cfg.gibbs.prior.kind = pk == "uniform-ball" ? PriorKind::uniform_ball : PriorKind::gaussian;
        cfg.gibbs.prior.tau2 = pr.value("tau2", 1.0);
        cfg.gibbs.prior.radius = pr.value("radius", 1.0);
      }
    }
    if (root.contains("s_grid")) cfg.s_grid = root["s_grid"].get<std::vector<double>>();
    cfg.ensemble_m = root.value("M", 2);
    if (root.contains("p_grid")) cfg.p_grid = root["p_grid"].get<std::vector<int>>();
    cfg.n_random_directions = root.value("n_random_directions", 64);
    cfg.n_spike_directions = root.value("n_spike_directions", 8);
    cfg.clt_samples_per_p = root.value("clt_samples_per_p", 25);
    cfg.clt_samples_per_cluster = root.value("clt_samples_per_cluster", 2000);
    cfg.contrast_activation = root.value("contrast_activation", "sign");
    cfg.clt_latent_ratio = root.value("clt_latent_ratio", 1.5);
    cfg.clt_latent_mean_norm = root.value("clt_latent_mean_norm", 1.5);
    cfg.clt_latent_sd = root.value("clt_latent_sd", 3.0);
    cfg.contrast_seeds = root.value("contrast_seeds", 2);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment JSON structure error: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace ulab
