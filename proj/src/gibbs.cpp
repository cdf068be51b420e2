#include "ulab/gibbs.hpp"

#include <algorithm>
#include <cmath>

#include "ulab/optim.hpp"

namespace ulab {

void GibbsConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("GibbsConfig: beta must be positive");
  if (n_steps <= burn_in) throw ConfigError("GibbsConfig: burn_in must be smaller than n_steps");
  if (burn_in < 0) throw ConfigError("GibbsConfig: burn_in must be >= 0");
  if (thinning < 1) throw ConfigError("GibbsConfig: thinning must be >= 1");
  if (!(step_size > 0.0)) throw ConfigError("GibbsConfig: step_size must be positive");
  if (prior.kind == PriorKind::gaussian && !(prior.tau2 > 0.0))
    throw ConfigError("GibbsConfig: gaussian prior needs tau2 > 0");
  if (prior.kind == PriorKind::uniform_ball && !(prior.radius > 0.0))
    throw ConfigError("GibbsConfig: uniform-ball prior needs radius > 0");
}

namespace {

double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

// Extensive-convention target: U(theta) = beta * n * R_hat(theta) + prior
// energy; the Gibbs density is exp(-U) up to normalization.
struct Target {
  const Dataset* ds = nullptr;
  Loss loss = Loss::squared;
  double lambda = 0.0;
  double beta = 1.0;
  GibbsPrior prior;
  Vec y;

  static Target make(const ErmProblem& prob, const Dataset& ds, double beta,
                     const GibbsPrior& prior) {
    if (prob.loss == Loss::multiclass_xent)
      throw ConfigError("gibbs: only squared and logistic-binary losses are sampled");
    if (prob.scaling != Scaling::none)
      throw ConfigError("gibbs: inv-sqrt-d scaling not supported in the sampler");
    if (prior.kind == PriorKind::uniform_ball && ds.p() > 20)
      throw ConfigError("gibbs: uniform-ball prior supported only for p <= 20");
    Target t;
    t.ds = &ds;
    t.loss = prob.loss;
    t.lambda = prob.lambda;
    t.beta = beta;
    t.prior = prior;
    t.y = prob.loss == Loss::logistic_binary ? binary_pm1_labels(ds) : Vec(ds.y.col(0));
    return t;
  }

  double risk(const Vec& theta) const {
    const Vec u = ds->X * theta;
    const int n = ds->n();
    double loss_sum = 0.0;
    if (loss == Loss::squared) {
      for (int i = 0; i < n; ++i) {
        const double r = u(i) - y(i);
        loss_sum += r * r;
      }
    } else {
      for (int i = 0; i < n; ++i) {
        const double t = -y(i) * u(i);
        loss_sum += t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
      }
    }
    return loss_sum / static_cast<double>(n) + lambda * theta.squaredNorm();
  }

  double risk_grad(const Vec& theta, Vec& g) const {
    const Vec u = ds->X * theta;
    const int n = ds->n();
    double loss_sum = 0.0;
    Vec w(n);
    if (loss == Loss::squared) {
      for (int i = 0; i < n; ++i) {
        const double r = u(i) - y(i);
        loss_sum += r * r;
        w(i) = 2.0 * r;
      }
    } else {
      for (int i = 0; i < n; ++i) {
        const double t = -y(i) * u(i);
        loss_sum += t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
        w(i) = -y(i) * sigmoid(-y(i) * u(i));
      }
    }
    g = ds->X.transpose() * w / static_cast<double>(n) + 2.0 * lambda * theta;
    return loss_sum / static_cast<double>(n) + lambda * theta.squaredNorm();
  }

  bool in_support(const Vec& theta) const {
    return prior.kind != PriorKind::uniform_ball || theta.norm() <= prior.radius;
  }

  double energy(const Vec& theta) const {
    if (!in_support(theta)) return std::numeric_limits<double>::infinity();
    double e = beta * static_cast<double>(ds->n()) * risk(theta);
    if (prior.kind == PriorKind::gaussian) e += 0.5 * theta.squaredNorm() / prior.tau2;
    return e;
  }

  double energy_grad(const Vec& theta, Vec& g) const {
    const double r = risk_grad(theta, g);
    g *= beta * static_cast<double>(ds->n());
    double e = beta * static_cast<double>(ds->n()) * r;
    if (prior.kind == PriorKind::gaussian) {
      g += theta / prior.tau2;
      e += 0.5 * theta.squaredNorm() / prior.tau2;
    }
    return e;
  }
};

struct MalaResult {
  std::vector<Vec> samples;
  double acceptance_rate = 0.0;
};

MalaResult run_mala(const Target& target, const GibbsConfig& cfg, RngStream& rng) {
  const int p = target.ds->p();
  Vec theta = Vec::Zero(p);
  Vec grad(p);
  double energy = target.energy_grad(theta, grad);
  double eps = cfg.step_size;

  MalaResult out;
  out.samples.reserve(static_cast<std::size_t>((cfg.n_steps - cfg.burn_in) / cfg.thinning));
  long long accepted_post = 0, total_post = 0;
  Vec noise(p), prop(p), prop_grad(p);
  for (int step = 0; step < cfg.n_steps; ++step) {
    for (int j = 0; j < p; ++j) noise(j) = rng.normal();
    prop = theta - 0.5 * eps * eps * grad + eps * noise;
    const double prop_energy = target.in_support(prop)
                                   ? target.energy_grad(prop, prop_grad)
                                   : std::numeric_limits<double>::infinity();
    double log_accept;
    if (!std::isfinite(prop_energy)) {
      log_accept = -std::numeric_limits<double>::infinity();
    } else {
      const Vec fwd = prop - theta + 0.5 * eps * eps * grad;
      const Vec bwd = theta - prop + 0.5 * eps * eps * prop_grad;
      log_accept = energy - prop_energy +
                   (fwd.squaredNorm() - bwd.squaredNorm()) / (2.0 * eps * eps);
    }
    const double accept_prob = std::min(1.0, std::exp(std::min(0.0, log_accept)));
    const bool accept = rng.uniform() < accept_prob;
    if (accept) {
      theta = prop;
      grad = prop_grad;
      energy = prop_energy;
    }
    if (!std::isfinite(energy)) throw NumericalError("gibbs: non-finite energy");

    if (step < cfg.burn_in) {
      // Robbins-Monro drift toward 0.57 acceptance, frozen after burn-in.
      const double gain = 1.0 / std::sqrt(1.0 + static_cast<double>(step));
      eps *= std::exp(gain * (accept_prob - 0.574));
      eps = std::min(std::max(eps, 1e-12), 1e6);
    } else {
      ++total_post;
      if (accept) ++accepted_post;
      const int offset = step - cfg.burn_in;
      if (offset % cfg.thinning == 0) out.samples.push_back(theta);
    }
  }
  out.acceptance_rate = total_post > 0
                            ? static_cast<double>(accepted_post) / static_cast<double>(total_post)
                            : 1.0;
  if (out.acceptance_rate < 0.05)
    throw NumericalError("gibbs: acceptance collapse after adaptation (rate " +
                         std::to_string(out.acceptance_rate) + ")");
  return out;
}

}  // namespace

SampleChain gibbs_chain(const ErmProblem& prob, const Dataset& ds, const GibbsConfig& cfg,
                        RngStream& rng) {
  cfg.validate();
  const Target target = Target::make(prob, ds, cfg.beta, cfg.prior);
  MalaResult r = run_mala(target, cfg, rng);
  SampleChain chain;
  chain.samples = std::move(r.samples);
  chain.acceptance_rate = r.acceptance_rate;
  chain.config = cfg;
  if (chain.samples.empty()) throw NumericalError("gibbs: empty chain");
  for (const Vec& s : chain.samples)
    if (!s.allFinite()) throw NumericalError("gibbs: non-finite sample");
  return chain;
}

Estimator posterior_mean(const SampleChain& chain) {
  if (chain.samples.empty()) throw ConfigError("posterior_mean: empty chain");
  Vec mean = Vec::Zero(chain.samples[0].size());
  for (const Vec& s : chain.samples) mean += s;
  mean /= static_cast<double>(chain.samples.size());
  Estimator est;
  est.theta = mean.transpose();
  est.bias = Vec::Zero(1);
  est.scaling = Scaling::none;
  est.report.iterations = chain.size();
  est.report.converged = true;
  return est;
}

FreeEnergyResult free_energy_analytic(const ErmProblem& prob, const Dataset& ds, double beta,
                                      const GibbsPrior& prior) {
  if (prob.loss != Loss::squared)
    throw ConfigError("free_energy_analytic: squared loss only");
  if (prior.kind != PriorKind::gaussian)
    throw ConfigError("free_energy_analytic: gaussian prior only");
  const int n = ds.n();
  const int p = ds.p();
  const Vec y = ds.y.col(0);
  Mat A = 2.0 * beta * (ds.X.transpose() * ds.X);
  A.diagonal().array() += 2.0 * beta * static_cast<double>(n) * prob.lambda + 1.0 / prior.tau2;
  const Vec b = 2.0 * beta * (ds.X.transpose() * y);
  Eigen::LLT<Mat> llt(A);
  if (llt.info() != Eigen::Success)
    throw NumericalError("free_energy_analytic: factorization failed");
  double logdet = 0.0;
  for (int i = 0; i < p; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  const double quad = 0.5 * b.dot(llt.solve(b));
  const double log_z = -0.5 * static_cast<double>(p) * std::log(prior.tau2) - 0.5 * logdet +
                       quad - beta * y.squaredNorm();
  FreeEnergyResult res;
  res.value = -log_z / static_cast<double>(n);
  return res;
}

FreeEnergyResult free_energy_ti(const ErmProblem& prob, const Dataset& ds, double beta,
                                const GibbsPrior& prior, const Rng& rng, const TiOptions& opt) {
  if (!(beta > 0.0)) throw ConfigError("free_energy_ti: beta must be positive");
  if (opt.grid_points < 2) throw ConfigError("free_energy_ti: need at least 2 grid points");
  GibbsPrior pr = prior;
  const Target t0 = Target::make(prob, ds, beta, pr);

  // <R>_0 by direct prior sampling (exact draws, no chain needed)
  const double beta_min = beta * 1e-4;
  double prior_mean = 0.0, prior_m2 = 0.0;
  {
    RngStream s = rng.stream("ti/prior");
    const int draws = 20000;
    Vec theta(ds.p());
    for (int i = 0; i < draws; ++i) {
      if (pr.kind == PriorKind::gaussian) {
        for (int j = 0; j < ds.p(); ++j) theta(j) = std::sqrt(pr.tau2) * s.normal();
      } else {
        // uniform in the ball: uniform direction, radius R * U^{1/p}
        for (int j = 0; j < ds.p(); ++j) theta(j) = s.normal();
        theta.normalize();
        theta *= pr.radius * std::pow(s.uniform(), 1.0 / static_cast<double>(ds.p()));
      }
      const double r = t0.risk(theta);
      prior_mean += r;
      prior_m2 += r * r;
    }
    prior_mean /= draws;
    prior_m2 = prior_m2 / draws - prior_mean * prior_mean;
  }
  const double prior_se = std::sqrt(std::max(prior_m2, 0.0) / 20000.0);

  FreeEnergyResult res;
  const int G = opt.grid_points;
  res.grid_beta.resize(static_cast<std::size_t>(G));
  res.grid_risk.resize(static_cast<std::size_t>(G));
  res.grid_se.resize(static_cast<std::size_t>(G));
  for (int j = 0; j < G; ++j) {
    const double bj = beta_min * std::pow(beta / beta_min, static_cast<double>(j) /
                                                               static_cast<double>(G - 1));
    res.grid_beta[static_cast<std::size_t>(j)] = bj;
    GibbsConfig cfg;
    cfg.beta = bj;
    cfg.prior = pr;
    cfg.n_steps = opt.burn_in + opt.steps_per_point;
    cfg.burn_in = opt.burn_in;
    cfg.thinning = 1;
    cfg.step_size = 0.5;
    RngStream stream = rng.stream("ti/grid", static_cast<std::uint64_t>(j));
    const Target tj = Target::make(prob, ds, bj, pr);
    MalaResult chain = run_mala(tj, cfg, stream);
    // chain mean of R_hat with a batch-means standard error
    const int L = static_cast<int>(chain.samples.size());
    std::vector<double> risks(static_cast<std::size_t>(L));
    double mean = 0.0;
    for (int i = 0; i < L; ++i) {
      risks[static_cast<std::size_t>(i)] = tj.risk(chain.samples[static_cast<std::size_t>(i)]);
      mean += risks[static_cast<std::size_t>(i)];
    }
    mean /= L;
    const int n_batches = 32;
    const int batch = std::max(1, L / n_batches);
    double var_bm = 0.0;
    int used = 0;
    for (int bstart = 0; bstart + batch <= L; bstart += batch) {
      double bm = 0.0;
      for (int i = bstart; i < bstart + batch; ++i) bm += risks[static_cast<std::size_t>(i)];
      bm /= batch;
      var_bm += (bm - mean) * (bm - mean);
      ++used;
    }
    const double se = used > 1 ? std::sqrt(var_bm / (used * (used - 1.0))) : 0.0;
    res.grid_risk[static_cast<std::size_t>(j)] = mean;
    res.grid_se[static_cast<std::size_t>(j)] = se;
  }

  // integral: stub on [0, beta_min] + composite Simpson in log-beta, where
  // the grid is uniform (trapezoid there leaves an O(h^2) bias visible at
  // the 1e-3 scale); the odd final interval uses the 3/8 rule
  double integral = beta_min * prior_mean;
  double var_total = (beta_min * prior_se) * (beta_min * prior_se);
  const double hlog = std::log(beta / beta_min) / static_cast<double>(G - 1);
  std::vector<double> weight(static_cast<std::size_t>(G), 0.0);
  int j = 0;
  int remaining = G - 1;
  while (remaining >= 2) {
    if (remaining == 3) {  // Simpson 3/8 closes an odd interval count
      weight[static_cast<std::size_t>(j)] += 3.0 / 8.0;
      weight[static_cast<std::size_t>(j + 1)] += 9.0 / 8.0;
      weight[static_cast<std::size_t>(j + 2)] += 9.0 / 8.0;
      weight[static_cast<std::size_t>(j + 3)] += 3.0 / 8.0;
      j += 3;
      remaining -= 3;
    } else {
      weight[static_cast<std::size_t>(j)] += 1.0 / 3.0;
      weight[static_cast<std::size_t>(j + 1)] += 4.0 / 3.0;
      weight[static_cast<std::size_t>(j + 2)] += 1.0 / 3.0;
      j += 2;
      remaining -= 2;
    }
  }
  if (remaining == 1) {
    weight[static_cast<std::size_t>(j)] += 0.5;
    weight[static_cast<std::size_t>(j + 1)] += 0.5;
  }
  for (int i = 0; i < G; ++i) {
    // d beta = beta d(log beta): integrand in log space is beta * <R>
    const double w = hlog * weight[static_cast<std::size_t>(i)] *
                     res.grid_beta[static_cast<std::size_t>(i)];
    integral += w * res.grid_risk[static_cast<std::size_t>(i)];
    var_total += w * w * res.grid_se[static_cast<std::size_t>(i)] *
                 res.grid_se[static_cast<std::size_t>(i)];
  }
  res.value = integral;
  res.std_error = std::sqrt(var_total);
  if (res.std_error > opt.max_std_error)
    throw NumericalError("free_energy_ti: grid variance too large (std error " +
                         std::to_string(res.std_error) + ", per-point max " +
                         std::to_string(*std::max_element(res.grid_se.begin(), res.grid_se.end())) +
                         ")");
  return res;
}

double eps_net_free_energy(const ErmProblem& prob, const Dataset& ds, double beta,
                           double radius, double eps) {
  const int p = ds.p();
  if (p > 3) throw ConfigError("eps_net_free_energy: validation mode supports p <= 3 only");
  if (!(eps > 0.0 && radius > 0.0)) throw ConfigError("eps_net_free_energy: need eps, radius > 0");
  const Target target = Target::make(prob, ds, beta, GibbsPrior{});
  const int half = static_cast<int>(std::ceil(radius / eps));
  const long long side = 2LL * half + 1;
  long long total = 1;
  for (int j = 0; j < p; ++j) total *= side;
  // log-sum-exp over the net, streamed coordinate-odometer style
  double amax = -std::numeric_limits<double>::infinity();
  std::vector<int> idx(static_cast<std::size_t>(p), -half);
  Vec theta(p);
  std::vector<double> energies;
  energies.reserve(static_cast<std::size_t>(total));
  long long kept = 0;
  for (long long t = 0; t < total; ++t) {
    for (int j = 0; j < p; ++j) theta(j) = eps * idx[static_cast<std::size_t>(j)];
    if (theta.norm() <= radius) {
      const double e = -beta * static_cast<double>(ds.n()) * target.risk(theta);
      energies.push_back(e);
      amax = std::max(amax, e);
      ++kept;
    }
    for (int j = 0; j < p; ++j) {
      if (++idx[static_cast<std::size_t>(j)] <= half) break;
      idx[static_cast<std::size_t>(j)] = -half;
    }
  }
  if (kept == 0) throw NumericalError("eps_net_free_energy: empty net");
  double z = 0.0;
  for (double e : energies) z += std::exp(e - amax);
  return -(amax + std::log(z / static_cast<double>(kept))) / static_cast<double>(ds.n());
}

double metric_h(const MetricH& h, const std::vector<Mat>& thetas) {
  if (thetas.empty()) throw ConfigError("metric_h: no parameters");
  const double p = static_cast<double>(thetas[0].cols());
  switch (h.kind) {
    case MetricKind::pairwise_overlap: {
      double s = 0.0;
      for (std::size_t a = 0; a < thetas.size(); ++a)
        for (std::size_t b = a + 1; b < thetas.size(); ++b)
          s += (thetas[a] * thetas[b].transpose()).trace() / p;
      return s;
    }
    case MetricKind::teacher_overlap: {
      if (h.theta_star.size() == 0) throw ConfigError("metric_h: teacher-overlap needs theta_star");
      double s = 0.0;
      for (const Mat& th : thetas) s += (th * h.theta_star.transpose()).trace() / p;
      return s;
    }
    case MetricKind::ensemble_test_error: {
      if (!h.heldout) throw ConfigError("metric_h: ensemble-test-error needs a held-out set");
      const Dataset& ds = *h.heldout;
      Vec avg = Vec::Zero(ds.p());
      for (const Mat& th : thetas) avg += th.row(0).transpose();
      avg /= static_cast<double>(thetas.size());
      const Vec y = binary_pm1_labels(ds);
      const Vec u = ds.X * avg;
      int wrong = 0;
      for (int i = 0; i < ds.n(); ++i)
        if ((u(i) >= 0.0 ? 1.0 : -1.0) != y(i)) ++wrong;
      return static_cast<double>(wrong) / static_cast<double>(ds.n());
    }
  }
  throw ConfigError("metric_h: bad kind");
}

CouplingEstimate coupling_free_energy(double s, int n, const std::vector<double>& h_values) {
  const int L = static_cast<int>(h_values.size());
  if (L < 2) throw ConfigError("coupling_free_energy: need at least 2 samples");
  std::vector<double> a(static_cast<std::size_t>(L));
  double amax = -std::numeric_limits<double>::infinity();
  for (int l = 0; l < L; ++l) {
    a[static_cast<std::size_t>(l)] = -s * static_cast<double>(n) * h_values[static_cast<std::size_t>(l)];
    amax = std::max(amax, a[static_cast<std::size_t>(l)]);
  }
  double sum = 0.0;
  for (double al : a) sum += std::exp(al - amax);
  const double log_sum = amax + std::log(sum);
  CouplingEstimate est;
  est.value = -(log_sum - std::log(static_cast<double>(L))) / static_cast<double>(n);
  // leave-one-out jackknife
  double jk_mean = 0.0;
  std::vector<double> jk(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    const double rest = sum - std::exp(a[static_cast<std::size_t>(l)] - amax);
    const double log_loo = amax + std::log(std::max(rest, 1e-300)) -
                           std::log(static_cast<double>(L - 1));
    jk[static_cast<std::size_t>(l)] = -log_loo / static_cast<double>(n);
    jk_mean += jk[static_cast<std::size_t>(l)];
  }
  jk_mean /= L;
  double var = 0.0;
  for (double v : jk) var += (v - jk_mean) * (v - jk_mean);
  est.jackknife_se = std::sqrt(var * (static_cast<double>(L - 1) / static_cast<double>(L)));
  return est;
}

namespace {

struct FrozenChains {
  // zipped joint draws of the sampled objectives; h evaluated lazily
  std::vector<std::vector<Vec>> samples;  // [objective_idx - M1][l]
  int joint_draws = 0;
};

FrozenChains sample_chains(const CoupledProblem& cp, const Rng& rng) {
  FrozenChains fc;
  const int M = static_cast<int>(cp.objectives.size());
  for (int m = cp.M1; m < M; ++m) {
    RngStream stream = rng.stream("coupled/chain", static_cast<std::uint64_t>(m));
    SampleChain chain =
        gibbs_chain(cp.objectives[static_cast<std::size_t>(m)].prob,
                    cp.objectives[static_cast<std::size_t>(m)].data,
                    cp.objectives[static_cast<std::size_t>(m)].gibbs, stream);
    fc.samples.push_back(std::move(chain.samples));
  }
  fc.joint_draws = fc.samples.empty() ? 0 : static_cast<int>(fc.samples[0].size());
  for (const auto& s : fc.samples)
    fc.joint_draws = std::min(fc.joint_draws, static_cast<int>(s.size()));
  return fc;
}

// h per joint draw at fixed minimized parameters
std::vector<double> h_per_draw(const CoupledProblem& cp, const FrozenChains& fc,
                               const std::vector<Mat>& thetas_min) {
  std::vector<Mat> all(cp.objectives.size());
  for (int m = 0; m < cp.M1; ++m) all[static_cast<std::size_t>(m)] = thetas_min[static_cast<std::size_t>(m)];
  std::vector<double> hs(static_cast<std::size_t>(fc.joint_draws));
  for (int l = 0; l < fc.joint_draws; ++l) {
    for (std::size_t j = 0; j < fc.samples.size(); ++j)
      all[static_cast<std::size_t>(cp.M1) + j] = fc.samples[j][static_cast<std::size_t>(l)].transpose();
    hs[static_cast<std::size_t>(l)] = metric_h(cp.h, all);
  }
  return hs;
}

int shared_n(const CoupledProblem& cp) {
  const int n = cp.objectives.at(0).data.n();
  for (const auto& o : cp.objectives)
    if (o.data.n() != n)
      throw ConfigError("coupled problem: objectives must share the sample count n");
  return n;
}

}  // namespace

double coupled_objective(const CoupledProblem& cp, const std::vector<Mat>& thetas_min,
                         const Rng& rng) {
  if (static_cast<int>(thetas_min.size()) != cp.M1)
    throw ConfigError("coupled_objective: expected M1 minimized parameter sets");
  double value = 0.0;
  for (int m = 0; m < cp.M1; ++m) {
    Estimator est;
    est.theta = thetas_min[static_cast<std::size_t>(m)];
    est.bias = Vec::Zero(est.theta.rows());
    est.scaling = cp.objectives[static_cast<std::size_t>(m)].prob.scaling;
    value += empirical_risk(est, cp.objectives[static_cast<std::size_t>(m)].data,
                            cp.objectives[static_cast<std::size_t>(m)].prob);
  }
  if (cp.M1 == static_cast<int>(cp.objectives.size())) {
    // no sampled objectives: f_{n,s} = -(1/n) log exp(-s n h) = s h
    if (cp.s != 0.0) {
      std::vector<Mat> all = thetas_min;
      value += cp.s * metric_h(cp.h, all);
    }
    return value;
  }
  if (cp.s == 0.0) return value;  // f_{n,0} = 0 exactly
  const FrozenChains fc = sample_chains(cp, rng);
  const std::vector<double> hs = h_per_draw(cp, fc, thetas_min);
  value += coupling_free_energy(cp.s, shared_n(cp), hs).value;
  return value;
}

QOfSResult q_of_s(const std::function<CoupledProblem(int, const Rng&)>& make_problem,
                  const std::vector<double>& s_grid, int n_replicas, const Rng& rng) {
  if (s_grid.empty()) throw ConfigError("q_of_s: empty s grid");
  bool has_zero = false;
  for (std::size_t i = 0; i + 1 < s_grid.size(); ++i)
    if (s_grid[i] > s_grid[i + 1]) throw ConfigError("q_of_s: s grid must be sorted");
  for (double s : s_grid) has_zero = has_zero || s == 0.0;
  if (!has_zero) throw ConfigError("q_of_s: s grid must contain 0");
  if (n_replicas < 2) throw ConfigError("q_of_s: need at least 2 data replicas");

  QOfSResult res;
  res.s_grid = s_grid;
  res.q_values.assign(static_cast<std::size_t>(n_replicas),
                      std::vector<double>(s_grid.size(), 0.0));
  res.direct_h_values.assign(static_cast<std::size_t>(n_replicas), 0.0);

  for (int rep = 0; rep < n_replicas; ++rep) {
    const Rng rep_rng(detail::splitmix64(rng.seed() ^ (0x9E37u + static_cast<std::uint64_t>(rep))));
    CoupledProblem cp = make_problem(rep, rep_rng);
    if (cp.M1 < 1 || cp.M1 > static_cast<int>(cp.objectives.size()))
      throw ConfigError("q_of_s: M1 out of range");
    if (cp.h.kind == MetricKind::ensemble_test_error)
      throw ConfigError("q_of_s: metric must be differentiable in the minimized parameters");
    const int n = shared_n(cp);
    const FrozenChains fc = sample_chains(cp, rep_rng);
    const bool sampled = !fc.samples.empty();
    if (sampled && fc.joint_draws < 2) throw NumericalError("q_of_s: chains too short");

    // stacked minimized parameters (each objective fits one row)
    std::vector<int> dims(static_cast<std::size_t>(cp.M1));
    int total = 0;
    for (int m = 0; m < cp.M1; ++m) {
      dims[static_cast<std::size_t>(m)] = cp.objectives[static_cast<std::size_t>(m)].data.p();
      total += dims[static_cast<std::size_t>(m)];
    }
    auto split = [&](const Vec& x) {
      std::vector<Mat> thetas(static_cast<std::size_t>(cp.M1));
      int off = 0;
      for (int m = 0; m < cp.M1; ++m) {
        thetas[static_cast<std::size_t>(m)] =
            x.segment(off, dims[static_cast<std::size_t>(m)]).transpose();
        off += dims[static_cast<std::size_t>(m)];
      }
      return thetas;
    };

    // gradient of h in the minimized parameters (overlap metrics are linear)
    auto grad_h = [&](const std::vector<Mat>& all, int m) -> Vec {
      const double p = static_cast<double>(all[static_cast<std::size_t>(m)].cols());
      Vec g = Vec::Zero(all[static_cast<std::size_t>(m)].cols());
      if (cp.h.kind == MetricKind::pairwise_overlap) {
        for (std::size_t b = 0; b < all.size(); ++b)
          if (static_cast<int>(b) != m) g += all[b].row(0).transpose() / p;
      } else {
        g = cp.h.theta_star.row(0).transpose() / p;
      }
      return g;
    };

    std::vector<Target> targets_min;
    targets_min.reserve(static_cast<std::size_t>(cp.M1));
    for (int m = 0; m < cp.M1; ++m)
      targets_min.push_back(Target::make(cp.objectives[static_cast<std::size_t>(m)].prob,
                                         cp.objectives[static_cast<std::size_t>(m)].data, 1.0,
                                         GibbsPrior{}));

    Vec warm = Vec::Zero(total);
    std::vector<std::pair<std::size_t, double>> order;  // solve s=0 first, then outward
    for (std::size_t i = 0; i < s_grid.size(); ++i) order.emplace_back(i, std::abs(s_grid[i]));
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.second < b.second; });

    for (const auto& [si, abs_s] : order) {
      (void)abs_s;
      const double s = s_grid[si];
      Objective obj;
      auto eval = [&, s](const Vec& x, Vec* grad) {
        const std::vector<Mat> thetas = split(x);
        double value = 0.0;
        if (grad) grad->setZero(total);
        int off = 0;
        for (int m = 0; m < cp.M1; ++m) {
          const Target& t = targets_min[static_cast<std::size_t>(m)];
          Vec g;
          if (grad) {
            value += t.risk_grad(thetas[static_cast<std::size_t>(m)].row(0).transpose(), g);
            grad->segment(off, dims[static_cast<std::size_t>(m)]) = g;
          } else {
            value += t.risk(thetas[static_cast<std::size_t>(m)].row(0).transpose());
          }
          off += dims[static_cast<std::size_t>(m)];
        }
        if (s != 0.0) {
          if (!sampled) {
            std::vector<Mat> all = thetas;
            value += s * metric_h(cp.h, all);
            if (grad) {
              int o2 = 0;
              for (int m = 0; m < cp.M1; ++m) {
                grad->segment(o2, dims[static_cast<std::size_t>(m)]) += s * grad_h(all, m);
                o2 += dims[static_cast<std::size_t>(m)];
              }
            }
          } else {
            const std::vector<double> hs = h_per_draw(cp, fc, thetas);
            // f = -(1/n) log mean exp(-s n h); df/dtheta = s * sum_l w_l dh_l
            double amax = -std::numeric_limits<double>::infinity();
            for (double h : hs) amax = std::max(amax, -s * n * h);
            double z = 0.0;
            std::vector<double> w(hs.size());
            for (std::size_t l = 0; l < hs.size(); ++l) {
              w[l] = std::exp(-s * n * hs[l] - amax);
              z += w[l];
            }
            value += -(amax + std::log(z / static_cast<double>(hs.size()))) / n;
            if (grad) {
              std::vector<Mat> all(cp.objectives.size());
              for (int m = 0; m < cp.M1; ++m) all[static_cast<std::size_t>(m)] = thetas[static_cast<std::size_t>(m)];
              Vec acc = Vec::Zero(total);
              for (std::size_t l = 0; l < hs.size(); ++l) {
                for (std::size_t j = 0; j < fc.samples.size(); ++j)
                  all[static_cast<std::size_t>(cp.M1) + j] = fc.samples[j][l].transpose();
                int o2 = 0;
                for (int m = 0; m < cp.M1; ++m) {
                  acc.segment(o2, dims[static_cast<std::size_t>(m)]) +=
                      (w[l] / z) * s * grad_h(all, m);
                  o2 += dims[static_cast<std::size_t>(m)];
                }
              }
              *grad += acc;
            }
          }
        }
        return value;
      };
      obj.value = [&eval](const Vec& x) { return eval(x, nullptr); };
      obj.value_and_grad = [&eval](const Vec& x, Vec& g) { return eval(x, &g); };
      MinimizeResult mr = lbfgs_minimize(obj, warm, cp.minimize_tol, 5000);
      if (!mr.converged)
        throw NumericalError("q_of_s: inner minimization did not converge (grad " +
                             std::to_string(mr.grad_norm) + ")");
      res.q_values[static_cast<std::size_t>(rep)][si] = mr.value;
      if (s == 0.0) {
        warm = mr.x;  // anchor subsequent warm starts at the s=0 minimizer
        if (sampled) {
          const std::vector<double> hs = h_per_draw(cp, fc, split(mr.x));
          double hm = 0.0;
          for (double h : hs) hm += h;
          res.direct_h_values[static_cast<std::size_t>(rep)] = hm / static_cast<double>(hs.size());
        } else {
          std::vector<Mat> all = split(mr.x);
          res.direct_h_values[static_cast<std::size_t>(rep)] = metric_h(cp.h, all);
        }
      }
    }
  }

  // replica averages
  const double R = static_cast<double>(n_replicas);
  res.q_mean.assign(s_grid.size(), 0.0);
  res.q_se.assign(s_grid.size(), 0.0);
  for (std::size_t si = 0; si < s_grid.size(); ++si) {
    double m = 0.0;
    for (int rep = 0; rep < n_replicas; ++rep) m += res.q_values[static_cast<std::size_t>(rep)][si];
    m /= R;
    double v = 0.0;
    for (int rep = 0; rep < n_replicas; ++rep) {
      const double d = res.q_values[static_cast<std::size_t>(rep)][si] - m;
      v += d * d;
    }
    res.q_mean[si] = m;
    res.q_se[si] = std::sqrt(v / (R * (R - 1.0)));
  }
  double hm = 0.0;
  for (double v : res.direct_h_values) hm += v;
  hm /= R;
  double hv = 0.0;
  for (double v : res.direct_h_values) hv += (v - hm) * (v - hm);
  res.direct_h_mean = hm;
  res.direct_h_se = std::sqrt(hv / (R * (R - 1.0)));
  return res;
}

}  // namespace ulab
