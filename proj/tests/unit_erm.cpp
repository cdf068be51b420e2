// ERM solvers against independent oracles: extended-precision risk sums,
// first-order reference solutions, grid searches, reduction identities.
#include <doctest.h>

#include <cmath>

#include "ulab/erm.hpp"
#include "ulab/optim.hpp"

using namespace ulab;

namespace {

Dataset random_regression(int n, int p, std::uint64_t seed, double noise = 0.3) {
  Rng rng(seed);
  RngStream s = rng.stream("data");
  Dataset ds;
  ds.X.resize(n, p);
  ds.y.resize(n, 1);
  ds.c.assign(static_cast<std::size_t>(n), 0);
  ds.label_kind = LabelKind::real;
  Vec teacher(p);
  for (int j = 0; j < p; ++j) teacher(j) = s.normal() / std::sqrt(static_cast<double>(p));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) ds.X(i, j) = s.normal();
    ds.y(i, 0) = ds.X.row(i).dot(teacher) + noise * s.normal();
  }
  return ds;
}

Dataset random_binary(int n, int p, std::uint64_t seed) {
  Dataset ds = random_regression(n, p, seed, 0.0);
  for (int i = 0; i < n; ++i) ds.y(i, 0) = ds.y(i, 0) >= 0.0 ? 1.0 : -1.0;
  ds.label_kind = LabelKind::cls;
  return ds;
}

double logistic_objective(const Dataset& ds, const Vec& y, const Vec& theta, double lambda) {
  double f = 0.0;
  for (int i = 0; i < ds.n(); ++i) {
    const double t = -y(i) * ds.X.row(i).dot(theta);
    f += t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
  }
  return f / ds.n() + lambda * theta.squaredNorm();
}

}  // namespace

TEST_CASE("empirical_risk: fixed points and an extended-precision oracle") {
  Dataset ds = random_regression(40, 6, 1);
  ErmProblem prob;
  prob.loss = Loss::squared;
  prob.lambda = 0.7;

  Estimator zero;
  zero.theta = Mat::Zero(1, 6);
  zero.bias = Vec::Zero(1);
  Dataset zeros = ds;
  zeros.y.setZero();
  CHECK(empirical_risk(zero, zeros, prob) == 0.0);

  // logistic at zero parameters is log 2
  Dataset bin = random_binary(30, 6, 2);
  ErmProblem logi;
  logi.loss = Loss::logistic_binary;
  logi.lambda = 0.1;
  Estimator zl = zero;
  CHECK(empirical_risk(zl, bin, logi) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  // random instance against a long-double direct sum
  Rng rng(3);
  RngStream s = rng.stream("theta");
  Estimator est;
  est.theta.resize(1, 6);
  for (int j = 0; j < 6; ++j) est.theta(0, j) = s.normal();
  est.bias = Vec::Zero(1);
  long double acc = 0.0L;
  for (int i = 0; i < ds.n(); ++i) {
    long double u = 0.0L;
    for (int j = 0; j < 6; ++j)
      u += static_cast<long double>(est.theta(0, j)) * static_cast<long double>(ds.X(i, j));
    const long double r = u - static_cast<long double>(ds.y(i, 0));
    acc += r * r;
  }
  acc /= ds.n();
  long double reg = 0.0L;
  for (int j = 0; j < 6; ++j)
    reg += static_cast<long double>(est.theta(0, j)) * static_cast<long double>(est.theta(0, j));
  acc += static_cast<long double>(prob.lambda) * reg;
  CHECK(empirical_risk(est, ds, prob) ==
        doctest::Approx(static_cast<double>(acc)).epsilon(1e-12));
}

TEST_CASE("fit_ridge: interpolation, heavy regularization, residual, descent oracle") {
  // p=1, single sample x=1, y=1, lambda=0 -> theta=1
  Dataset one;
  one.X = Mat::Ones(1, 1);
  one.y = Mat::Ones(1, 1);
  one.c = {0};
  one.label_kind = LabelKind::real;
  CHECK(fit_ridge(one, 0.0).theta(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  Dataset ds = random_regression(10, 5, 4);
  const double big = 1e12;
  const Estimator heavy = fit_ridge(ds, big);
  const Vec rhs = ds.X.transpose() * ds.y.col(0) / ds.n();
  CHECK(heavy.theta.norm() <= 1e-9 * rhs.norm());

  const double lambda = 0.05;
  const Estimator est = fit_ridge(ds, lambda);
  Mat gram = ds.X.transpose() * ds.X / ds.n();
  gram.diagonal().array() += lambda;
  CHECK((gram * est.theta.row(0).transpose() - rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));

  // first-order oracle run to tight tolerance
  Objective obj;
  obj.value = [&](const Vec& th) {
    return (ds.X * th - ds.y.col(0)).squaredNorm() / ds.n() + lambda * th.squaredNorm();
  };
  obj.value_and_grad = [&](const Vec& th, Vec& g) {
    g = 2.0 * ds.X.transpose() * (ds.X * th - ds.y.col(0)) / ds.n() + 2.0 * lambda * th;
    return obj.value(th);
  };
  const MinimizeResult r = lbfgs_minimize(obj, Vec::Zero(5), 1e-12, 2000);
  CHECK((est.theta.row(0).transpose() - r.x).norm() < 1e-8);

  Dataset skinny = random_regression(3, 5, 5);
  CHECK_THROWS_AS(fit_ridge(skinny, 0.0), NumericalError);
}

TEST_CASE("fit_logistic: sign equivariance and a 2-D grid-search oracle") {
  Dataset ds = random_binary(20, 2, 6);
  for (int i = 0; i < ds.n(); i += 4) ds.y(i, 0) = -ds.y(i, 0);  // keep it non-separable
  const double lambda = 1e-4;
  const Estimator est = fit_logistic(ds, lambda, 1e-10);

  Dataset flipped = ds;
  flipped.y = -ds.y;
  const Estimator neg = fit_logistic(flipped, lambda, 1e-10);
  CHECK((est.theta + neg.theta).norm() == 0.0);  // bit-exact negation

  // refined grid search oracle in 2-D
  const Vec y = binary_pm1_labels(ds);
  Vec center = Vec::Zero(2);
  double width = 40.0;
  double best = logistic_objective(ds, y, center, lambda);
  Vec best_theta = center;
  for (int level = 0; level < 12; ++level) {
    for (int a = -10; a <= 10; ++a)
      for (int b = -10; b <= 10; ++b) {
        Vec cand = center;
        cand(0) += width * a / 10.0;
        cand(1) += width * b / 10.0;
        const double v = logistic_objective(ds, y, cand, lambda);
        if (v < best) {
          best = v;
          best_theta = cand;
        }
      }
    center = best_theta;
    width /= 5.0;
  }
  const double resolution = 1e-4;
  CHECK((est.theta.row(0).transpose() - best_theta).norm() < 10.0 * resolution);
  CHECK(est.report.objective <= best + 1e-10);

  CHECK_THROWS_AS(fit_logistic(ds, 0.0), ConfigError);
}

TEST_CASE("fit_logistic: paper-regularization envelope converges at tol 1e-8") {
  Dataset ds = random_binary(2000, 400, 7);
  const Estimator est = fit_logistic(ds, 1e-4, 1e-8);
  CHECK(est.report.converged);
  CHECK(est.report.grad_norm <= 1e-8);
}

TEST_CASE("fit_multiclass: logistic reduction, symmetric bias, relabeling") {
  // symmetric two-cluster data with one-hot labels
  const int n = 120, p = 12;
  Rng rng(8);
  RngStream s = rng.stream("data");
  Dataset ds;
  ds.X.resize(n, p);
  ds.y = Mat::Zero(n, 2);
  ds.c.resize(static_cast<std::size_t>(n));
  Vec mu(p);
  for (int j = 0; j < p; ++j) mu(j) = s.normal() / std::sqrt(static_cast<double>(p));
  for (int i = 0; i < n; ++i) {
    const int c = i % 2;
    ds.c[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(c);
    for (int j = 0; j < p; ++j) ds.X(i, j) = (c == 0 ? mu(j) : -mu(j)) + s.normal();
    ds.y(i, c) = 1.0;
  }
  ds.label_kind = LabelKind::onehot;

  ErmProblem prob;
  prob.loss = Loss::multiclass_xent;
  prob.lambda = 0.05;
  prob.fit_bias = true;
  prob.scaling = Scaling::inv_sqrt_d;
  const Estimator mc = fit_multiclass(ds, prob, 1e-10);
  CHECK(std::abs(mc.bias(0) + mc.bias(1)) < 1e-6);  // softmax gauge stays pinned
  CHECK(std::abs(mc.bias(0) - mc.bias(1)) < 5e-2);  // symmetric instance: b ~ 0

  // k=2 (without bias) reduces to a binary logistic problem with matched
  // parameterization: w1 = -w2 at the optimum, theta_log = w1 - w2 acts on
  // x/sqrt(p), and the penalties match through ||w1||^2+||w2||^2 = ||delta||^2/2
  ErmProblem nobias = prob;
  nobias.fit_bias = false;
  nobias.scaling = Scaling::inv_sqrt_d;
  const Estimator mc0 = fit_multiclass(ds, nobias, 1e-9);
  Dataset bin_scaled = ds;
  bin_scaled.y.resize(n, 1);
  for (int i = 0; i < n; ++i) bin_scaled.y(i, 0) = ds.y(i, 0) == 1.0 ? 1.0 : -1.0;
  bin_scaled.label_kind = LabelKind::cls;
  bin_scaled.X = ds.X / std::sqrt(static_cast<double>(p));
  const double lambda_log = prob.lambda / (2.0 * n);
  const Estimator lg = fit_logistic(bin_scaled, lambda_log, 1e-11, 4000);
  const Vec delta = (mc0.theta.row(0) - mc0.theta.row(1)).transpose();
  const Vec theta_log = lg.theta.row(0).transpose();
  Rng prng(9);
  RngStream ps = prng.stream("probe");
  for (int t = 0; t < 50; ++t) {
    Vec x(p);
    for (int j = 0; j < p; ++j) x(j) = ps.normal();
    const double mc_score = delta.dot(x) / std::sqrt(static_cast<double>(p));
    const double lg_score = theta_log.dot(x) / std::sqrt(static_cast<double>(p));
    const double pm = 1.0 / (1.0 + std::exp(-mc_score));
    const double pl = 1.0 / (1.0 + std::exp(-lg_score));
    CHECK(std::abs(pm - pl) < 1e-6);
  }

  // permuting class indices permutes rows of W and entries of b
  Dataset swapped = ds;
  swapped.y.col(0) = ds.y.col(1);
  swapped.y.col(1) = ds.y.col(0);
  for (int i = 0; i < n; ++i)
    swapped.c[static_cast<std::size_t>(i)] = 1u - swapped.c[static_cast<std::size_t>(i)];
  const Estimator perm = fit_multiclass(swapped, prob, 1e-10);
  CHECK((perm.theta.row(0) - mc.theta.row(1)).norm() < 1e-6);
  CHECK((perm.theta.row(1) - mc.theta.row(0)).norm() < 1e-6);
  CHECK(std::abs(perm.bias(0) - mc.bias(1)) < 1e-6);
}

TEST_CASE("test_error: exact zero, random guessing, scaling invariance") {
  Estimator guess;
  guess.theta = Mat::Zero(1, 4);
  guess.theta(0, 0) = 1e-12;  // effectively random signs on fresh data
  guess.bias = Vec::Zero(1);
  Rng rng(11);
  RngStream s = rng.stream("fresh");
  Dataset fresh;
  fresh.X.resize(10000, 4);
  fresh.y.resize(10000, 1);
  fresh.c.assign(10000, 0);
  fresh.label_kind = LabelKind::cls;
  for (int i = 0; i < fresh.n(); ++i) {
    for (int j = 0; j < 4; ++j) fresh.X(i, j) = s.normal();
    fresh.y(i, 0) = s.uniform() < 0.5 ? 1.0 : -1.0;
  }
  const double err = test_error(guess, fresh, Metric::zero_one_sign);
  CHECK(std::abs(err - 0.5) < 3.0 * std::sqrt(0.25 / fresh.n()));

  // perfect predictor on its own predicted labels
  const Estimator fit = fit_logistic(random_binary(60, 3, 12), 1e-6, 1e-10);
  Dataset own = random_binary(60, 3, 12);
  Dataset relabeled = own;
  const Mat u = fit.preactivations(own.X);
  for (int i = 0; i < own.n(); ++i) relabeled.y(i, 0) = u(i, 0) >= 0.0 ? 1.0 : -1.0;
  CHECK(test_error(fit, relabeled, Metric::zero_one_sign) == 0.0);

  // positive rescaling leaves the sign error unchanged
  Estimator scaled = fit;
  scaled.theta *= 17.3;
  CHECK(test_error(fit, own, Metric::zero_one_sign) ==
        test_error(scaled, own, Metric::zero_one_sign));
}

TEST_CASE("fitted objective beats a randomized probe set and ignores row order") {
  Dataset ds = random_binary(80, 6, 13);
  const double lambda = 0.01;
  const Estimator est = fit_logistic(ds, lambda, 1e-10);
  ErmProblem prob;
  prob.loss = Loss::logistic_binary;
  prob.lambda = lambda;
  const double fitted = empirical_risk(est, ds, prob);
  Rng rng(14);
  RngStream s = rng.stream("probe");
  for (int t = 0; t < 100; ++t) {
    Estimator probe = est;
    for (int j = 0; j < 6; ++j) probe.theta(0, j) = 3.0 * s.normal();
    CHECK(fitted <= empirical_risk(probe, ds, prob) + 1e-8);
  }

  // row-order invariance of the fitted objective
  Dataset shuffled = ds;
  const int n = ds.n();
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = (i * 37 + 11) % n;
  for (int i = 0; i < n; ++i) {
    shuffled.X.row(i) = ds.X.row(perm[static_cast<std::size_t>(i)]);
    shuffled.y.row(i) = ds.y.row(perm[static_cast<std::size_t>(i)]);
  }
  const Estimator est2 = fit_logistic(shuffled, lambda, 1e-10);
  CHECK(est2.report.objective == doctest::Approx(est.report.objective).epsilon(1e-10));
}
