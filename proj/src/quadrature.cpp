#include "ulab/quadrature.hpp"

#include <cmath>

namespace ulab {

GaussHermite gauss_hermite(int order) {
  if (order < 1) throw NumericalError("gauss_hermite: order must be >= 1");
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
  // polynomials: zero diagonal, off-diagonal sqrt(i).
  Mat J = Mat::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    const double b = std::sqrt(static_cast<double>(i));
    J(i, i - 1) = b;
    J(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(J);
  if (es.info() != Eigen::Success) throw NumericalError("gauss_hermite: eigensolver failed");
  GaussHermite gh;
  gh.nodes.resize(order);
  gh.weights.resize(order);
  for (int i = 0; i < order; ++i) {
    gh.nodes[i] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    gh.weights[i] = v0 * v0;  // total mass of N(0,1) is 1
  }
  return gh;
}

double normal_cdf(double x) {
  return 0.5 * std::erfc(-x * 0.70710678118654752440);
}

namespace {

// Acklam's rational approximation for the normal quantile.
double quantile_seed(double p) {
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw NumericalError("normal_quantile: p must be in (0,1)");
  double x = quantile_seed(p);
  // One Halley step against the exact CDF.
  for (int it = 0; it < 2; ++it) {
    const double e = normal_cdf(x) - p;
    const double phi = 0.39894228040143267794 * std::exp(-0.5 * x * x);
    if (phi == 0.0) break;
    const double u = e / phi;
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

Halton::Halton(int dim, std::uint64_t skip) : skip_(skip) {
  static const int primes[16] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  if (dim < 1 || dim > 16) throw NumericalError("Halton: dimension must be in [1,16]");
  bases_.assign(primes, primes + dim);
}

Vec Halton::uniform_point(std::uint64_t i) const {
  Vec u(bases_.size());
  for (std::size_t d = 0; d < bases_.size(); ++d) {
    const std::uint64_t base = static_cast<std::uint64_t>(bases_[d]);
    double f = 1.0, r = 0.0;
    std::uint64_t n = i + skip_ + 1;
    while (n > 0) {
      f /= static_cast<double>(base);
      r += f * static_cast<double>(n % base);
      n /= base;
    }
    u(static_cast<Eigen::Index>(d)) = r;
  }
  return u;
}

Vec Halton::normal_point(std::uint64_t i) const {
  Vec u = uniform_point(i);
  for (Eigen::Index d = 0; d < u.size(); ++d) u(d) = normal_quantile(std::min(1.0 - 1e-15, std::max(1e-15, u(d))));
  return u;
}

}  // namespace ulab
