// Gauss-Hermite quadrature (probabilists' weight), normal CDF / quantile,
// and a Halton low-discrepancy sequence for the quasi-Monte Carlo paths.
#pragma once

#include <vector>

#include "ulab/linalg.hpp"

namespace ulab {

// Nodes x_i and weights w_i with sum_i w_i f(x_i) ~= E_{g~N(0,1)}[f(g)].
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};

GaussHermite gauss_hermite(int order);

double normal_cdf(double x);
// Inverse of normal_cdf, accurate to ~1e-15 after Halley refinement.
double normal_quantile(double p);

// Halton points in (0,1)^dim (prime bases, index offset to skip the origin).
class Halton {
 public:
  explicit Halton(int dim, std::uint64_t skip = 31);
  // Point #i as standard-normal coordinates via the quantile transform.
  Vec normal_point(std::uint64_t i) const;
  Vec uniform_point(std::uint64_t i) const;

 private:
  std::vector<int> bases_;
  std::uint64_t skip_;
};

}  // namespace ulab
