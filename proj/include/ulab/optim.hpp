// Small smooth-convex minimizer shared by the risk fitters and the coupled
// free-energy objective: L-BFGS with Armijo backtracking.
#pragma once

#include <functional>

#include "ulab/linalg.hpp"

namespace ulab {

struct Objective {
  std::function<double(const Vec&)> value;
  std::function<double(const Vec&, Vec&)> value_and_grad;
};

struct MinimizeResult {
  Vec x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

MinimizeResult lbfgs_minimize(const Objective& obj, Vec x0, double tol, int max_iter,
                              int memory = 12);

}  // namespace ulab
