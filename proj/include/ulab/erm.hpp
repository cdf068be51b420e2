// Empirical risk evaluation and convex risk minimizers.
//
// Scalar conventions (fixed project-wide):
//   squared loss          l(u, y) = (u - y)^2
//   binary logistic loss  l(u, y) = log(1 + exp(-y*u)),  y in {-1, +1}
//   multiclass xent       l(u, c) = logsumexp(u) - u_c,  one-hot targets
//   l2 regularizer        r(Theta) = lambda * ||Theta||_F^2
// Risks: scaling=none problems use (1/n) sum_i l + r(Theta); scaling=
// inv-sqrt-d problems (the multiclass-with-bias formulation, predictions
// Theta x / sqrt(d) + b) use the extensive sum_i l + r(Theta) normalized by
// n, i.e. (1/n)[sum_i l + lambda ||Theta||_F^2], so lambda keeps the
// extensive convention there.
#pragma once

#include <string>

#include "ulab/mixture.hpp"

namespace ulab {

enum class Loss { squared, logistic_binary, multiclass_xent };
enum class Scaling { none, inv_sqrt_d };

Loss loss_from_string(const std::string& s);
std::string loss_to_string(Loss loss);

struct ErmProblem {
  Loss loss = Loss::squared;
  double lambda = 0.0;
  bool fit_bias = false;
  Scaling scaling = Scaling::none;

  void validate() const;
};

struct SolverReport {
  int iterations = 0;
  double grad_norm = 0.0;
  double objective = 0.0;
  bool converged = false;
};

struct Estimator {
  Mat theta;  // k x p
  Vec bias;   // length k, zeros when fit_bias = false
  Scaling scaling = Scaling::none;
  SolverReport report;

  int k() const { return static_cast<int>(theta.rows()); }
  int p() const { return static_cast<int>(theta.cols()); }
  // n x k matrix of pre-activations for the rows of X.
  Mat preactivations(const Mat& X) const;
};

double empirical_risk(const Estimator& est, const Dataset& ds, const ErmProblem& prob);

// Closed form theta = (X^T X / n + lambda I)^{-1} X^T y / n; real labels.
Estimator fit_ridge(const Dataset& ds, double lambda);

// Binary labels {-1,+1} (or {0,1}, mapped on ingestion); lambda > 0 required
// (lambda = 0 is non-coercive and a hard error).
Estimator fit_logistic(const Dataset& ds, double lambda, double tol = 1e-10,
                       int max_iter = 2000);

// Eq.-(15)-style multiclass: one-hot labels, predictions W x / sqrt(d) + b,
// bias unregularized, objective (1/n)[sum_i l + lambda ||W||_F^2].
Estimator fit_multiclass(const Dataset& ds, const ErmProblem& prob, double tol = 1e-8,
                         int max_iter = 4000);

enum class Metric { mse, zero_one_argmax, zero_one_sign };
Metric metric_from_string(const std::string& s);
std::string metric_to_string(Metric m);

double test_error(const Estimator& est, const Dataset& ds, Metric metric);

std::string estimator_to_json(const Estimator& est);
Estimator estimator_from_json(const std::string& text);
std::string erm_problem_to_json(const ErmProblem& prob);
ErmProblem erm_problem_from_json(const std::string& text);

}  // namespace ulab
