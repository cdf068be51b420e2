// Asymptotic replica saddle-point equations for generalized linear ERM on
// diagonal-covariance Gaussian mixtures, solved by damped fixed-point
// iteration.
//
// The problem is stated in the extensive convention
//     min_W  sum_i l(W x_i / sqrt(d) + b, y_i) + lambda * sum_j ||W_j||^2,
// with per-cluster diagonal spectra sigma_{k,i} and scaled means
// sqrt(d)*mu_{k,i} representing the limiting empirical coordinate measure.
// Mapping from the (1/n)-normalized ERM convention with unscaled theta
// (fit_ridge / fit_logistic): W = sqrt(d)*theta and lambda_here = alpha *
// lambda_erm. From the Eq.-(15)-style fit_multiclass objective
// (1/n)[sum l + lambda ||W||_F^2]: W carries over and lambda_here = lambda.
//
// Label channels:
//   - cluster labels: one-hot e_k (multiclass xent) or +-1 per cluster
//     (binary logistic / squared);
//   - linear teacher (squared loss only): y = theta*^T x + noise, which
//     adds per-cluster teacher-overlap order parameters to the state.
#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "ulab/linalg.hpp"
#include "ulab/rng.hpp"

namespace ulab {

enum class ReplicaLoss { squared, logistic_binary, multiclass_xent };

struct ReplicaProblem {
  Vec weights;       // K
  Mat spectra;       // K x d, sigma_{k,i} > 0
  Mat means_scaled;  // K x d, sqrt(d) * mu_{k,i}
  double alpha = 1.0;
  ReplicaLoss loss = ReplicaLoss::squared;
  double lambda = 0.0;  // extensive-convention quadratic coefficient
  bool fit_bias = false;

  Vec cluster_labels;  // K, +-1 (logistic / squared cluster-label channel)
  bool has_teacher = false;
  Vec teacher_scaled;  // d, sqrt(d) * theta*_i
  double noise_var = 0.0;

  int K() const { return static_cast<int>(weights.size()); }
  int d() const { return static_cast<int>(spectra.cols()); }
  // parameter rows: K for multiclass, 1 otherwise
  int rows() const { return loss == ReplicaLoss::multiclass_xent ? K() : 1; }
  void validate() const;
};

struct ReplicaOptions {
  double damping = 0.5;
  double tol = 1e-8;
  int max_iter = 500;
  int quad_order = 32;  // per-dimension Gauss-Hermite order (rows <= 2)
  int mc_nodes = 4096;  // quasi-Monte Carlo nodes (rows > 2)
};

struct ReplicaState {
  std::vector<Mat> Q, V, Qhat, Vhat;  // r x r per cluster
  std::vector<Vec> M, mhat;           // r per cluster
  Vec bias;                           // r
  // teacher extension (squared teacher channel only)
  Vec m_teacher;     // K: m_k = W Sigma_k theta* / d-scaled overlap
  Vec mhat_teacher;  // K
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residual_history;
};

// h = V^{1/2} Prox_{l(y, V^{1/2}.)}(V^{-1/2} omega): closed form for the
// squared loss, safeguarded (damped) Newton otherwise. `y` is the +-1 label
// stored in y(0) for the binary losses and a one-hot vector for multiclass.
Vec prox_loss(ReplicaLoss loss, const Vec& y, const Mat& V, const Vec& omega,
              double tol = 1e-12);

// Coordinatewise G = a .* prox_{lambda psi(a .*)}(a .* b) for diagonal
// A^{1/2} = a. Quadratic closed form and a scalar-Newton path for general
// separable convex psi (psi supplies value/derivative/second derivative).
Vec prox_reg_quadratic(double lambda, const Vec& a_half, const Vec& b);
struct ScalarPsi {
  std::function<double(double)> value, deriv, second;
};
Vec prox_reg_newton(double lambda, const ScalarPsi& psi, const Vec& a_half, const Vec& b,
                    double tol = 1e-12);

ReplicaState replica_fixed_point(const ReplicaProblem& rp, const ReplicaOptions& opt,
                                 const Rng& rng);

// Root of sum_k rho_k E_xi[V_k f_k] = 0 in the bias at the current state.
Vec solve_bias(const ReplicaState& state, const ReplicaProblem& rp, double tol = 1e-10,
               const ReplicaOptions& opt = {});

struct ReplicaPredictions {
  double train_loss = 0.0;  // lim (1/n) sum_i l(.)
  double test_error = 0.0;  // MSE (teacher channel) or misclassification rate
};
ReplicaPredictions predict_errors(const ReplicaState& state, const ReplicaProblem& rp,
                                  const ReplicaOptions& opt = {});

// Joint empirical coordinate measure of a finite-d minimizer (W convention)
// against the replica limit sampled through the coordinatewise G field.
struct MeasureTestFn {
  std::string name;
  // arguments: W column (r), scaled means column (K), spectra column (K)
  std::function<double(const Vec&, const Vec&, const Vec&)> fn;
};
struct MeasureComparison {
  std::string name;
  double empirical = 0.0;
  double replica = 0.0;
  double discrepancy = 0.0;
};
std::vector<MeasureComparison> empirical_measure_compare(
    const Mat& W_finite, const ReplicaState& state, const ReplicaProblem& rp,
    const std::vector<MeasureTestFn>& test_fns, const Rng& rng, int reps_per_coord = 32);

std::string replica_problem_to_json(const ReplicaProblem& rp);
ReplicaProblem replica_problem_from_json(const std::string& text);
std::string replica_state_to_json(const ReplicaState& state);

}  // namespace ulab
