// Gibbs-measure sampling over parameters, free-energy estimation, and the
// coupled joint-minimization-and-sampling objective with its q(s)
// diagnostics.
//
// Convention: the Gibbs weight is always the extensive form
// exp(-beta * n * R_hat(theta)) times a normalized reference prior, and
// free energies are reported in the -(1/n) log form.
#pragma once

#include <functional>
#include <memory>

#include "ulab/erm.hpp"
#include "ulab/rng.hpp"

namespace ulab {

enum class PriorKind { gaussian, uniform_ball };

struct GibbsPrior {
  PriorKind kind = PriorKind::gaussian;
  double tau2 = 1.0;    // gaussian variance
  double radius = 1.0;  // uniform-ball radius (rejection path, p <= 20)
};

struct GibbsConfig {
  double beta = 1.0;
  GibbsPrior prior;
  int n_steps = 10000;
  double step_size = 0.1;  // initial MALA step, adapted during burn-in
  int burn_in = 1000;
  int thinning = 1;

  void validate() const;
};

struct SampleChain {
  std::vector<Vec> samples;
  double acceptance_rate = 1.0;
  GibbsConfig config;

  int size() const { return static_cast<int>(samples.size()); }
};

// Metropolis-adjusted Langevin chain targeting
// exp(-beta n R_hat(theta)) * prior(theta); step size adapts toward 0.57
// acceptance during burn-in and is frozen afterwards.
SampleChain gibbs_chain(const ErmProblem& prob, const Dataset& ds, const GibbsConfig& cfg,
                        RngStream& rng);

Estimator posterior_mean(const SampleChain& chain);

struct FreeEnergyResult {
  double value = 0.0;
  double std_error = 0.0;  // zero on the analytic path
  std::vector<double> grid_beta;
  std::vector<double> grid_risk;
  std::vector<double> grid_se;
};

// Closed-form Gaussian integral; squared loss + gaussian prior only.
FreeEnergyResult free_energy_analytic(const ErmProblem& prob, const Dataset& ds, double beta,
                                      const GibbsPrior& prior);

struct TiOptions {
  int grid_points = 32;
  int steps_per_point = 20000;
  int burn_in = 4000;
  double max_std_error = 1e-3;  // exceeding this is an error (diagnostics in message)
};

// Thermodynamic integration: f(beta) = int_0^beta <R_hat>_b db on a
// log-spaced grid, each expectation from its own MALA chain.
FreeEnergyResult free_energy_ti(const ErmProblem& prob, const Dataset& ds, double beta,
                                const GibbsPrior& prior, const Rng& rng,
                                const TiOptions& opt = {});

// Brute-force validation mode only (p <= 3): the discretized free energy
// -(1/n) log of the average Gibbs weight over an explicit epsilon-net of
// the centered radius-R ball. At small epsilon and large beta this
// approaches the minimum empirical risk.
double eps_net_free_energy(const ErmProblem& prob, const Dataset& ds, double beta,
                           double radius, double eps);

enum class MetricKind { pairwise_overlap, teacher_overlap, ensemble_test_error };

struct MetricH {
  MetricKind kind = MetricKind::pairwise_overlap;
  Mat theta_star;                     // teacher-overlap
  std::shared_ptr<Dataset> heldout;   // ensemble-test-error
};

double metric_h(const MetricH& h, const std::vector<Mat>& thetas);

// One minimized-or-sampled objective of the coupled problem.
struct CoupledObjective {
  ErmProblem prob;
  Dataset data;
  GibbsConfig gibbs;  // used when the objective is sampled (index >= M1)
};

struct CoupledProblem {
  std::vector<CoupledObjective> objectives;
  int M1 = 0;  // first M1 objectives are minimized, the rest sampled
  MetricH h;
  double s = 0.0;
  double minimize_tol = 1e-7;
};

// sum_{m<=M1} R^(m)(theta^(m)) + f_{n,s}, with f_{n,s} estimated by
// log-mean-exp of -s n h over the frozen product of Gibbs chains.
double coupled_objective(const CoupledProblem& cp, const std::vector<Mat>& thetas_min,
                         const Rng& rng);

// f_{n,s} log-mean-exp with a leave-one-out jackknife standard error.
struct CouplingEstimate {
  double value = 0.0;
  double jackknife_se = 0.0;
};
CouplingEstimate coupling_free_energy(double s, int n, const std::vector<double>& h_values);

struct QOfSResult {
  std::vector<double> s_grid;
  std::vector<double> q_mean, q_se;
  // per-replica per-s minima (replica-major)
  std::vector<std::vector<double>> q_values;
  double direct_h_mean = 0.0;  // E<h> at s = 0
  double direct_h_se = 0.0;
  std::vector<double> direct_h_values;
};

// q_n(s) = E_data[min_theta (sum R + f_{n,s})], averaged over data replicas
// drawn by `make_problem`; chains are reused across the s grid within each
// replica, which keeps the per-replica curve exactly concave.
QOfSResult q_of_s(const std::function<CoupledProblem(int replica, const Rng& rng)>& make_problem,
                  const std::vector<double>& s_grid, int n_replicas, const Rng& rng);

}  // namespace ulab
