// Class-conditional moment estimation and the moment-matched equivalent
// Gaussian mixture.
#pragma once

#include <functional>

#include "ulab/mixture.hpp"

namespace ulab {

// Streaming per-cluster mean/covariance accumulator (Welford/Chan update,
// mergeable). Diagonal mode stores only the diagonal second moments.
class MomentAccumulator {
 public:
  MomentAccumulator() = default;
  MomentAccumulator(int p, bool diagonal);

  void add(const Eigen::Ref<const Vec>& x);
  void merge(const MomentAccumulator& other);

  long long count() const { return n_; }
  Vec mean() const { return mean_; }
  // Unbiased covariance, 1/(N-1) normalization; requires count >= 2.
  Mat covariance() const;
  Vec covariance_diag() const;
  bool diagonal() const { return diagonal_; }

 private:
  int p_ = 0;
  bool diagonal_ = false;
  long long n_ = 0;
  Vec mean_;
  Mat m2_;       // sum of outer-product deviations
  Vec m2_diag_;
};

struct ClassMoments {
  std::vector<Vec> means;
  std::vector<Mat> covariances;      // empty matrices in diagonal mode
  std::vector<Vec> covariance_diags;
  std::vector<long long> counts;
  bool diagonal = false;

  int k() const { return static_cast<int>(means.size()); }
  int p() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }
  double weight(int cluster) const;
  long long total() const;
};

ClassMoments estimate_class_moments(const Dataset& ds, bool diagonal = false);

// Monte Carlo moments from a per-cluster sampling closure. Sample counts
// N_c = round(rho_c * N) with largest-remainder correction so they sum to N.
using ClusterSampler = std::function<Mat(int cluster, int count, RngStream& rng)>;
ClassMoments mc_class_moments(const ClusterSampler& generator, const Vec& weights,
                              long long total_samples, const Rng& rng,
                              const std::string& stream_label = "moments",
                              bool diagonal = false, int batch = 2048);

// Equivalent Gaussian mixture N(mu_c, psd_project(Sigma_c)) with estimated
// weights. Errors if the PSD projection moves an eigenvalue by more than
// 1e-6 * ||Sigma||_op.
MixtureSpec build_equivalent_gmm(const ClassMoments& m);

std::string moments_to_json(const ClassMoments& m);
ClassMoments moments_from_json(const std::string& text);

}  // namespace ulab
