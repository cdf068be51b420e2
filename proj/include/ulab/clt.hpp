// Empirical tests of the conditional one-dimensional CLT: per-cluster
// distances between projections of data and of its equivalent Gaussian
// mixture over direction families, with permutation-calibrated null bands
// and a decay-in-p study.
#pragma once

#include <functional>
#include <string>

#include "ulab/erm.hpp"
#include "ulab/mixture.hpp"

namespace ulab {

enum class DirectionKind { random_unit, trained_rows, coordinate_spike, user };

struct DirectionSet {
  std::vector<Vec> directions;  // unit vectors
  std::vector<DirectionKind> kinds;
  std::vector<std::string> labels;

  int size() const { return static_cast<int>(directions.size()); }
  void append(const Vec& v, DirectionKind kind, const std::string& label);
};

DirectionSet random_unit_directions(int count, int p, const Rng& rng,
                                    const std::string& stream_label = "directions");
DirectionSet coordinate_spike_directions(int count, int p);
DirectionSet trained_row_directions(const Estimator& est);

// Scalar samples theta^T x_i grouped by cluster.
std::vector<std::vector<double>> project_conditional(const Dataset& ds, const Vec& theta);

// Two-sample Kolmogorov-Smirnov statistic and exact empirical Wasserstein-1.
double dist_ks(const std::vector<double>& a, const std::vector<double>& b);
double dist_w1(const std::vector<double>& a, const std::vector<double>& b);

struct CltEntry {
  int cluster = 0;
  std::string direction;
  double ks = 0.0;
  double w1 = 0.0;
  long long n_data = 0;
  long long n_gmm = 0;
};

struct CltReport {
  std::vector<CltEntry> entries;
  std::vector<double> sup_ks;  // per cluster
  std::vector<double> sup_w1;
  int p = 0;
  int k = 0;

  std::string to_json() const;
  std::string to_csv() const;
};

CltReport clt_report(const Dataset& data, const Dataset& gmm, const DirectionSet& dirs,
                     int min_per_cluster = 1000);

// 95th percentile of the permuted-label two-sample distance (200 shuffles).
struct NullBand {
  double ks = 0.0;
  double w1 = 0.0;
};
NullBand permutation_null_band(const std::vector<double>& a, const std::vector<double>& b,
                               const Rng& rng, int shuffles = 200, double quantile = 0.95);

// Same calibration for the supremum statistic of a full report: dataset
// membership is shuffled within each cluster (consistently across
// directions) and the max distance over (cluster, direction) recomputed.
NullBand clt_sup_null_band(const Dataset& data, const Dataset& gmm, const DirectionSet& dirs,
                           const Rng& rng, int shuffles = 200, double quantile = 0.95);

struct DecayRow {
  int p = 0;
  double mean_sup_w1 = 0.0;
  double se_sup_w1 = 0.0;
  double mean_sup_ks = 0.0;
  std::vector<double> per_seed_sup_w1;
};

struct DecayStudy {
  std::vector<DecayRow> rows;
  double loglog_slope = 0.0;  // fitted d log(mean sup-W1) / d log p
};

// generator(p, seed) must yield the paired (data, equivalent-gmm) datasets
// plus the direction set to scan.
struct DecayInstance {
  Dataset data;
  Dataset gmm;
  DirectionSet dirs;
};
DecayStudy decay_study(const std::function<DecayInstance(int p, int seed)>& generator,
                       const std::vector<int>& p_grid, int seeds);

}  // namespace ulab
