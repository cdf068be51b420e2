// Mixture distributions, dataset sampling and label rules.
//
// Conventions: samples are the ROWS of Dataset::X (the stacked-columns matrix
// of the usual presentation is X^T of ours). Labels are stored as an n-vector
// (real values or class indices) or an n x k one-hot matrix.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ulab/linalg.hpp"
#include "ulab/rng.hpp"

namespace ulab {

struct ClusterSpec {
  double weight = 0.0;
  Vec mean;
  bool diagonal = false;
  Mat cov;       // p x p when !diagonal
  Vec cov_diag;  // length p when diagonal

  Mat dense_cov() const;
  int p() const { return static_cast<int>(mean.size()); }
};

struct MixtureSpec {
  int p = 0;
  std::vector<ClusterSpec> clusters;

  int k() const { return static_cast<int>(clusters.size()); }
  void validate() const;
};

enum class Provenance { gmm, feature_mapped, external };

enum class LabelKind { none, real, cls, onehot };

struct Dataset {
  Mat X;  // n x p
  Mat y;  // n x 1 (real / class index) or n x k (one-hot); empty when unlabeled
  LabelKind label_kind = LabelKind::none;
  std::vector<std::uint32_t> c;
  Provenance provenance = Provenance::gmm;

  int n() const { return static_cast<int>(X.rows()); }
  int p() const { return static_cast<int>(X.cols()); }
  int num_clusters() const;
  void validate() const;
};

enum class LabelRule { cluster_index, linear_regression, sign, logit_noise };

LabelRule label_rule_from_string(const std::string& name);
std::string label_rule_to_string(LabelRule rule);

struct TeacherSpec {
  Mat theta_star;  // rule arity x p (cluster_index ignores it)
  LabelRule rule = LabelRule::cluster_index;
  double noise_scale = 0.0;
};

MixtureSpec build_gmm_spec(const std::vector<double>& weights,
                           const std::vector<Vec>& means,
                           const std::vector<Mat>& covariances);

// Inverse-CDF cluster assignment (ties to the lower index); per-cluster noise
// comes from independent streams so draws do not depend on assignment order.
Dataset sample_mixture(const MixtureSpec& spec, int n, const Rng& rng,
                       const std::string& stream_label = "sample");

Dataset label_dataset(const Dataset& ds, const TeacherSpec& teacher, const Rng& rng,
                      const std::string& stream_label = "labels");

// Binary {0,1} or {-1,+1} class labels as a +-1 vector (lowest cluster -> +1).
Vec binary_pm1_labels(const Dataset& ds);
Mat onehot_labels(const Dataset& ds, int k);

// JSON (de)serialization; schema documented in the module interface.
std::string mixture_to_json(const MixtureSpec& spec);
MixtureSpec mixture_from_json(const std::string& text);

}  // namespace ulab
