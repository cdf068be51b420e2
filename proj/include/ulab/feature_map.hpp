// Random feature maps x = sigma(F^T z) applied to latent mixture data, and
// the activation registry with Gaussian-mean centering offsets.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ulab/mixture.hpp"

namespace ulab {

struct FeatureMatrix {
  Mat F;  // d x p
  int d() const { return static_cast<int>(F.rows()); }
  int p() const { return static_cast<int>(F.cols()); }
};

// Registered activation: sigma(x) = base(x) - offset with offset chosen at
// registration so that E_{g~N(0,1)}[sigma(g)] = 0 (except deliberately
// uncentered contrast entries such as relu-raw).
struct ActivationSpec {
  std::string name;
  std::function<double(double)> base;
  double offset = 0.0;
  bool smooth = true;    // thrice differentiable with bounded derivatives
  bool centered = true;  // offset applied

  double operator()(double x) const { return base(x) - offset; }
};

// Known names: tanh-centered, erf-centered, shifted-relu-centered, identity,
// sign (contrast: centered but non-smooth), relu-raw (contrast: uncentered).
const ActivationSpec& activation(const std::string& name);

// |E_{g~N(0,1)}[sigma(g)]| <= tol by 64-point Gauss-Hermite quadrature.
bool check_centering(const ActivationSpec& act, double tol);
double activation_gaussian_mean(const ActivationSpec& act);

// i.i.d. N(0, 1/d) entries; warns (does not error) when p/d leaves
// [1/gamma, gamma], default gamma = 10.
FeatureMatrix init_random_features(int d, int p, const Rng& rng,
                                   const std::string& stream_label = "features",
                                   double gamma = 10.0, bool* ratio_ok = nullptr);

// Rows become sigma(F^T z_i); labels and assignments carry over.
Dataset apply_feature_map(const FeatureMatrix& fm, const ActivationSpec& act,
                          const Dataset& latents);

}  // namespace ulab
