#include "ulab/feature_map.hpp"

#include <cmath>
#include <iostream>
#include <map>

#include "ulab/quadrature.hpp"

namespace ulab {

namespace {

double gh64_mean(const std::function<double(double)>& f) {
  static const GaussHermite gh = gauss_hermite(64);
  double s = 0.0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) s += gh.weights[i] * f(gh.nodes[i]);
  return s;
}

ActivationSpec make(const std::string& name, std::function<double(double)> base,
                    bool smooth, bool center) {
  ActivationSpec act;
  act.name = name;
  act.base = std::move(base);
  act.smooth = smooth;
  act.centered = center;
  act.offset = center ? gh64_mean(act.base) : 0.0;
  if (std::abs(act.offset) < 1e-12) act.offset = 0.0;  // odd integrands are exactly centered
  if (center && std::abs(gh64_mean([&](double x) { return act(x); })) > 1e-10)
    throw NumericalError("activation registry: centering failed for " + name);
  return act;
}

const std::map<std::string, ActivationSpec>& registry() {
  static const std::map<std::string, ActivationSpec> reg = [] {
    std::map<std::string, ActivationSpec> m;
    m.emplace("tanh-centered", make("tanh-centered", [](double x) { return std::tanh(x); }, true, true));
    m.emplace("erf-centered", make("erf-centered", [](double x) { return std::erf(x); }, true, true));
    m.emplace("shifted-relu-centered",
              make("shifted-relu-centered", [](double x) { return x > 0.0 ? x : 0.0; }, false, true));
    m.emplace("identity", make("identity", [](double x) { return x; }, true, true));
    // contrast entries, deliberately violating the smoothness/centering assumptions
    m.emplace("sign", make("sign", [](double x) { return x >= 0.0 ? 1.0 : -1.0; }, false, true));
    m.emplace("relu-raw", make("relu-raw", [](double x) { return x > 0.0 ? x : 0.0; }, false, false));
    return m;
  }();
  return reg;
}

}  // namespace

const ActivationSpec& activation(const std::string& name) {
  const auto& reg = registry();
  auto it = reg.find(name);
  if (it == reg.end()) throw ConfigError("unknown activation: " + name);
  return it->second;
}

double activation_gaussian_mean(const ActivationSpec& act) {
  return gh64_mean([&](double x) { return act(x); });
}

bool check_centering(const ActivationSpec& act, double tol) {
  return std::abs(activation_gaussian_mean(act)) <= tol;
}

FeatureMatrix init_random_features(int d, int p, const Rng& rng,
                                   const std::string& stream_label, double gamma,
                                   bool* ratio_ok) {
  if (d < 1 || p < 1) throw ConfigError("init_random_features: d and p must be >= 1");
  const double ratio = static_cast<double>(p) / static_cast<double>(d);
  const bool ok = ratio >= 1.0 / gamma && ratio <= gamma;
  if (ratio_ok) *ratio_ok = ok;
  if (!ok)
    std::cerr << "[ulab] warning: feature ratio p/d = " << ratio << " outside [1/" << gamma
              << ", " << gamma << "]\n";
  FeatureMatrix fm;
  fm.F.resize(d, p);
  RngStream s = rng.stream(stream_label);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < p; ++j) fm.F(i, j) = sd * s.normal();
  return fm;
}

Dataset apply_feature_map(const FeatureMatrix& fm, const ActivationSpec& act,
                          const Dataset& latents) {
  if (latents.p() != fm.d())
    throw ConfigError("apply_feature_map: latent dimension does not match feature matrix");
  Dataset out;
  out.X.noalias() = latents.X * fm.F;  // row i = F^T z_i
  const double offset = act.offset;
  for (Eigen::Index i = 0; i < out.X.rows(); ++i)
    for (Eigen::Index j = 0; j < out.X.cols(); ++j) out.X(i, j) = act.base(out.X(i, j)) - offset;
  out.y = latents.y;
  out.label_kind = latents.label_kind;
  out.c = latents.c;
  out.provenance = Provenance::feature_mapped;
  return out;
}

}  // namespace ulab
