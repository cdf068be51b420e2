#include "ulab/mixture.hpp"

#include <cmath>
#include <json.hpp>

using nlohmann::json;

namespace ulab {

Mat ClusterSpec::dense_cov() const {
  if (!diagonal) return cov;
  Mat out = Mat::Zero(cov_diag.size(), cov_diag.size());
  out.diagonal() = cov_diag;
  return out;
}

void MixtureSpec::validate() const {
  if (p < 1) throw ConfigError("MixtureSpec: p must be >= 1");
  if (clusters.empty()) throw ConfigError("MixtureSpec: at least one cluster required");
  double wsum = 0.0;
  for (const auto& cl : clusters) {
    if (cl.weight < 0.0 || cl.weight > 1.0) throw ConfigError("MixtureSpec: weight outside [0,1]");
    wsum += cl.weight;
    if (cl.mean.size() != p) throw ConfigError("MixtureSpec: mean length mismatch");
    if (cl.diagonal) {
      if (cl.cov_diag.size() != p) throw ConfigError("MixtureSpec: diagonal covariance length mismatch");
      if (cl.cov_diag.minCoeff() < -1e-10) throw ConfigError("MixtureSpec: negative diagonal covariance");
    } else {
      if (cl.cov.rows() != p || cl.cov.cols() != p) throw ConfigError("MixtureSpec: covariance shape mismatch");
      if (max_asymmetry(cl.cov) > 1e-12 * std::max(1.0, cl.cov.cwiseAbs().maxCoeff()))
        throw ConfigError("MixtureSpec: covariance not symmetric within 1e-12");
      if (min_eigenvalue(cl.cov) < -1e-10)
        throw ConfigError("MixtureSpec: covariance not PSD within tolerance");
    }
  }
  if (std::abs(wsum - 1.0) > 1e-12) throw ConfigError("MixtureSpec: weights must sum to 1 within 1e-12");
}

int Dataset::num_clusters() const {
  std::uint32_t mx = 0;
  for (std::uint32_t ci : c) mx = std::max(mx, ci);
  return c.empty() ? 0 : static_cast<int>(mx) + 1;
}

void Dataset::validate() const {
  if (n() < 1 || p() < 1) throw ConfigError("Dataset: n and p must be >= 1");
  if (static_cast<int>(c.size()) != n()) throw ConfigError("Dataset: cluster assignment length mismatch");
  if (!X.allFinite()) throw ConfigError("Dataset: non-finite feature values");
  if (label_kind != LabelKind::none) {
    if (y.rows() != n()) throw ConfigError("Dataset: label count mismatch");
    if (!y.allFinite()) throw ConfigError("Dataset: non-finite labels");
    if (label_kind == LabelKind::onehot) {
      for (int i = 0; i < n(); ++i) {
        if (std::abs(y.row(i).sum() - 1.0) > 1e-12)
          throw ConfigError("Dataset: one-hot rows must sum to 1");
      }
    }
  }
}

LabelRule label_rule_from_string(const std::string& name) {
  if (name == "cluster-index") return LabelRule::cluster_index;
  if (name == "linear-regression") return LabelRule::linear_regression;
  if (name == "sign") return LabelRule::sign;
  if (name == "logit-noise") return LabelRule::logit_noise;
  throw ConfigError("unknown label rule: " + name);
}

std::string label_rule_to_string(LabelRule rule) {
  switch (rule) {
    case LabelRule::cluster_index: return "cluster-index";
    case LabelRule::linear_regression: return "linear-regression";
    case LabelRule::sign: return "sign";
    case LabelRule::logit_noise: return "logit-noise";
  }
  throw ConfigError("bad label rule");
}

MixtureSpec build_gmm_spec(const std::vector<double>& weights,
                           const std::vector<Vec>& means,
                           const std::vector<Mat>& covariances) {
  if (weights.size() != means.size() || weights.size() != covariances.size())
    throw ConfigError("build_gmm_spec: weights/means/covariances length mismatch");
  if (weights.empty()) throw ConfigError("build_gmm_spec: empty mixture");
  MixtureSpec spec;
  spec.p = static_cast<int>(means[0].size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    ClusterSpec cl;
    cl.weight = weights[i];
    cl.mean = means[i];
    cl.diagonal = false;
    cl.cov = 0.5 * (covariances[i] + covariances[i].transpose());
    spec.clusters.push_back(std::move(cl));
  }
  spec.validate();
  return spec;
}

Dataset sample_mixture(const MixtureSpec& spec, int n, const Rng& rng,
                       const std::string& stream_label) {
  spec.validate();
  if (n < 1) throw ConfigError("sample_mixture: n must be >= 1");
  const int p = spec.p;
  const int k = spec.k();

  std::vector<double> cum(k);
  double acc = 0.0;
  for (int j = 0; j < k; ++j) {
    acc += spec.clusters[j].weight;
    cum[j] = acc;
  }
  cum[k - 1] = 1.0;

  // Per-cluster factors prepared once.
  std::vector<Mat> factors(k);
  std::vector<Vec> diag_sd(k);
  for (int j = 0; j < k; ++j) {
    if (spec.clusters[j].diagonal)
      diag_sd[j] = spec.clusters[j].cov_diag.cwiseMax(0.0).cwiseSqrt();
    else
      factors[j] = sampling_factor(spec.clusters[j].cov);
  }

  Dataset ds;
  ds.X.resize(n, p);
  ds.c.resize(n);
  ds.provenance = Provenance::gmm;

  RngStream assign = rng.stream(stream_label + "/assign");
  std::vector<RngStream> noise;
  noise.reserve(k);
  for (int j = 0; j < k; ++j) noise.push_back(rng.stream(stream_label + "/cluster", j));

  Vec z(p);
  for (int i = 0; i < n; ++i) {
    const double u = assign.uniform();
    int ci = 0;
    while (ci < k - 1 && u > cum[ci]) ++ci;
    ds.c[i] = static_cast<std::uint32_t>(ci);
    for (int d = 0; d < p; ++d) z(d) = noise[ci].normal();
    if (spec.clusters[ci].diagonal)
      ds.X.row(i) = (spec.clusters[ci].mean + diag_sd[ci].cwiseProduct(z)).transpose();
    else
      ds.X.row(i) = (spec.clusters[ci].mean + factors[ci] * z).transpose();
  }
  return ds;
}

Dataset label_dataset(const Dataset& ds, const TeacherSpec& teacher, const Rng& rng,
                      const std::string& stream_label) {
  Dataset out = ds;
  const int n = ds.n();
  if (teacher.noise_scale < 0.0) throw ConfigError("label_dataset: noise_scale must be >= 0");

  if (teacher.rule == LabelRule::cluster_index) {
    out.y.resize(n, 1);
    for (int i = 0; i < n; ++i) out.y(i, 0) = static_cast<double>(ds.c[i]);
    out.label_kind = LabelKind::cls;
    return out;
  }

  if (teacher.theta_star.rows() != 1 || teacher.theta_star.cols() != ds.p())
    throw ConfigError("label_dataset: teacher must be 1 x p for this rule");

  RngStream eps = rng.stream(stream_label + "/noise");
  Vec m = ds.X * teacher.theta_star.row(0).transpose();
  out.y.resize(n, 1);
  switch (teacher.rule) {
    case LabelRule::linear_regression:
      for (int i = 0; i < n; ++i) out.y(i, 0) = m(i) + teacher.noise_scale * eps.normal();
      out.label_kind = LabelKind::real;
      break;
    case LabelRule::sign:
      for (int i = 0; i < n; ++i) {
        const double v = m(i) + teacher.noise_scale * eps.normal();
        out.y(i, 0) = v >= 0.0 ? 1.0 : -1.0;
      }
      out.label_kind = LabelKind::cls;
      break;
    case LabelRule::logit_noise:
      for (int i = 0; i < n; ++i) {
        const double t = teacher.noise_scale > 0.0 ? m(i) / teacher.noise_scale : m(i) * 1e300;
        const double prob = 1.0 / (1.0 + std::exp(-t));
        out.y(i, 0) = eps.uniform() < prob ? 1.0 : -1.0;
      }
      out.label_kind = LabelKind::cls;
      break;
    default:
      throw ConfigError("label_dataset: unhandled rule");
  }
  return out;
}

Vec binary_pm1_labels(const Dataset& ds) {
  if (ds.label_kind == LabelKind::none || ds.y.cols() != 1)
    throw ConfigError("binary_pm1_labels: dataset has no scalar labels");
  Vec y(ds.n());
  for (int i = 0; i < ds.n(); ++i) {
    const double v = ds.y(i, 0);
    if (v == 1.0 || v == -1.0)
      y(i) = v;
    else if (v == 0.0)
      y(i) = 1.0;  // lowest class index maps to +1
    else
      throw ConfigError("binary_pm1_labels: labels must be in {0,1} or {-1,+1}");
  }
  return y;
}

Mat onehot_labels(const Dataset& ds, int k) {
  if (ds.label_kind == LabelKind::onehot) {
    if (ds.y.cols() != k) throw ConfigError("onehot_labels: class count mismatch");
    return ds.y;
  }
  if (ds.label_kind != LabelKind::cls) throw ConfigError("onehot_labels: need class labels");
  Mat y = Mat::Zero(ds.n(), k);
  for (int i = 0; i < ds.n(); ++i) {
    const int ci = static_cast<int>(ds.y(i, 0));
    if (ci < 0 || ci >= k || ds.y(i, 0) != ci)
      throw ConfigError("onehot_labels: class index out of range");
    y(i, ci) = 1.0;
  }
  return y;
}

std::string mixture_to_json(const MixtureSpec& spec) {
  json root;
  root["p"] = spec.p;
  root["clusters"] = json::array();
  for (const auto& cl : spec.clusters) {
    json jc;
    jc["weight"] = cl.weight;
    jc["mean"] = std::vector<double>(cl.mean.data(), cl.mean.data() + cl.mean.size());
    json cov;
    if (cl.diagonal) {
      cov["kind"] = "diag";
      cov["data"] = std::vector<double>(cl.cov_diag.data(), cl.cov_diag.data() + cl.cov_diag.size());
    } else {
      cov["kind"] = "dense";
      std::vector<double> data;
      data.reserve(static_cast<std::size_t>(cl.cov.size()));
      for (Eigen::Index i = 0; i < cl.cov.rows(); ++i)
        for (Eigen::Index j = 0; j < cl.cov.cols(); ++j) data.push_back(cl.cov(i, j));
      cov["data"] = data;  // row-major
    }
    jc["cov"] = cov;
    root["clusters"].push_back(jc);
  }
  return root.dump(2);
}

MixtureSpec mixture_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mixture JSON parse error: ") + e.what());
  }
  MixtureSpec spec;
  try {
    spec.p = root.at("p").get<int>();
    for (const auto& jc : root.at("clusters")) {
      ClusterSpec cl;
      cl.weight = jc.at("weight").get<double>();
      const auto mean = jc.at("mean").get<std::vector<double>>();
      cl.mean = Eigen::Map<const Vec>(mean.data(), static_cast<Eigen::Index>(mean.size()));
      const auto& cov = jc.at("cov");
      const std::string kind = cov.at("kind").get<std::string>();
      const auto data = cov.at("data").get<std::vector<double>>();
      if (kind == "diag") {
        cl.diagonal = true;
        cl.cov_diag = Eigen::Map<const Vec>(data.data(), static_cast<Eigen::Index>(data.size()));
      } else if (kind == "dense") {
        cl.diagonal = false;
        const int p = spec.p;
        if (static_cast<int>(data.size()) != p * p)
          throw ConfigError("mixture JSON: dense covariance size mismatch");
        cl.cov.resize(p, p);
        for (int i = 0; i < p; ++i)
          for (int j = 0; j < p; ++j) cl.cov(i, j) = data[static_cast<std::size_t>(i) * p + j];
      } else {
        throw ConfigError("mixture JSON: unknown covariance kind " + kind);
      }
      spec.clusters.push_back(std::move(cl));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mixture JSON structure error: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace ulab
