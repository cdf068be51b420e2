#include "ulab/moments.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

using nlohmann::json;

namespace ulab {

MomentAccumulator::MomentAccumulator(int p, bool diagonal) : p_(p), diagonal_(diagonal) {
  mean_ = Vec::Zero(p);
  if (diagonal)
    m2_diag_ = Vec::Zero(p);
  else
    m2_ = Mat::Zero(p, p);
}

void MomentAccumulator::add(const Eigen::Ref<const Vec>& x) {
  if (x.size() != p_) throw ConfigError("MomentAccumulator: dimension mismatch");
  ++n_;
  const Vec delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  // x - mean_new = delta * (n-1)/n, so the update is a scaled rank-1 term
  const double scale = static_cast<double>(n_ - 1) / static_cast<double>(n_);
  if (diagonal_)
    m2_diag_ += scale * delta.cwiseProduct(delta);
  else
    m2_.selfadjointView<Eigen::Lower>().rankUpdate(delta, scale);
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.p_ != p_ || other.diagonal_ != diagonal_)
    throw ConfigError("MomentAccumulator: incompatible merge");
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(n_), nb = static_cast<double>(other.n_);
  const Vec delta = other.mean_ - mean_;
  const double nt = na + nb;
  mean_ += delta * (nb / nt);
  if (diagonal_) {
    m2_diag_ += other.m2_diag_ + delta.cwiseProduct(delta) * (na * nb / nt);
  } else {
    m2_ += other.m2_;
    m2_.selfadjointView<Eigen::Lower>().rankUpdate(delta, na * nb / nt);
  }
  n_ += other.n_;
}

Mat MomentAccumulator::covariance() const {
  if (diagonal_) throw ConfigError("MomentAccumulator: diagonal mode holds no full covariance");
  if (n_ < 2) throw NumericalError("MomentAccumulator: need at least 2 samples");
  Mat full = m2_.selfadjointView<Eigen::Lower>();
  Mat cov = full / static_cast<double>(n_ - 1);
  return 0.5 * (cov + cov.transpose());
}

Vec MomentAccumulator::covariance_diag() const {
  if (n_ < 2) throw NumericalError("MomentAccumulator: need at least 2 samples");
  if (diagonal_) return m2_diag_ / static_cast<double>(n_ - 1);
  Mat full = m2_.selfadjointView<Eigen::Lower>();
  return full.diagonal() / static_cast<double>(n_ - 1);
}

double ClassMoments::weight(int cluster) const {
  return static_cast<double>(counts[static_cast<std::size_t>(cluster)]) /
         static_cast<double>(total());
}

long long ClassMoments::total() const {
  return std::accumulate(counts.begin(), counts.end(), 0LL);
}

namespace {

ClassMoments finalize(std::vector<MomentAccumulator>& accs, bool diagonal) {
  ClassMoments m;
  m.diagonal = diagonal;
  for (std::size_t c = 0; c < accs.size(); ++c) {
    if (accs[c].count() < 2)
      throw NumericalError("class moments: cluster " + std::to_string(c) +
                           " has fewer than 2 samples");
    m.means.push_back(accs[c].mean());
    m.counts.push_back(accs[c].count());
    if (diagonal) {
      m.covariances.emplace_back();
      m.covariance_diags.push_back(accs[c].covariance_diag());
    } else {
      m.covariances.push_back(accs[c].covariance());
      m.covariance_diags.push_back(m.covariances.back().diagonal());
    }
  }
  return m;
}

}  // namespace

ClassMoments estimate_class_moments(const Dataset& ds, bool diagonal) {
  ds.validate();
  const int k = ds.num_clusters();
  std::vector<MomentAccumulator> accs(static_cast<std::size_t>(k),
                                      MomentAccumulator(ds.p(), diagonal));
  for (int i = 0; i < ds.n(); ++i) accs[ds.c[static_cast<std::size_t>(i)]].add(ds.X.row(i).transpose());
  return finalize(accs, diagonal);
}

ClassMoments mc_class_moments(const ClusterSampler& generator, const Vec& weights,
                              long long total_samples, const Rng& rng,
                              const std::string& stream_label, bool diagonal, int batch) {
  const int k = static_cast<int>(weights.size());
  if (k < 1) throw ConfigError("mc_class_moments: no clusters");
  if (std::abs(weights.sum() - 1.0) > 1e-12)
    throw ConfigError("mc_class_moments: weights must sum to 1");

  // Largest-remainder allocation: counts sum exactly to total_samples.
  std::vector<long long> counts(static_cast<std::size_t>(k));
  std::vector<double> remainders(static_cast<std::size_t>(k));
  long long assigned = 0;
  for (int c = 0; c < k; ++c) {
    const double exact = weights(c) * static_cast<double>(total_samples);
    counts[static_cast<std::size_t>(c)] = static_cast<long long>(std::floor(exact));
    remainders[static_cast<std::size_t>(c)] = exact - std::floor(exact);
    assigned += counts[static_cast<std::size_t>(c)];
  }
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return remainders[static_cast<std::size_t>(a)] > remainders[static_cast<std::size_t>(b)];
  });
  for (long long extra = total_samples - assigned; extra > 0; --extra)
    ++counts[static_cast<std::size_t>(order[static_cast<std::size_t>(total_samples - assigned - extra)])];

  std::vector<MomentAccumulator> accs;
  bool p_known = false;
  for (int c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] < 2)
      throw NumericalError("mc_class_moments: cluster " + std::to_string(c) +
                           " allocated fewer than 2 samples");
    RngStream stream = rng.stream(stream_label + "/cluster", static_cast<std::uint64_t>(c));
    long long remaining = counts[static_cast<std::size_t>(c)];
    while (remaining > 0) {
      const int take = static_cast<int>(std::min<long long>(remaining, batch));
      Mat block = generator(c, take, stream);
      if (block.rows() != take) throw NumericalError("mc_class_moments: generator returned wrong count");
      if (!p_known) {
        accs.assign(static_cast<std::size_t>(k),
                    MomentAccumulator(static_cast<int>(block.cols()), diagonal));
        p_known = true;
      }
      for (int i = 0; i < take; ++i) accs[static_cast<std::size_t>(c)].add(block.row(i).transpose());
      remaining -= take;
    }
  }
  return finalize(accs, diagonal);
}

MixtureSpec build_equivalent_gmm(const ClassMoments& m) {
  MixtureSpec spec;
  spec.p = m.p();
  const double total = static_cast<double>(m.total());
  for (int c = 0; c < m.k(); ++c) {
    ClusterSpec cl;
    cl.weight = static_cast<double>(m.counts[static_cast<std::size_t>(c)]) / total;
    cl.mean = m.means[static_cast<std::size_t>(c)];
    if (m.diagonal) {
      cl.diagonal = true;
      cl.cov_diag = m.covariance_diags[static_cast<std::size_t>(c)].cwiseMax(0.0);
      const double shift =
          (cl.cov_diag - m.covariance_diags[static_cast<std::size_t>(c)]).cwiseAbs().maxCoeff();
      const double scale = m.covariance_diags[static_cast<std::size_t>(c)].cwiseAbs().maxCoeff();
      if (shift > 1e-6 * std::max(scale, 1e-300))
        throw NumericalError("build_equivalent_gmm: PSD projection moved a diagonal entry too far");
    } else {
      const Mat& raw = m.covariances[static_cast<std::size_t>(c)];
      cl.cov = psd_project(raw, 0.0);
      const double opnorm = operator_norm(raw);
      const double shift = operator_norm(cl.cov - raw);
      if (shift > 1e-6 * std::max(opnorm, 1e-300))
        throw NumericalError("build_equivalent_gmm: PSD projection moved an eigenvalue by more than 1e-6 * op-norm");
    }
    spec.clusters.push_back(std::move(cl));
  }
  spec.validate();
  return spec;
}

std::string moments_to_json(const ClassMoments& m) {
  json root;
  root["p"] = m.p();
  root["diagonal"] = m.diagonal;
  root["N_c"] = m.counts;
  root["clusters"] = json::array();
  for (int c = 0; c < m.k(); ++c) {
    json jc;
    jc["weight"] = m.weight(c);
    const Vec& mu = m.means[static_cast<std::size_t>(c)];
    jc["mean"] = std::vector<double>(mu.data(), mu.data() + mu.size());
    json cov;
    if (m.diagonal) {
      cov["kind"] = "diag";
      const Vec& d = m.covariance_diags[static_cast<std::size_t>(c)];
      cov["data"] = std::vector<double>(d.data(), d.data() + d.size());
    } else {
      cov["kind"] = "dense";
      const Mat& S = m.covariances[static_cast<std::size_t>(c)];
      std::vector<double> data;
      data.reserve(static_cast<std::size_t>(S.size()));
      for (Eigen::Index i = 0; i < S.rows(); ++i)
        for (Eigen::Index j = 0; j < S.cols(); ++j) data.push_back(S(i, j));
      cov["data"] = data;
    }
    jc["cov"] = cov;
    root["clusters"].push_back(jc);
  }
  return root.dump(2);
}

ClassMoments moments_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("moments JSON parse error: ") + e.what());
  }
  ClassMoments m;
  try {
    m.diagonal = root.value("diagonal", false);
    m.counts = root.at("N_c").get<std::vector<long long>>();
    const int p = root.at("p").get<int>();
    for (const auto& jc : root.at("clusters")) {
      const auto mean = jc.at("mean").get<std::vector<double>>();
      if (static_cast<int>(mean.size()) != p) throw ConfigError("moments JSON: mean length mismatch");
      m.means.push_back(Eigen::Map<const Vec>(mean.data(), p));
      const auto& cov = jc.at("cov");
      const auto data = cov.at("data").get<std::vector<double>>();
      if (cov.at("kind").get<std::string>() == "diag") {
        m.covariances.emplace_back();
        m.covariance_diags.push_back(Eigen::Map<const Vec>(data.data(), p));
      } else {
        if (static_cast<int>(data.size()) != p * p)
          throw ConfigError("moments JSON: dense covariance size mismatch");
        Mat S(p, p);
        for (int i = 0; i < p; ++i)
          for (int j = 0; j < p; ++j) S(i, j) = data[static_cast<std::size_t>(i) * p + j];
        m.covariances.push_back(S);
        m.covariance_diags.push_back(S.diagonal());
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("moments JSON structure error: ") + e.what());
  }
  if (m.counts.size() != m.means.size()) throw ConfigError("moments JSON: N_c length mismatch");
  return m;
}

}  // namespace ulab
