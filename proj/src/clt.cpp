#include "ulab/clt.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

using nlohmann::json;

namespace ulab {

void DirectionSet::append(const Vec& v, DirectionKind kind, const std::string& label) {
  if (std::abs(v.norm() - 1.0) > 1e-12)
    throw ConfigError("DirectionSet: directions must be unit vectors within 1e-12");
  directions.push_back(v);
  kinds.push_back(kind);
  labels.push_back(label);
}

DirectionSet random_unit_directions(int count, int p, const Rng& rng,
                                    const std::string& stream_label) {
  DirectionSet set;
  RngStream s = rng.stream(stream_label);
  for (int i = 0; i < count; ++i) {
    Vec v(p);
    for (int j = 0; j < p; ++j) v(j) = s.normal();
    v.normalize();
    set.append(v, DirectionKind::random_unit, "random/" + std::to_string(i));
  }
  return set;
}

DirectionSet coordinate_spike_directions(int count, int p) {
  DirectionSet set;
  if (count > p) throw ConfigError("coordinate_spike_directions: count exceeds dimension");
  for (int i = 0; i < count; ++i) {
    // spread the spikes across the coordinate range
    const int idx = static_cast<int>((static_cast<long long>(i) * p) / std::max(count, 1));
    Vec v = Vec::Zero(p);
    v(idx) = 1.0;
    set.append(v, DirectionKind::coordinate_spike, "spike/" + std::to_string(idx));
  }
  return set;
}

DirectionSet trained_row_directions(const Estimator& est) {
  DirectionSet set;
  for (int i = 0; i < est.k(); ++i) {
    Vec v = est.theta.row(i).transpose();
    const double norm = v.norm();
    if (norm <= 0.0) throw NumericalError("trained_row_directions: zero row");
    v /= norm;
    v /= v.norm();  // second pass pins the norm to 1 within 1e-12
    set.append(v, DirectionKind::trained_rows, "trained/" + std::to_string(i));
  }
  return set;
}

std::vector<std::vector<double>> project_conditional(const Dataset& ds, const Vec& theta) {
  if (theta.size() != ds.p()) throw ConfigError("project_conditional: dimension mismatch");
  const int k = ds.num_clusters();
  std::vector<std::vector<double>> groups(static_cast<std::size_t>(k));
  const Vec proj = ds.X * theta;
  for (int i = 0; i < ds.n(); ++i) groups[ds.c[static_cast<std::size_t>(i)]].push_back(proj(i));
  return groups;
}

double dist_ks(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw ConfigError("dist_ks: empty sample set");
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double ks = 0.0;
  while (i < sa.size() && j < sb.size()) {
    const double t = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] <= t) ++i;
    while (j < sb.size() && sb[j] <= t) ++j;
    ks = std::max(ks, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return ks;
}

double dist_w1(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw ConfigError("dist_w1: empty sample set");
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  // W1 = integral |F_a - F_b| over the merged support
  const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double w1 = 0.0;
  double prev = std::min(sa[0], sb[0]);
  while (i < sa.size() || j < sb.size()) {
    const double fa = static_cast<double>(i) / na;
    const double fb = static_cast<double>(j) / nb;
    double t;
    if (i >= sa.size())
      t = sb[j];
    else if (j >= sb.size())
      t = sa[i];
    else
      t = std::min(sa[i], sb[j]);
    w1 += std::abs(fa - fb) * (t - prev);
    prev = t;
    while (i < sa.size() && sa[i] <= t) ++i;
    while (j < sb.size() && sb[j] <= t) ++j;
  }
  return w1;
}

CltReport clt_report(const Dataset& data, const Dataset& gmm, const DirectionSet& dirs,
                     int min_per_cluster) {
  if (data.p() != gmm.p()) throw ConfigError("clt_report: dimension mismatch between datasets");
  const int k = std::max(data.num_clusters(), gmm.num_clusters());
  std::vector<long long> count_data(static_cast<std::size_t>(k), 0),
      count_gmm(static_cast<std::size_t>(k), 0);
  for (std::uint32_t c : data.c) ++count_data[c];
  for (std::uint32_t c : gmm.c) ++count_gmm[c];
  for (int c = 0; c < k; ++c) {
    if (count_data[static_cast<std::size_t>(c)] == 0 || count_gmm[static_cast<std::size_t>(c)] == 0)
      throw ConfigError("clt_report: cluster " + std::to_string(c) + " present in only one dataset");
    if (count_data[static_cast<std::size_t>(c)] < min_per_cluster ||
        count_gmm[static_cast<std::size_t>(c)] < min_per_cluster)
      throw ConfigError("clt_report: cluster " + std::to_string(c) + " below the per-cluster minimum of " +
                        std::to_string(min_per_cluster));
  }

  CltReport report;
  report.p = data.p();
  report.k = k;
  report.sup_ks.assign(static_cast<std::size_t>(k), 0.0);
  report.sup_w1.assign(static_cast<std::size_t>(k), 0.0);
  for (int di = 0; di < dirs.size(); ++di) {
    const auto ga = project_conditional(data, dirs.directions[static_cast<std::size_t>(di)]);
    const auto gb = project_conditional(gmm, dirs.directions[static_cast<std::size_t>(di)]);
    for (int c = 0; c < k; ++c) {
      CltEntry e;
      e.cluster = c;
      e.direction = dirs.labels[static_cast<std::size_t>(di)];
      e.ks = dist_ks(ga[static_cast<std::size_t>(c)], gb[static_cast<std::size_t>(c)]);
      e.w1 = dist_w1(ga[static_cast<std::size_t>(c)], gb[static_cast<std::size_t>(c)]);
      e.n_data = static_cast<long long>(ga[static_cast<std::size_t>(c)].size());
      e.n_gmm = static_cast<long long>(gb[static_cast<std::size_t>(c)].size());
      report.sup_ks[static_cast<std::size_t>(c)] = std::max(report.sup_ks[static_cast<std::size_t>(c)], e.ks);
      report.sup_w1[static_cast<std::size_t>(c)] = std::max(report.sup_w1[static_cast<std::size_t>(c)], e.w1);
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

NullBand permutation_null_band(const std::vector<double>& a, const std::vector<double>& b,
                               const Rng& rng, int shuffles, double quantile) {
  if (a.empty() || b.empty()) throw ConfigError("permutation_null_band: empty sample set");
  std::vector<double> pool = a;
  pool.insert(pool.end(), b.begin(), b.end());
  RngStream s = rng.stream("permutation");
  std::vector<double> ks_stats, w1_stats;
  ks_stats.reserve(static_cast<std::size_t>(shuffles));
  w1_stats.reserve(static_cast<std::size_t>(shuffles));
  std::vector<double> pa(a.size()), pb(b.size());
  for (int t = 0; t < shuffles; ++t) {
    // Fisher-Yates on the pooled samples
    for (std::size_t i = pool.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(s.uniform_index(i + 1));
      std::swap(pool[i], pool[j]);
    }
    std::copy(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(a.size()), pa.begin());
    std::copy(pool.begin() + static_cast<std::ptrdiff_t>(a.size()), pool.end(), pb.begin());
    ks_stats.push_back(dist_ks(pa, pb));
    w1_stats.push_back(dist_w1(pa, pb));
  }
  std::sort(ks_stats.begin(), ks_stats.end());
  std::sort(w1_stats.begin(), w1_stats.end());
  const std::size_t idx = std::min(ks_stats.size() - 1,
                                   static_cast<std::size_t>(quantile * static_cast<double>(ks_stats.size())));
  return NullBand{ks_stats[idx], w1_stats[idx]};
}

NullBand clt_sup_null_band(const Dataset& data, const Dataset& gmm, const DirectionSet& dirs,
                           const Rng& rng, int shuffles, double quantile) {
  const int k = std::max(data.num_clusters(), gmm.num_clusters());
  const int D = dirs.size();
  // pooled projections per (direction, cluster), data first then gmm
  std::vector<std::vector<std::vector<double>>> pooled(
      static_cast<std::size_t>(D), std::vector<std::vector<double>>(static_cast<std::size_t>(k)));
  std::vector<std::size_t> n_data(static_cast<std::size_t>(k), 0);
  for (int di = 0; di < D; ++di) {
    const auto ga = project_conditional(data, dirs.directions[static_cast<std::size_t>(di)]);
    const auto gb = project_conditional(gmm, dirs.directions[static_cast<std::size_t>(di)]);
    for (int c = 0; c < k; ++c) {
      auto& pool = pooled[static_cast<std::size_t>(di)][static_cast<std::size_t>(c)];
      pool = ga[static_cast<std::size_t>(c)];
      pool.insert(pool.end(), gb[static_cast<std::size_t>(c)].begin(), gb[static_cast<std::size_t>(c)].end());
      n_data[static_cast<std::size_t>(c)] = ga[static_cast<std::size_t>(c)].size();
    }
  }
  RngStream s = rng.stream("sup-permutation");
  std::vector<double> sup_ks, sup_w1;
  for (int t = 0; t < shuffles; ++t) {
    double mks = 0.0, mw1 = 0.0;
    for (int c = 0; c < k; ++c) {
      // one membership permutation per cluster, shared across directions
      const std::size_t total = pooled[0][static_cast<std::size_t>(c)].size();
      std::vector<std::size_t> idx(total);
      for (std::size_t i = 0; i < total; ++i) idx[i] = i;
      for (std::size_t i = total - 1; i > 0; --i)
        std::swap(idx[i], idx[static_cast<std::size_t>(s.uniform_index(i + 1))]);
      for (int di = 0; di < D; ++di) {
        const auto& pool = pooled[static_cast<std::size_t>(di)][static_cast<std::size_t>(c)];
        std::vector<double> a(n_data[static_cast<std::size_t>(c)]),
            b(total - n_data[static_cast<std::size_t>(c)]);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = pool[idx[i]];
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = pool[idx[a.size() + i]];
        mks = std::max(mks, dist_ks(a, b));
        mw1 = std::max(mw1, dist_w1(a, b));
      }
    }
    sup_ks.push_back(mks);
    sup_w1.push_back(mw1);
  }
  std::sort(sup_ks.begin(), sup_ks.end());
  std::sort(sup_w1.begin(), sup_w1.end());
  const std::size_t qi = std::min(sup_ks.size() - 1,
                                  static_cast<std::size_t>(quantile * static_cast<double>(sup_ks.size())));
  return NullBand{sup_ks[qi], sup_w1[qi]};
}

DecayStudy decay_study(const std::function<DecayInstance(int, int)>& generator,
                       const std::vector<int>& p_grid, int seeds) {
  for (std::size_t i = 0; i + 1 < p_grid.size(); ++i)
    if (p_grid[i] >= p_grid[i + 1]) throw ConfigError("decay_study: p grid must be increasing");
  if (seeds < 2) throw ConfigError("decay_study: need at least 2 seeds for error bars");

  DecayStudy study;
  for (int p : p_grid) {
    DecayRow row;
    row.p = p;
    double sum_ks = 0.0;
    for (int seed = 0; seed < seeds; ++seed) {
      const DecayInstance inst = generator(p, seed);
      const CltReport rep = clt_report(inst.data, inst.gmm, inst.dirs, 2);
      double sup_w1 = 0.0, sup_ks = 0.0;
      for (double v : rep.sup_w1) sup_w1 = std::max(sup_w1, v);
      for (double v : rep.sup_ks) sup_ks = std::max(sup_ks, v);
      row.per_seed_sup_w1.push_back(sup_w1);
      sum_ks += sup_ks;
    }
    double mean = 0.0;
    for (double v : row.per_seed_sup_w1) mean += v;
    mean /= static_cast<double>(seeds);
    double var = 0.0;
    for (double v : row.per_seed_sup_w1) var += (v - mean) * (v - mean);
    row.mean_sup_w1 = mean;
    row.se_sup_w1 = std::sqrt(var / (static_cast<double>(seeds) * (seeds - 1.0)));
    row.mean_sup_ks = sum_ks / static_cast<double>(seeds);
    study.rows.push_back(std::move(row));
  }

  // least-squares slope of log(mean sup-W1) against log p
  const std::size_t m = study.rows.size();
  if (m >= 2) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (const DecayRow& r : study.rows) {
      const double x = std::log(static_cast<double>(r.p));
      const double y = std::log(std::max(r.mean_sup_w1, 1e-300));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double dm = static_cast<double>(m);
    study.loglog_slope = (dm * sxy - sx * sy) / (dm * sxx - sx * sx);
  }
  return study;
}

std::string CltReport::to_json() const {
  json root;
  root["p"] = p;
  root["k"] = k;
  root["sup_ks"] = sup_ks;
  root["sup_w1"] = sup_w1;
  root["entries"] = json::array();
  for (const CltEntry& e : entries)
    root["entries"].push_back({{"cluster", e.cluster},
                               {"direction", e.direction},
                               {"ks", e.ks},
                               {"w1", e.w1},
                               {"n_data", e.n_data},
                               {"n_gmm", e.n_gmm}});
  return root.dump(2);
}

std::string CltReport::to_csv() const {
  std::ostringstream out;
  out << "cluster,direction_id,ks,w1\n";
  out.precision(17);
  for (const CltEntry& e : entries)
    out << e.cluster << "," << e.direction << "," << e.ks << "," << e.w1 << "\n";
  return out.str();
}

}  // namespace ulab
