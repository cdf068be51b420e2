// Conditional-CLT testing machinery: exact distance identities, analytic
// two-sample values, projection marginals, permutation calibration, decay
// study behavior on Gaussian and constructed-violation inputs.
#include <doctest.h>

#include <cmath>

#include "ulab/clt.hpp"
#include "ulab/feature_map.hpp"
#include "ulab/moments.hpp"
#include "ulab/quadrature.hpp"

using namespace ulab;

namespace {

std::vector<double> normal_draws(int n, double mean, double sd, RngStream& s) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = mean + sd * s.normal();
  return out;
}

MixtureSpec two_cluster(int p, double mean_norm, double var) {
  Vec mu = Vec::Zero(p);
  mu(0) = mean_norm;
  MixtureSpec spec;
  spec.p = p;
  for (int c = 0; c < 2; ++c) {
    ClusterSpec cl;
    cl.weight = 0.5;
    cl.mean = c == 0 ? mu : Vec(-mu);
    cl.diagonal = true;
    cl.cov_diag = Vec::Constant(p, var);
    spec.clusters.push_back(cl);
  }
  return spec;
}

}  // namespace

TEST_CASE("distances: identity, exact shift, analytic two-sample values") {
  Rng rng(1);
  RngStream s = rng.stream("draws");
  const std::vector<double> a = normal_draws(2000, 0.0, 1.0, s);
  CHECK(dist_ks(a, a) == 0.0);
  CHECK(dist_w1(a, a) == 0.0);

  // pure shift: W1 is exactly |delta|
  const double delta = 0.37;
  std::vector<double> shifted = a;
  for (double& v : shifted) v += delta;
  CHECK(dist_w1(a, shifted) == doctest::Approx(delta).epsilon(1e-12));

  // N(0,1) vs N(0.5,1) at n = 1e5: ks -> 2 Phi(0.25) - 1, w1 -> 0.5
  RngStream s2 = rng.stream("big");
  const std::vector<double> x = normal_draws(100000, 0.0, 1.0, s2);
  const std::vector<double> y = normal_draws(100000, 0.5, 1.0, s2);
  const double ks_analytic = normal_cdf(0.25) - normal_cdf(-0.25);
  CHECK(std::abs(dist_ks(x, y) - ks_analytic) < 3.0 * std::sqrt(1.0 / 100000.0) * 2.0);
  CHECK(std::abs(dist_w1(x, y) - 0.5) < 3.0 * 0.005);

  // symmetry and the triangle inequality for W1
  RngStream s3 = rng.stream("tri");
  const std::vector<double> b = normal_draws(500, 0.3, 1.5, s3);
  const std::vector<double> c = normal_draws(700, -0.4, 0.7, s3);
  CHECK(dist_w1(a, b) == doctest::Approx(dist_w1(b, a)).epsilon(1e-12));
  CHECK(dist_ks(a, b) == doctest::Approx(dist_ks(b, a)).epsilon(1e-12));
  CHECK(dist_w1(a, c) <= dist_w1(a, b) + dist_w1(b, c) + 1e-12);
  CHECK(dist_ks(a, c) >= 0.0);
  CHECK(dist_ks(a, b) <= 1.0);

  CHECK_THROWS_AS(dist_ks(a, {}), ConfigError);
}

TEST_CASE("project_conditional: marginals, degenerate clusters, orthogonality") {
  const int p = 6;
  MixtureSpec spec = two_cluster(p, 0.8, 1.0);
  Rng rng(2);
  Dataset ds = sample_mixture(spec, 20000, rng);

  Vec e1 = Vec::Zero(p);
  e1(0) = 1.0;
  const auto groups = project_conditional(ds, e1);
  REQUIRE(groups.size() == 2);
  // per-cluster projections are N(+-0.8, 1): KS against exact draws
  RngStream s = rng.stream("ref");
  for (int c = 0; c < 2; ++c) {
    const double mean = c == 0 ? 0.8 : -0.8;
    const std::vector<double> ref =
        normal_draws(static_cast<int>(groups[static_cast<std::size_t>(c)].size()), mean, 1.0, s);
    CHECK(dist_ks(groups[static_cast<std::size_t>(c)], ref) < 0.03);
  }

  // zero-variance cluster: all projections equal theta . mu
  MixtureSpec point;
  point.p = 3;
  ClusterSpec cl;
  cl.weight = 1.0;
  cl.mean = Vec::Constant(3, 2.0);
  cl.diagonal = true;
  cl.cov_diag = Vec::Zero(3);
  point.clusters.push_back(cl);
  Dataset degen = sample_mixture(point, 40, rng);
  Vec theta = Vec::Constant(3, 1.0 / std::sqrt(3.0));
  const auto dg = project_conditional(degen, theta);
  for (double v : dg[0]) CHECK(v == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-12));

  // direction orthogonal to both means: cluster means within 3 SE of 0
  Vec orth = Vec::Zero(p);
  orth(1) = 1.0;
  const auto og = project_conditional(ds, orth);
  for (int c = 0; c < 2; ++c) {
    double m = 0.0;
    for (double v : og[static_cast<std::size_t>(c)]) m += v;
    m /= static_cast<double>(og[static_cast<std::size_t>(c)].size());
    CHECK(std::abs(m) < 3.0 / std::sqrt(static_cast<double>(og[static_cast<std::size_t>(c)].size())));
  }
}

TEST_CASE("direction sets: construction and invariants") {
  Rng rng(3);
  const DirectionSet rand = random_unit_directions(16, 10, rng);
  CHECK(rand.size() == 16);
  for (const Vec& v : rand.directions) CHECK(std::abs(v.norm() - 1.0) <= 1e-12);

  const DirectionSet spikes = coordinate_spike_directions(4, 10);
  for (const Vec& v : spikes.directions) {
    CHECK(v.cwiseAbs().maxCoeff() == 1.0);  // deliberately violates the decay constraint
    CHECK(std::abs(v.norm() - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(coordinate_spike_directions(11, 10), ConfigError);
}

TEST_CASE("clt_report: same-distribution null falls below the calibrated band") {
  const int p = 12;
  MixtureSpec spec = two_cluster(p, 0.6, 1.0);
  Rng rng(4);
  const DirectionSet dirs = random_unit_directions(8, p, rng);

  int below = 0;
  const int reps = 20;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rep_rng(100 + static_cast<std::uint64_t>(rep));
    Dataset a = sample_mixture(spec, 2400, rep_rng, "a");
    Dataset b = sample_mixture(spec, 2400, rep_rng, "b");
    const CltReport report = clt_report(a, b, dirs, 100);
    double sup_w1 = 0.0;
    for (double v : report.sup_w1) sup_w1 = std::max(sup_w1, v);
    const NullBand band = clt_sup_null_band(a, b, dirs, rep_rng, 60);
    if (sup_w1 <= band.w1) ++below;
  }
  CHECK(below >= reps * 85 / 100);

  // mismatched clusters error
  Dataset a = sample_mixture(spec, 2400, rng, "x");
  Dataset b = sample_mixture(spec, 2400, rng, "y");
  for (auto& ci : b.c) ci = 0;
  CHECK_THROWS_AS(clt_report(a, b, dirs, 100), ConfigError);
}

TEST_CASE("decay_study: identity features sit at the null level for every p") {
  // identity activation: the data is itself Gaussian, so distances match the
  // same-distribution null at each grid point
  const std::vector<int> grid{30, 60};
  Rng rng(5);
  auto generator = [&](int p, int seed) {
    Rng g(static_cast<std::uint64_t>(1000 + p * 10 + seed));
    MixtureSpec spec = two_cluster(p, 0.7, 1.0);
    DecayInstance inst;
    inst.data = sample_mixture(spec, 3000, g, "data");
    inst.gmm = sample_mixture(spec, 3000, g, "gmm");
    inst.dirs = random_unit_directions(8, p, g);
    return inst;
  };
  const DecayStudy study = decay_study(generator, grid, 3);
  REQUIRE(study.rows.size() == 2);
  for (const DecayRow& row : study.rows) {
    // null level for n=1500 per cluster is around 1.1/sqrt(n); allow slack
    CHECK(row.mean_sup_w1 < 4.0 / std::sqrt(1500.0));
  }

  CHECK_THROWS_AS(decay_study(generator, {60, 30}, 3), ConfigError);
  CHECK_THROWS_AS(decay_study(generator, {30, 60}, 1), ConfigError);
}

TEST_CASE("decay_study: sign features with spike directions do not decay") {
  // sign activation viewed through coordinate spikes gives a two-point
  // projection law whose distance to any Gaussian stays order one
  const std::vector<int> grid{40, 80};
  auto generator = [&](int p, int seed) {
    Rng g(static_cast<std::uint64_t>(2000 + p * 10 + seed));
    const int d = std::max(2, (2 * p) / 3);
    MixtureSpec latent = two_cluster(d, 0.8, 1.0);
    const FeatureMatrix fm = init_random_features(d, p, g, "F");
    const ActivationSpec& act = activation("sign");
    DecayInstance inst;
    Dataset latents = sample_mixture(latent, 2600, g, "latents");
    inst.data = apply_feature_map(fm, act, latents);
    const ClusterSampler sampler = [&](int cluster, int count, RngStream& stream) {
      const ClusterSpec& cl = latent.clusters[static_cast<std::size_t>(cluster)];
      Mat out(count, p);
      Vec z(d);
      for (int i = 0; i < count; ++i) {
        for (int j = 0; j < d; ++j) z(j) = cl.mean(j) + stream.normal();
        Vec u = fm.F.transpose() * z;
        for (int j = 0; j < p; ++j) out(i, j) = act(u(j));
      }
      return out;
    };
    const MixtureSpec eq = build_equivalent_gmm(
        mc_class_moments(sampler, Vec::Constant(2, 0.5), 20000, g, "moments"));
    inst.gmm = sample_mixture(eq, 2600, g, "gmm");
    inst.dirs = coordinate_spike_directions(6, p);
    return inst;
  };
  const DecayStudy study = decay_study(generator, grid, 2);
  for (const DecayRow& row : study.rows) CHECK(row.mean_sup_w1 > 0.2);
  // no decrease across the grid (within noise)
  CHECK(study.rows[1].mean_sup_w1 > 0.8 * study.rows[0].mean_sup_w1);
}

TEST_CASE("report serialization has the documented layout") {
  const int p = 8;
  MixtureSpec spec = two_cluster(p, 0.5, 1.0);
  Rng rng(6);
  Dataset a = sample_mixture(spec, 2200, rng, "a");
  Dataset b = sample_mixture(spec, 2200, rng, "b");
  const DirectionSet dirs = random_unit_directions(3, p, rng);
  const CltReport report = clt_report(a, b, dirs, 100);
  const std::string csv = report.to_csv();
  CHECK(csv.rfind("cluster,direction_id,ks,w1\n", 0) == 0);
  CHECK(report.entries.size() == 6);  // 3 directions x 2 clusters
  CHECK(report.to_json().find("sup_w1") != std::string::npos);
}
