#include "ulab/replica.hpp"

#include <cmath>
#include <json.hpp>

#include "ulab/quadrature.hpp"

using nlohmann::json;

namespace ulab {

void ReplicaProblem::validate() const {
  const int k = K();
  if (k < 1) throw ConfigError("ReplicaProblem: need at least one cluster");
  if (std::abs(weights.sum() - 1.0) > 1e-10) throw ConfigError("ReplicaProblem: weights must sum to 1");
  if (spectra.rows() != k || means_scaled.rows() != k || means_scaled.cols() != spectra.cols())
    throw ConfigError("ReplicaProblem: spectra/means shape mismatch");
  if (spectra.minCoeff() <= 0.0) throw ConfigError("ReplicaProblem: spectra must be strictly positive");
  if (!(alpha > 0.0)) throw ConfigError("ReplicaProblem: alpha must be positive");
  if (lambda < 0.0) throw ConfigError("ReplicaProblem: lambda must be >= 0");
  if (loss == ReplicaLoss::multiclass_xent && has_teacher)
    throw ConfigError("ReplicaProblem: teacher channel is squared-loss only");
  if (has_teacher) {
    if (loss != ReplicaLoss::squared) throw ConfigError("ReplicaProblem: teacher channel is squared-loss only");
    if (teacher_scaled.size() != spectra.cols()) throw ConfigError("ReplicaProblem: teacher length mismatch");
    if (noise_var < 0.0) throw ConfigError("ReplicaProblem: noise_var must be >= 0");
  } else if (loss != ReplicaLoss::multiclass_xent) {
    if (cluster_labels.size() != k) throw ConfigError("ReplicaProblem: cluster_labels length mismatch");
  }
}

namespace {

struct QuadRule {
  std::vector<Vec> nodes;  // points in R^r
  std::vector<double> weights;
};

QuadRule make_quad(int r, const ReplicaOptions& opt) {
  QuadRule q;
  if (r == 1) {
    const GaussHermite gh = gauss_hermite(opt.quad_order);
    for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
      Vec v(1);
      v(0) = gh.nodes[i];
      q.nodes.push_back(v);
      q.weights.push_back(gh.weights[i]);
    }
  } else if (r == 2) {
    const GaussHermite gh = gauss_hermite(opt.quad_order);
    for (std::size_t i = 0; i < gh.nodes.size(); ++i)
      for (std::size_t j = 0; j < gh.nodes.size(); ++j) {
        Vec v(2);
        v(0) = gh.nodes[i];
        v(1) = gh.nodes[j];
        q.nodes.push_back(v);
        q.weights.push_back(gh.weights[i] * gh.weights[j]);
      }
  } else {
    if (r > 4) throw ConfigError("replica channel supports at most 4 parameter rows");
    Halton halton(r);
    const double w = 1.0 / static_cast<double>(opt.mc_nodes);
    for (int i = 0; i < opt.mc_nodes; ++i) {
      q.nodes.push_back(halton.normal_point(static_cast<std::uint64_t>(i)));
      q.weights.push_back(w);
    }
  }
  return q;
}

// --- scalar logistic pieces (labels +-1) ---

double logi_value(double u, double y) {
  const double t = -y * u;
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}
double logi_d1(double u, double y) {
  const double s = 1.0 / (1.0 + std::exp(y * u));
  return -y * s;
}
double logi_d2(double u, double y) {
  const double s = 1.0 / (1.0 + std::exp(y * u));
  return s * (1.0 - s);
}

// prox of l(u) = log(1+e^{-yu}) with step V: minimize l(u) + (u-w)^2/(2V)
double prox_logistic(double omega, double V, double y, double tol) {
  if (V <= 1e-14) return omega;
  // |l'| <= 1 brackets the solution
  double lo = omega - V, hi = omega + V;
  double u = omega - V * logi_d1(omega, y);  // one explicit step
  for (int it = 0; it < 200; ++it) {
    const double g = logi_d1(u, y) + (u - omega) / V;
    if (std::abs(g) <= tol * (1.0 + 1.0 / V)) return u;
    if (g > 0.0)
      hi = u;
    else
      lo = u;
    const double hess = logi_d2(u, y) + 1.0 / V;
    double step = u - g / hess;
    if (step <= lo || step >= hi) step = 0.5 * (lo + hi);
    u = step;
  }
  return u;
}

// --- multiclass cross-entropy pieces (one-hot target index) ---

Vec softmax(const Vec& u) {
  const double mx = u.maxCoeff();
  Vec e = (u.array() - mx).exp();
  return e / e.sum();
}

// prox of l(u) = logsumexp(u) - u_t with step matrix V (SPD)
Vec prox_xent(const Vec& omega, const Mat& V, int target, double tol) {
  const int r = static_cast<int>(omega.size());
  if (V.cwiseAbs().maxCoeff() <= 1e-14) return omega;
  Eigen::LLT<Mat> vllt(V);
  if (vllt.info() != Eigen::Success) throw NumericalError("prox_xent: V not positive definite");
  Vec u = omega;
  Vec y = Vec::Zero(r);
  y(target) = 1.0;
  for (int it = 0; it < 200; ++it) {
    const Vec p = softmax(u);
    const Vec resid = vllt.solve(u - omega);
    const Vec grad = p - y + resid;
    if (grad.norm() <= tol) break;
    Mat H = -p * p.transpose();
    H += p.asDiagonal();
    Mat A = H + Mat(vllt.solve(Mat::Identity(r, r)));
    Eigen::LLT<Mat> allt(A);
    Vec step = allt.info() == Eigen::Success ? Vec(allt.solve(grad)) : grad;
    double t = 1.0;
    const double mx0 = u.maxCoeff();
    const double f0 = mx0 + std::log((u.array() - mx0).exp().sum()) - u(target) +
                      0.5 * (u - omega).dot(resid);
    for (int ls = 0; ls < 50; ++ls) {
      const Vec cand = u - t * step;
      const double mx = cand.maxCoeff();
      const double f = mx + std::log((cand.array() - mx).exp().sum()) - cand(target) +
                       0.5 * (cand - omega).dot(vllt.solve(cand - omega));
      if (f <= f0 - 1e-4 * t * grad.dot(step)) {
        u = cand;
        break;
      }
      t *= 0.5;
      if (ls == 49) u = cand;
    }
  }
  return u;
}

// Per-cluster channel expectations at the current order parameters.
struct Channel {
  Vec Ef;        // r
  Mat Efft;      // r x r
  Mat Edfdw;     // r x r, E[d f / d omega]
  double Eloss;  // E[l(h, y)]
  double Edfdnu; // teacher response (squared channel only)
};

struct TeacherStats {
  // fixed data-side contractions with the teacher coordinates
  Vec r_star;  // K: (1/d) sum_i sigma_{k,i} w*_i^2
  Vec nu_bar;  // K: (1/d) sum_i mu-bar_{k,i} w*_i
};

Channel squared_channel(const ReplicaProblem& rp, int k, double Q, double M, double V,
                        double b, double m_t, const TeacherStats* ts) {
  // l(u,y) = (u-y)^2: h = (omega + 2Vy)/(1+2V), f = 2(y-omega)/(1+2V)
  const double S = 1.0 / (1.0 + 2.0 * V);
  double ybar, Cvar;
  if (rp.has_teacher) {
    ybar = ts->nu_bar(k);
    Cvar = Q - 2.0 * m_t + ts->r_star(k) + rp.noise_var;
  } else {
    ybar = rp.cluster_labels(k);
    Cvar = Q;
  }
  const double D = ybar - M - b;
  Channel ch;
  ch.Ef = Vec::Constant(1, 2.0 * S * D);
  ch.Efft = Mat::Constant(1, 1, 4.0 * S * S * (Cvar + D * D));
  ch.Edfdw = Mat::Constant(1, 1, -2.0 * S);
  ch.Edfdnu = 2.0 * S;
  ch.Eloss = S * S * (Cvar + D * D);
  return ch;
}

Channel logistic_channel(const ReplicaProblem& rp, int k, double Q, double M, double V,
                         double b, const QuadRule& quad) {
  const double y = rp.cluster_labels(k);
  const double sq = std::sqrt(std::max(Q, 0.0));
  const double Vc = std::max(V, 1e-14);
  Channel ch;
  double ef = 0.0, efft = 0.0, edf = 0.0, el = 0.0;
  for (std::size_t i = 0; i < quad.nodes.size(); ++i) {
    const double w = quad.weights[i];
    const double omega = M + b + sq * quad.nodes[i](0);
    const double h = prox_logistic(omega, Vc, y, 1e-13);
    const double f = -logi_d1(h, y);  // = (h - omega)/V at the prox point
    const double l2 = logi_d2(h, y);
    ef += w * f;
    efft += w * f * f;
    edf += w * (-l2 / (1.0 + Vc * l2));
    el += w * logi_value(h, y);
  }
  ch.Ef = Vec::Constant(1, ef);
  ch.Efft = Mat::Constant(1, 1, efft);
  ch.Edfdw = Mat::Constant(1, 1, edf);
  ch.Edfdnu = 0.0;
  ch.Eloss = el;
  return ch;
}

Channel xent_channel(int k, const Mat& Q, const Vec& M, const Mat& V, const Vec& b,
                     const QuadRule& quad) {
  const int r = static_cast<int>(M.size());
  const Mat sqQ = psd_sqrt(Q);
  Mat Vreg = V;
  Vreg.diagonal().array() += 1e-12;
  Eigen::LLT<Mat> vllt(Vreg);
  if (vllt.info() != Eigen::Success) throw NumericalError("xent channel: V factorization failed");
  Channel ch;
  ch.Ef = Vec::Zero(r);
  ch.Efft = Mat::Zero(r, r);
  ch.Edfdw = Mat::Zero(r, r);
  ch.Eloss = 0.0;
  ch.Edfdnu = 0.0;
  Vec y = Vec::Zero(r);
  y(k) = 1.0;
  const Mat I = Mat::Identity(r, r);
  for (std::size_t i = 0; i < quad.nodes.size(); ++i) {
    const double w = quad.weights[i];
    const Vec omega = M + b + sqQ * quad.nodes[i];
    const Vec h = prox_xent(omega, Vreg, k, 1e-11);
    const Vec p = softmax(h);
    const Vec f = y - p;  // = -grad l(h)
    Mat H = -p * p.transpose();
    H += p.asDiagonal();
    const Mat dfdw = -H * (I + Vreg * H).inverse();
    ch.Ef += w * f;
    ch.Efft += w * (f * f.transpose());
    ch.Edfdw += w * dfdw;
    const double mx = h.maxCoeff();
    ch.Eloss += w * (mx + std::log((h.array() - mx).exp().sum()) - h(k));
  }
  ch.Edfdw = 0.5 * (ch.Edfdw + ch.Edfdw.transpose());
  return ch;
}

Channel compute_channel(const ReplicaProblem& rp, int k, const ReplicaState& st,
                        const Vec& bias, const QuadRule& quad, const TeacherStats* ts) {
  switch (rp.loss) {
    case ReplicaLoss::squared:
      return squared_channel(rp, k, st.Q[k](0, 0), st.M[k](0), st.V[k](0, 0), bias(0),
                             rp.has_teacher ? st.m_teacher(k) : 0.0, ts);
    case ReplicaLoss::logistic_binary:
      return logistic_channel(rp, k, st.Q[k](0, 0), st.M[k](0), st.V[k](0, 0), bias(0), quad);
    case ReplicaLoss::multiclass_xent:
      return xent_channel(k, st.Q[k], st.M[k], st.V[k], bias, quad);
  }
  throw ConfigError("bad replica loss");
}

TeacherStats teacher_stats(const ReplicaProblem& rp) {
  TeacherStats ts;
  const int K = rp.K();
  const int d = rp.d();
  ts.r_star = Vec::Zero(K);
  ts.nu_bar = Vec::Zero(K);
  if (!rp.has_teacher) return ts;
  for (int k = 0; k < K; ++k) {
    double rs = 0.0, nb = 0.0;
    for (int i = 0; i < d; ++i) {
      rs += rp.spectra(k, i) * rp.teacher_scaled(i) * rp.teacher_scaled(i);
      nb += rp.means_scaled(k, i) * rp.teacher_scaled(i);
    }
    ts.r_star(k) = rs / static_cast<double>(d);
    ts.nu_bar(k) = nb / static_cast<double>(d);
  }
  return ts;
}

struct HatBlock {
  std::vector<Mat> Qhat, Vhat;
  std::vector<Vec> mhat;
  Vec mhat_teacher;
};

HatBlock hats_from_channels(const ReplicaProblem& rp, const std::vector<Channel>& chans) {
  const int K = rp.K();
  HatBlock h;
  h.mhat_teacher = Vec::Zero(K);
  for (int k = 0; k < K; ++k) {
    const double c = rp.alpha * rp.weights(k);
    h.Qhat.push_back(c * chans[static_cast<std::size_t>(k)].Efft);
    h.mhat.push_back(c * chans[static_cast<std::size_t>(k)].Ef);
    Mat vh = -c * chans[static_cast<std::size_t>(k)].Edfdw;
    h.Vhat.push_back(psd_project(0.5 * (vh + vh.transpose()), 0.0));
    h.mhat_teacher(k) = c * chans[static_cast<std::size_t>(k)].Edfdnu;
  }
  return h;
}

struct PriorBlock {
  std::vector<Mat> Q, V;
  std::vector<Vec> M;
  Vec m_teacher;
};

// Coordinate-side expectations: quadratic regularizer in closed form.
PriorBlock prior_from_hats(const ReplicaProblem& rp, const HatBlock& hats) {
  const int K = rp.K();
  const int r = rp.rows();
  const int d = rp.d();
  PriorBlock pb;
  pb.Q.assign(static_cast<std::size_t>(K), Mat::Zero(r, r));
  pb.V.assign(static_cast<std::size_t>(K), Mat::Zero(r, r));
  pb.M.assign(static_cast<std::size_t>(K), Vec::Zero(r));
  pb.m_teacher = Vec::Zero(K);

  const Mat I = Mat::Identity(r, r);
  for (int i = 0; i < d; ++i) {
    Mat A_inv = 2.0 * rp.lambda * I;
    Vec field = Vec::Zero(r);
    Mat C = Mat::Zero(r, r);
    for (int k = 0; k < K; ++k) {
      const double s = rp.spectra(k, i);
      A_inv += s * hats.Vhat[static_cast<std::size_t>(k)];
      field += rp.means_scaled(k, i) * hats.mhat[static_cast<std::size_t>(k)];
      if (rp.has_teacher) field += hats.mhat_teacher(k) * s * rp.teacher_scaled(i) * Vec::Ones(1);
      C += s * hats.Qhat[static_cast<std::size_t>(k)];
    }
    Mat J;
    if (r == 1) {
      J = Mat::Constant(1, 1, 1.0 / A_inv(0, 0));
    } else {
      Eigen::LLT<Mat> llt(A_inv);
      if (llt.info() != Eigen::Success)
        throw NumericalError("replica prior: coordinate matrix not positive definite");
      J = llt.solve(I);
    }
    const Vec EW = J * field;
    const Mat EWW = J * (field * field.transpose() + C) * J;
    for (int k = 0; k < K; ++k) {
      const double s = rp.spectra(k, i);
      pb.Q[static_cast<std::size_t>(k)] += s * EWW;
      pb.V[static_cast<std::size_t>(k)] += s * J;
      pb.M[static_cast<std::size_t>(k)] += rp.means_scaled(k, i) * EW;
      if (rp.has_teacher) pb.m_teacher(k) += s * rp.teacher_scaled(i) * EW(0);
    }
  }
  const double dd = static_cast<double>(d);
  for (int k = 0; k < K; ++k) {
    pb.Q[static_cast<std::size_t>(k)] /= dd;
    pb.V[static_cast<std::size_t>(k)] /= dd;
    pb.M[static_cast<std::size_t>(k)] /= dd;
  }
  pb.m_teacher /= dd;
  return pb;
}

Vec bias_residual(const ReplicaProblem& rp, const ReplicaState& st, const Vec& bias,
                  const QuadRule& quad, const TeacherStats* ts, Mat* jacobian) {
  const int K = rp.K();
  const int r = rp.rows();
  Vec g = Vec::Zero(r);
  if (jacobian) *jacobian = Mat::Zero(r, r);
  for (int k = 0; k < K; ++k) {
    const Channel ch = compute_channel(rp, k, st, bias, quad, ts);
    g += rp.weights(k) * (st.V[static_cast<std::size_t>(k)] * ch.Ef);
    if (jacobian)
      *jacobian += rp.weights(k) * (st.V[static_cast<std::size_t>(k)] * ch.Edfdw);
  }
  return g;
}

Vec solve_bias_impl(const ReplicaProblem& rp, const ReplicaState& st, Vec bias,
                    const QuadRule& quad, const TeacherStats* ts, double tol) {
  const int r = rp.rows();
  // For multiclass the loss is softmax-shift invariant, so the bias is pinned
  // to the zero-sum subspace (matching a zero-initialized finite-size fit).
  Mat basis;
  if (rp.loss == ReplicaLoss::multiclass_xent && r > 1) {
    basis = Mat::Zero(r, r - 1);
    for (int j = 0; j < r - 1; ++j) {
      basis(j, j) = 1.0;
      basis(r - 1, j) = -1.0;
    }
    const double mean = bias.mean();
    bias.array() -= mean;
  } else {
    basis = Mat::Identity(r, r);
  }
  const int m = static_cast<int>(basis.cols());
  for (int it = 0; it < 100; ++it) {
    Mat jac;
    const Vec g = bias_residual(rp, st, bias, quad, ts, &jac);
    const Vec gr = basis.transpose() * g;
    if (gr.norm() <= tol) return bias;
    Mat jr = basis.transpose() * jac * basis;
    // damped Newton; jac is negative definite on the active subspace
    Eigen::FullPivLU<Mat> lu(jr);
    if (!lu.isInvertible()) throw NumericalError("solve_bias: singular Jacobian");
    Vec step = basis * Vec(lu.solve(gr));
    double t = 1.0;
    const double g0 = gr.norm();
    for (int ls = 0; ls < 40; ++ls) {
      const Vec cand = bias - t * step;
      const Vec gc = basis.transpose() * bias_residual(rp, st, cand, quad, ts, nullptr);
      if (gc.norm() <= (1.0 - 1e-4 * t) * g0) {
        bias = cand;
        break;
      }
      t *= 0.5;
      if (ls == 39) bias = cand;
    }
  }
  Mat jac;
  const Vec g = bias_residual(rp, st, bias, quad, ts, nullptr);
  if ((basis.transpose() * g).norm() > tol * 10.0)
    throw NumericalError("solve_bias: did not converge");
  return bias;
}

double state_distance(const ReplicaState& a, const ReplicaState& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.Q.size(); ++k) {
    m = std::max(m, (a.Q[k] - b.Q[k]).cwiseAbs().maxCoeff());
    m = std::max(m, (a.V[k] - b.V[k]).cwiseAbs().maxCoeff());
    m = std::max(m, (a.Qhat[k] - b.Qhat[k]).cwiseAbs().maxCoeff());
    m = std::max(m, (a.Vhat[k] - b.Vhat[k]).cwiseAbs().maxCoeff());
    m = std::max(m, (a.M[k] - b.M[k]).cwiseAbs().maxCoeff());
    m = std::max(m, (a.mhat[k] - b.mhat[k]).cwiseAbs().maxCoeff());
  }
  m = std::max(m, (a.bias - b.bias).cwiseAbs().maxCoeff());
  if (a.m_teacher.size() > 0) {
    m = std::max(m, (a.m_teacher - b.m_teacher).cwiseAbs().maxCoeff());
    m = std::max(m, (a.mhat_teacher - b.mhat_teacher).cwiseAbs().maxCoeff());
  }
  return m;
}

void check_psd_invariants(const ReplicaState& st) {
  for (std::size_t k = 0; k < st.Q.size(); ++k) {
    if (min_eigenvalue(st.Q[k]) < -1e-8 || min_eigenvalue(st.V[k]) < -1e-8 ||
        min_eigenvalue(st.Qhat[k]) < -1e-8 || min_eigenvalue(st.Vhat[k]) < -1e-8)
      throw NumericalError("replica_fixed_point: PSD violation beyond tolerance");
  }
}

ReplicaState init_state(const ReplicaProblem& rp) {
  const int K = rp.K();
  const int r = rp.rows();
  ReplicaState st;
  st.Q.assign(static_cast<std::size_t>(K), Mat::Identity(r, r));
  st.V.assign(static_cast<std::size_t>(K), Mat::Identity(r, r));
  st.Qhat.assign(static_cast<std::size_t>(K), Mat::Zero(r, r));
  st.Vhat.assign(static_cast<std::size_t>(K), Mat::Zero(r, r));
  st.M.assign(static_cast<std::size_t>(K), Vec::Zero(r));
  st.mhat.assign(static_cast<std::size_t>(K), Vec::Zero(r));
  st.bias = Vec::Zero(r);
  st.m_teacher = Vec::Zero(K);
  st.mhat_teacher = Vec::Zero(K);
  return st;
}

}  // namespace

Vec prox_loss(ReplicaLoss loss, const Vec& y, const Mat& V, const Vec& omega, double tol) {
  if (V.rows() != omega.size() || V.cols() != omega.size())
    throw ConfigError("prox_loss: V/omega shape mismatch");
  switch (loss) {
    case ReplicaLoss::squared: {
      // minimize (u-y)^2 + (u-omega)^T V^{-1} (u-omega)/2
      const Mat A = Mat::Identity(V.rows(), V.rows()) + 2.0 * V;
      return A.llt().solve(omega + 2.0 * V * y);
    }
    case ReplicaLoss::logistic_binary: {
      if (omega.size() != 1) throw ConfigError("prox_loss: logistic is scalar");
      Vec h(1);
      h(0) = prox_logistic(omega(0), V(0, 0), y(0), tol);
      return h;
    }
    case ReplicaLoss::multiclass_xent: {
      int target = -1;
      for (Eigen::Index j = 0; j < y.size(); ++j)
        if (y(j) == 1.0) target = static_cast<int>(j);
      if (target < 0) throw ConfigError("prox_loss: multiclass needs a one-hot label");
      if (V.cwiseAbs().maxCoeff() <= 1e-14) return omega;
      return prox_xent(omega, V, target, tol);
    }
  }
  throw ConfigError("prox_loss: bad loss");
}

Vec prox_reg_quadratic(double lambda, const Vec& a_half, const Vec& b) {
  if (a_half.size() != b.size()) throw ConfigError("prox_reg: shape mismatch");
  Vec g(b.size());
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    const double a2 = a_half(i) * a_half(i);
    g(i) = a2 * b(i) / (1.0 + 2.0 * lambda * a2);
  }
  return g;
}

Vec prox_reg_newton(double lambda, const ScalarPsi& psi, const Vec& a_half, const Vec& b,
                    double tol) {
  if (a_half.size() != b.size()) throw ConfigError("prox_reg: shape mismatch");
  Vec g(b.size());
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    const double a = a_half(i);
    const double c = a * b(i);
    double z = c;  // minimize lambda*psi(a z) + (z - c)^2 / 2
    bool done = false;
    for (int it = 0; it < 200; ++it) {
      const double grad = lambda * a * psi.deriv(a * z) + (z - c);
      if (std::abs(grad) <= tol * (1.0 + std::abs(c))) {
        done = true;
        break;
      }
      const double hess = lambda * a * a * psi.second(a * z) + 1.0;
      z -= grad / hess;
    }
    if (!done) {
      const double grad = lambda * a * psi.deriv(a * z) + (z - c);
      if (std::abs(grad) > 1e-8 * (1.0 + std::abs(c)))
        throw NumericalError("prox_reg_newton: scalar Newton did not converge");
    }
    g(i) = a * z;
  }
  return g;
}

ReplicaState replica_fixed_point(const ReplicaProblem& rp, const ReplicaOptions& opt,
                                 const Rng& rng) {
  (void)rng;
  rp.validate();
  if (!(opt.damping > 0.0 && opt.damping <= 1.0))
    throw ConfigError("replica_fixed_point: damping must lie in (0,1]");
  const int K = rp.K();
  const int r = rp.rows();
  const QuadRule quad = make_quad(r, opt);
  const TeacherStats ts = teacher_stats(rp);

  ReplicaState st = init_state(rp);
  double damping = opt.damping;
  double best_residual = std::numeric_limits<double>::infinity();
  int sweeps_since_improvement = 0;
  double prev_residual = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= opt.max_iter; ++it) {
    // full sweep: hats from the channel, non-hats from the coordinates,
    // then the bias at the candidate order parameters
    std::vector<Channel> chans;
    chans.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) chans.push_back(compute_channel(rp, k, st, st.bias, quad, &ts));
    const HatBlock hats = hats_from_channels(rp, chans);
    const PriorBlock prior = prior_from_hats(rp, hats);

    ReplicaState cand = st;
    cand.Qhat = hats.Qhat;
    cand.Vhat = hats.Vhat;
    cand.mhat = hats.mhat;
    cand.mhat_teacher = hats.mhat_teacher;
    cand.Q = prior.Q;
    cand.V = prior.V;
    cand.M = prior.M;
    cand.m_teacher = prior.m_teacher;
    if (rp.fit_bias)
      cand.bias = solve_bias_impl(rp, cand, st.bias, quad, &ts, std::max(opt.tol * 1e-2, 1e-12));

    const double residual = state_distance(st, cand);
    if (residual > prev_residual && damping > 0.05) damping = std::max(0.05, 0.5 * damping);
    prev_residual = residual;

    for (int k = 0; k < K; ++k) {
      const std::size_t ku = static_cast<std::size_t>(k);
      st.Q[ku] = (1.0 - damping) * st.Q[ku] + damping * cand.Q[ku];
      st.V[ku] = (1.0 - damping) * st.V[ku] + damping * cand.V[ku];
      st.M[ku] = (1.0 - damping) * st.M[ku] + damping * cand.M[ku];
      st.Qhat[ku] = (1.0 - damping) * st.Qhat[ku] + damping * cand.Qhat[ku];
      st.Vhat[ku] = (1.0 - damping) * st.Vhat[ku] + damping * cand.Vhat[ku];
      st.mhat[ku] = (1.0 - damping) * st.mhat[ku] + damping * cand.mhat[ku];
    }
    st.bias = (1.0 - damping) * st.bias + damping * cand.bias;
    st.m_teacher = (1.0 - damping) * st.m_teacher + damping * cand.m_teacher;
    st.mhat_teacher = (1.0 - damping) * st.mhat_teacher + damping * cand.mhat_teacher;
    check_psd_invariants(st);

    st.residual = residual;
    st.iterations = it;
    st.residual_history.push_back(residual);
    if (residual <= opt.tol) {
      st.converged = true;
      return st;
    }
    if (residual < best_residual * (1.0 - 1e-12)) {
      best_residual = residual;
      sweeps_since_improvement = 0;
    } else if (++sweeps_since_improvement >= 50 && residual > 10.0 * opt.tol) {
      throw NumericalError("replica_fixed_point: residual stagnated for 50 sweeps at " +
                           std::to_string(residual));
    }
  }
  throw NumericalError("replica_fixed_point: no convergence in " + std::to_string(opt.max_iter) +
                       " sweeps (residual " + std::to_string(st.residual) + ")");
}

Vec solve_bias(const ReplicaState& state, const ReplicaProblem& rp, double tol,
               const ReplicaOptions& opt) {
  rp.validate();
  const QuadRule quad = make_quad(rp.rows(), opt);
  const TeacherStats ts = teacher_stats(rp);
  return solve_bias_impl(rp, state, state.bias, quad, &ts, tol);
}

ReplicaPredictions predict_errors(const ReplicaState& state, const ReplicaProblem& rp,
                                  const ReplicaOptions& opt) {
  if (!state.converged)
    throw NumericalError("predict_errors: refuse to evaluate an unconverged state");
  const int K = rp.K();
  const QuadRule quad = make_quad(rp.rows(), opt);
  const TeacherStats ts = teacher_stats(rp);

  ReplicaPredictions out;
  for (int k = 0; k < K; ++k) {
    const Channel ch = compute_channel(rp, k, state, state.bias, quad, &ts);
    out.train_loss += rp.weights(k) * ch.Eloss;
  }

  switch (rp.loss) {
    case ReplicaLoss::squared: {
      if (rp.has_teacher) {
        for (int k = 0; k < K; ++k) {
          const double D = state.M[static_cast<std::size_t>(k)](0) + state.bias(0) - ts.nu_bar(k);
          out.test_error += rp.weights(k) *
                            (D * D + state.Q[static_cast<std::size_t>(k)](0, 0) -
                             2.0 * state.m_teacher(k) + ts.r_star(k) + rp.noise_var);
        }
      } else {
        for (int k = 0; k < K; ++k) {
          const double D =
              state.M[static_cast<std::size_t>(k)](0) + state.bias(0) - rp.cluster_labels(k);
          out.test_error += rp.weights(k) * (D * D + state.Q[static_cast<std::size_t>(k)](0, 0));
        }
      }
      break;
    }
    case ReplicaLoss::logistic_binary: {
      for (int k = 0; k < K; ++k) {
        const double mean = state.M[static_cast<std::size_t>(k)](0) + state.bias(0);
        const double sd = std::sqrt(std::max(state.Q[static_cast<std::size_t>(k)](0, 0), 0.0));
        const double y = rp.cluster_labels(k);
        double perr;
        if (sd <= 1e-300)
          perr = (mean >= 0.0 ? 1.0 : -1.0) == y ? 0.0 : 1.0;
        else
          perr = normal_cdf(-y * mean / sd);
        out.test_error += rp.weights(k) * perr;
      }
      break;
    }
    case ReplicaLoss::multiclass_xent: {
      const int r = rp.rows();
      for (int k = 0; k < K; ++k) {
        const Vec mean = state.M[static_cast<std::size_t>(k)] + state.bias;
        const Mat& Q = state.Q[static_cast<std::size_t>(k)];
        if (r == 2) {
          const int other = 1 - k;
          const double m = mean(k) - mean(other);
          const double s2 = Q(k, k) + Q(other, other) - 2.0 * Q(k, other);
          const double perr = s2 <= 1e-300 ? (m >= 0.0 ? 0.0 : 1.0)
                                           : normal_cdf(-m / std::sqrt(s2));
          out.test_error += rp.weights(k) * perr;
        } else {
          const Mat sqQ = psd_sqrt(Q);
          double wrong = 0.0;
          for (std::size_t i = 0; i < quad.nodes.size(); ++i) {
            const Vec u = mean + sqQ * quad.nodes[i];
            int arg = 0;
            for (int j = 1; j < r; ++j)
              if (u(j) > u(arg)) arg = j;
            if (arg != k) wrong += quad.weights[i];
          }
          out.test_error += rp.weights(k) * wrong;
        }
      }
      break;
    }
  }
  return out;
}

std::vector<MeasureComparison> empirical_measure_compare(
    const Mat& W_finite, const ReplicaState& state, const ReplicaProblem& rp,
    const std::vector<MeasureTestFn>& test_fns, const Rng& rng, int reps_per_coord) {
  rp.validate();
  const int K = rp.K();
  const int r = rp.rows();
  const int d = rp.d();
  if (W_finite.rows() != r || W_finite.cols() != d)
    throw ConfigError("empirical_measure_compare: W shape mismatch (expect rows x d)");

  std::vector<double> emp(test_fns.size(), 0.0), rep(test_fns.size(), 0.0);
  RngStream noise = rng.stream("measure-compare");
  const Mat I = Mat::Identity(r, r);
  for (int i = 0; i < d; ++i) {
    Vec mu(K), sig(K);
    for (int k = 0; k < K; ++k) {
      mu(k) = rp.means_scaled(k, i);
      sig(k) = rp.spectra(k, i);
    }
    for (std::size_t t = 0; t < test_fns.size(); ++t)
      emp[t] += test_fns[t].fn(W_finite.col(i), mu, sig);

    // replica G field at this coordinate
    Mat A_inv = 2.0 * rp.lambda * I;
    Vec field = Vec::Zero(r);
    Mat C = Mat::Zero(r, r);
    for (int k = 0; k < K; ++k) {
      const double s = rp.spectra(k, i);
      A_inv += s * state.Vhat[static_cast<std::size_t>(k)];
      field += rp.means_scaled(k, i) * state.mhat[static_cast<std::size_t>(k)];
      if (rp.has_teacher) field += state.mhat_teacher(k) * s * rp.teacher_scaled(i) * Vec::Ones(1);
      C += s * state.Qhat[static_cast<std::size_t>(k)];
    }
    const Mat J = A_inv.llt().solve(I);
    const Mat Chalf = psd_sqrt(C);
    Vec z(r);
    for (int repn = 0; repn < reps_per_coord; ++repn) {
      for (int a = 0; a < r; ++a) z(a) = noise.normal();
      const Vec g = J * (field + Chalf * z);
      for (std::size_t t = 0; t < test_fns.size(); ++t)
        rep[t] += test_fns[t].fn(g, mu, sig) / static_cast<double>(reps_per_coord);
    }
  }

  std::vector<MeasureComparison> out;
  for (std::size_t t = 0; t < test_fns.size(); ++t) {
    MeasureComparison mc;
    mc.name = test_fns[t].name;
    mc.empirical = emp[t] / static_cast<double>(d);
    mc.replica = rep[t] / static_cast<double>(d);
    mc.discrepancy = std::abs(mc.empirical - mc.replica);
    out.push_back(mc);
  }
  return out;
}

namespace {

json mat_to_json(const Mat& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

}  // namespace

std::string replica_problem_to_json(const ReplicaProblem& rp) {
  json root;
  root["alpha"] = rp.alpha;
  root["lambda"] = rp.lambda;
  root["fit_bias"] = rp.fit_bias;
  root["loss"] = rp.loss == ReplicaLoss::squared         ? "squared"
                 : rp.loss == ReplicaLoss::logistic_binary ? "logistic-binary"
                                                           : "multiclass-cross-entropy";
  root["clusters"] = json::array();
  for (int k = 0; k < rp.K(); ++k) {
    json jc;
    jc["weight"] = rp.weights(k);
    jc["spectrum"] = std::vector<double>(rp.spectra.row(k).data(),
                                         rp.spectra.row(k).data() + rp.d());
    std::vector<double> mean(rp.d());
    for (int i = 0; i < rp.d(); ++i) mean[static_cast<std::size_t>(i)] = rp.means_scaled(k, i);
    jc["mean_scaled"] = mean;
    if (rp.loss != ReplicaLoss::multiclass_xent && !rp.has_teacher)
      jc["label"] = rp.cluster_labels(k);
    root["clusters"].push_back(jc);
  }
  if (rp.has_teacher) {
    root["teacher_scaled"] =
        std::vector<double>(rp.teacher_scaled.data(), rp.teacher_scaled.data() + rp.d());
    root["noise_var"] = rp.noise_var;
  }
  return root.dump(2);
}

ReplicaProblem replica_problem_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("replica JSON parse error: ") + e.what());
  }
  ReplicaProblem rp;
  try {
    rp.alpha = root.at("alpha").get<double>();
    rp.lambda = root.at("lambda").get<double>();
    rp.fit_bias = root.value("fit_bias", false);
    const std::string loss = root.at("loss").get<std::string>();
    if (loss == "squared")
      rp.loss = ReplicaLoss::squared;
    else if (loss == "logistic-binary")
      rp.loss = ReplicaLoss::logistic_binary;
    else if (loss == "multiclass-cross-entropy")
      rp.loss = ReplicaLoss::multiclass_xent;
    else
      throw ConfigError("replica JSON: unknown loss " + loss);
    const auto& clusters = root.at("clusters");
    const int K = static_cast<int>(clusters.size());
    if (K == 0) throw ConfigError("replica JSON: no clusters");
    const auto first = clusters[0].at("spectrum").get<std::vector<double>>();
    const int d = static_cast<int>(first.size());
    rp.weights.resize(K);
    rp.spectra.resize(K, d);
    rp.means_scaled.resize(K, d);
    rp.cluster_labels = Vec::Zero(K);
    for (int k = 0; k < K; ++k) {
      const auto& jc = clusters[static_cast<std::size_t>(k)];
      rp.weights(k) = jc.at("weight").get<double>();
      const auto spec = jc.at("spectrum").get<std::vector<double>>();
      const auto mean = jc.at("mean_scaled").get<std::vector<double>>();
      if (static_cast<int>(spec.size()) != d || static_cast<int>(mean.size()) != d)
        throw ConfigError("replica JSON: cluster coordinate lists must share a length");
      for (int i = 0; i < d; ++i) {
        rp.spectra(k, i) = spec[static_cast<std::size_t>(i)];
        rp.means_scaled(k, i) = mean[static_cast<std::size_t>(i)];
      }
      if (jc.contains("label")) rp.cluster_labels(k) = jc["label"].get<double>();
    }
    if (root.contains("teacher_scaled")) {
      rp.has_teacher = true;
      const auto t = root["teacher_scaled"].get<std::vector<double>>();
      rp.teacher_scaled = Eigen::Map<const Vec>(t.data(), static_cast<Eigen::Index>(t.size()));
      rp.noise_var = root.value("noise_var", 0.0);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("replica JSON structure error: ") + e.what());
  }
  rp.validate();
  return rp;
}

std::string replica_state_to_json(const ReplicaState& state) {
  json root;
  root["residual"] = state.residual;
  root["iterations"] = state.iterations;
  root["converged"] = state.converged;
  root["bias"] = std::vector<double>(state.bias.data(), state.bias.data() + state.bias.size());
  root["clusters"] = json::array();
  for (std::size_t k = 0; k < state.Q.size(); ++k) {
    json jc;
    jc["Q"] = mat_to_json(state.Q[k]);
    jc["V"] = mat_to_json(state.V[k]);
    jc["Qhat"] = mat_to_json(state.Qhat[k]);
    jc["Vhat"] = mat_to_json(state.Vhat[k]);
    jc["M"] = std::vector<double>(state.M[k].data(), state.M[k].data() + state.M[k].size());
    jc["mhat"] =
        std::vector<double>(state.mhat[k].data(), state.mhat[k].data() + state.mhat[k].size());
    if (state.m_teacher.size() > 0) {
      jc["m_teacher"] = state.m_teacher(static_cast<Eigen::Index>(k));
      jc["mhat_teacher"] = state.mhat_teacher(static_cast<Eigen::Index>(k));
    }
    root["clusters"].push_back(jc);
  }
  return root.dump(2);
}

}  // namespace ulab
