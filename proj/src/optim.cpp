#include "ulab/optim.hpp"

#include <cmath>
#include <deque>
#include <vector>

namespace ulab {

MinimizeResult lbfgs_minimize(const Objective& obj, Vec x0, double tol, int max_iter,
                              int memory) {
  MinimizeResult res;
  Vec x = std::move(x0);
  Vec g(x.size());
  double f = obj.value_and_grad(x, g);
  std::deque<Vec> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it;
    const double gnorm = g.norm();
    if (gnorm <= tol) {
      res.converged = true;
      break;
    }
    // two-loop recursion
    Vec q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[static_cast<std::size_t>(i)] =
          rho_hist[static_cast<std::size_t>(i)] * s_hist[static_cast<std::size_t>(i)].dot(q);
      q -= alpha[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) {
      const Vec& sl = s_hist.back();
      const Vec& yl = y_hist.back();
      gamma = sl.dot(yl) / std::max(yl.squaredNorm(), 1e-300);
    }
    Vec z = gamma * q;
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(z);
      z += (alpha[i] - beta) * s_hist[i];
    }
    Vec dir = -z;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {  // safeguard: fall back to steepest descent
      dir = -g;
      slope = -gnorm * gnorm;
    }
    double step = 1.0;
    Vec x_new;
    double f_new = f;
    bool ok = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * dir;
      f_new = obj.value(x_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) break;  // line search stalled at the resolution limit
    Vec g_new(x.size());
    obj.value_and_grad(x_new, g_new);
    Vec s = x_new - x;
    Vec yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(yv);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = std::move(x_new);
    g = std::move(g_new);
    f = f_new;
  }
  res.x = std::move(x);
  res.value = f;
  res.grad_norm = g.norm();
  if (res.grad_norm <= tol) res.converged = true;
  return res;
}

}  // namespace ulab
