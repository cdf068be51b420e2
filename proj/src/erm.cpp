#include "ulab/erm.hpp"

#include <cmath>
#include <json.hpp>
#include <sstream>

#include "ulab/optim.hpp"

using nlohmann::json;

namespace ulab {

Loss loss_from_string(const std::string& s) {
  if (s == "squared") return Loss::squared;
  if (s == "logistic-binary") return Loss::logistic_binary;
  if (s == "multiclass-cross-entropy") return Loss::multiclass_xent;
  throw ConfigError("unknown loss: " + s);
}

std::string loss_to_string(Loss loss) {
  switch (loss) {
    case Loss::squared: return "squared";
    case Loss::logistic_binary: return "logistic-binary";
    case Loss::multiclass_xent: return "multiclass-cross-entropy";
  }
  throw ConfigError("bad loss");
}

void ErmProblem::validate() const {
  if (lambda < 0.0) throw ConfigError("ErmProblem: lambda must be >= 0");
  if (fit_bias && scaling != Scaling::inv_sqrt_d)
    throw ConfigError("ErmProblem: fit_bias requires scaling=inv-sqrt-d");
}

Mat Estimator::preactivations(const Mat& X) const {
  const double scale =
      scaling == Scaling::inv_sqrt_d ? 1.0 / std::sqrt(static_cast<double>(X.cols())) : 1.0;
  Mat u = scale * (X * theta.transpose());
  if (bias.size() == theta.rows()) u.rowwise() += bias.transpose();
  return u;
}

namespace {

double logistic_loss(double u, double y) {
  const double t = -y * u;
  // log(1 + e^t), stable for both signs
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

double xent_loss(const Eigen::Ref<const Eigen::RowVectorXd>& u, int target) {
  const double mx = u.maxCoeff();
  double s = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) s += std::exp(u(j) - mx);
  return mx + std::log(s) - u(target);
}

int onehot_target(const Eigen::Ref<const Eigen::RowVectorXd>& y) {
  int target = -1;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    if (y(j) == 1.0) {
      if (target >= 0) throw ConfigError("one-hot row has multiple ones");
      target = static_cast<int>(j);
    } else if (y(j) != 0.0) {
      throw ConfigError("one-hot row has entries outside {0,1}");
    }
  }
  if (target < 0) throw ConfigError("one-hot row has no one");
  return target;
}

}  // namespace

double empirical_risk(const Estimator& est, const Dataset& ds, const ErmProblem& prob) {
  if (est.p() != ds.p()) throw ConfigError("empirical_risk: dimension mismatch");
  const Mat u = est.preactivations(ds.X);
  const int n = ds.n();
  double loss = 0.0;
  switch (prob.loss) {
    case Loss::squared: {
      if (ds.y.cols() != 1 || est.k() != 1) throw ConfigError("empirical_risk: squared loss expects scalar labels");
      for (int i = 0; i < n; ++i) {
        const double r = u(i, 0) - ds.y(i, 0);
        loss += r * r;
      }
      break;
    }
    case Loss::logistic_binary: {
      const Vec y = binary_pm1_labels(ds);
      if (est.k() != 1) throw ConfigError("empirical_risk: logistic expects a single parameter row");
      for (int i = 0; i < n; ++i) loss += logistic_loss(u(i, 0), y(i));
      break;
    }
    case Loss::multiclass_xent: {
      if (ds.label_kind != LabelKind::onehot || ds.y.cols() != est.k())
        throw ConfigError("empirical_risk: multiclass loss expects matching one-hot labels");
      for (int i = 0; i < n; ++i) loss += xent_loss(u.row(i), onehot_target(ds.y.row(i)));
      break;
    }
  }
  // scaling=none follows the (1/n) sum + lambda ||Theta||^2 convention;
  // inv-sqrt-d problems carry the extensive-sum regularizer, normalized by n
  const double reg = prob.scaling == Scaling::inv_sqrt_d
                         ? prob.lambda * est.theta.squaredNorm() / static_cast<double>(n)
                         : prob.lambda * est.theta.squaredNorm();
  const double value = loss / static_cast<double>(n) + reg;
  if (!std::isfinite(value)) throw NumericalError("empirical_risk: non-finite value");
  return value;
}

Estimator fit_ridge(const Dataset& ds, double lambda) {
  if (lambda < 0.0) throw ConfigError("fit_ridge: lambda must be >= 0");
  if (ds.y.cols() != 1) throw ConfigError("fit_ridge: scalar labels required");
  const int n = ds.n();
  const int p = ds.p();
  const double dn = static_cast<double>(n);
  Mat gram = (ds.X.transpose() * ds.X) / dn;
  gram.diagonal().array() += lambda;
  const Vec rhs = ds.X.transpose() * ds.y.col(0) / dn;

  Vec theta;
  if (lambda > 0.0) {
    Eigen::LLT<Mat> llt(gram);
    if (llt.info() != Eigen::Success) throw NumericalError("fit_ridge: factorization failed");
    theta = llt.solve(rhs);
  } else {
    if (n < p) throw NumericalError("fit_ridge: singular normal equations at lambda=0 (n < p)");
    Eigen::LDLT<Mat> ldlt(gram);
    theta = ldlt.solve(rhs);
    if ((gram * theta - rhs).norm() > 1e-8 * (1.0 + rhs.norm()))
      throw NumericalError("fit_ridge: singular normal equations at lambda=0");
  }

  Estimator est;
  est.theta = theta.transpose();
  est.bias = Vec::Zero(1);
  est.scaling = Scaling::none;
  est.report.iterations = 1;
  est.report.grad_norm = (gram * theta - rhs).norm();
  est.report.converged = est.report.grad_norm <= 1e-10 * (1.0 + rhs.norm());
  ErmProblem prob;
  prob.loss = Loss::squared;
  prob.lambda = lambda;
  est.report.objective = empirical_risk(est, ds, prob);
  if (!est.report.converged) throw NumericalError("fit_ridge: normal-equation residual too large");
  return est;
}

Estimator fit_logistic(const Dataset& ds, double lambda, double tol, int max_iter) {
  if (!(lambda > 0.0))
    throw ConfigError("fit_logistic: lambda must be > 0 (lambda = 0 is non-coercive)");
  const Vec y = binary_pm1_labels(ds);
  const int n = ds.n();
  const int p = ds.p();
  const double dn = static_cast<double>(n);

  Objective obj;
  obj.value = [&, lambda](const Vec& th) {
    const Vec u = ds.X * th;
    double f = 0.0;
    for (int i = 0; i < n; ++i) f += logistic_loss(u(i), y(i));
    return f / dn + lambda * th.squaredNorm();
  };
  obj.value_and_grad = [&, lambda](const Vec& th, Vec& g) {
    const Vec u = ds.X * th;
    double f = 0.0;
    Vec w(n);
    for (int i = 0; i < n; ++i) {
      f += logistic_loss(u(i), y(i));
      w(i) = -y(i) * sigmoid(-y(i) * u(i));  // d l / d u
    }
    g = ds.X.transpose() * w / dn + 2.0 * lambda * th;
    return f / dn + lambda * th.squaredNorm();
  };

  MinimizeResult r;
  if (p <= 600) {
    // damped Newton: gradient/Hessian of the (1/n) objective
    Vec th = Vec::Zero(p);
    Vec g(p);
    double f = obj.value_and_grad(th, g);
    int it = 0;
    for (; it < max_iter; ++it) {
      if (g.norm() <= tol) break;
      const Vec u = ds.X * th;
      Vec h(n);
      for (int i = 0; i < n; ++i) {
        const double s = sigmoid(y(i) * u(i));
        h(i) = s * (1.0 - s);
      }
      Mat H = ds.X.transpose() * h.asDiagonal() * ds.X / dn;
      H.diagonal().array() += 2.0 * lambda;
      Eigen::LLT<Mat> llt(H);
      if (llt.info() != Eigen::Success) throw NumericalError("fit_logistic: Hessian factorization failed");
      const Vec step = llt.solve(g);
      double t = 1.0;
      const double slope = -g.dot(step);
      for (int ls = 0; ls < 60; ++ls) {
        const Vec cand = th - t * step;
        const double fc = obj.value(cand);
        if (std::isfinite(fc) && fc <= f + 1e-4 * t * slope) {
          th = cand;
          f = fc;
          break;
        }
        t *= 0.5;
      }
      obj.value_and_grad(th, g);
    }
    r.x = th;
    r.value = f;
    r.grad_norm = g.norm();
    r.iterations = it;
    r.converged = r.grad_norm <= tol;
  } else {
    r = lbfgs_minimize(obj, Vec::Zero(p), tol, max_iter);
  }

  if (!r.converged)
  {
    std::ostringstream msg;
    msg << "fit_logistic: did not reach gradient tolerance (grad norm " << r.grad_norm << ")";
    throw NumericalError(msg.str());
  }
  Estimator est;
  est.theta = r.x.transpose();
  est.bias = Vec::Zero(1);
  est.scaling = Scaling::none;
  est.report = {r.iterations, r.grad_norm, r.value, r.converged};
  return est;
}

Estimator fit_multiclass(const Dataset& ds, const ErmProblem& prob, double tol, int max_iter) {
  prob.validate();
  if (prob.loss != Loss::multiclass_xent)
    throw ConfigError("fit_multiclass: problem loss must be multiclass-cross-entropy");
  if (!(prob.lambda > 0.0)) throw ConfigError("fit_multiclass: lambda must be > 0");
  if (ds.label_kind != LabelKind::onehot) throw ConfigError("fit_multiclass: one-hot labels required");
  const int n = ds.n();
  const int p = ds.p();
  const int k = static_cast<int>(ds.y.cols());
  const double dn = static_cast<double>(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p));
  const bool with_bias = prob.fit_bias;
  const int dim = k * p + (with_bias ? k : 0);

  std::vector<int> targets(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) targets[static_cast<std::size_t>(i)] = onehot_target(ds.y.row(i));

  auto unpack = [&](const Vec& v, Mat& W, Vec& b) {
    W = Eigen::Map<const Mat>(v.data(), k, p);
    b = with_bias ? Vec(v.segment(k * p, k)) : Vec::Zero(k);
  };

  Objective obj;
  auto eval = [&, scale](const Vec& v, Vec* grad) {
    Mat W;
    Vec b;
    unpack(v, W, b);
    Mat U = scale * (ds.X * W.transpose());
    U.rowwise() += b.transpose();
    double f = 0.0;
    Mat dU(n, k);
    for (int i = 0; i < n; ++i) {
      const double mx = U.row(i).maxCoeff();
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += std::exp(U(i, j) - mx);
      f += mx + std::log(s) - U(i, targets[static_cast<std::size_t>(i)]);
      if (grad) {
        for (int j = 0; j < k; ++j) dU(i, j) = std::exp(U(i, j) - mx) / s;
        dU(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
      }
    }
    // (1/n)[sum_i l + lambda ||W||_F^2]: the extensive objective normalized
    f = (f + prob.lambda * W.squaredNorm()) / dn;
    if (grad) {
      Mat gW = (scale * (dU.transpose() * ds.X) + 2.0 * prob.lambda * W) / dn;
      grad->resize(dim);
      Eigen::Map<Mat>(grad->data(), k, p) = gW;
      if (with_bias) grad->segment(k * p, k) = dU.colwise().sum().transpose() / dn;
    }
    return f;
  };
  obj.value = [&](const Vec& v) { return eval(v, nullptr); };
  obj.value_and_grad = [&](const Vec& v, Vec& g) { return eval(v, &g); };

  MinimizeResult r = lbfgs_minimize(obj, Vec::Zero(dim), tol, max_iter);
  if (!r.converged)
  {
    std::ostringstream msg;
    msg << "fit_multiclass: did not reach gradient tolerance (grad norm " << r.grad_norm << ")";
    throw NumericalError(msg.str());
  }
  Estimator est;
  Mat W;
  Vec b;
  unpack(r.x, W, b);
  est.theta = W;
  est.bias = b;
  est.scaling = Scaling::inv_sqrt_d;
  est.report = {r.iterations, r.grad_norm, r.value, r.converged};
  return est;
}

Metric metric_from_string(const std::string& s) {
  if (s == "mse") return Metric::mse;
  if (s == "zero-one-argmax") return Metric::zero_one_argmax;
  if (s == "zero-one-sign") return Metric::zero_one_sign;
  throw ConfigError("unknown metric: " + s);
}

std::string metric_to_string(Metric m) {
  switch (m) {
    case Metric::mse: return "mse";
    case Metric::zero_one_argmax: return "zero-one-argmax";
    case Metric::zero_one_sign: return "zero-one-sign";
  }
  throw ConfigError("bad metric");
}

double test_error(const Estimator& est, const Dataset& ds, Metric metric) {
  if (est.p() != ds.p()) throw ConfigError("test_error: dimension mismatch");
  const Mat u = est.preactivations(ds.X);
  const int n = ds.n();
  switch (metric) {
    case Metric::mse: {
      if (ds.y.cols() != static_cast<Eigen::Index>(est.k()))
        throw ConfigError("test_error: mse label shape mismatch");
      return (u - ds.y).squaredNorm() / static_cast<double>(n);
    }
    case Metric::zero_one_sign: {
      if (est.k() != 1) throw ConfigError("test_error: zero-one-sign needs a single row");
      const Vec y = binary_pm1_labels(ds);
      int wrong = 0;
      for (int i = 0; i < n; ++i) {
        const double pred = u(i, 0) >= 0.0 ? 1.0 : -1.0;
        if (pred != y(i)) ++wrong;
      }
      return static_cast<double>(wrong) / static_cast<double>(n);
    }
    case Metric::zero_one_argmax: {
      int wrong = 0;
      for (int i = 0; i < n; ++i) {
        int arg = 0;  // ties to the lowest index
        for (int j = 1; j < est.k(); ++j)
          if (u(i, j) > u(i, arg)) arg = j;
        int truth;
        if (ds.label_kind == LabelKind::onehot)
          truth = onehot_target(ds.y.row(i));
        else if (ds.label_kind == LabelKind::cls)
          truth = static_cast<int>(ds.y(i, 0));
        else
          throw ConfigError("test_error: zero-one-argmax needs class labels");
        if (arg != truth) ++wrong;
      }
      return static_cast<double>(wrong) / static_cast<double>(n);
    }
  }
  throw ConfigError("bad metric");
}

std::string estimator_to_json(const Estimator& est) {
  json root;
  root["k"] = est.k();
  root["p"] = est.p();
  std::vector<double> theta;
  theta.reserve(static_cast<std::size_t>(est.theta.size()));
  for (int i = 0; i < est.k(); ++i)
    for (int j = 0; j < est.p(); ++j) theta.push_back(est.theta(i, j));
  root["theta"] = theta;  // row-major
  root["bias"] = std::vector<double>(est.bias.data(), est.bias.data() + est.bias.size());
  root["scaling"] = est.scaling == Scaling::inv_sqrt_d ? "inv-sqrt-d" : "none";
  root["report"] = {{"iterations", est.report.iterations},
                    {"grad_norm", est.report.grad_norm},
                    {"objective", est.report.objective},
                    {"converged", est.report.converged}};
  return root.dump(2);
}

Estimator estimator_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("estimator JSON parse error: ") + e.what());
  }
  Estimator est;
  const int k = root.at("k").get<int>();
  const int p = root.at("p").get<int>();
  const auto theta = root.at("theta").get<std::vector<double>>();
  if (static_cast<int>(theta.size()) != k * p) throw ConfigError("estimator JSON: theta size mismatch");
  est.theta.resize(k, p);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < p; ++j) est.theta(i, j) = theta[static_cast<std::size_t>(i) * p + j];
  const auto bias = root.at("bias").get<std::vector<double>>();
  est.bias = Eigen::Map<const Vec>(bias.data(), static_cast<Eigen::Index>(bias.size()));
  est.scaling = root.value("scaling", "none") == std::string("inv-sqrt-d") ? Scaling::inv_sqrt_d
                                                                           : Scaling::none;
  if (root.contains("report")) {
    est.report.iterations = root["report"].value("iterations", 0);
    est.report.grad_norm = root["report"].value("grad_norm", 0.0);
    est.report.objective = root["report"].value("objective", 0.0);
    est.report.converged = root["report"].value("converged", false);
  }
  return est;
}

std::string erm_problem_to_json(const ErmProblem& prob) {
  json root;
  root["loss"] = loss_to_string(prob.loss);
  root["regularizer"] = "l2";
  root["lambda"] = prob.lambda;
  root["fit_bias"] = prob.fit_bias;
  root["scaling"] = prob.scaling == Scaling::inv_sqrt_d ? "inv-sqrt-d" : "none";
  return root.dump(2);
}

ErmProblem erm_problem_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("problem JSON parse error: ") + e.what());
  }
  ErmProblem prob;
  try {
    prob.loss = loss_from_string(root.at("loss").get<std::string>());
    prob.lambda = root.at("lambda").get<double>();
    prob.fit_bias = root.value("fit_bias", false);
    const std::string scaling = root.value("scaling", "none");
    if (scaling == "inv-sqrt-d")
      prob.scaling = Scaling::inv_sqrt_d;
    else if (scaling == "none")
      prob.scaling = Scaling::none;
    else
      throw ConfigError("problem JSON: unknown scaling " + scaling);
    const std::string reg = root.value("regularizer", "l2");
    if (reg != "l2") throw ConfigError("problem JSON: unsupported regularizer " + reg);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("problem JSON structure error: ") + e.what());
  }
  prob.validate();
  return prob;
}

}  // namespace ulab
