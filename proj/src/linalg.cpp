#include "ulab/linalg.hpp"

#include <cmath>

namespace ulab {

Mat psd_cholesky_strict(const Mat& S, double tol_scale) {
  const Eigen::Index p = S.rows();
  if (S.cols() != p) throw NumericalError("psd_cholesky: matrix not square");
  double max_diag = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) max_diag = std::max(max_diag, std::abs(S(i, i)));
  const double tol = tol_scale * std::max(max_diag, 1.0);

  Mat L = Mat::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double d = S(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= L(j, k) * L(j, k);
    if (d < -tol) throw NumericalError("psd_cholesky: negative pivot");
    if (d <= tol) {
      // semidefinite direction: zero column
      continue;
    }
    const double r = std::sqrt(d);
    L(j, j) = r;
    for (Eigen::Index i = j + 1; i < p; ++i) {
      double s = S(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      L(i, j) = s / r;
    }
  }
  return L;
}

Mat sampling_factor(const Mat& S) {
  const Eigen::Index p = S.rows();
  const double jitter = 1e-10 * S.trace() / static_cast<double>(p);
  Mat work = S;
  for (int attempt = 0; attempt < 4; ++attempt) {
    try {
      return psd_cholesky_strict(work);
    } catch (const NumericalError&) {
      if (attempt == 3) break;
      work.diagonal().array() += jitter;
    }
  }
  throw NumericalError("covariance factorization failed after jitter retries");
}

double max_asymmetry(const Mat& S) {
  return (S - S.transpose()).cwiseAbs().maxCoeff();
}

Mat psd_project(const Mat& S, double floor) {
  if (S.rows() != S.cols()) throw NumericalError("psd_project: matrix not square");
  if (S.size() == 0) return S;
  if (max_asymmetry(S) > 1e-10 * std::max(1.0, S.cwiseAbs().maxCoeff()))
    throw NumericalError("psd_project: input not symmetric within tolerance");
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("psd_project: eigendecomposition failed");
  Vec lam = es.eigenvalues().cwiseMax(floor);
  Mat out = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

double min_eigenvalue(const Mat& S) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()));
  return es.eigenvalues().minCoeff();
}

Mat psd_sqrt(const Mat& S) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()));
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-8 * scale)
    throw NumericalError("psd_sqrt: matrix has a significantly negative eigenvalue");
  Vec lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

double operator_norm(const Mat& A, int iters) {
  if (A.size() == 0) return 0.0;
  Vec v = Vec::Ones(A.cols()).normalized();
  double norm = 0.0;
  for (int it = 0; it < iters; ++it) {
    Vec w = A.transpose() * (A * v);
    const double n = w.norm();
    if (n == 0.0) return 0.0;
    v = w / n;
    norm = std::sqrt(n);
  }
  return norm;
}

}  // namespace ulab
