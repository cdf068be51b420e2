// Dense linear-algebra helpers on top of Eigen.
#pragma once

#include <Eigen/Dense>

#include "ulab/common.hpp"

namespace ulab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Lower-triangular factor L with L*L^T = S for symmetric PSD S. Tolerates
// semidefinite inputs (zero pivots give zero columns). Pivots below
// -tol_scale * max_diag fail.
Mat psd_cholesky_strict(const Mat& S, double tol_scale = 1e-12);

// Sampling factorization: plain PSD Cholesky first; on failure add
// jitter 1e-10 * tr(S)/p to the diagonal and retry up to 3 times, then throw.
Mat sampling_factor(const Mat& S);

double max_asymmetry(const Mat& S);

// Eigenvalue clip at `floor` (symmetric input within 1e-10), symmetric output.
Mat psd_project(const Mat& S, double floor = 0.0);

double min_eigenvalue(const Mat& S);

// PSD square root of a small symmetric matrix (negative eigenvalues below
// -1e-8*scale are an error; small negatives clip to zero).
Mat psd_sqrt(const Mat& S);

// Operator (spectral) norm via power iteration on S^T S.
double operator_norm(const Mat& A, int iters = 50);

}  // namespace ulab
