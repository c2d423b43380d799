#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "fscil/error.hpp"
#include "fscil/rng.hpp"
#include "fscil/types.hpp"

namespace fscil {

/// Mean and population (1/m) covariance of the rows of `samples`.
inline ClassStats estimate_stats(const Matrix& samples, ClassId class_id) {
  const Eigen::Index m = samples.rows();
  if (m == 0) {
    throw Error(ErrorCode::EmptyClass, "class " + std::to_string(class_id) + " has no samples",
                {class_id});
  }
  Vector mean = samples.colwise().mean().transpose();
  const Matrix centered = samples.rowwise() - mean.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(m);
  return ClassStats(class_id, static_cast<std::size_t>(m), std::move(mean), cov);
}

/// cov + gamma * I
inline Matrix shrink(const Matrix& cov, double gamma) {
  if (gamma < 0.0) throw Error(ErrorCode::NegativeGamma, "gamma must be >= 0");
  Matrix out = cov;
  out.diagonal().array() += gamma;
  return out;
}

/// out(i, j) = cov(i, j) / (sqrt(cov(i, i)) * sqrt(cov(j, j))), unit diagonal.
inline Matrix correlation_normalize(const Matrix& cov) {
  if (cov.rows() != cov.cols()) throw Error(ErrorCode::DimensionMismatch, "matrix is not square");
  const Eigen::Index d = cov.rows();
  Vector sd(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double v = cov(i, i);
    if (!(v > 0.0)) {
      throw Error(ErrorCode::NonPositiveDiagonal,
                  "diagonal entry " + std::to_string(i) + " is not positive", {i});
    }
    sd(i) = std::sqrt(v);
  }
  Matrix out(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) out(i, j) = cov(i, j) / (sd(i) * sd(j));
    out(j, j) = 1.0;
  }
  return out;
}

/// (x - mu)^T * precision * (x - mu)
template <typename DerivedX, typename DerivedMu>
double mahalanobis_sq(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedMu>& mu,
                      const Matrix& precision) {
  if (x.size() != mu.size() || precision.rows() != x.size() || precision.cols() != x.size()) {
    throw Error(ErrorCode::DimensionMismatch, "mahalanobis operands disagree in dimension");
  }
  const Vector diff = x - mu;
  return diff.dot(precision * diff);
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor.
inline Matrix invert_spd(const Matrix& mat) {
  if (mat.rows() != mat.cols()) throw Error(ErrorCode::DimensionMismatch, "matrix is not square");
  Eigen::LLT<Matrix> llt(mat);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite, "Cholesky factorization failed");
  }
  const Matrix inv = llt.solve(Matrix::Identity(mat.rows(), mat.cols()));
  return symmetrized(inv);
}

inline Vector softmax(const Vector& v) {
  if (v.size() == 0) throw Error(ErrorCode::EmptyVector, "softmax of an empty vector");
  const double top = v.maxCoeff();
  Vector e = (v.array() - top).exp().matrix();
  return e / e.sum();
}

/// Lower-triangular L with L * L^T == cov (+ jitter). A Cholesky failure is
/// retried with cov + eps * I, eps = 1e-10 * trace/d growing tenfold up to
/// 1e-4 * trace/d. The all-zero matrix factors to the zero matrix.
inline Matrix sampling_factor(const Matrix& cov) {
  if (cov.rows() != cov.cols()) throw Error(ErrorCode::DimensionMismatch, "matrix is not square");
  const Eigen::Index d = cov.rows();
  if (d == 0) return Matrix(0, 0);
  if (cov.isZero(0.0)) return Matrix::Zero(d, d);

  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();

  const double scale = cov.trace() / static_cast<double>(d);
  if (!(scale > 0.0)) {
    throw Error(ErrorCode::IrreparablyIndefinite, "covariance has non-positive trace");
  }
  for (double eps = 1e-10 * scale; eps <= 1e-4 * scale * (1.0 + 1e-9); eps *= 10.0) {
    llt.compute(shrink(cov, eps));
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  throw Error(ErrorCode::IrreparablyIndefinite, "covariance not factorizable after maximum jitter");
}

/// n draws from N(mean, cov) as rows. Standard normals are consumed row by row.
inline Matrix sample_gaussian(const Vector& mean, const Matrix& cov, std::size_t n, Rng& rng) {
  const Eigen::Index d = mean.size();
  if (cov.rows() != d || cov.cols() != d) {
    throw Error(ErrorCode::DimensionMismatch, "covariance shape does not match mean length");
  }
  const Matrix lower = sampling_factor(cov);
  Matrix z(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z(i, j) = rng.normal();
  }
  Matrix out = z * lower.transpose();
  out.rowwise() += mean.transpose();
  return out;
}

/// Smallest eigenvalue tolerance used for PSD checks: -1e-8 * trace/d.
inline double psd_tolerance(const Matrix& cov) {
  const double d = static_cast<double>(std::max<Eigen::Index>(cov.rows(), 1));
  return -1e-8 * std::abs(cov.trace()) / d;
}

}  // namespace fscil
