#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>

#include "estkit/core/error.hpp"
#include "estkit/core/rng.hpp"
#include "estkit/core/types.hpp"

namespace estkit {

inline bool is_diagonal(const Mat& m) {
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i)
      if (i != j && m(i, j) != 0.0) return false;
  return true;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline void symmetrize(Mat& m) { m = 0.5 * (m + m.transpose()).eval(); }

// Smallest eigenvalue of a symmetric matrix.
inline double min_eigenvalue(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool is_psd(const Mat& m, double rel_tol = 1e-8) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  const double floor = -rel_tol * std::max(1.0, std::abs(m.trace()));
  return min_eigenvalue(m) >= floor;
}

// Clips negative eigenvalues to zero and adds `jitter` to the diagonal.
// Returns true when a repair was needed.
inline bool repair_psd(Mat& m, double jitter = 1e-10) {
  symmetrize(m);
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  if (es.eigenvalues().minCoeff() >= 0.0) return false;
  Vec lambda = es.eigenvalues().cwiseMax(0.0);
  m = es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
  symmetrize(m);
  m.diagonal().array() += jitter;
  return true;
}

// Any S with S S^T = cov. Exact square roots for diagonal input; zero
// covariance gives a zero factor.
inline Mat cov_factor(const Mat& cov) {
  if (cov.rows() != cov.cols()) throw ShapeError("covariance must be square");
  if (is_diagonal(cov)) {
    Vec d = cov.diagonal();
    if ((d.array() < 0.0).any()) throw ConfigError("covariance has a negative variance");
    return d.cwiseSqrt().asDiagonal();
  }
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, std::abs(cov.trace())))
    throw ConfigError("covariance is not positive semi-definite");
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

// Zero-mean Gaussian draws with a fixed covariance.
class GaussianNoise {
 public:
  GaussianNoise() = default;
  explicit GaussianNoise(const Mat& cov) : factor_(cov_factor(cov)), diagonal_(is_diagonal(factor_)) {}

  Index dim() const { return factor_.rows(); }

  Vec sample(Rng& rng) const {
    Vec z = rng.normal_vec(factor_.cols());
    if (diagonal_) return factor_.diagonal().cwiseProduct(z);
    return factor_ * z;
  }

 private:
  Mat factor_;
  bool diagonal_ = true;
};

// log N(r; 0, cov) for many residuals, with the factorization done once.
class GaussianLogDensity {
 public:
  GaussianLogDensity() = default;
  explicit GaussianLogDensity(const Mat& cov) : llt_(cov) {
    if (llt_.info() != Eigen::Success)
      throw NumericalError("observation covariance is not positive definite");
    const Mat l = llt_.matrixL();
    log_norm_ = -0.5 * static_cast<double>(cov.rows()) * std::log(2.0 * M_PI) -
                l.diagonal().array().log().sum();
  }

  double operator()(const Vec& residual) const {
    Vec w = llt_.matrixL().solve(residual);
    return log_norm_ - 0.5 * w.squaredNorm();
  }

 private:
  Eigen::LLT<Mat> llt_;
  double log_norm_ = 0.0;
};

}  // namespace estkit
