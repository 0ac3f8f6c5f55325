#pragma once

#include "estkit/bayes/beliefs.hpp"
#include "estkit/core/linalg.hpp"

namespace estkit {

namespace detail {

// Innovation-form update shared by KF and EKF. `predicted_obs` is H mu for
// the KF and h(mu) for the EKF.
inline GaussianBelief gaussian_update(const GaussianBelief& prior, const Vec& y, const Vec& predicted_obs,
                                      const Mat& h, const Mat& r, int* repairs) {
  if (y.size() != h.rows()) throw ShapeError("observation has wrong dimension");
  const Mat ph = prior.cov * h.transpose();
  Mat s = h * ph + r;
  symmetrize(s);
  Eigen::LDLT<Mat> ldlt(s);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      (ldlt.vectorD().array().abs() <= 1e-300).any())
    throw NumericalError("singular innovation covariance");
  const Mat gain = ldlt.solve(ph.transpose()).transpose();

  GaussianBelief post;
  post.mean = prior.mean + gain * (y - predicted_obs);
  const Index m = prior.mean.size();
  const Mat ikh = Mat::Identity(m, m) - gain * h;
  post.cov = ikh * prior.cov * ikh.transpose() + gain * r * gain.transpose();
  symmetrize(post.cov);
  if (min_eigenvalue(post.cov) < 0.0) {
    repair_psd(post.cov);
    if (repairs) ++*repairs;
  }
  return post;
}

}  // namespace detail

// Linear prediction: mu <- F mu, Sigma <- F Sigma F^T + Q.
inline GaussianBelief kf_predict(const GaussianBelief& belief, const SystemModel& sys, const FilterNoise& noise) {
  if (!sys.is_linear()) throw ConfigError("the Kalman filter requires a linear system; use ekf");
  const Mat f = jacobians(sys, belief.mean).state;
  GaussianBelief pred{f * belief.mean, f * belief.cov * f.transpose() + noise.process_cov};
  symmetrize(pred.cov);
  return pred;
}

inline GaussianBelief kf_update(const GaussianBelief& prior, const Vec& y, const SystemModel& sys,
                                const FilterNoise& noise, int* repairs = nullptr) {
  if (!sys.obs_matrix) throw ConfigError("the Kalman filter requires a linear observation map");
  const Mat& h = *sys.obs_matrix;
  return detail::gaussian_update(prior, y, h * prior.mean, h, noise.obs_cov, repairs);
}

inline GaussianBelief kf_step(const GaussianBelief& belief, const Vec& y, const SystemModel& sys,
                              const FilterNoise& noise, int* repairs = nullptr) {
  return kf_update(kf_predict(belief, sys, noise), y, sys, noise, repairs);
}

inline GaussianBelief kf_step(const GaussianBelief& belief, const Vec& y, const SystemModel& sys) {
  return kf_step(belief, y, sys, assumed_noise(sys));
}

// First-order linearization around the current mean.
inline GaussianBelief ekf_predict(const GaussianBelief& belief, const SystemModel& sys, const FilterNoise& noise) {
  const Mat f = jacobians(sys, belief.mean).state;
  GaussianBelief pred{step_deterministic(sys, belief.mean), f * belief.cov * f.transpose() + noise.process_cov};
  symmetrize(pred.cov);
  return pred;
}

inline GaussianBelief ekf_update(const GaussianBelief& prior, const Vec& y, const SystemModel& sys,
                                 const FilterNoise& noise, int* repairs = nullptr) {
  const Mat h = jacobians(sys, prior.mean).obs;
  return detail::gaussian_update(prior, y, sys.observe(prior.mean), h, noise.obs_cov, repairs);
}

inline GaussianBelief ekf_step(const GaussianBelief& belief, const Vec& y, const SystemModel& sys,
                               const FilterNoise& noise, int* repairs = nullptr) {
  return ekf_update(ekf_predict(belief, sys, noise), y, sys, noise, repairs);
}

inline GaussianBelief ekf_step(const GaussianBelief& belief, const Vec& y, const SystemModel& sys) {
  return ekf_step(belief, y, sys, assumed_noise(sys));
}

}  // namespace estkit
