#pragma once

#include "estkit/bayes/beliefs.hpp"
#include "estkit/core/linalg.hpp"
#include "estkit/core/rng.hpp"

namespace estkit {

struct EnkfStats {
  int jitter_repairs = 0;
};

inline Ensemble sample_ensemble(const Vec& mean, const Mat& cov, Index size, Rng& rng) {
  const GaussianNoise noise(cov);
  Ensemble ens;
  ens.members.resize(size, mean.size());
  for (Index i = 0; i < size; ++i) ens.members.row(i) = (mean + noise.sample(rng)).transpose();
  return ens;
}

// Pushes every member through f and adds process noise.
inline Ensemble enkf_predict(const Ensemble& ens, const SystemModel& sys, const FilterNoise& noise, Rng& rng) {
  const GaussianNoise process(noise.process_cov);
  Ensemble out;
  out.members.resize(ens.size(), sys.state_dim);
  for (Index i = 0; i < ens.size(); ++i) {
    const Vec x = ens.members.row(i).transpose();
    out.members.row(i) = (step_deterministic(sys, x) + process.sample(rng)).transpose();
  }
  return out;
}

// Stochastic (perturbed-observation) analysis step with sample statistics.
inline Ensemble enkf_update(const Ensemble& ens, const Vec& y, const SystemModel& sys, const FilterNoise& noise,
                            Rng& rng, EnkfStats* stats = nullptr) {
  const Index n = ens.size();
  if (n < 2) throw ConfigError("an ensemble needs at least two members");
  if (y.size() != sys.obs_dim) throw ShapeError("observation has wrong dimension");
  const GaussianNoise obs_noise(noise.obs_cov);

  Series predicted(n, sys.obs_dim);
  for (Index i = 0; i < n; ++i) {
    const Vec x = ens.members.row(i).transpose();
    predicted.row(i) = (sys.observe(x) + obs_noise.sample(rng)).transpose();
  }
  const Eigen::RowVectorXd x_mean = ens.members.colwise().mean();
  const Eigen::RowVectorXd y_mean = predicted.colwise().mean();
  const Mat dx = ens.members.rowwise() - x_mean;
  const Mat dy = predicted.rowwise() - y_mean;
  const double denom = static_cast<double>(n - 1);
  const Mat cross = dx.transpose() * dy / denom;  // M x N
  Mat var = dy.transpose() * dy / denom;          // N x N
  symmetrize(var);

  Eigen::LLT<Mat> llt(var);
  if (llt.info() != Eigen::Success) {
    const double scale = var.trace() / static_cast<double>(var.rows());
    const double lambda = 1e-8 * (scale > 0.0 ? scale : 1.0);
    var.diagonal().array() += lambda;
    llt.compute(var);
    if (stats) ++stats->jitter_repairs;
    if (llt.info() != Eigen::Success) throw NumericalError("ensemble observation covariance is singular");
  }
  const Mat gain = llt.solve(cross.transpose()).transpose();  // M x N

  Ensemble out;
  const Mat innovations = (-predicted).rowwise() + y.transpose();  // n x N
  out.members = ens.members + innovations * gain.transpose();
  if (!out.members.allFinite()) throw NumericalError("ensemble became non-finite");
  return out;
}

inline Ensemble enkf_step(const Ensemble& ens, const Vec& y, const SystemModel& sys, const FilterNoise& noise,
                          Rng& rng, EnkfStats* stats = nullptr) {
  return enkf_update(enkf_predict(ens, sys, noise, rng), y, sys, noise, rng, stats);
}

inline Ensemble enkf_step(const Ensemble& ens, const Vec& y, const SystemModel& sys, Rng& rng) {
  return enkf_step(ens, y, sys, assumed_noise(sys), rng);
}

}  // namespace estkit
