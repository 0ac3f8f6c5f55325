#pragma once

#include <cmath>
#include <limits>

#include "estkit/bayes/beliefs.hpp"
#include "estkit/core/linalg.hpp"
#include "estkit/core/rng.hpp"

namespace estkit {

// Below this every raw weight exp(log-likelihood) underflows to zero.
inline constexpr double kWeightUnderflowLogLik = -745.0;

inline ParticleSet sample_particles(const Vec& mean, const Mat& cov, Index size, Rng& rng) {
  if (size < 1) throw ConfigError("a particle set needs at least one particle");
  const GaussianNoise noise(cov);
  ParticleSet ps;
  ps.particles.resize(size, mean.size());
  for (Index i = 0; i < size; ++i) ps.particles.row(i) = (mean + noise.sample(rng)).transpose();
  ps.weights = Vec::Constant(size, 1.0 / static_cast<double>(size));
  return ps;
}

// Multiplies the current weights by p(y | x_i) and normalizes, in log space.
inline ParticleSet pf_weight(const ParticleSet& ps, const Vec& y, const SystemModel& sys, const FilterNoise& noise) {
  if (y.size() != sys.obs_dim) throw ShapeError("observation has wrong dimension");
  const GaussianLogDensity density(noise.obs_cov);
  const Index n = ps.size();
  Vec logw(n);
  double max_loglik = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    const Vec x = ps.particles.row(i).transpose();
    const double ll = density(y - sys.observe(x));
    max_loglik = std::max(max_loglik, std::isnan(ll) ? max_loglik : ll);
    logw[i] = ll + std::log(ps.weights[i]);
  }
  const double top = logw.maxCoeff();
  if (!std::isfinite(max_loglik) || !std::isfinite(top) || max_loglik < kWeightUnderflowLogLik)
    throw WeightCollapseError(max_loglik);
  ParticleSet out{ps.particles, (logw.array() - top).exp().matrix()};
  out.weights /= out.weights.sum();
  return out;
}

// Bootstrap proposal: x_i ~ N(f(x_i), Q).
inline ParticleSet pf_propagate(const ParticleSet& ps, const SystemModel& sys, const FilterNoise& noise, Rng& rng) {
  const GaussianNoise process(noise.process_cov);
  ParticleSet out;
  out.particles.resize(ps.size(), sys.state_dim);
  for (Index i = 0; i < ps.size(); ++i) {
    const Vec x = ps.particles.row(i).transpose();
    out.particles.row(i) = (step_deterministic(sys, x) + process.sample(rng)).transpose();
  }
  out.weights = ps.weights;
  return out;
}

// Systematic resampling; returns the selected indices.
inline std::vector<Index> systematic_indices(const Vec& weights, Rng& rng) {
  const Index n = weights.size();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  const double step = 1.0 / static_cast<double>(n);
  double u = rng.uniform() * step;
  double cumulative = weights[0];
  Index j = 0;
  for (Index i = 0; i < n; ++i) {
    while (u > cumulative && j + 1 < n) cumulative += weights[++j];
    idx[static_cast<std::size_t>(i)] = j;
    u += step;
  }
  return idx;
}

inline ParticleSet systematic_resample(const ParticleSet& ps, Rng& rng) {
  const auto idx = systematic_indices(ps.weights, rng);
  ParticleSet out;
  out.particles.resize(ps.size(), ps.particles.cols());
  for (Index i = 0; i < ps.size(); ++i) out.particles.row(i) = ps.particles.row(idx[static_cast<std::size_t>(i)]);
  out.weights = Vec::Constant(ps.size(), 1.0 / static_cast<double>(ps.size()));
  return out;
}

// Sample, weight, resample. The point estimate is the weighted mean of the
// set returned by pf_weight, before resampling.
inline ParticleSet pf_step(const ParticleSet& ps, const Vec& y, const SystemModel& sys, const FilterNoise& noise,
                           Rng& rng, Vec* estimate = nullptr) {
  const ParticleSet weighted = pf_weight(pf_propagate(ps, sys, noise, rng), y, sys, noise);
  if (estimate) *estimate = weighted.weighted_mean();
  return systematic_resample(weighted, rng);
}

inline ParticleSet pf_step(const ParticleSet& ps, const Vec& y, const SystemModel& sys, Rng& rng) {
  return pf_step(ps, y, sys, assumed_noise(sys), rng);
}

}  // namespace estkit
