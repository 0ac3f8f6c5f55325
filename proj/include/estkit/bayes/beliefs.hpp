#pragma once

#include "estkit/core/error.hpp"
#include "estkit/core/types.hpp"
#include "estkit/systems/system.hpp"

namespace estkit {

struct GaussianBelief {
  Vec mean;
  Mat cov;
};

// One member per row.
struct Ensemble {
  Series members;

  Index size() const { return members.rows(); }
  Vec mean() const { return members.colwise().mean().transpose(); }
};

struct ParticleSet {
  Series particles;  // one particle per row
  Vec weights;       // normalized

  Index size() const { return particles.rows(); }
  Vec weighted_mean() const { return (particles.transpose() * weights); }
};

// Noise model a filter assumes. It may differ from the data-generating one
// (inflation, covariance mismatch).
struct FilterNoise {
  Mat process_cov;  // per-step
  Mat obs_cov;
};

inline FilterNoise assumed_noise(const SystemModel& sys, double inflation = 1.0) {
  if (!(inflation > 0.0)) throw ConfigError("inflation factor must be positive");
  return FilterNoise{inflation * sys.step_process_cov(), sys.obs_cov};
}

}  // namespace estkit
