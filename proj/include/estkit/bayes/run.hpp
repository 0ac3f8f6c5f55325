#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "estkit/bayes/ensemble.hpp"
#include "estkit/bayes/kalman.hpp"
#include "estkit/bayes/particle.hpp"

namespace estkit {

enum class FilterKind { kf, ekf, enkf, pf };

inline FilterKind parse_filter_kind(std::string_view s) {
  if (s == "kf") return FilterKind::kf;
  if (s == "ekf") return FilterKind::ekf;
  if (s == "enkf") return FilterKind::enkf;
  if (s == "pf") return FilterKind::pf;
  throw ConfigError("unknown filter '" + std::string(s) + "' (expected kf, ekf, enkf or pf)");
}

inline std::string to_string(FilterKind k) {
  switch (k) {
    case FilterKind::kf: return "kf";
    case FilterKind::ekf: return "ekf";
    case FilterKind::enkf: return "enkf";
    case FilterKind::pf: return "pf";
  }
  return "?";
}

struct FilterConfig {
  Index ensemble_size = 1000;
  Index particles = 1000;
  double inflation = 1.0;              // multiplies the assumed per-step Q
  std::optional<Mat> assumed_obs_cov;  // defaults to the system's R
  std::optional<Vec> init_mean;        // defaults to the system's mu0
  std::optional<Mat> init_cov;         // defaults to I
};

struct FilterRun {
  Series estimates;  // T x M
  double runtime_ms_per_step = 0.0;
  std::vector<double> step_ms;
  int covariance_repairs = 0;
};

// A step failed; carries the step index and the underlying reason.
class FilterFailure : public Error {
 public:
  FilterFailure(const std::string& what, std::size_t step)
      : Error(what + " (filter step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Runs one filter over a trajectory's observations. The first observation
// updates the initial belief directly; later ones follow a predict step.
// Timing covers the step loop only.
inline FilterRun run_filter(FilterKind kind, const Trajectory& traj, const SystemModel& sys,
                            const FilterConfig& cfg, std::uint64_t seed) {
  if (kind == FilterKind::kf && !sys.is_linear())
    throw ConfigError("kf is not applicable to nonlinear system " + sys.name);
  FilterNoise noise = assumed_noise(sys, cfg.inflation);
  if (cfg.assumed_obs_cov) noise.obs_cov = *cfg.assumed_obs_cov;
  const Vec mu0 = cfg.init_mean ? *cfg.init_mean : sys.init.mean;
  const Mat sigma0 = cfg.init_cov ? *cfg.init_cov : Mat::Identity(sys.state_dim, sys.state_dim);

  Rng rng(seed);
  const Index steps = traj.length();
  FilterRun run;
  run.estimates.resize(steps, sys.state_dim);
  run.step_ms.reserve(static_cast<std::size_t>(steps));

  GaussianBelief belief{mu0, sigma0};
  Ensemble ensemble;
  ParticleSet particles;
  EnkfStats enkf_stats;
  if (kind == FilterKind::enkf) ensemble = sample_ensemble(mu0, sigma0, cfg.ensemble_size, rng);
  if (kind == FilterKind::pf) particles = sample_particles(mu0, sigma0, cfg.particles, rng);

  using clock = std::chrono::steady_clock;
  double total_ms = 0.0;
  for (Index t = 0; t < steps; ++t) {
    const Vec y = traj.observations.row(t).transpose();
    const auto start = clock::now();
    try {
      switch (kind) {
        case FilterKind::kf:
          if (t > 0) belief = kf_predict(belief, sys, noise);
          belief = kf_update(belief, y, sys, noise, &run.covariance_repairs);
          run.estimates.row(t) = belief.mean.transpose();
          break;
        case FilterKind::ekf:
          if (t > 0) belief = ekf_predict(belief, sys, noise);
          belief = ekf_update(belief, y, sys, noise, &run.covariance_repairs);
          run.estimates.row(t) = belief.mean.transpose();
          break;
        case FilterKind::enkf:
          if (t > 0) ensemble = enkf_predict(ensemble, sys, noise, rng);
          ensemble = enkf_update(ensemble, y, sys, noise, rng, &enkf_stats);
          run.estimates.row(t) = ensemble.mean().transpose();
          break;
        case FilterKind::pf: {
          if (t > 0) particles = pf_propagate(particles, sys, noise, rng);
          const ParticleSet weighted = pf_weight(particles, y, sys, noise);
          run.estimates.row(t) = weighted.weighted_mean().transpose();
          particles = systematic_resample(weighted, rng);
          break;
        }
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw FilterFailure(to_string(kind) + ": " + e.what(), static_cast<std::size_t>(t));
    }
    const double ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    run.step_ms.push_back(ms);
    total_ms += ms;
  }
  run.covariance_repairs += enkf_stats.jitter_repairs;
  run.runtime_ms_per_step = steps > 0 ? total_ms / static_cast<double>(steps) : 0.0;
  return run;
}

}  // namespace estkit
