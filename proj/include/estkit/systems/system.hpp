#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "estkit/core/error.hpp"
#include "estkit/core/linalg.hpp"
#include "estkit/core/rng.hpp"
#include "estkit/core/types.hpp"
#include "estkit/systems/ode.hpp"

namespace estkit {

// How the tabulated process covariance maps onto one discrete step.
// per_unit_time: Q is a diffusion rate and each step adds N(0, Q * dt).
// per_step: each step adds N(0, Q).
enum class NoiseScaling { per_step, per_unit_time };

struct InitialState {
  Vec mean;
  double variance = 1.0;  // x0 ~ N(mean, variance * I)
  int burn_in = 0;        // noise-free steps discarded before recording
};

using VectorField = std::function<Vec(const Vec&)>;

struct SystemModel {
  std::string name;
  std::string domain;
  std::string state_semantics;
  std::string obs_semantics;
  Index state_dim = 0;
  Index obs_dim = 0;
  VectorField drift;    // continuous-time right-hand side
  VectorField observe;  // noiseless observation h(x)
  std::optional<Mat> linear_drift;  // A when drift(x) == A x
  std::optional<Mat> obs_matrix;    // H when observe(x) == H x
  Mat process_cov;
  Mat obs_cov;
  double dt = 0.01;
  Discretization discretization = Discretization::rk4;
  NoiseScaling noise_scaling = NoiseScaling::per_unit_time;
  InitialState init;
  std::map<std::string, double> params;

  // Covariance of the noise added after one discrete step.
  Mat step_process_cov() const {
    return noise_scaling == NoiseScaling::per_unit_time ? Mat(process_cov * dt) : process_cov;
  }

  bool is_linear() const { return linear_drift.has_value() && obs_matrix.has_value(); }
};

struct Trajectory {
  Series states;        // T x M
  Series observations;  // T x N
  std::uint64_t seed = 0;

  Index length() const { return states.rows(); }
};

struct Jacobians {
  Mat state;  // d f(x) / dx of the one-step map, M x M
  Mat obs;    // d h(x) / dx, N x M
};

namespace detail {

inline double take(std::map<std::string, double>& overrides, const std::string& key, double fallback) {
  auto it = overrides.find(key);
  if (it == overrides.end()) return fallback;
  double v = it->second;
  overrides.erase(it);
  return v;
}

inline Vec periodic_lorenz96(const Vec& x, double forcing) {
  const Index m = x.size();
  Vec d(m);
  for (Index j = 0; j < m; ++j) {
    const double xp1 = x[(j + 1) % m];
    const double xm1 = x[(j + m - 1) % m];
    const double xm2 = x[(j + m - 2) % m];
    d[j] = (xp1 - xm2) * xm1 - x[j] + forcing;
  }
  return d;
}

}  // namespace detail

inline const std::vector<std::string>& system_names() {
  static const std::vector<std::string> names = {"tracking", "selkov",   "oscillator", "hopf",
                                                 "pendulum", "lorenz96", "vl20"};
  return names;
}

// Builds one of the seven benchmark systems. Recognized overrides:
//   all systems: q (Q = q I), r (R = r I), dt, burn_in, init_var, noise_per_step (0/1)
//   selkov, oscillator: a, b      hopf: mu, omega, A
//   pendulum: m1, m2, l1, l2, g   lorenz96: F, dim
//   vl20: F, G, gamma, eps, half_dim
inline SystemModel make_system(std::string_view name, std::map<std::string, double> overrides = {}) {
  using detail::take;
  SystemModel s;
  s.name = std::string(name);
  double q = 1.0, r = 1.0, dt = 0.01;
  double init_var = 1.0;
  int burn_in = 0;

  if (name == "tracking") {
    s.domain = "Target Tracking";
    s.state_semantics = "2-D position and velocity of a moving object";
    s.obs_semantics = "noisy positions";
    s.state_dim = 4;
    s.obs_dim = 2;
    q = 0.1;
    r = 10.0;
    dt = 0.1;
    s.discretization = Discretization::forward_euler;
    Mat a = Mat::Zero(4, 4);
    a(0, 2) = 1.0;
    a(1, 3) = 1.0;
    s.linear_drift = a;
    s.drift = [a](const Vec& x) -> Vec { return a * x; };
    Mat h = Mat::Zero(2, 4);
    h(0, 0) = 1.0;
    h(1, 1) = 1.0;
    s.obs_matrix = h;
    s.init.mean = Vec::Zero(4);
  } else if (name == "selkov") {
    s.domain = "Glycolysis Process";
    s.state_semantics = "two glycolytic metabolite concentrations";
    s.obs_semantics = "noisy concentrations";
    s.state_dim = s.obs_dim = 2;
    const double a = s.params["a"] = take(overrides, "a", 0.08);
    const double b = s.params["b"] = take(overrides, "b", 0.6);
    s.drift = [a, b](const Vec& x) -> Vec {
      Vec d(2);
      const double sq = x[0] * x[0] * x[1];
      d[0] = -x[0] + a * x[1] + sq;
      d[1] = b - a * x[1] - sq;
      return d;
    };
    s.init.mean = Vec::Ones(2);
  } else if (name == "oscillator") {
    s.domain = "Oscillatory Motion";
    s.state_semantics = "positions of a damped cubic oscillator";
    s.obs_semantics = "noisy positions";
    s.state_dim = s.obs_dim = 2;
    const double a = s.params["a"] = take(overrides, "a", 0.1);
    const double b = s.params["b"] = take(overrides, "b", 2.0);
    s.drift = [a, b](const Vec& x) -> Vec {
      Vec d(2);
      const double c0 = x[0] * x[0] * x[0];
      const double c1 = x[1] * x[1] * x[1];
      d[0] = -a * c0 + b * c1;
      d[1] = -b * c0 - a * c1;
      return d;
    };
    s.init.mean = Vec::Ones(2);
  } else if (name == "hopf") {
    s.domain = "Chemical Reactions";
    s.state_semantics = "Hopf normal-form coordinates";
    s.obs_semantics = "noisy coordinates";
    s.state_dim = s.obs_dim = 2;
    const double mu = s.params["mu"] = take(overrides, "mu", 0.5);
    const double omega = s.params["omega"] = take(overrides, "omega", 1.0);
    const double amp = s.params["A"] = take(overrides, "A", 1.0);
    s.drift = [mu, omega, amp](const Vec& x) -> Vec {
      Vec d(2);
      const double r2 = x[0] * x[0] + x[1] * x[1];
      d[0] = mu * x[0] + omega * x[1] - amp * x[0] * r2;
      d[1] = -omega * x[0] + mu * x[1] - amp * x[1] * r2;
      return d;
    };
    s.init.mean = Vec::Ones(2);
  } else if (name == "pendulum") {
    s.domain = "Physical Dynamics";
    s.state_semantics = "angles and angular velocities of a double pendulum";
    s.obs_semantics = "noisy angles";
    s.state_dim = 4;
    s.obs_dim = 2;
    const double m1 = s.params["m1"] = take(overrides, "m1", 1.0);
    const double m2 = s.params["m2"] = take(overrides, "m2", 1.0);
    const double l1 = s.params["l1"] = take(overrides, "l1", 1.0);
    const double l2 = s.params["l2"] = take(overrides, "l2", 1.0);
    const double g = s.params["g"] = take(overrides, "g", 9.8);
    s.drift = [m1, m2, l1, l2, g](const Vec& x) -> Vec {
      const double th1 = x[0], w1 = x[1], th2 = x[2], w2 = x[3];
      const double del = th2 - th1;
      const double sd = std::sin(del), cd = std::cos(del);
      const double den1 = (m1 + m2) * l1 - m2 * l1 * cd * cd;
      const double den2 = (l2 / l1) * den1;
      Vec d(4);
      d[0] = w1;
      d[1] = (m2 * l1 * w1 * w1 * sd * cd + m2 * g * std::sin(th2) * cd + m2 * l2 * w2 * w2 * sd -
              (m1 + m2) * g * std::sin(th1)) /
             den1;
      d[2] = w2;
      d[3] = (-m2 * l2 * w2 * w2 * sd * cd + (m1 + m2) * g * std::sin(th1) * cd -
              (m1 + m2) * l1 * w1 * w1 * sd - (m1 + m2) * g * std::sin(th2)) /
             den2;
      return d;
    };
    Mat h = Mat::Zero(2, 4);
    h(0, 0) = 1.0;
    h(1, 2) = 1.0;
    s.obs_matrix = h;
    s.init.mean = Vec(4);
    s.init.mean << M_PI / 2, 0.0, M_PI / 2, 0.0;
    burn_in = 500;
  } else if (name == "lorenz96") {
    s.domain = "Atmospheric Dynamics";
    s.state_semantics = "atmospheric variables on a latitude circle";
    s.obs_semantics = "noisy variables";
    const double forcing = s.params["F"] = take(overrides, "F", 8.0);
    const double dim = s.params["dim"] = take(overrides, "dim", 72.0);
    if (dim < 4 || dim != std::floor(dim)) throw ConfigError("lorenz96 dim must be an integer >= 4");
    s.state_dim = s.obs_dim = static_cast<Index>(dim);
    r = 100.0;
    s.drift = [forcing](const Vec& x) -> Vec { return detail::periodic_lorenz96(x, forcing); };
    s.init.mean = Vec::Constant(s.state_dim, forcing);
    init_var = 0.01;
    burn_in = 500;
  } else if (name == "vl20") {
    s.domain = "Atmospheric Dynamics";
    s.state_semantics = "momentum and temperature on a latitude circle";
    s.obs_semantics = "noisy variables";
    const double forcing = s.params["F"] = take(overrides, "F", 10.0);
    const double heat = s.params["G"] = take(overrides, "G", 0.0);
    const double gamma = s.params["gamma"] = take(overrides, "gamma", 1.0);
    const double eps = s.params["eps"] = take(overrides, "eps", 1.0);
    const double half = s.params["half_dim"] = take(overrides, "half_dim", 36.0);
    if (half < 4 || half != std::floor(half)) throw ConfigError("vl20 half_dim must be an integer >= 4");
    const Index m = static_cast<Index>(half);
    s.state_dim = s.obs_dim = 2 * m;
    s.drift = [=](const Vec& x) -> Vec {
      Vec d(2 * m);
      auto phi = [&](Index j) { return x[(j % m + m) % m]; };
      auto theta = [&](Index j) { return x[m + (j % m + m) % m]; };
      for (Index j = 0; j < m; ++j) {
        d[j] = (phi(j + 1) - phi(j - 2)) * phi(j - 1) - gamma * phi(j) - eps * theta(j) + forcing;
        d[m + j] = phi(j + 1) * theta(j + 2) - phi(j - 1) * theta(j - 2) + eps * phi(j) -
                   gamma * theta(j) + heat;
      }
      return d;
    };
    s.init.mean = Vec::Constant(s.state_dim, forcing);
    init_var = 0.01;
    burn_in = 500;
  } else {
    throw ConfigError("unknown system '" + std::string(name) + "'");
  }

  q = take(overrides, "q", q);
  r = take(overrides, "r", r);
  dt = take(overrides, "dt", dt);
  init_var = take(overrides, "init_var", init_var);
  burn_in = static_cast<int>(take(overrides, "burn_in", burn_in));
  const bool per_step = take(overrides, "noise_per_step", 0.0) != 0.0;
  if (!overrides.empty())
    throw ConfigError("unrecognized override '" + overrides.begin()->first + "' for system " + s.name);
  if (q < 0.0 || r < 0.0) throw ConfigError("noise covariance overrides must be non-negative (PSD)");
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (init_var < 0.0 || burn_in < 0) throw ConfigError("init_var and burn_in must be non-negative");

  s.params["q"] = q;
  s.params["r"] = r;
  s.params["dt"] = dt;
  s.params["init_var"] = init_var;
  s.params["burn_in"] = burn_in;
  s.params["noise_per_step"] = per_step ? 1.0 : 0.0;
  s.process_cov = q * Mat::Identity(s.state_dim, s.state_dim);
  s.obs_cov = r * Mat::Identity(s.obs_dim, s.obs_dim);
  s.dt = dt;
  s.noise_scaling = per_step ? NoiseScaling::per_step : NoiseScaling::per_unit_time;
  s.init.variance = init_var;
  s.init.burn_in = burn_in;
  if (!s.obs_matrix) s.obs_matrix = Mat::Identity(s.obs_dim, s.state_dim);
  const Mat h = *s.obs_matrix;
  s.observe = [h](const Vec& x) -> Vec { return h * x; };
  return s;
}

// A user-defined system, mainly for tests and oracles.
inline SystemModel make_custom_system(std::string name, VectorField drift, VectorField observe, Index state_dim,
                                      Index obs_dim, Mat process_cov, Mat obs_cov, double dt,
                                      Discretization scheme = Discretization::rk4,
                                      NoiseScaling scaling = NoiseScaling::per_step) {
  SystemModel s;
  s.name = std::move(name);
  s.domain = "Custom";
  s.state_semantics = "state";
  s.obs_semantics = "observation";
  s.state_dim = state_dim;
  s.obs_dim = obs_dim;
  s.drift = std::move(drift);
  s.observe = std::move(observe);
  s.process_cov = std::move(process_cov);
  s.obs_cov = std::move(obs_cov);
  s.dt = dt;
  s.discretization = scheme;
  s.noise_scaling = scaling;
  s.init.mean = Vec::Zero(state_dim);
  return s;
}

// Noise-free one-step map f(x).
inline Vec step_deterministic(const SystemModel& sys, const Vec& x) {
  if (x.size() != sys.state_dim) throw ShapeError("state has wrong dimension for " + sys.name);
  if (!x.allFinite()) throw NumericalError("non-finite state passed to " + sys.name);
  auto field = [&sys](const Vec& v) -> Vec {
    Vec d = sys.drift(v);
    if (!d.allFinite()) throw NumericalError("non-finite derivative in " + sys.name);
    return d;
  };
  Vec next = discrete_step(sys.discretization, field, x, sys.dt);
  if (!next.allFinite()) throw NumericalError("non-finite state after step in " + sys.name);
  return next;
}

// Draws x0 ~ N(mean, variance I) and runs the configured noise-free burn-in.
inline Vec sample_initial_state(const SystemModel& sys, Rng& rng) {
  Vec x = sys.init.mean + std::sqrt(sys.init.variance) * rng.normal_vec(sys.state_dim);
  for (int k = 0; k < sys.init.burn_in; ++k) {
    try {
      x = step_deterministic(sys, x);
    } catch (const NumericalError& e) {
      throw DivergenceError(std::string("burn-in diverged: ") + e.what(), static_cast<std::size_t>(k));
    }
  }
  return x;
}

// Simulates x_{t+1} = f(x_t) + xi_t, y_t = h(x_t) + zeta_t for n_steps
// recorded steps starting at x0. Process and observation noise come from
// independent child streams of `seed`.
inline Trajectory simulate(const SystemModel& sys, const Vec& x0, std::size_t n_steps, std::uint64_t seed) {
  if (n_steps < 1) throw ConfigError("simulate needs at least one step");
  if (x0.size() != sys.state_dim) throw ShapeError("x0 has wrong dimension for " + sys.name);
  if (!x0.allFinite()) throw NumericalError("non-finite initial state");
  Rng root(seed);
  Rng process_rng = root.split(0);
  Rng obs_rng = root.split(1);
  const GaussianNoise process_noise(sys.step_process_cov());
  const GaussianNoise obs_noise(sys.obs_cov);

  Trajectory traj;
  traj.seed = seed;
  traj.states.resize(static_cast<Index>(n_steps), sys.state_dim);
  traj.observations.resize(static_cast<Index>(n_steps), sys.obs_dim);
  Vec x = x0;
  for (std::size_t t = 0; t < n_steps; ++t) {
    const Index row = static_cast<Index>(t);
    traj.states.row(row) = x.transpose();
    traj.observations.row(row) = (sys.observe(x) + obs_noise.sample(obs_rng)).transpose();
    if (t + 1 == n_steps) break;
    try {
      x = step_deterministic(sys, x) + process_noise.sample(process_rng);
    } catch (const NumericalError& e) {
      throw DivergenceError(std::string("simulation diverged: ") + e.what(), t + 1);
    }
    if (!x.allFinite()) throw DivergenceError("simulation diverged", t + 1);
  }
  return traj;
}

// Jacobians of the one-step map and of h at x. Linear maps are returned
// exactly; otherwise central differences with step sqrt(eps) * max(|x_i|, 1).
inline Jacobians jacobians(const SystemModel& sys, const Vec& x) {
  if (!x.allFinite()) throw NumericalError("non-finite state passed to jacobians");
  const Index m = sys.state_dim;
  Jacobians jac;
  jac.state.resize(m, m);
  jac.obs.resize(sys.obs_dim, m);

  if (sys.linear_drift) {
    for (Index i = 0; i < m; ++i) jac.state.col(i) = step_deterministic(sys, Vec::Unit(m, i));
  }
  const double root_eps = std::sqrt(std::numeric_limits<double>::epsilon());
  for (Index i = 0; i < m; ++i) {
    const double h = root_eps * std::max(std::abs(x[i]), 1.0);
    Vec hi = x, lo = x;
    hi[i] += h;
    lo[i] -= h;
    const double width = hi[i] - lo[i];
    if (!sys.linear_drift)
      jac.state.col(i) = (step_deterministic(sys, hi) - step_deterministic(sys, lo)) / width;
    if (!sys.obs_matrix) jac.obs.col(i) = (sys.observe(hi) - sys.observe(lo)) / width;
  }
  if (sys.obs_matrix) jac.obs = *sys.obs_matrix;
  if (!jac.state.allFinite() || !jac.obs.allFinite()) throw NumericalError("non-finite Jacobian");
  return jac;
}

// Central-difference Jacobian of the continuous drift (same step rule).
inline Mat drift_jacobian(const SystemModel& sys, const Vec& x) {
  if (sys.linear_drift) return *sys.linear_drift;
  const Index m = sys.state_dim;
  Mat jac(m, m);
  const double root_eps = std::sqrt(std::numeric_limits<double>::epsilon());
  for (Index i = 0; i < m; ++i) {
    const double h = root_eps * std::max(std::abs(x[i]), 1.0);
    Vec hi = x, lo = x;
    hi[i] += h;
    lo[i] -= h;
    jac.col(i) = (sys.drift(hi) - sys.drift(lo)) / (hi[i] - lo[i]);
  }
  return jac;
}

}  // namespace estkit
