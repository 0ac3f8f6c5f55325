#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "estkit/bayes/run.hpp"

using namespace estkit;

namespace {

// x_{t+1} = (1 + a dt) x_t + noise, y = x + noise, via forward Euler.
SystemModel scalar_linear(double a, double q, double r, double dt = 1.0) {
  auto sys = make_custom_system(
      "scalar", [a](const Vec& x) -> Vec { return a * x; }, [](const Vec& x) -> Vec { return x; }, 1, 1,
      Mat::Constant(1, 1, q), Mat::Constant(1, 1, r), dt, Discretization::forward_euler);
  sys.linear_drift = Mat::Constant(1, 1, a);
  sys.obs_matrix = Mat::Identity(1, 1);
  return sys;
}

Mat random_spd(Index n, Rng& rng) {
  Mat a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) a(i, j) = rng.normal();
  return a * a.transpose() + 0.5 * Mat::Identity(n, n);
}

// Textbook recursion written directly from the information-form update.
struct NaiveKalman {
  Mat f, h, q, r;
  Vec mu;
  Mat sigma;

  void step(const Vec& y, bool predict) {
    Vec mp = mu;
    Mat sp = sigma;
    if (predict) {
      mp = f * mu;
      sp = f * sigma * f.transpose() + q;
    }
    const Mat rinv = r.inverse();
    sigma = (sp.inverse() + h.transpose() * rinv * h).inverse();
    const Mat k = sigma * h.transpose() * rinv;
    mu = mp + k * (y - h * mp);
  }
};

Mat tracking_f(double dt) {
  Mat f = Mat::Identity(4, 4);
  f(0, 2) = dt;
  f(1, 3) = dt;
  return f;
}

}  // namespace

TEST(Kalman, EqualPrecisionFusion) {
  const auto sys = scalar_linear(0.0, 0.0, 1.0);
  const GaussianBelief post = kf_step({Vec::Zero(1), Mat::Identity(1, 1)}, Vec::Ones(1), sys);
  EXPECT_NEAR(post.mean[0], 0.5, 1e-15);
  EXPECT_NEAR(post.cov(0, 0), 0.5, 1e-15);
}

TEST(Kalman, UninformativeObservationLeavesPrediction) {
  const auto sys = make_system("tracking", {{"r", 1e12}});
  const FilterNoise noise = assumed_noise(sys);
  Vec mu(4);
  mu << 1.0, -2.0, 0.3, 0.7;
  const GaussianBelief prior{mu, Mat::Identity(4, 4)};
  const GaussianBelief pred = kf_predict(prior, sys, noise);
  Vec y(2);
  y << 100.0, -50.0;
  const GaussianBelief post = kf_update(pred, y, sys, noise);
  EXPECT_LT((post.mean - pred.mean).norm(), 1e-9);
  EXPECT_LT((post.cov - pred.cov).norm(), 1e-9);
}

TEST(Kalman, MatchesNaiveRecursionOnTracking) {
  const auto sys = make_system("tracking");
  Rng rng(5);
  const auto traj = simulate(sys, sample_initial_state(sys, rng), 20, 9);
  NaiveKalman naive{tracking_f(sys.dt), *sys.obs_matrix, sys.step_process_cov(), sys.obs_cov, Vec::Zero(4),
                    Mat::Identity(4, 4)};
  const auto run = run_filter(FilterKind::kf, traj, sys, {}, 0);
  for (Index t = 0; t < 20; ++t) {
    naive.step(traj.observations.row(t).transpose(), t > 0);
    for (Index i = 0; i < 4; ++i) EXPECT_NEAR(run.estimates(t, i), naive.mu[i], 1e-10) << "t=" << t;
  }
}

TEST(Kalman, InnovationFormEqualsInformationForm) {
  Rng rng(17);
  for (int rep = 0; rep < 50; ++rep) {
    const Index m = 1 + rep % 5, n = 1 + rep % 3;
    const Mat sigma = random_spd(m, rng);
    const Mat r = random_spd(n, rng);
    Mat h(n, m);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < m; ++j) h(i, j) = rng.normal();
    const Vec mu = rng.normal_vec(m);
    const Vec y = rng.normal_vec(n);

    const GaussianBelief post = detail::gaussian_update({mu, sigma}, y, h * mu, h, r, nullptr);
    const Mat rinv = r.inverse();
    const Mat cov = (sigma.inverse() + h.transpose() * rinv * h).inverse();
    const Vec mean = mu + cov * h.transpose() * rinv * (y - h * mu);
    EXPECT_LT((post.cov - cov).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, cov.norm()));
    EXPECT_LT((post.mean - mean).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, mean.norm()));
  }
}

TEST(Kalman, SingularInnovation) {
  const auto sys = scalar_linear(0.0, 0.0, 0.0);
  EXPECT_THROW(kf_update({Vec::Zero(1), Mat::Zero(1, 1)}, Vec::Ones(1), sys, assumed_noise(sys)), NumericalError);
}

TEST(Kalman, RejectsNonlinearSystem) {
  const auto sys = make_system("selkov");
  EXPECT_THROW(kf_predict({Vec::Ones(2), Mat::Identity(2, 2)}, sys, assumed_noise(sys)), ConfigError);
  const auto traj = simulate(sys, Vec::Ones(2), 5, 0);
  EXPECT_THROW(run_filter(FilterKind::kf, traj, sys, {}, 0), ConfigError);
}

TEST(Kalman, CovarianceStaysSymmetricPsd) {
  const auto sys = make_system("tracking");
  const FilterNoise noise = assumed_noise(sys);
  Rng rng(2);
  GaussianBelief b{Vec::Zero(4), Mat::Identity(4, 4)};
  Vec x = Vec::Zero(4);
  const GaussianNoise obs(sys.obs_cov);
  int repairs = 0;
  for (int t = 0; t < 10000; ++t) {
    x = step_deterministic(sys, x);
    b = kf_step(b, sys.observe(x) + obs.sample(rng), sys, noise, &repairs);
    ASSERT_EQ(b.cov, b.cov.transpose()) << t;
    ASSERT_GE(min_eigenvalue(b.cov), -1e-8) << t;
  }
  EXPECT_EQ(repairs, 0);
}

TEST(Kalman, ZeroNoiseExactInitialState) {
  const auto sys = make_system("tracking", {{"q", 0.0}, {"r", 0.0}});
  Vec x0(4);
  x0 << 1.0, 2.0, -0.5, 0.25;
  const auto traj = simulate(sys, x0, 100, 3);
  FilterConfig cfg;
  cfg.init_mean = x0;
  cfg.init_cov = Mat::Zero(4, 4);
  cfg.assumed_obs_cov = Mat::Identity(2, 2);
  const auto run = run_filter(FilterKind::kf, traj, sys, cfg, 0);
  EXPECT_LT((run.estimates - traj.states).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Ekf, EqualsKfOnLinearSystem) {
  const auto sys = make_system("tracking");
  const auto traj = simulate(sys, Vec::Zero(4), 100, 4);
  const auto kf = run_filter(FilterKind::kf, traj, sys, {}, 0);
  const auto ekf = run_filter(FilterKind::ekf, traj, sys, {}, 0);
  EXPECT_LT((kf.estimates - ekf.estimates).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Ekf, HopfEquilibrium) {
  const auto sys = make_system("hopf");
  const FilterNoise noise = assumed_noise(sys);
  const GaussianBelief prior{Vec::Zero(2), Mat::Identity(2, 2)};
  const GaussianBelief pred = ekf_predict(prior, sys, noise);
  EXPECT_LT(pred.mean.norm(), 1e-15);
  Vec y(2);
  y << 1.0, -2.0;
  const GaussianBelief post = ekf_update(pred, y, sys, noise);
  const Mat gain = pred.cov * (pred.cov + sys.obs_cov).inverse();
  EXPECT_LT((post.mean - gain * y).norm(), 1e-12);
  EXPECT_GT(post.mean.dot(y), 0.0);
}

TEST(Ekf, SelkovBeatsOpenLoop) {
  const auto sys = make_system("selkov");
  Rng rng(8);
  const auto traj = simulate(sys, sample_initial_state(sys, rng), 200, 21);
  const auto run = run_filter(FilterKind::ekf, traj, sys, {}, 0);
  Series open(200, 2);
  Vec mu = sys.init.mean;
  for (Index t = 0; t < 200; ++t) {
    if (t > 0) mu = step_deterministic(sys, mu);
    open.row(t) = mu.transpose();
  }
  const double ekf_rmse = std::sqrt((run.estimates - traj.states).squaredNorm() / 400.0);
  const double open_rmse = std::sqrt((open - traj.states).squaredNorm() / 400.0);
  EXPECT_TRUE(std::isfinite(ekf_rmse));
  EXPECT_LT(ekf_rmse, open_rmse);
}

TEST(Ekf, DeterministicGivenObservations) {
  const auto sys = make_system("selkov");
  const auto traj = simulate(sys, Vec::Ones(2), 100, 1);
  const auto a = run_filter(FilterKind::ekf, traj, sys, {}, 1);
  const auto b = run_filter(FilterKind::ekf, traj, sys, {}, 999);
  EXPECT_EQ(a.estimates, b.estimates);
}

TEST(Enkf, LargeEnsembleTracksKalman) {
  const auto sys = make_system("tracking");
  const auto traj = simulate(sys, Vec::Zero(4), 200, 12);
  const auto kf = run_filter(FilterKind::kf, traj, sys, {}, 0);
  // Sampling error accumulates in the unobserved velocities, so the standard
  // error comes from independent replicas rather than one ensemble's spread.
  const int replicas = 8;
  FilterConfig cfg;
  cfg.ensemble_size = 10000;
  std::vector<Series> runs;
  for (int rep = 0; rep < replicas; ++rep) runs.push_back(run_filter(FilterKind::enkf, traj, sys, cfg, 40 + rep).estimates);
  int within = 0, total = 0;
  double worst = 0.0;
  for (Index t = 0; t < 200; ++t) {
    for (Index i = 0; i < 4; ++i) {
      double mean = 0.0, sq = 0.0;
      for (const auto& r : runs) mean += r(t, i) / replicas;
      for (const auto& r : runs) sq += (r(t, i) - mean) * (r(t, i) - mean);
      const double se = std::sqrt(sq / (replicas - 1) / replicas);
      const double z = std::abs(mean - kf.estimates(t, i)) / se;
      worst = std::max(worst, z);
      within += z <= 3.0;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(within) / total, 0.95);
  EXPECT_LT(worst, 8.0);
}

TEST(Enkf, GapToKalmanShrinksWithEnsembleSize) {
  const auto sys = make_system("tracking");
  std::vector<double> gaps;
  for (Index ne : {100, 1000, 10000}) {
    double gap = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto traj = simulate(sys, Vec::Zero(4), 100, 100 + seed);
      const auto kf = run_filter(FilterKind::kf, traj, sys, {}, 0);
      FilterConfig cfg;
      cfg.ensemble_size = ne;
      const auto enkf = run_filter(FilterKind::enkf, traj, sys, cfg, seed);
      gap += (enkf.estimates - kf.estimates).squaredNorm();
    }
    gaps.push_back(gap);
  }
  EXPECT_GT(gaps[0], gaps[1]);
  EXPECT_GT(gaps[1], gaps[2]);
}

TEST(Enkf, DegenerateEnsembleTakesJitterPath) {
  const auto sys = make_system("hopf");
  const FilterNoise noise{Mat::Zero(2, 2), Mat::Zero(2, 2)};
  Ensemble ens;
  ens.members = Series::Constant(8, 2, 0.3);
  Rng rng(1);
  EnkfStats stats;
  Vec y(2);
  y << 1.0, 2.0;
  const Ensemble out = enkf_update(ens, y, sys, noise, rng, &stats);
  EXPECT_EQ(stats.jitter_repairs, 1);
  EXPECT_LT((out.members - ens.members).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Enkf, NoProcessNoiseHugeRFollowsOrbit) {
  const auto sys = make_system("selkov", {{"q", 0.0}, {"r", 1e12}});
  const FilterNoise noise = assumed_noise(sys);
  Rng rng(6);
  Ensemble ens = sample_ensemble(Vec::Ones(2), 0.01 * Mat::Identity(2, 2), 5000, rng);
  Series orbit = ens.members;
  // Perturbed observations leave a spurious gain of order spread / sqrt(N_e)
  // whatever R is, so members drift by about 1e-3 per step here.
  for (int t = 0; t < 20; ++t) {
    ens = enkf_step(ens, Vec::Zero(2), sys, noise, rng);
    for (Index i = 0; i < orbit.rows(); ++i)
      orbit.row(i) = step_deterministic(sys, orbit.row(i).transpose()).transpose();
  }
  const double rms = std::sqrt((ens.members - orbit).squaredNorm() / static_cast<double>(orbit.size()));
  EXPECT_LT(rms, 0.02) << rms;
  EXPECT_LT((ens.mean() - Vec(orbit.colwise().mean().transpose())).norm(), 5e-3);
}

TEST(Enkf, RejectsTinyEnsemble) {
  const auto sys = make_system("hopf");
  const auto traj = simulate(sys, Vec::Ones(2), 5, 0);
  FilterConfig cfg;
  cfg.ensemble_size = 1;
  EXPECT_THROW(run_filter(FilterKind::enkf, traj, sys, cfg, 0), ConfigError);
}

TEST(Particle, MatchesKalmanInOneDimension) {
  const auto sys = scalar_linear(-0.1, 0.5, 1.0);
  const FilterNoise noise = assumed_noise(sys);
  const auto traj = simulate(sys, Vec::Zero(1), 50, 31);
  Rng rng(77);
  const Index np = 50000;
  ParticleSet ps = sample_particles(Vec::Zero(1), Mat::Identity(1, 1), np, rng);
  GaussianBelief b{Vec::Zero(1), Mat::Identity(1, 1)};
  int within = 0;
  double worst = 0.0;
  for (Index t = 0; t < 50; ++t) {
    const Vec y = traj.observations.row(t).transpose();
    if (t > 0) {
      ps = pf_propagate(ps, sys, noise, rng);
      b = kf_predict(b, sys, noise);
    }
    const ParticleSet w = pf_weight(ps, y, sys, noise);
    b = kf_update(b, y, sys, noise);
    EXPECT_NEAR(w.weights.sum(), 1.0, 1e-12);
    const double ess = 1.0 / w.weights.squaredNorm();
    const double se = std::sqrt(b.cov(0, 0) / ess);
    const double z = std::abs(w.weighted_mean()[0] - b.mean[0]) / se;
    worst = std::max(worst, z);
    within += z <= 3.0;
    ps = systematic_resample(w, rng);
  }
  EXPECT_GE(within, 48);
  EXPECT_LT(worst, 4.5);
}

TEST(Particle, MatchesGridFilterOnSineDrift) {
  const auto sys = make_custom_system(
      "sine", [](const Vec& x) -> Vec { return x.array().sin().matrix(); }, [](const Vec& x) -> Vec { return x; }, 1,
      1, Mat::Identity(1, 1), Mat::Identity(1, 1), 1.0);
  const FilterNoise noise = assumed_noise(sys);
  const Index steps = 30;
  const auto traj = simulate(sys, Vec::Constant(1, 1.0), steps, 8);

  // Brute-force Bayes recursion on a fixed grid.
  const Index g = 2001;
  const double lo = -10.0, dx = 20.0 / (g - 1);
  Vec grid(g), mapped(g);
  for (Index i = 0; i < g; ++i) {
    grid[i] = lo + dx * i;
    mapped[i] = step_deterministic(sys, Vec::Constant(1, grid[i]))[0];
  }
  auto gauss = [](double d, double var) { return std::exp(-0.5 * d * d / var) / std::sqrt(2 * M_PI * var); };
  Vec p(g);
  for (Index i = 0; i < g; ++i) p[i] = gauss(grid[i] - 1.0, 1.0);
  std::vector<double> grid_mean;
  for (Index t = 0; t < steps; ++t) {
    if (t > 0) {
      Vec next = Vec::Zero(g);
      for (Index j = 0; j < g; ++j) {
        if (p[j] < 1e-300) continue;
        for (Index i = 0; i < g; ++i) next[i] += p[j] * gauss(grid[i] - mapped[j], 1.0);
      }
      p = next;
    }
    const double y = traj.observations(t, 0);
    for (Index i = 0; i < g; ++i) p[i] *= gauss(y - grid[i], 1.0);
    p /= p.sum();
    grid_mean.push_back(p.dot(grid));
  }

  const int replicas = 10;
  const Index np = 10000;
  std::vector<std::vector<double>> est(static_cast<std::size_t>(steps));
  for (int rep = 0; rep < replicas; ++rep) {
    Rng rng(1000 + rep);
    ParticleSet ps = sample_particles(Vec::Constant(1, 1.0), Mat::Identity(1, 1), np, rng);
    for (Index t = 0; t < steps; ++t) {
      const Vec y = traj.observations.row(t).transpose();
      Vec e;
      if (t == 0) {
        const ParticleSet w = pf_weight(ps, y, sys, noise);
        e = w.weighted_mean();
        ps = systematic_resample(w, rng);
      } else {
        ps = pf_step(ps, y, sys, noise, rng, &e);
      }
      est[static_cast<std::size_t>(t)].push_back(e[0]);
    }
  }
  for (Index t = 0; t < steps; ++t) {
    const auto& v = est[static_cast<std::size_t>(t)];
    double mean = 0.0, sq = 0.0;
    for (double x : v) mean += x / replicas;
    for (double x : v) sq += (x - mean) * (x - mean);
    const double se = std::sqrt(sq / (replicas - 1) / replicas);
    // Grid quadrature error is far below the Monte-Carlo error; 1e-3 covers it.
    EXPECT_LT(std::abs(mean - grid_mean[static_cast<std::size_t>(t)]), 5.0 * se + 1e-3) << "t=" << t;
  }
}

TEST(Particle, WeightConcentratesOnTruth) {
  const auto sys = scalar_linear(0.0, 0.0, 1e-8);
  ParticleSet ps;
  ps.particles.resize(5, 1);
  ps.particles << -1.0, 0.5, 2.0, 2.01, 3.0;
  ps.weights = Vec::Constant(5, 0.2);
  const ParticleSet w = pf_weight(ps, Vec::Constant(1, 2.0), sys, assumed_noise(sys));
  EXPECT_NEAR(w.weights[2], 1.0, 1e-12);
  EXPECT_NEAR(w.weights.sum(), 1.0, 1e-12);
}

TEST(Particle, WeightCollapseIsReported) {
  const auto sys = scalar_linear(0.0, 0.0, 1e-6);
  ParticleSet ps;
  ps.particles = Series::Constant(3, 1, 0.0);
  ps.weights = Vec::Constant(3, 1.0 / 3);
  try {
    pf_weight(ps, Vec::Constant(1, 10.0), sys, assumed_noise(sys));
    FAIL() << "expected weight collapse";
  } catch (const WeightCollapseError& e) {
    EXPECT_LT(e.max_log_likelihood(), kWeightUnderflowLogLik);
  }
}

TEST(Particle, SystematicResamplingPreservesMeanInExpectation) {
  ParticleSet ps;
  ps.particles.resize(5, 1);
  ps.particles << -2.0, 0.0, 1.0, 3.0, 10.0;
  ps.weights.resize(5);
  ps.weights << 0.05, 0.4, 0.3, 0.2, 0.05;
  const double target = ps.weighted_mean()[0];
  Rng rng(3);
  const int reps = 10000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < reps; ++i) {
    const double m = systematic_resample(ps, rng).weighted_mean()[0];
    sum += m;
    sq += m * m;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sq / reps - mean * mean) / reps);
  EXPECT_LT(std::abs(mean - target), 4.0 * se + 1e-12);
}

TEST(Particle, ResampledWeightsAreUniform) {
  Vec w(4);
  w << 0.0, 0.5, 0.0, 0.5;
  Rng rng(0);
  const auto idx = systematic_indices(w, rng);
  for (Index i : idx) EXPECT_TRUE(i == 1 || i == 3);
}

TEST(RunFilter, RecordsEveryStepAndTiming) {
  const auto sys = make_system("selkov");
  const auto traj = simulate(sys, Vec::Ones(2), 40, 2);
  for (FilterKind k : {FilterKind::ekf, FilterKind::enkf, FilterKind::pf}) {
    FilterConfig cfg;
    cfg.ensemble_size = 100;
    cfg.particles = 200;
    const auto run = run_filter(k, traj, sys, cfg, 5);
    EXPECT_EQ(run.estimates.rows(), 40);
    EXPECT_TRUE(run.estimates.allFinite());
    EXPECT_EQ(run.step_ms.size(), 40u);
    EXPECT_GE(run.runtime_ms_per_step, 0.0);
    const auto again = run_filter(k, traj, sys, cfg, 5);
    EXPECT_EQ(run.estimates, again.estimates) << to_string(k);
  }
}

TEST(RunFilter, FailureCarriesStep) {
  const auto sys = make_system("tracking", {{"q", 0.0}, {"r", 0.0}});
  const auto traj = simulate(sys, Vec::Zero(4), 5, 0);
  FilterConfig cfg;
  cfg.init_cov = Mat::Zero(4, 4);
  try {
    run_filter(FilterKind::kf, traj, sys, cfg, 0);
    FAIL() << "expected failure";
  } catch (const FilterFailure& e) {
    EXPECT_EQ(e.step(), 0u);
  }
}

TEST(RunFilter, ParseKind) {
  EXPECT_EQ(parse_filter_kind("enkf"), FilterKind::enkf);
  EXPECT_THROW(parse_filter_kind("ukf"), ConfigError);
}
