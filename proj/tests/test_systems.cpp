#include <gtest/gtest.h>

#include <cmath>

#include "estkit/systems/system.hpp"

using namespace estkit;

namespace {

SystemModel decay_system(double dt) {
  return make_custom_system(
      "decay", [](const Vec& x) -> Vec { return -x; }, [](const Vec& x) -> Vec { return x; }, 1, 1,
      Mat::Zero(1, 1), Mat::Zero(1, 1), dt);
}

// Tangent-linear of one RK4 step, built from a hand-derived drift Jacobian.
template <class Drift, class DriftJac>
Mat rk4_tangent(const Drift& f, const DriftJac& jf, const Vec& x, double h) {
  const Index m = x.size();
  const Mat id = Mat::Identity(m, m);
  const Vec k1 = f(x);
  const Mat d1 = jf(x);
  const Vec x2 = x + 0.5 * h * k1;
  const Vec k2 = f(x2);
  const Mat d2 = jf(x2) * (id + 0.5 * h * d1);
  const Vec x3 = x + 0.5 * h * k2;
  const Vec k3 = f(x3);
  const Mat d3 = jf(x3) * (id + 0.5 * h * d2);
  const Vec x4 = x + h * k3;
  const Mat d4 = jf(x4) * (id + h * d3);
  return id + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
}

Mat selkov_jac(const Vec& x) {
  const double a = 0.08;
  Mat j(2, 2);
  j << -1.0 + 2.0 * x[0] * x[1], a + x[0] * x[0], -2.0 * x[0] * x[1], -a - x[0] * x[0];
  return j;
}

Mat hopf_jac(const Vec& x) {
  const double mu = 0.5, w = 1.0, amp = 1.0;
  const double r2 = x[0] * x[0] + x[1] * x[1];
  Mat j(2, 2);
  j << mu - amp * (r2 + 2.0 * x[0] * x[0]), w - 2.0 * amp * x[0] * x[1], -w - 2.0 * amp * x[0] * x[1],
      mu - amp * (r2 + 2.0 * x[1] * x[1]);
  return j;
}

Mat oscillator_jac(const Vec& x) {
  const double a = 0.1, b = 2.0;
  Mat j(2, 2);
  j << -3.0 * a * x[0] * x[0], 3.0 * b * x[1] * x[1], -3.0 * b * x[0] * x[0], -3.0 * a * x[1] * x[1];
  return j;
}

double rel_err(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

}  // namespace

TEST(MakeSystem, TableDefaults) {
  const auto l96 = make_system("lorenz96");
  EXPECT_EQ(l96.state_dim, 72);
  EXPECT_EQ(l96.obs_dim, 72);
  EXPECT_TRUE(l96.obs_cov.isApprox(100.0 * Mat::Identity(72, 72)));
  EXPECT_DOUBLE_EQ(l96.params.at("F"), 8.0);
  EXPECT_DOUBLE_EQ(l96.dt, 0.01);

  const auto vl = make_system("vl20");
  EXPECT_EQ(vl.state_dim, 72);
  EXPECT_TRUE(vl.obs_cov.isApprox(Mat::Identity(72, 72)));

  const auto tr = make_system("tracking");
  EXPECT_EQ(tr.state_dim, 4);
  EXPECT_EQ(tr.obs_dim, 2);
  EXPECT_DOUBLE_EQ(tr.dt, 0.1);
  EXPECT_EQ(tr.discretization, Discretization::forward_euler);
  EXPECT_TRUE(tr.process_cov.isApprox(0.1 * Mat::Identity(4, 4)));
  EXPECT_TRUE(tr.obs_cov.isApprox(10.0 * Mat::Identity(2, 2)));

  const auto pend = make_system("pendulum");
  EXPECT_EQ(pend.state_dim, 4);
  EXPECT_EQ(pend.obs_dim, 2);
  EXPECT_EQ(pend.discretization, Discretization::rk4);
  for (const char* n : {"selkov", "oscillator", "hopf"}) {
    const auto s = make_system(n);
    EXPECT_EQ(s.state_dim, 2);
    EXPECT_TRUE(s.process_cov.isApprox(Mat::Identity(2, 2)));
    EXPECT_TRUE(s.obs_cov.isApprox(Mat::Identity(2, 2)));
  }
}

TEST(MakeSystem, Errors) {
  EXPECT_THROW(make_system("lorenz63"), ConfigError);
  EXPECT_THROW(make_system("selkov", {{"mu", 1.0}}), ConfigError);
  EXPECT_THROW(make_system("hopf", {{"r", -1.0}}), ConfigError);
  EXPECT_NO_THROW(make_system("hopf", {{"mu", 0.2}, {"r", 4.0}}));
}

TEST(Drift, EquilibriaAndValues) {
  const auto selkov = make_system("selkov");
  const Vec d = selkov.drift(Vec::Zero(2));
  EXPECT_DOUBLE_EQ(d[0], 0.0);
  EXPECT_DOUBLE_EQ(d[1], 0.6);
  const auto hopf = make_system("hopf");
  EXPECT_EQ(hopf.drift(Vec::Zero(2)), Vec::Zero(2));
}

TEST(Step, Rk4MatchesExponential) {
  const auto sys = decay_system(0.01);
  const Vec next = step_deterministic(sys, Vec::Ones(1));
  EXPECT_NEAR(next[0], 0.99004983375, 1e-11);
  EXPECT_NEAR(next[0], std::exp(-0.01), 1e-12);
}

TEST(Step, Rk4ObservedOrder) {
  std::vector<double> errors;
  for (double dt : {0.1, 0.05, 0.025, 0.0125}) {
    const auto sys = decay_system(dt);
    Vec x = Vec::Ones(1);
    const int n = static_cast<int>(std::lround(1.0 / dt));
    for (int k = 0; k < n; ++k) x = step_deterministic(sys, x);
    errors.push_back(std::abs(x[0] - std::exp(-1.0)));
  }
  for (std::size_t i = 1; i < errors.size(); ++i) EXPECT_GE(std::log2(errors[i - 1] / errors[i]), 3.9);
}

TEST(Step, TrackingEuler) {
  const auto sys = make_system("tracking");
  Vec x(4);
  x << 1.0, 2.0, 0.5, -0.5;
  const Vec next = step_deterministic(sys, x);
  Vec expected(4);
  expected << 1.05, 1.95, 0.5, -0.5;
  EXPECT_TRUE(next.isApprox(expected, 1e-14));
}

TEST(Step, Lorenz96FixedPoint) {
  const auto sys = make_system("lorenz96");
  const Vec x = Vec::Constant(72, 8.0);
  EXPECT_EQ(step_deterministic(sys, x), x);
}

TEST(Step, RejectsNonFinite) {
  const auto sys = make_system("hopf");
  Vec x(2);
  x << std::nan(""), 0.0;
  EXPECT_THROW(step_deterministic(sys, x), NumericalError);
}

TEST(Drift, CyclicEquivariance) {
  Rng rng(3);
  const auto l96 = make_system("lorenz96");
  const Vec x = 8.0 * Vec::Ones(72) + rng.normal_vec(72);
  const Vec d = l96.drift(x);
  for (Index k : {1, 5, 71}) {
    Vec rx(72), expected(72);
    for (Index j = 0; j < 72; ++j) {
      rx[(j + k) % 72] = x[j];
      expected[(j + k) % 72] = d[j];
    }
    EXPECT_TRUE(l96.drift(rx).isApprox(expected, 1e-14)) << "shift " << k;
  }

  const auto vl = make_system("vl20", {{"half_dim", 8.0}});
  const Vec z = rng.normal_vec(16);
  const Vec dz = vl.drift(z);
  for (Index k : {1, 3}) {
    Vec rz(16), expected(16);
    for (Index j = 0; j < 8; ++j) {
      rz[(j + k) % 8] = z[j];
      rz[8 + (j + k) % 8] = z[8 + j];
      expected[(j + k) % 8] = dz[j];
      expected[8 + (j + k) % 8] = dz[8 + j];
    }
    EXPECT_TRUE(vl.drift(rz).isApprox(expected, 1e-14));
  }
}

TEST(Simulate, ZeroNoiseFollowsDeterministicOrbit) {
  for (const auto& name : system_names()) {
    auto sys = make_system(name, {{"q", 0.0}, {"r", 0.0}});
    Rng rng(11);
    const Vec x0 = sample_initial_state(sys, rng);
    const auto traj = simulate(sys, x0, 30, 5);
    Vec x = x0;
    for (Index t = 0; t < 30; ++t) {
      const Vec s = traj.states.row(t).transpose();
      EXPECT_EQ(s, x) << name << " t=" << t;
      EXPECT_EQ(Vec(traj.observations.row(t).transpose()), sys.observe(s)) << name;
      x = step_deterministic(sys, x);
    }
    if (sys.obs_dim == sys.state_dim) {
      EXPECT_EQ(traj.observations, traj.states) << name;
    }
  }
}

TEST(Simulate, ObservationNoiseVarianceMatchesR) {
  const auto sys = make_system("tracking");
  const Mat h = *sys.obs_matrix;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero(), sq = Eigen::Vector2d::Zero();
  double n = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto traj = simulate(sys, Vec::Zero(4), 200, seed);
    for (Index t = 0; t < traj.length(); ++t) {
      const Vec r = traj.observations.row(t).transpose() - h * traj.states.row(t).transpose();
      sum += r;
      sq += r.cwiseProduct(r);
      n += 1;
    }
  }
  const Eigen::Vector2d var = sq / n - (sum / n).cwiseProduct(sum / n);
  const double se = 10.0 * std::sqrt(2.0 / n);
  EXPECT_NEAR(var[0], 10.0, 4 * se);
  EXPECT_NEAR(var[1], 10.0, 4 * se);
}

TEST(Simulate, Deterministic) {
  const auto sys = make_system("selkov");
  const auto a = simulate(sys, Vec::Ones(2), 200, 42);
  const auto b = simulate(sys, Vec::Ones(2), 200, 42);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.observations, b.observations);
  const auto c = simulate(sys, Vec::Ones(2), 200, 43);
  EXPECT_NE(a.observations, c.observations);
}

TEST(Simulate, DivergenceReportsStep) {
  auto sys = make_custom_system(
      "blowup", [](const Vec& x) -> Vec { return x.cwiseProduct(x).cwiseProduct(x); },
      [](const Vec& x) -> Vec { return x; }, 1, 1, Mat::Zero(1, 1), Mat::Zero(1, 1), 1.0);
  try {
    simulate(sys, Vec::Constant(1, 10.0), 50, 0);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.step(), 1u);
    EXPECT_LT(e.step(), 50u);
  }
}

TEST(Jacobians, TrackingExact) {
  const auto sys = make_system("tracking");
  const auto jac = jacobians(sys, Vec::Zero(4));
  Mat f = Mat::Identity(4, 4);
  f(0, 2) = 0.1;
  f(1, 3) = 0.1;
  EXPECT_TRUE(jac.state.isApprox(f, 1e-15));
  Mat h = Mat::Zero(2, 4);
  h(0, 0) = 1;
  h(1, 1) = 1;
  EXPECT_EQ(jac.obs, h);
}

TEST(Jacobians, IdentityObservation) {
  for (const char* n : {"selkov", "hopf", "lorenz96"}) {
    const auto sys = make_system(n);
    const auto jac = jacobians(sys, sys.init.mean);
    EXPECT_EQ(jac.obs, Mat::Identity(sys.obs_dim, sys.state_dim));
  }
}

TEST(Jacobians, SelkovDriftAnalytic) {
  const auto sys = make_system("selkov");
  const Vec x = Vec::Ones(2);
  Mat expected(2, 2);
  expected << 1.0, 1.08, -2.0, -1.08;
  EXPECT_LT((drift_jacobian(sys, x) - expected).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Jacobians, StepMapAgainstAnalyticTangent) {
  Rng rng(7);
  struct Case {
    const char* name;
    Mat (*jac)(const Vec&);
  };
  for (const Case& c : {Case{"selkov", selkov_jac}, Case{"hopf", hopf_jac}, Case{"oscillator", oscillator_jac}}) {
    const auto sys = make_system(c.name);
    for (int rep = 0; rep < 5; ++rep) {
      const Vec x = rng.normal_vec(2);
      const Mat analytic = rk4_tangent(sys.drift, c.jac, x, sys.dt);
      EXPECT_LT(rel_err(jacobians(sys, x).state, analytic), 1e-5) << c.name;
      EXPECT_LT(rel_err(drift_jacobian(sys, x), c.jac(x)), 1e-5) << c.name;
    }
  }
}

TEST(InitialState, BurnInLeavesFixedPoint) {
  const auto sys = make_system("lorenz96");
  Rng rng(1);
  const Vec x0 = sample_initial_state(sys, rng);
  EXPECT_TRUE(x0.allFinite());
  EXPECT_GT((x0 - Vec::Constant(72, 8.0)).norm(), 1.0);
}
