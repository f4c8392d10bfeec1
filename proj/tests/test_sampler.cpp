#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <vector>

#include "gfb/sampler.hpp"

using namespace gfb;

namespace {

struct ConstantField {
  double value = 0.5;
  Grid<double> forward(const Grid<double>& x, std::span<const double>, const Grid<double>&,
                       std::span<const std::uint8_t>) const {
    return Grid<double>(x.rows(), x.cols(), value);
  }
};

struct LinearField {
  Grid<double> forward(const Grid<double>& x, std::span<const double>, const Grid<double>&,
                       std::span<const std::uint8_t>) const {
    return x;
  }
};

// Nonlinear, time-dependent field with a smooth flow.
struct SwirlField {
  Grid<double> forward(const Grid<double>& x, std::span<const double> tau, const Grid<double>&,
                       std::span<const std::uint8_t>) const {
    Grid<double> v(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      v(i, 0) = -x(i, 1) * (1.0 + tau[i]) + 0.3 * std::sin(x(i, 0));
      v(i, 1) = x(i, 0) * (1.0 + tau[i]) - 0.2 * x(i, 1);
    }
    return v;
  }
};

// Counts conditional and null evaluations; the branches return different values.
struct BranchCounter {
  mutable int conditional = 0;
  mutable int null = 0;
  bool branches_equal = false;
  Grid<double> forward(const Grid<double>& x, std::span<const double> tau, const Grid<double>& c,
                       std::span<const std::uint8_t> present) const {
    const bool cond = !present.empty() && present[0] != 0;
    (cond ? conditional : null) += 1;
    Grid<double> v(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) {
        v(i, j) = -0.5 * x(i, j) + tau[i];
        if (cond && !branches_equal) v(i, j) += c(i, 0);
      }
    }
    return v;
  }
};

double rel_l2(const Grid<double>& a, const Grid<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a.flat()[i] - b.flat()[i]) * (a.flat()[i] - b.flat()[i]);
    den += b.flat()[i] * b.flat()[i];
  }
  return std::sqrt(num / den);
}

Grid<double> start_points() {
  return Grid<double>(3, 2, std::vector<double>{1.0, 0.5, -0.3, 0.8, 2.0, -1.0});
}

}  // namespace

TEST(Schedule, Uniform) {
  const auto s = schedule_uniform(4);
  EXPECT_EQ(s.taus, (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
  EXPECT_THROW(schedule_uniform(0), ValidationError);
}

TEST(Schedule, RaisedCosineFormula) {
  const std::size_t t = 25;
  const auto s = schedule_raised_cosine(t);
  ASSERT_EQ(s.taus.size(), t + 1);
  EXPECT_EQ(s.taus.front(), 0.0);
  EXPECT_EQ(s.taus.back(), 1.0);
  for (std::size_t i = 0; i <= t; ++i) {
    const double ref = 0.5 + 0.5 * std::cos(M_PI * static_cast<double>(i) / 25.0 + M_PI);
    EXPECT_NEAR(s.taus[i], ref, 1e-12);
    if (i > 0) EXPECT_GT(s.taus[i], s.taus[i - 1]);
  }
  EXPECT_LT(s.taus[1] - s.taus[0], 1.0 / 25.0);
  EXPECT_LT(s.taus[25] - s.taus[24], 1.0 / 25.0);
  EXPECT_GT(s.taus[13] - s.taus[12], 1.0 / 25.0);
  EXPECT_NEAR(schedule_raised_cosine(2).taus[1], 0.5, 1e-15);
}

TEST(Integrate, ConstantFieldExact) {
  const Grid<double> x(1, 1, 1.0);
  for (auto kind : {ScheduleKind::uniform, ScheduleKind::raised_cosine}) {
    for (auto integ : {Integrator::euler, Integrator::midpoint}) {
      const auto r = integrate(ConstantField{}, x, make_schedule(kind, 7), Direction::forward, integ);
      EXPECT_NEAR(r.x_end(0, 0), 1.5, 1e-14);
      const auto back = integrate(ConstantField{}, r.x_end, make_schedule(kind, 7),
                                  Direction::backward, integ);
      EXPECT_NEAR(back.x_end(0, 0), 1.0, 1e-14);
    }
  }
}

TEST(Integrate, ZeroFieldIsIdentity) {
  const auto x = start_points();
  for (auto dir : {Direction::forward, Direction::backward}) {
    EXPECT_EQ(integrate(ConstantField{0.0}, x, schedule_raised_cosine(9), dir).x_end, x);
  }
}

TEST(Integrate, EulerExponential) {
  const Grid<double> x(1, 1, 0.7);
  const auto r = integrate(LinearField{}, x, schedule_uniform(1000), Direction::forward,
                           Integrator::euler);
  EXPECT_NEAR(r.x_end(0, 0) / (0.7 * std::exp(1.0)), 1.0, 0.005);
}

TEST(Integrate, RoundTripErrorShrinksWithSteps) {
  const auto x = start_points();
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t t : {10u, 50u, 100u}) {
    const auto s = schedule_uniform(t);
    const auto fwd = integrate(SwirlField{}, x, s, Direction::forward);
    const auto back = integrate(SwirlField{}, fwd.x_end, s, Direction::backward);
    const double err = rel_l2(back.x_end, x);
    EXPECT_LT(err, prev);
    prev = err;
    if (t == 100) EXPECT_LT(err, 1e-3);
  }
}

TEST(Integrate, RecordsTrajectory) {
  const auto x = start_points();
  const auto s = schedule_raised_cosine(6);
  for (auto dir : {Direction::forward, Direction::backward}) {
    const auto r = integrate(SwirlField{}, x, s, dir, Integrator::euler, Guidance<double>{}, true);
    ASSERT_EQ(r.trajectories.size(), 3u);
    const auto& tr = r.trajectories[1];
    EXPECT_EQ(tr.states.rows(), 7u);
    EXPECT_EQ(tr.velocities.rows(), 6u);
    EXPECT_EQ(tr.direction, dir);
    EXPECT_TRUE(std::equal(tr.states.row(0).begin(), tr.states.row(0).end(), x.row(1).begin()));
    EXPECT_TRUE(std::equal(tr.states.row(6).begin(), tr.states.row(6).end(), r.x_end.row(1).begin()));
    // Euler: each state advances by the recorded velocity times the step.
    for (std::size_t k = 0; k < 6; ++k) {
      const double dt = dir == Direction::forward ? s.taus[k + 1] - s.taus[k]
                                                  : s.taus[5 - k] - s.taus[6 - k];
      for (std::size_t j = 0; j < 2; ++j) {
        EXPECT_NEAR(tr.states(k + 1, j), tr.states(k, j) + dt * tr.velocities(k, j), 1e-12);
      }
    }
  }
}

TEST(Integrate, DivergenceNamesStep) {
  const Grid<double> x(1, 1, 1.0);
  try {
    integrate(ConstantField{std::numeric_limits<double>::infinity()}, x, schedule_uniform(4),
              Direction::forward, Integrator::euler);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(Integrate, GuidanceBranches) {
  const auto x = start_points();
  const Grid<double> cond(1, 1, 0.4);
  const auto s = schedule_uniform(5);
  BranchCounter f1;
  integrate(f1, x, s, Direction::backward, Integrator::euler, Guidance<double>{cond, 1.0});
  EXPECT_EQ(f1.null, 0);
  EXPECT_EQ(f1.conditional, 5);
  BranchCounter f0;
  integrate(f0, x, s, Direction::backward, Integrator::euler, Guidance<double>{cond, 0.0});
  EXPECT_EQ(f0.conditional, 0);
  BranchCounter f2;
  const auto r2 = integrate(f2, x, s, Direction::backward, Integrator::euler,
                            Guidance<double>{cond, 2.0});
  EXPECT_EQ(f2.conditional, 5);
  EXPECT_EQ(f2.null, 5);
  // gamma = 0 equals a plain unconditional run.
  BranchCounter fa, fb;
  EXPECT_EQ(integrate(fa, x, s, Direction::backward, Integrator::euler, Guidance<double>{cond, 0.0}).x_end,
            integrate(fb, x, s, Direction::backward, Integrator::euler).x_end);
  EXPECT_NE(r2.x_end, x);
}

TEST(Bridge, EqualBranchesReduceToRoundTrip) {
  const auto x = start_points();
  BranchCounter f;
  f.branches_equal = true;
  BridgeRequest<double> req;
  req.input = x;
  req.target_condition = Grid<double>(1, 1, 0.9);
  req.gamma = 1.7;
  req.steps = 100;
  const auto out = gfb_transfer(f, req);
  EXPECT_LT(rel_l2(out.output, x), 1e-3);
}

TEST(Bridge, EncodeIsUnconditionalDecodeIsConditional) {
  BranchCounter f;
  BridgeRequest<double> req;
  req.input = start_points();
  req.target_condition = Grid<double>(1, 1, 0.2);
  req.steps = 4;
  req.integrator = Integrator::euler;
  gfb_transfer(f, req);
  EXPECT_EQ(f.null, 4);          // encode only
  EXPECT_EQ(f.conditional, 4);   // decode at gamma = 1
}

TEST(Bridge, Deterministic) {
  BridgeRequest<double> req;
  req.input = start_points();
  req.target_condition = Grid<double>(1, 1, 0.3);
  req.gamma = 1.5;
  req.record = true;
  const auto a = gfb_transfer(BranchCounter{}, req);
  const auto b = gfb_transfer(BranchCounter{}, req);
  EXPECT_EQ(a.output, b.output);
  EXPECT_EQ(a.latent, b.latent);
  EXPECT_EQ(a.decode.size(), 3u);
}

TEST(Bridge, Validation) {
  BridgeRequest<double> req;
  req.input = start_points();
  req.steps = 0;
  EXPECT_THROW(gfb_transfer(ConstantField{}, req), ValidationError);
  req.steps = 3;
  req.gamma = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(gfb_transfer(ConstantField{}, req), ValidationError);
}
