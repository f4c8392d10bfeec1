#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "gfb/flow.hpp"
#include "gradcheck.hpp"

using namespace gfb;

namespace {

Grid<double> filled(std::size_t r, std::size_t c, double v) { return Grid<double>(r, c, v); }

// Returns x1 - x0 of a fixed coupling regardless of input.
struct TargetStub {
  Grid<double> target;
  Grid<double> forward(const Grid<double>&, std::span<const double>, const Grid<double>&,
                       std::span<const std::uint8_t>) const {
    return target;
  }
};

struct ZeroStub {
  Grid<double> forward(const Grid<double>& x, std::span<const double>, const Grid<double>&,
                       std::span<const std::uint8_t>) const {
    return Grid<double>(x.rows(), x.cols());
  }
};

Coupling<double> random_coupling(std::size_t b, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Coupling<double> c;
  c.x0 = Grid<double>(b, n);
  c.x1 = Grid<double>(b, n);
  for (double& v : c.x0.flat()) v = d(rng);
  for (double& v : c.x1.flat()) v = d(rng);
  c.condition = Grid<double>(b, 0);
  c.present.assign(b, 0);
  return c;
}

}  // namespace

TEST(Interpolate, EndpointsAndArithmetic) {
  const auto x0 = filled(2, 3, 0.0);
  const auto x1 = filled(2, 3, 2.0);
  std::vector<double> t0{0.0, 0.0}, t1{1.0, 1.0}, tq{0.25, 0.25};
  EXPECT_EQ(interpolate(x0, x1, std::span<const double>(t0)).x_tau, x0);
  EXPECT_EQ(interpolate(x0, x1, std::span<const double>(t1)).x_tau, x1);
  const auto mid = interpolate(x0, x1, std::span<const double>(tq));
  for (double v : mid.x_tau.flat()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Interpolate, AffineInTau) {
  std::mt19937_64 rng(1);
  const auto c = random_coupling(3, 4, rng);
  std::vector<double> ta{0.1, 0.3, 0.9}, tb{0.5, 0.7, 0.2}, tm(3);
  for (int i = 0; i < 3; ++i) tm[i] = 0.5 * (ta[i] + tb[i]);
  const auto a = interpolate(c.x0, c.x1, std::span<const double>(ta)).x_tau;
  const auto b = interpolate(c.x0, c.x1, std::span<const double>(tb)).x_tau;
  const auto m = interpolate(c.x0, c.x1, std::span<const double>(tm)).x_tau;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a.flat()[i] + b.flat()[i], 2.0 * m.flat()[i], 1e-12);
  }
}

TEST(Interpolate, RejectsTauOutOfRange) {
  std::vector<double> bad{1.5};
  EXPECT_THROW(interpolate(filled(1, 2, 0), filled(1, 2, 1), std::span<const double>(bad)),
               ValidationError);
  std::vector<double> two{0.1, 0.2};
  EXPECT_THROW(interpolate(filled(1, 2, 0), filled(1, 2, 1), std::span<const double>(two)),
               ShapeError);
}

TEST(CfmTarget, Arithmetic) {
  EXPECT_EQ(cfm_target(filled(2, 2, 1.0), filled(2, 2, 3.0)), filled(2, 2, 2.0));
  EXPECT_EQ(cfm_target(filled(2, 2, 1.5), filled(2, 2, 1.5)), filled(2, 2, 0.0));
}

TEST(CfgCombine, Cases) {
  const auto vc = filled(2, 2, 3.0), vu = filled(2, 2, 1.0);
  EXPECT_EQ(cfg_combine(vc, vu, 1.0), vc);
  EXPECT_EQ(cfg_combine(vc, vu, 0.0), vu);
  EXPECT_EQ(cfg_combine(vc, vu, 2.0), filled(2, 2, 5.0));
  for (double g : {-1.0, 0.3, 7.0}) EXPECT_EQ(cfg_combine(vc, vc, g), vc);
}

TEST(CfmLoss, PerfectAndZeroModels) {
  std::mt19937_64 rng(2);
  const auto c = random_coupling(4, 3, rng);
  std::vector<double> tau{0.1, 0.4, 0.6, 0.9};
  std::vector<std::uint8_t> drop(4, 0);
  const TargetStub perfect{cfm_target(c.x0, c.x1)};
  EXPECT_EQ(cfm_loss<double>(perfect, c, tau, drop).loss, 0.0);

  const auto rep = cfm_loss<double>(ZeroStub{}, c, tau, drop);
  double expect = 0.0;
  for (std::size_t i = 0; i < c.x0.size(); ++i) {
    const double d = c.x1.flat()[i] - c.x0.flat()[i];
    expect += d * d;
  }
  expect /= static_cast<double>(c.x0.size());
  EXPECT_NEAR(rep.loss, expect, 1e-12);
  double mean = 0.0;
  for (double v : rep.per_sample) mean += v;
  EXPECT_NEAR(rep.loss, mean / 4.0, 1e-12);
}

TEST(CfmLoss, GradientsVanishAtTargetField) {
  // A model with zero output fits the coupling x1 = x0 exactly.
  nn::ModelConfig cfg;
  cfg.data_dim = 2;
  cfg.hidden = 8;
  cfg.depth = 1;
  nn::VectorFieldModel<double> m(cfg);
  m.initialize(3, true);
  std::mt19937_64 rng(4);
  auto c = random_coupling(5, 2, rng);
  c.x1 = c.x0;
  std::vector<double> tau{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<std::uint8_t> drop(5, 0);
  std::vector<double> g(m.parameter_count());
  const auto rep = cfm_loss<double>(m, c, tau, drop, g);
  EXPECT_EQ(rep.loss, 0.0);
  double norm = 0.0;
  for (double v : g) norm += v * v;
  EXPECT_LT(std::sqrt(norm), 1e-6);
}

TEST(CfmLoss, GradientsMatchFiniteDifferences) {
  nn::ModelConfig cfg;
  cfg.data_dim = 2;
  cfg.hidden = 16;
  cfg.depth = 1;
  cfg.cond_dim = 1;
  nn::VectorFieldModel<double> m(cfg);
  m.initialize(5);
  std::mt19937_64 rng(6);
  const auto c = gradcheck::random_coupling<double>(6, cfg, rng);
  std::vector<double> tau{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::uint8_t> drop{0, 1, 0, 1, 0, 0};
  for (const auto& p : gradcheck::check_gradients<double>(m, c, tau, drop, 25, 1e-3, rng)) {
    EXPECT_LT(p.rel_error, 1e-3) << p.index;
  }
}

TEST(CfmLoss, DropMaskSelectsNullBranch) {
  nn::ModelConfig cfg;
  cfg.data_dim = 2;
  cfg.hidden = 8;
  cfg.depth = 1;
  cfg.cond_dim = 1;
  nn::VectorFieldModel<double> m(cfg);
  m.initialize(7);
  std::mt19937_64 rng(8);
  auto c = gradcheck::random_coupling<double>(3, cfg, rng);
  std::vector<double> tau{0.2, 0.5, 0.8};
  std::vector<std::uint8_t> all{1, 1, 1}, none{0, 0, 0};
  auto uncond = c;
  uncond.present.assign(3, 0);
  EXPECT_EQ(cfm_loss<double>(m, c, tau, all).loss, cfm_loss<double>(m, uncond, tau, none).loss);
  EXPECT_NE(cfm_loss<double>(m, c, tau, none).loss, cfm_loss<double>(m, c, tau, all).loss);
  std::vector<std::uint8_t> short_mask{0};
  EXPECT_THROW(cfm_loss<double>(m, c, tau, short_mask), ShapeError);
}
