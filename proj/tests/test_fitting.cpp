#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "vma/fitting.hpp"
#include "vma/sweep.hpp"

using namespace vma;

namespace {

constexpr double kEps0 = 0.05;
constexpr double kDeps = 0.02;

std::vector<double> speeds() { return log_grid(0.01, 10.0, 9); }

FitProblem synthetic(const SlseChain& truth, double noise = 0.0, unsigned seed = 0, bool both_sides = true) {
  FitProblem p;
  p.d_eps = kDeps;
  p.eps0 = kEps0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double v : speeds()) {
    for (double s : {1.0, -1.0}) {
      if (!both_sides && s < 0) continue;
      const double fv = model_fv(truth, s * v, kDeps, kEps0);
      p.points.push_back({s * v, fv * (1.0 + noise * n(rng)), 1.0});
    }
  }
  return p;
}

bool has_flag(const FitResult& r, const std::string& text) {
  for (const auto& f : r.flags)
    if (f.find(text) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST(RSquared, Cases) {
  const std::vector<double> data{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(r_squared(data, data), 1.0);
  const std::vector<double> mean(4, 2.5);
  EXPECT_DOUBLE_EQ(r_squared(mean, data), 0.0);
  const std::vector<double> off{2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(r_squared(off, data), 1.0 - 4.0 / 5.0);
  const std::vector<double> flat(4, 1.0);
  EXPECT_THROW(r_squared(data, flat), std::domain_error);
  // weight 2 on a point is the same as listing it twice
  const std::vector<double> m3{1.5, 2, 3}, d3{1, 2, 4}, w3{2, 1, 1};
  const std::vector<double> m4{1.5, 1.5, 2, 3}, d4{1, 1, 2, 4};
  EXPECT_NEAR(r_squared(m3, d3, w3), r_squared(m4, d4), 1e-15);
}

TEST(LevenbergMarquardt, Rosenbrock) {
  ResidualFunction fn = [](std::span<const double> x, std::vector<double>& r, std::vector<std::vector<double>>& j) {
    r = {10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]};
    j = {{-20.0 * x[0], 10.0}, {-1.0, 0.0}};
  };
  const auto res = levenberg_marquardt(fn, {-1.2, 1.0});
  EXPECT_TRUE(res.converged);
  EXPECT_NEAR(res.x[0], 1.0, 1e-8);
  EXPECT_NEAR(res.x[1], 1.0, 1e-8);
  EXPECT_LT(res.ssr, 1e-20);
}

TEST(LevenbergMarquardt, ObjectiveNeverIncreases) {
  std::vector<double> history;
  ResidualFunction fn = [&](std::span<const double> x, std::vector<double>& r, std::vector<std::vector<double>>& j) {
    r = {10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]};
    j = {{-20.0 * x[0], 10.0}, {-1.0, 0.0}};
  };
  double last = std::numeric_limits<double>::infinity();
  for (int it = 1; it < 40; ++it) {
    LeastSquaresOptions opt;
    opt.max_iterations = it;
    const auto res = levenberg_marquardt(fn, {-1.2, 1.0}, opt);
    EXPECT_LE(res.ssr, last);
    last = res.ssr;
  }
}

TEST(LevenbergMarquardt, BoundClipsRunawayParameter) {
  // the residual only vanishes as x grows without limit
  ResidualFunction fn = [](std::span<const double> x, std::vector<double>& r, std::vector<std::vector<double>>& j) {
    r = {std::exp(-x[0])};
    j = {{-std::exp(-x[0])}};
  };
  LeastSquaresOptions opt;
  opt.bound = 5.0;
  const auto res = levenberg_marquardt(fn, {0.0}, opt);
  EXPECT_LE(res.x[0], 5.0);
  EXPECT_NEAR(res.x[0], 5.0, 1e-6);
  EXPECT_TRUE(std::isfinite(res.ssr));
}

TEST(ElementTerms, JacobianMatchesFiniteDifferences) {
  for (double v : {-5.0, -0.3, 0.01, 0.2, 3.0}) {
    for (double gamma : {0.5, 10.0, 40.0}) {
      const double kappa = 2.0;
      const auto t = detail::element_terms(kappa, gamma, v, kDeps, kEps0);
      const double h = 1e-6;
      auto dfv = [&](double lk, double lg) { return dfv_single({std::exp(lk), std::exp(lg), 1.0}, {kEps0, kDeps, v}); };
      const double lk = std::log(kappa), lg = std::log(gamma);
      EXPECT_NEAR(t.dfv, dfv(lk, lg), 1e-12 * std::max(1.0, std::abs(t.dfv)));
      const double dk = (dfv(lk + h, lg) - dfv(lk - h, lg)) / (2 * h);
      const double dg = (dfv(lk, lg + h) - dfv(lk, lg - h)) / (2 * h);
      EXPECT_NEAR(t.dfv, dk, 1e-7 * std::max(1.0, std::abs(dk))) << v << ' ' << gamma;
      EXPECT_NEAR(t.d_log_gamma, dg, 1e-7 * std::max(1.0, std::abs(dg))) << v << ' ' << gamma;
    }
  }
}

TEST(InitControl, KappaWithinTenPercent) {
  const auto p = synthetic(SlseChain::single(8.0, 40.0));
  const auto g = init_control(p.points, kDeps, kEps0);
  EXPECT_NEAR(g.kappa, 8.0, 0.8);
  EXPECT_GT(g.gamma, 0.0);
}

TEST(InitControl, SidesAgreeOnSymmetricData) {
  const auto p = synthetic(SlseChain::single(8.0, 40.0));
  const auto a = init_control(p.points, kDeps, kEps0, RampDirection::extend);
  const auto b = init_control(p.points, kDeps, kEps0, RampDirection::shorten);
  EXPECT_NEAR(a.kappa, b.kappa, 1e-12 * a.kappa);
  EXPECT_NEAR(a.gamma, b.gamma, 1e-12 * a.gamma);
}

TEST(InitControl, SingleVelocityRejected) {
  std::vector<FitPoint> pts{{0.1, 1.5, 1}, {-0.1, 0.5, 1}, {0.1, 1.51, 1}};
  EXPECT_THROW(init_control(pts, kDeps, kEps0), std::domain_error);
  FitProblem p;
  p.points = pts;
  p.d_eps = kDeps;
  p.eps0 = kEps0;
  EXPECT_THROW(fit_control(p), std::domain_error);
}

TEST(FitControl, NoiselessRecovery) {
  const auto res = fit_control(synthetic(SlseChain::single(8.0, 40.0)));
  EXPECT_TRUE(res.converged);
  EXPECT_NEAR(res.control.kappa, 8.0, 8e-6);
  EXPECT_NEAR(res.control.gamma, 40.0, 40e-6);
  EXPECT_GT(res.r_squared, 1.0 - 1e-12);
  EXPECT_EQ(res.arity, ModelArity::one_slse);
}

TEST(FitControl, OneSidedDataStillRecovers) {
  const auto res = fit_control(synthetic(SlseChain::single(0.7, 3.0), 0.0, 0, false));
  EXPECT_NEAR(res.control.kappa, 0.7, 1e-6);
  EXPECT_NEAR(res.control.gamma, 3.0, 3e-6);
}

TEST(FitControl, NoisyFitsScatterAroundTruth) {
  std::vector<double> ek, eg;
  for (unsigned seed = 1; seed <= 30; ++seed) {
    const auto res = fit_control(synthetic(SlseChain::single(8.0, 40.0), 0.01, seed));
    ek.push_back(res.control.kappa / 8.0 - 1.0);
    eg.push_back(res.control.gamma / 40.0 - 1.0);
    EXPECT_GT(res.r_squared, 0.99);
  }
  std::sort(ek.begin(), ek.end());
  std::sort(eg.begin(), eg.end());
  EXPECT_LT(std::abs(ek[15]), 0.05);
  EXPECT_LT(std::abs(eg[15]), 0.1);
}

TEST(FitControl, UnreachedKneeLeavesGammaWeak) {
  FitProblem p;
  p.d_eps = kDeps;
  p.eps0 = kEps0;
  // every speed deep in the saturated regime: only kappa is informed
  const auto truth = SlseChain::single(2.0, 0.01);
  for (double v : {1.0, 2.0, 4.0, 8.0, 16.0})
    for (double s : {1.0, -1.0}) p.points.push_back({s * v, model_fv(truth, s * v, kDeps, kEps0), 1.0});
  const auto res = fit_control(p);
  EXPECT_TRUE(has_flag(res, "gamma: weakly identified"));
  EXPECT_FALSE(res.parameters[0].weak);
}

TEST(FitSheath, NoiselessRecovery) {
  const NormalizedSlse control{8.0, 40.0, 1.0};
  const auto truth = SlseChain::control_sheath(8.0, 40.0, 3.0, 2.0, 0.5);
  auto p = synthetic(truth);
  p.arity = ModelArity::two_slse;
  p.frozen_control = control;
  const auto res = fit_sheath(p);
  ASSERT_TRUE(res.sheath);
  EXPECT_NEAR(res.sheath->kappa, 3.0, 3e-4);
  EXPECT_NEAR(res.sheath->gamma, 2.0, 2e-4);
  EXPECT_NEAR(res.sheath->beta, 0.5, 0.5e-4);
  EXPECT_GT(res.r_squared, 1.0 - 1e-10);
}

TEST(FitSheath, FrozenControlIsBitIdentical) {
  const NormalizedSlse control{8.123456789, 40.987654321, 1.0};
  auto p = synthetic(SlseChain::control_sheath(8.0, 40.0, 3.0, 2.0, 0.5));
  p.frozen_control = control;
  const auto res = fit_sheath(p);
  EXPECT_EQ(std::memcmp(&res.control, &control, sizeof control), 0);
}

TEST(FitSheath, SheathBelowNoiseFloorIsWeak) {
  // beta 1e-5 moves dFV by ~1e-5, far under the 1e-3 noise floor
  auto p = synthetic(SlseChain::control_sheath(8.0, 40.0, 3.0, 2.0, 1e-5));
  p.frozen_control = NormalizedSlse{8.0, 40.0, 1.0};
  const auto res = fit_sheath(p);
  EXPECT_TRUE(res.parameters[0].weak);
  EXPECT_TRUE(res.parameters[1].weak);
  EXPECT_TRUE(res.parameters[2].weak);
  EXPECT_TRUE(has_flag(res, "beta_s: weakly identified"));
}

TEST(FitSheath, SmallButVisibleSheathIsIdentified) {
  auto p = synthetic(SlseChain::control_sheath(8.0, 40.0, 3.0, 2.0, 0.01));
  p.frozen_control = NormalizedSlse{8.0, 40.0, 1.0};
  const auto res = fit_sheath(p);
  for (const auto& q : res.parameters) EXPECT_FALSE(q.weak) << q.name;
}

TEST(FitSheath, SheathEqualToControlIsUnidentifiable) {
  auto p = synthetic(SlseChain::single(8.0, 40.0));
  p.frozen_control = NormalizedSlse{8.0, 40.0, 1.0};
  const auto res = fit_sheath(p);
  EXPECT_TRUE(has_flag(res, "unidentifiable")) << res.flags.size();
  EXPECT_GT(res.r_squared, 1.0 - 1e-10);
}

TEST(FitSheath, RequiresFrozenControl) {
  auto p = synthetic(SlseChain::single(8.0, 40.0));
  EXPECT_THROW(fit_sheath(p), std::domain_error);
}

TEST(FitProblem, FromCurveWeighting) {
  FvCurve c;
  c.d_eps = kDeps;
  c.eps0 = kEps0;
  c.groups = {{20, 2, RampDirection::extend, -0.1, 1.5, 0.01, 5}, {20, 2, RampDirection::shorten, 0.1, 0.5, 0.0, 3}};
  auto p = FitProblem::from_curve(c);
  ASSERT_EQ(p.points.size(), 2u);
  EXPECT_EQ(p.points[0].weight, 5.0);
  EXPECT_EQ(p.points[1].weight, 3.0);
  EXPECT_EQ(p.pressure, 20.0);
  p = FitProblem::from_curve(c, true);
  EXPECT_EQ(p.points[0].weight, 1.0);
  c.points = {{-0.1, 1.5, 20, 0, 2, RampDirection::extend, 1, 1.5}};
  EXPECT_EQ(FitProblem::from_curve(c).points.size(), 1u);
  EXPECT_EQ(FitProblem::from_curve(c, true).points.size(), 2u);
}
