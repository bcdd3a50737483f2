#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fbm_infoflow/doss.hpp"
#include "fbm_infoflow/quadrature.hpp"

using namespace fbm_infoflow;

namespace {

const Interval kWide{-1e7, 1e7};
constexpr double kTol = 1e-10;

}  // namespace

TEST(SolvePhi, UnitFlowIsShift) {
  const auto phi = solve_phi(SigmaModel::identity(kWide), 3.0, {-5.0, 5.0}, kTol);
  EXPECT_EQ(phi(0.0), 3.0);
  for (double z = -5.0; z <= 5.0; z += 0.0137) EXPECT_NEAR(phi(z), 3.0 + z, kTol);
}

TEST(SolvePhi, ConstantFlowIsLinear) {
  const double c = 2.5, x0 = -1.25;
  const auto phi = solve_phi(SigmaModel::constant(c, kWide), x0, {-6.0, 6.0}, kTol);
  for (double z = -6.0; z <= 6.0; z += 0.0731) EXPECT_NEAR(phi(z), x0 + c * z, kTol * (1 + std::abs(x0 + c * z)));
}

TEST(SolvePhi, SqrtOnePlusSquareFlowIsSinh) {
  const auto phi = solve_phi(SigmaModel::sqrt_one_plus_square(kWide), 0.0, {-4.0, 4.0}, kTol);
  EXPECT_EQ(phi(0.0), 0.0);
  for (double z = -4.0; z <= 4.0; z += 0.00917) {
    const double exact = std::sinh(z);
    EXPECT_LE(std::abs(phi(z) - exact), 10 * kTol * std::max(std::abs(exact), 1e-300) + 1e-15)
        << "z=" << z;
  }
}

TEST(SolvePhi, TableIsStrictlyIncreasingAndResidualSmall) {
  const auto phi = solve_phi(SigmaModel::sqrt_one_plus_square(kWide), 0.3, {-9.0, 9.0}, kTol);
  double prev = phi(-9.0);
  for (double z = -9.0 + 1e-3; z <= 9.0; z += 1.3e-3) {
    const double v = phi(z);
    EXPECT_GT(v, prev);
    prev = v;
  }
  EXPECT_LE(phi.max_ode_residual(), 10 * kTol);
}

TEST(SolvePhi, EscapeCarriesExitPoint) {
  try {
    solve_phi(SigmaModel::sqrt_one_plus_square({-10.0, 10.0}), 0.0, {-8.0, 8.0}, kTol);
    FAIL() << "expected FlowEscapeError";
  } catch (const FlowEscapeError& e) {
    // sinh(z) reaches 10 at z = asinh(10) ~ 2.998
    EXPECT_NEAR(std::abs(e.exit_z()), std::asinh(10.0), 0.01);
  }
}

TEST(SolvePhi, ZDomainMustContainZero) {
  EXPECT_THROW(solve_phi(SigmaModel::identity(kWide), 0.0, {0.5, 1.0}, kTol), DomainError);
  EXPECT_THROW(solve_phi(SigmaModel::identity(kWide), 0.0, {-1.0, 1.0}, 0.0), DomainError);
}

TEST(InvertPhi, Examples) {
  const auto shift = solve_phi(SigmaModel::identity(kWide), 3.0, {-5.0, 5.0}, kTol);
  EXPECT_NEAR(invert_phi(shift, 3.0), 0.0, 1e-12);
  const auto sinh_flow = solve_phi(SigmaModel::sqrt_one_plus_square(kWide), 0.0, {-4.0, 4.0}, kTol);
  EXPECT_NEAR(invert_phi(sinh_flow, 1.1752012), std::asinh(1.1752012), 1e-10);
  EXPECT_NEAR(invert_phi(sinh_flow, std::sinh(1.0)), 1.0, 1e-10);
  const auto lin = solve_phi(SigmaModel::constant(0.7, kWide), -2.0, {-5.0, 5.0}, kTol);
  EXPECT_NEAR(invert_phi(lin, -2.0), 0.0, 1e-12);
}

TEST(InvertPhi, RoundTripAndResidual) {
  const auto phi = solve_phi(SigmaModel::sqrt_one_plus_square(kWide), 1.0, {-8.0, 8.0}, kTol);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(-8.0, 8.0);
  for (int i = 0; i < 256; ++i) {
    const double z = unif(rng);
    const double x = phi(z);
    const double back = invert_phi(phi, x);
    EXPECT_LE(std::abs(back - z), 1e-10) << z;
    EXPECT_LE(std::abs(phi(back) - x), 1e-12 * (1 + std::abs(x)));
  }
}

TEST(InvertPhi, OutOfRangeIsRangeError) {
  const auto phi = solve_phi(SigmaModel::identity(kWide), 0.0, {-1.0, 1.0}, kTol);
  EXPECT_THROW(invert_phi(phi, 1.5), RangeError);
  EXPECT_THROW(phi(2.0), RangeError);
}

TEST(PushforwardDensity, UnitFlowAtZero) {
  const auto phi = solve_phi(SigmaModel::constant(1.0, kWide), 0.0, default_z_domain(1.0, HurstParameter(0.3)), kTol);
  for (double h : {0.3, 0.5, 0.8}) {
    EXPECT_NEAR(pushforward_density(phi, 1.0, HurstParameter(h), 0.0), 1.0 / std::sqrt(2 * std::numbers::pi), 1e-12);
  }
}

TEST(PushforwardDensity, ConstantSigmaIsGaussian) {
  const double c = 1.7, x0 = 0.4, t = 1.3;
  const HurstParameter H(0.65);
  const auto phi = solve_phi(SigmaModel::constant(c, kWide), x0, default_z_domain(2.0, H), kTol);
  const double v = c * c * std::pow(t, 2 * H.value());
  for (double x = -4.0; x <= 4.0; x += 0.173) {
    const double exact = std::exp(-0.5 * (x - x0) * (x - x0) / v) / std::sqrt(2 * std::numbers::pi * v);
    EXPECT_LE(std::abs(pushforward_density(phi, t, H, x) - exact), 1e-10 * exact) << x;
  }
}

TEST(PushforwardDensity, NormalizedAndNonNegative) {
  const HurstParameter H(0.75);
  const auto phi = solve_phi(SigmaModel::sqrt_one_plus_square(kWide), 0.5, default_z_domain(1.0, H), kTol);
  QuadratureSpec q;
  q.abs_tol = 1e-12;
  q.rel_tol = 1e-12;
  // integrate in z to tame the heavy x-tails: dx = sigma(phi(z)) dz
  const auto z = phi.z_domain();
  const auto r = integrate(
      [&](double u) {
        const double x = phi(u);
        const double p = pushforward_density(phi, 1.0, H, x);
        EXPECT_GE(p, 0.0);
        return p * phi.sigma()(x);
      },
      z.lo, z.hi, q);
  EXPECT_NEAR(r.value, 1.0, 1e-8);
}

TEST(PushforwardDensity, SinhMatchesMonteCarloHistogram) {
  const HurstParameter H(0.75);
  const auto phi = solve_phi(SigmaModel::sqrt_one_plus_square(kWide), 0.0, default_z_domain(1.0, H), kTol);
  const int n = 1000000, bins = 40;
  const double lo = -5.0, hi = 5.0, w = (hi - lo) / bins;
  std::vector<int> counts(bins, 0);
  std::mt19937_64 rng(123);
  std::normal_distribution<double> normal;
  for (int i = 0; i < n; ++i) {
    const double x = std::sinh(normal(rng));
    if (x >= lo && x < hi) ++counts[static_cast<int>((x - lo) / w)];
  }
  for (int b = 0; b < bins; ++b) {
    const auto prob = integrate([&](double x) { return pushforward_density(phi, 1.0, H, x); },
                                lo + b * w, lo + (b + 1) * w, QuadratureSpec{}).value;
    const double se = std::sqrt(prob * (1 - prob) / n);
    EXPECT_LE(std::abs(counts[b] / double(n) - prob), 4 * se) << "bin " << b;
  }
}

TEST(PushforwardDensity, ZeroTimeIsDegenerate) {
  const auto phi = solve_phi(SigmaModel::identity(kWide), 0.0, {-5.0, 5.0}, kTol);
  EXPECT_THROW(pushforward_density(phi, 0.0, HurstParameter(0.5), 0.0), DegenerateTimeError);
}
