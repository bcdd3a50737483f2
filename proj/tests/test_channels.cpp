#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fbm_infoflow/channels.hpp"
#include "fbm_infoflow/infofunc.hpp"

using namespace fbm_infoflow;

namespace {

const Interval kWide{-1e7, 1e7};

double gauss(double x, double m, double v) {
  return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2 * std::numbers::pi * v);
}

}  // namespace

TEST(AdditiveChannel, GaussianInitialAtOrigin) {
  const Channel ch(ChannelSpec::additive(InitialLaw::gaussian(0, 1), HurstParameter(0.5)), 0.1, 1.0);
  const auto f = ch.density_at(1.0);
  EXPECT_NEAR(f.density(0.0), 1.0 / std::sqrt(4 * std::numbers::pi), 1e-12);
  EXPECT_NEAR(f.density(0.0), 0.2820948, 1e-7);
  ASSERT_TRUE(f.is_gaussian());
}

TEST(AdditiveChannel, VarianceAddsFbmVariance) {
  for (double h : {0.2, 0.5, 0.8}) {
    for (double t : {0.5, 1.0, 2.0}) {
      const Channel ch(ChannelSpec::additive(InitialLaw::gaussian(1.5, 0.7), HurstParameter(h)), 0.1, 2.0);
      const auto f = ch.density_at(t);
      EXPECT_NEAR(f.gaussian()->variance, 0.7 + std::pow(t, 2 * h), 1e-14);
      const double m2 = expectation(f.without_closed_form(), [](double x) { return (x - 1.5) * (x - 1.5); });
      EXPECT_NEAR(m2, 0.7 + std::pow(t, 2 * h), 1e-8);
    }
  }
}

TEST(MultiplicativeChannel, UnitSigmaIsGaussianShift) {
  const HurstParameter H(0.35);
  const Channel ch(ChannelSpec::multiplicative(SigmaModel::identity(kWide), 0.8, H), 0.1, 2.0);
  for (double t : {0.3, 1.0, 2.0}) {
    const auto f = ch.density_at(t);
    const double v = std::pow(t, 2 * H.value());
    for (double x = -3.0; x <= 4.0; x += 0.11)
      EXPECT_LE(std::abs(f.density(x) - gauss(x, 0.8, v)), 1e-10 * gauss(x, 0.8, v) + 1e-300);
  }
}

TEST(AdditiveChannel, SampledGaussianGridMatchesClosedForm) {
  const HurstParameter H(0.75);
  const Channel grid(ChannelSpec::additive(InitialLaw::sampled_gaussian(0, 1), H), 0.1, 2.0);
  const auto f = grid.density_at(2.0);
  const double v = 1 + std::pow(2.0, 1.5);
  for (double x = -6.0; x <= 6.0; x += 0.25) EXPECT_NEAR(f.density(x), gauss(x, 0, v), 1e-6) << x;
}

TEST(AdditiveChannel, GridFieldIsNormalizedAndNonNegative) {
  const Channel ch(ChannelSpec::additive(InitialLaw::uniform(-1, 1, 401), HurstParameter(0.3)), 0.05, 1.0);
  for (double t : {0.05, 0.5, 1.0}) {
    const auto f = ch.density_at(t);
    EXPECT_NEAR(mass(f), 1.0, 1e-8) << t;
    for (double x = f.domain().lo; x <= f.domain().hi; x += 0.05) EXPECT_GE(f.density(x), 0.0);
  }
}

TEST(AdditiveChannel, GridTimeZeroIsTheInitialDensity) {
  const Channel ch(ChannelSpec::additive(InitialLaw::uniform(-1, 1, 21), HurstParameter(0.3)), 0.5, 1.0);
  const auto f = ch.density_at(0.0);
  EXPECT_DOUBLE_EQ(f.density(0.3), 0.5);
  EXPECT_EQ(f.density(1.5), 0.0);
}

TEST(AdditiveChannel, KernelNarrowerThanGridIsResolutionError) {
  const Channel ch(ChannelSpec::additive(InitialLaw::uniform(-1, 1, 201), HurstParameter(0.5)), 0.5, 1.0);
  EXPECT_THROW(ch.density_at(1e-8), ResolutionError);
}

TEST(Channel, BeyondWindowIsRangeError) {
  const Channel ch(ChannelSpec::additive(InitialLaw::gaussian(0, 1), HurstParameter(0.5)), 0.1, 1.0);
  EXPECT_THROW(ch.density_at(1.5), RangeError);
}

TEST(Channel, MultiplicativeTimeZeroIsDegenerate) {
  const Channel ch(ChannelSpec::multiplicative(SigmaModel::identity(kWide), 0, HurstParameter(0.5)), 0.1, 1.0);
  EXPECT_THROW(ch.density_at(0.0), DegenerateTimeError);
}

TEST(InitialLaw, RejectsBadGrids) {
  EXPECT_THROW(InitialLaw::grid({0, 1}, {1.0, 1.0}), GridError);
  EXPECT_THROW(InitialLaw::grid({0, 1}, {1.0, 2.0, 1.0}), DomainError);
  EXPECT_THROW(InitialLaw::grid({0, 2}, {0.5, -0.1, 0.6}), DomainError);
  EXPECT_THROW(InitialLaw::gaussian(0, 0), DomainError);
}

TEST(InitialLaw, GridMomentsAreExact) {
  const auto u = InitialLaw::uniform(-1, 3, 11);
  EXPECT_NEAR(u.mean(), 1.0, 1e-14);
  EXPECT_NEAR(u.second_moment(), (27.0 + 1.0) / 12.0, 1e-14);
}

TEST(Score, Examples) {
  const auto f = gaussian_field(0, 1);
  EXPECT_EQ(score_at(f, 0.0), 0.0);
  const auto g = gaussian_field(1, 2);
  EXPECT_DOUBLE_EQ(score_at(g, 2.0), -0.5);
}

TEST(Score, PushforwardScoreMatchesFiniteDifference) {
  const HurstParameter H(0.75);
  const Channel ch(ChannelSpec::multiplicative(SigmaModel::sqrt_one_plus_square(kWide), 0.0, H), 0.5, 1.0);
  const auto f = ch.density_at(1.0);
  for (double x = -3.0; x <= 3.0; x += 0.37) {
    const double h = 1e-4;
    const double fd = (f.log_density(x + h) - f.log_density(x - h)) / (2 * h);
    EXPECT_NEAR(score_at(f, x), fd, 1e-5) << x;
  }
}

TEST(Score, MixtureScoreMatchesFiniteDifference) {
  const Channel ch(ChannelSpec::additive(InitialLaw::uniform(-1, 1, 201), HurstParameter(0.3)), 0.2, 1.0);
  const auto f = ch.density_at(0.5);
  for (double x = -2.0; x <= 2.0; x += 0.23) {
    const double h = 1e-5;
    const double fd = (f.log_density(x + h) - f.log_density(x - h)) / (2 * h);
    EXPECT_NEAR(score_at(f, x), fd, 1e-5) << x;
  }
}

TEST(Score, UnderflowIsTailError) {
  const auto f = gaussian_field(0, 1);
  EXPECT_THROW(score_at(f, 60.0), TailError);
}
