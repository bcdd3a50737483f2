#include <gtest/gtest.h>

#include <cmath>

#include "fbm_infoflow/infofunc.hpp"
#include "fbm_infoflow/montecarlo.hpp"

using namespace fbm_infoflow;

namespace {

const Interval kWide{-1e7, 1e7};

Channel unit_channel(double h) {
  return Channel(ChannelSpec::multiplicative(SigmaModel::constant(1, kWide), 0, HurstParameter(h)), 0.5, 1.0);
}

}  // namespace

TEST(MonteCarlo, ConstantFunctionHasNoError) {
  const auto est = mc_expectation(unit_channel(0.6), 1.0, [](double) { return 1.0; }, 1000, 3);
  EXPECT_EQ(est.mean, 1.0);
  EXPECT_EQ(est.std_error, 0.0);
  EXPECT_EQ(est.n_samples, 1000u);
  EXPECT_EQ(est.seed, 3u);
}

TEST(MonteCarlo, SecondMomentOfUnitChannel) {
  const auto est = mc_expectation(unit_channel(0.75), 1.0, [](double x) { return x * x; }, 200000, 17);
  EXPECT_LE(std::abs(est.mean - 1.0), 4 * est.std_error);
}

TEST(MonteCarlo, SigmaTermsAgreeWithQuadrature) {
  const auto sigma = SigmaModel::sqrt_one_plus_square(kWide);
  const Channel ch(ChannelSpec::multiplicative(sigma, 0, HurstParameter(0.5)), 0.5, 1.0);
  const auto g = [&](double x) {
    const double s1 = sigma.eval(x, 1);
    return sigma.eval(x, 2) * sigma.eval(x, 0) + s1 * s1;
  };
  const double quad = expectation(ch.density_at(1.0), g, QuadratureSpec::tight());
  const auto est = mc_expectation(ch, 1.0, g, 1000000, 99);
  EXPECT_LE(std::abs(est.mean - quad), 4 * est.std_error + 1e-12);
}

TEST(MonteCarlo, GridInitialLawMoments) {
  const Channel ch(ChannelSpec::additive(InitialLaw::uniform(-1, 2, 301), HurstParameter(0.3)), 0.5, 1.0);
  const auto est = mc_expectation(ch, 1.0, [](double x) { return x; }, 300000, 5);
  EXPECT_LE(std::abs(est.mean - 0.5), 4 * est.std_error);
  const auto m2 = mc_expectation(ch, 1.0, [](double x) { return x * x; }, 300000, 6);
  // E[X_0^2] = 0.75 + 0.25, plus t^{2H} = 1
  EXPECT_LE(std::abs(m2.mean - 2.0), 4 * m2.std_error);
}

TEST(MonteCarlo, EntropyPlugInMatchesQuadrature) {
  const Channel ch(ChannelSpec::multiplicative(SigmaModel::sqrt_one_plus_square(kWide), 0.2, HurstParameter(0.7)), 0.5, 1.0);
  const auto f = ch.density_at(1.0);
  const auto est = mc_entropy(ch, f, 1.0, 200000, 8);
  EXPECT_LE(std::abs(est.mean - entropy(f)), 4 * est.std_error);
}

TEST(MonteCarlo, BitIdenticalAcrossRunsAndThreadCounts) {
  const Channel ch = unit_channel(0.4);
  const auto g = [](double x) { return std::sin(x) + x * x; };
  const auto a = mc_expectation(ch, 0.8, g, 300000, 42, 1);
  const auto b = mc_expectation(ch, 0.8, g, 300000, 42, 1);
  const auto c = mc_expectation(ch, 0.8, g, 300000, 42, 4);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std_error, b.std_error);
  EXPECT_EQ(a.mean, c.mean);
  EXPECT_EQ(a.std_error, c.std_error);
  const auto d = mc_expectation(ch, 0.8, g, 300000, 43, 1);
  EXPECT_NE(a.mean, d.mean);
}

TEST(MonteCarlo, TooFewSamplesRejected) {
  EXPECT_THROW(mc_expectation(unit_channel(0.5), 1.0, [](double x) { return x; }, 99, 1), DomainError);
}

TEST(MonteCarlo, FailingTestFunctionReportsSample) {
  try {
    mc_expectation(unit_channel(0.5), 1.0, [](double x) { return std::log(x); }, 1000, 1, 1);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("sample"), std::string::npos);
  }
}
