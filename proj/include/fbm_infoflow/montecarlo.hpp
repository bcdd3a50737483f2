#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <vector>

#include "fbm_infoflow/channels.hpp"
#include "fbm_infoflow/errors.hpp"
#include "fbm_infoflow/parallel.hpp"
#include "fbm_infoflow/rng.hpp"

namespace fbm_infoflow {

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::uint64_t n_samples = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// Streaming mean / sum of squared deviations; merge is Chan et al.
struct Moments {
  std::uint64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }

  void merge(const Moments& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double total = static_cast<double>(n + o.n);
    const double d = o.mean - mean;
    mean += d * static_cast<double>(o.n) / total;
    m2 += o.m2 + d * d * static_cast<double>(n) * static_cast<double>(o.n) / total;
    n += o.n;
  }
};

// Inverse CDF of a piecewise-linear grid density.
class GridSampler {
 public:
  explicit GridSampler(const InitialLaw::Grid& g) : grid_(g), cdf_(g.values.size(), 0.0) {
    const double h = g.step();
    for (std::size_t i = 1; i < g.values.size(); ++i)
      cdf_[i] = cdf_[i - 1] + 0.5 * h * (g.values[i - 1] + g.values[i]);
    total_ = cdf_.back();
  }

  double operator()(double u) const {
    const double target = u * total_;
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), target);
    std::size_t k = it == cdf_.begin() ? 0 : static_cast<std::size_t>(it - cdf_.begin()) - 1;
    k = std::min(k, cdf_.size() - 2);
    const double h = grid_.step();
    const double r = target - cdf_[k];
    const double f0 = grid_.values[k], f1 = grid_.values[k + 1];
    const double a = 0.5 * (f1 - f0) * h, b = f0 * h;
    const double disc = std::max(0.0, b * b + 4.0 * a * r);
    const double denom = b + std::sqrt(disc);
    const double s = denom > 0.0 ? std::clamp(2.0 * r / denom, 0.0, 1.0) : 0.0;
    return grid_.node(k) + s * h;
  }

 private:
  InitialLaw::Grid grid_;
  std::vector<double> cdf_;
  double total_ = 1.0;
};

}  // namespace detail

/// Draws X_t endpoint samples. Since X_t = phi(B_t) (or X_0 + B_t), only
/// B_t ~ N(0, t^{2H}) is needed; no path simulation.
class EndpointSampler {
 public:
  EndpointSampler(const Channel& channel, double t) : channel_(channel), t_(t) {
    if (!(t > 0.0)) throw DegenerateTimeError("Monte Carlo needs t > 0");
    sd_ = std::pow(t, channel.hurst().value());
    const auto& spec = channel.spec();
    if (!spec.is_multiplicative() && !spec.add().initial.is_gaussian())
      grid_ = std::make_shared<detail::GridSampler>(spec.add().initial.as_grid());
  }

  double operator()(Rng& rng, std::normal_distribution<double>& normal) const {
    const double b = sd_ * normal(rng);
    const auto& spec = channel_.spec();
    if (spec.is_multiplicative()) return (*channel_.phi())(b);
    const InitialLaw& law = spec.add().initial;
    if (law.is_gaussian()) {
      const auto& g = law.as_gaussian();
      return g.mean + std::sqrt(g.variance) * normal(rng) + b;
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    return (*grid_)(unif(rng)) + b;
  }

 private:
  const Channel& channel_;
  double t_;
  double sd_;
  std::shared_ptr<detail::GridSampler> grid_;
};

inline constexpr std::uint64_t kMcBatchSize = 1 << 16;

/// Plain Monte Carlo estimate of E[g(X_t)]. Samples are split into fixed
/// batches seeded by derive_seed(seed, batch) and merged in batch order, so
/// the result is bit-identical for any worker count.
inline McEstimate mc_expectation(const Channel& channel, double t,
                                 const std::function<double(double)>& g, std::uint64_t n,
                                 std::uint64_t seed, unsigned threads = worker_count()) {
  if (n < 100) throw DomainError("Monte Carlo needs n >= 100 samples");
  const EndpointSampler sampler(channel, t);
  const std::uint64_t batches = (n + kMcBatchSize - 1) / kMcBatchSize;
  std::vector<detail::Moments> parts(batches);
  parallel_for(
      batches,
      [&](std::size_t b) {
        Rng rng = make_rng(seed, b);
        std::normal_distribution<double> normal;
        const std::uint64_t begin = b * kMcBatchSize;
        const std::uint64_t end = std::min(n, begin + kMcBatchSize);
        detail::Moments m;
        for (std::uint64_t i = begin; i < end; ++i) {
          double x = 0.0, y = 0.0;
          try {
            x = sampler(rng, normal);
            y = g(x);
          } catch (const NumericalError& e) {
            std::ostringstream os;
            os << "sample " << i << " (x=" << x << "): " << e.what();
            throw NumericalError(os.str());
          }
          if (!std::isfinite(y)) {
            std::ostringstream os;
            os << "test function returned " << y << " at sample " << i << " (x=" << x << ")";
            throw NumericalError(os.str());
          }
          m.push(y);
        }
        parts[b] = m;
      },
      threads);
  detail::Moments total;
  for (const auto& p : parts) total.merge(p);
  McEstimate est;
  est.mean = total.mean;
  est.n_samples = total.n;
  est.seed = seed;
  const double var = total.n > 1 ? total.m2 / static_cast<double>(total.n - 1) : 0.0;
  est.std_error = std::sqrt(var / static_cast<double>(total.n));
  return est;
}

/// Plug-in entropy estimate -mean[ln P_t(X)] using the field's analytic
/// log-density.
inline McEstimate mc_entropy(const Channel& channel, const DensityField& field, double t,
                             std::uint64_t n, std::uint64_t seed,
                             unsigned threads = worker_count()) {
  return mc_expectation(
      channel, t,
      [&field](double x) {
        const double l = field.log_density(x);
        if (!std::isfinite(l)) throw TailError("sample fell where the density underflows");
        return -l;
      },
      n, seed, threads);
}

}  // namespace fbm_infoflow
