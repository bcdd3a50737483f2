#pragma once

#include <fftw3.h>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fbm_infoflow/errors.hpp"
#include "fbm_infoflow/rng.hpp"

namespace fbm_infoflow {

/// Hurst exponent, constrained to the open interval (0, 1).
class HurstParameter {
 public:
  explicit HurstParameter(double value) : value_(value) {
    if (!(value > 0.0 && value < 1.0)) {
      throw DomainError("Hurst parameter must lie in (0,1), got " + std::to_string(value));
    }
  }
  double value() const noexcept { return value_; }
  operator double() const noexcept { return value_; }

 private:
  double value_;
};

/// E[B_s B_t] = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2.
inline double covariance(double s, double t, HurstParameter hurst) {
  if (s < 0.0 || t < 0.0) throw DomainError("fBm covariance needs non-negative times");
  const double two_h = 2.0 * hurst.value();
  return 0.5 * (std::pow(t, two_h) + std::pow(s, two_h) - std::pow(std::abs(t - s), two_h));
}

/// Autocovariance of unit-step fractional Gaussian noise at integer lag k.
inline double fgn_autocovariance(std::size_t k, HurstParameter hurst) {
  const double two_h = 2.0 * hurst.value();
  const double kk = static_cast<double>(k);
  if (k == 0) return 1.0;
  return 0.5 * (std::pow(kk + 1.0, two_h) - 2.0 * std::pow(kk, two_h) +
                std::pow(kk - 1.0, two_h));
}

enum class FbmMethod { Cholesky, Circulant };

inline const char* to_string(FbmMethod m) {
  return m == FbmMethod::Cholesky ? "cholesky" : "circulant";
}

struct FbmPath {
  std::vector<double> times;
  std::vector<double> values;
  HurstParameter hurst{0.5};
  std::uint64_t seed = 0;
  FbmMethod method = FbmMethod::Cholesky;
  /// Set when circulant embedding was not non-negative definite and the
  /// sampler fell back to Cholesky.
  bool fell_back_to_cholesky = false;
};

namespace detail {

// FFTW planning is not thread-safe; execution with the new-array interface is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwDeleter {
  void operator()(fftw_complex* p) const noexcept { fftw_free(p); }
};
using FftwBuffer = std::unique_ptr<fftw_complex[], FftwDeleter>;

inline FftwBuffer fftw_buffer(std::size_t n) {
  return FftwBuffer(fftw_alloc_complex(n));
}

class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    auto in = fftw_buffer(n);
    auto out = fftw_buffer(n);
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_1d(static_cast<int>(n), in.get(), out.get(), FFTW_FORWARD,
                             FFTW_ESTIMATE);
  }
  ~FftPlan() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  // Buffers must come from fftw_buffer() so alignment matches the plan.
  void execute(fftw_complex* in, fftw_complex* out) const { fftw_execute_dft(plan_, in, out); }
  std::size_t size() const noexcept { return n_; }

 private:
  std::size_t n_;
  fftw_plan plan_;
};

/// Eigenvalues of the size-2n symmetric circulant with first row
/// [r0..r_{n-1}, r_n, r_{n-1}..r1]; `autocov` holds the n+1 lags r0..r_n.
/// Returns nullopt if the embedding is not non-negative definite.
inline std::optional<std::vector<double>> circulant_eigenvalues(std::span<const double> autocov,
                                                                const FftPlan& plan) {
  const std::size_t n = autocov.size() - 1;
  const std::size_t m = 2 * n;
  auto in = fftw_buffer(m);
  auto out = fftw_buffer(m);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t lag = k <= n ? k : m - k;
    in[k][0] = autocov[lag];
    in[k][1] = 0.0;
  }
  plan.execute(in.get(), out.get());
  std::vector<double> lambda(m);
  double max_lambda = 0.0;
  for (std::size_t k = 0; k < m; ++k) max_lambda = std::max(max_lambda, out[k][0]);
  for (std::size_t k = 0; k < m; ++k) {
    double l = out[k][0];
    if (l < 0.0) {
      if (l < -1e-10 * max_lambda) return std::nullopt;
      l = 0.0;
    }
    lambda[k] = l;
  }
  return lambda;
}

}  // namespace detail

/// Exact-in-law sampler of fBm on a fixed time grid.
///
/// The grid is strictly increasing with non-negative entries; a leading zero
/// is allowed and pinned to B_0 = 0. The circulant method (Davies-Harte) needs
/// the positive points to be dt, 2dt, ..., n dt. Setup cost (Cholesky factor
/// or circulant spectrum) is paid once; draws are then pure functions of the
/// seed and safe to call concurrently.
class FbmSampler {
 public:
  FbmSampler(std::vector<double> grid, HurstParameter hurst, FbmMethod method)
      : grid_(std::move(grid)), hurst_(hurst), requested_(method), method_(method) {
    validate_grid();
    if (method_ == FbmMethod::Circulant) {
      if (!setup_circulant()) {
        method_ = FbmMethod::Cholesky;
        fell_back_ = true;
      }
    }
    if (method_ == FbmMethod::Cholesky) setup_cholesky();
  }

  const std::vector<double>& grid() const noexcept { return grid_; }
  HurstParameter hurst() const noexcept { return hurst_; }
  FbmMethod requested_method() const noexcept { return requested_; }
  FbmMethod effective_method() const noexcept { return method_; }
  bool fell_back_to_cholesky() const noexcept { return fell_back_; }

  FbmPath sample(std::uint64_t seed) const {
    FbmPath path;
    path.times = grid_;
    path.values.assign(grid_.size(), 0.0);
    path.hurst = hurst_;
    path.seed = seed;
    path.method = requested_;
    path.fell_back_to_cholesky = fell_back_;
    Rng rng = make_rng(seed, method_ == FbmMethod::Circulant ? 1 : 0);
    sample_into(rng, std::span<double>(path.values).subspan(offset_));
    return path;
  }

  /// Writes B at the positive grid points into `out` (size = #positive points).
  void sample_into(Rng& rng, std::span<double> out) const {
    std::normal_distribution<double> normal;
    const std::size_t n = out.size();
    if (method_ == FbmMethod::Cholesky) {
      Eigen::VectorXd z(n);
      for (std::size_t i = 0; i < n; ++i) z[i] = normal(rng);
      Eigen::VectorXd x = lower_ * z;
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i];
      return;
    }
    const std::size_t m = 2 * n;
    auto in = detail::fftw_buffer(m);
    auto res = detail::fftw_buffer(m);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < m; ++k) {
      const double a = std::sqrt(lambda_[k] * inv_m);
      in[k][0] = a * normal(rng);
      in[k][1] = a * normal(rng);
    }
    plan_->execute(in.get(), res.get());
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      acc += res[k][0];
      out[k] = scale_ * acc;
    }
  }

 private:
  void validate_grid() {
    if (grid_.empty()) throw GridError("fBm grid is empty");
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      if (!(grid_[i] >= 0.0) || !std::isfinite(grid_[i]))
        throw GridError("fBm grid times must be finite and non-negative");
      if (i > 0 && !(grid_[i] > grid_[i - 1]))
        throw GridError("fBm grid must be strictly increasing");
    }
    offset_ = grid_.front() == 0.0 ? 1 : 0;
    if (offset_ == grid_.size()) throw GridError("fBm grid has no positive time");
  }

  bool setup_circulant() {
    const std::size_t n = grid_.size() - offset_;
    const double dt = grid_[offset_];
    for (std::size_t k = 0; k < n; ++k) {
      const double expect = dt * static_cast<double>(k + 1);
      if (std::abs(grid_[offset_ + k] - expect) > 1e-9 * expect) {
        throw GridError("circulant sampler requires a uniform grid dt, 2dt, ..., n dt");
      }
    }
    std::vector<double> autocov(n + 1);
    for (std::size_t k = 0; k <= n; ++k) autocov[k] = fgn_autocovariance(k, hurst_);
    plan_ = std::make_shared<detail::FftPlan>(2 * n);
    auto lambda = detail::circulant_eigenvalues(autocov, *plan_);
    if (!lambda) {
      plan_.reset();
      return false;
    }
    lambda_ = std::move(*lambda);
    scale_ = std::pow(dt, hurst_.value());
    return true;
  }

  void setup_cholesky() {
    const std::size_t n = grid_.size() - offset_;
    Eigen::MatrixXd cov(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        cov(i, j) = cov(j, i) = covariance(grid_[offset_ + i], grid_[offset_ + j], hurst_);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
      throw GridError("fBm covariance matrix is not positive definite on this grid");
    lower_ = llt.matrixL();
  }

  std::vector<double> grid_;
  HurstParameter hurst_;
  FbmMethod requested_;
  FbmMethod method_;
  bool fell_back_ = false;
  std::size_t offset_ = 0;

  Eigen::MatrixXd lower_;
  std::shared_ptr<const detail::FftPlan> plan_;
  std::vector<double> lambda_;
  double scale_ = 1.0;
};

/// One-shot convenience wrapper around FbmSampler.
inline FbmPath sample_path(std::vector<double> grid, HurstParameter hurst, FbmMethod method,
                           std::uint64_t seed) {
  return FbmSampler(std::move(grid), hurst, method).sample(seed);
}

/// Uniform grid dt, 2dt, ..., n dt.
inline std::vector<double> uniform_grid(std::size_t n, double dt) {
  if (n == 0 || !(dt > 0.0)) throw GridError("uniform grid needs n >= 1 and dt > 0");
  std::vector<double> g(n);
  for (std::size_t k = 0; k < n; ++k) g[k] = dt * static_cast<double>(k + 1);
  return g;
}

}  // namespace fbm_infoflow
