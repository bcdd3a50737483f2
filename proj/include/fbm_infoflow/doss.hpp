#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "fbm_infoflow/errors.hpp"
#include "fbm_infoflow/fbm.hpp"
#include "fbm_infoflow/sigma_model.hpp"

namespace fbm_infoflow {

/// Number of standard deviations of B_{t_max} covered by the default flow
/// table, which leaves < 1.3e-15 Gaussian mass outside.
inline constexpr double kFlowStdDevs = 8.0;

inline Interval default_z_domain(double t_max, HurstParameter hurst) {
  if (!(t_max > 0.0)) throw DegenerateTimeError("t_max must be positive");
  const double half = kFlowStdDevs * std::pow(t_max, hurst.value());
  return {-half, half};
}

/// Tabulated solution of phi' = sigma(phi), phi(0) = x0, so that the channel
/// output is X_t = phi(B_t). Values live on a uniform grid on each side of
/// z = 0 with node slopes sigma(phi_k); between nodes the table is a
/// Fritsch-Carlson limited cubic Hermite, hence strictly increasing.
class PhiSolution {
 public:
  const SigmaModel& sigma() const noexcept { return sigma_; }
  double x0() const noexcept { return x0_; }
  const Interval& z_domain() const noexcept { return z_domain_; }
  double ode_tolerance() const noexcept { return tol_; }
  Interval range() const noexcept { return {phi_.front(), phi_.back()}; }
  std::size_t node_count() const noexcept { return z_.size(); }

  /// phi(z) from the interpolant.
  double operator()(double z) const {
    const auto [k, s, h] = locate(z);
    return hermite(k, s, h);
  }

  /// d/dz of the interpolant.
  double derivative(double z) const {
    const auto [k, s, h] = locate(z);
    return hermite_slope(k, s, h);
  }

  /// z with phi(z) = x. Bisection-safeguarded Newton on the bracketing cell.
  double invert(double x) const {
    if (!(x >= phi_.front() && x <= phi_.back())) {
      std::ostringstream os;
      os << "x=" << x << " outside flow range [" << phi_.front() << ", " << phi_.back() << "]";
      throw RangeError(os.str());
    }
    auto it = std::upper_bound(phi_.begin(), phi_.end(), x);
    std::size_t k = it == phi_.begin() ? 0 : static_cast<std::size_t>(it - phi_.begin()) - 1;
    if (k + 1 >= phi_.size()) k = phi_.size() - 2;
    const double h = z_[k + 1] - z_[k];
    const double tol = 1e-13 * (1.0 + std::abs(x));
    double lo = 0.0, hi = 1.0;
    const double span = phi_[k + 1] - phi_[k];
    double s = span > 0.0 ? std::clamp((x - phi_[k]) / span, 0.0, 1.0) : 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      const double r = hermite(k, s, h) - x;
      if (std::abs(r) <= tol) break;
      if (r > 0.0) hi = s; else lo = s;
      const double d = hermite_slope(k, s, h) * h;
      double next = d > 0.0 ? s - r / d : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (next == s) break;
      s = next;
    }
    return z_[k] + s * h;
  }

  /// max |phi'(z) - sigma(phi(z))| / (1 + sigma(phi(z))) over `probes` cell
  /// midpoints spread across the table, phi' from a five-point difference of
  /// the tabulated values.
  double max_ode_residual(std::size_t probes = 256) const {
    double worst = 0.0;
    const std::size_t cells = z_.size() - 1;
    for (std::size_t p = 0; p < probes; ++p) {
      const std::size_t k = (p * (cells - 1)) / std::max<std::size_t>(1, probes - 1);
      const double h = z_[k + 1] - z_[k];
      const double zm = z_[k] + 0.5 * h;
      const double e = 0.2 * h;
      const double d = (-(*this)(zm + 2 * e) + 8 * (*this)(zm + e) - 8 * (*this)(zm - e) +
                        (*this)(zm - 2 * e)) /
                       (12.0 * e);
      const double s = sigma_.value_unchecked((*this)(zm));
      worst = std::max(worst, std::abs(d - s) / (1.0 + s));
    }
    return worst;
  }

 private:
  friend PhiSolution solve_phi(const SigmaModel&, double, Interval, double);

  PhiSolution(const SigmaModel& sigma, double x0, Interval z_domain, double tol)
      : sigma_(sigma), x0_(x0), z_domain_(z_domain), tol_(tol) {}

  struct Cell {
    std::size_t k;
    double s;
    double h;
  };

  Cell locate(double z) const {
    if (!(z >= z_.front() && z <= z_.back())) {
      std::ostringstream os;
      os << "z=" << z << " outside flow table [" << z_.front() << ", " << z_.back() << "]";
      throw RangeError(os.str());
    }
    std::size_t k;
    if (z >= 0.0) {
      k = zero_index_ + static_cast<std::size_t>(z / h_pos_);
    } else {
      const auto back = static_cast<std::size_t>(std::ceil(-z / h_neg_));
      k = zero_index_ >= back ? zero_index_ - back : 0;
    }
    k = std::min(k, z_.size() - 2);
    // Guard against rounding in the index arithmetic.
    while (k > 0 && z < z_[k]) --k;
    while (k + 2 < z_.size() && z > z_[k + 1]) ++k;
    const double h = z_[k + 1] - z_[k];
    return {k, (z - z_[k]) / h, h};
  }

  double hermite(std::size_t k, double s, double h) const {
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    return h00 * phi_[k] + h10 * h * slope_[k] + h01 * phi_[k + 1] + h11 * h * slope_[k + 1];
  }

  double hermite_slope(std::size_t k, double s, double h) const {
    const double s2 = s * s;
    const double d00 = 6 * s2 - 6 * s, d10 = 3 * s2 - 4 * s + 1;
    const double d01 = -6 * s2 + 6 * s, d11 = 3 * s2 - 2 * s;
    return (d00 * phi_[k] + d01 * phi_[k + 1]) / h + d10 * slope_[k] + d11 * slope_[k + 1];
  }

  SigmaModel sigma_;
  double x0_;
  Interval z_domain_;
  double tol_;
  std::vector<double> z_, phi_, slope_;
  std::size_t zero_index_ = 0;
  double h_pos_ = 0.0, h_neg_ = 0.0;
};

namespace detail {

// One Dormand-Prince 5(4) step of the autonomous ODE y' = sigma(y).
// Returns the 5th-order solution and writes the embedded error estimate.
inline double dopri5_step(const SigmaModel& sigma, double y, double h, double& err) {
  const auto f = [&](double v) {
    if (!sigma.domain().contains(v)) throw DomainError("stage left sigma domain");
    return sigma.value_unchecked(v);
  };
  const double k1 = f(y);
  const double k2 = f(y + h * (1.0 / 5) * k1);
  const double k3 = f(y + h * (3.0 / 40 * k1 + 9.0 / 40 * k2));
  const double k4 = f(y + h * (44.0 / 45 * k1 - 56.0 / 15 * k2 + 32.0 / 9 * k3));
  const double k5 = f(y + h * (19372.0 / 6561 * k1 - 25360.0 / 2187 * k2 +
                               64448.0 / 6561 * k3 - 212.0 / 729 * k4));
  const double k6 = f(y + h * (9017.0 / 3168 * k1 - 355.0 / 33 * k2 + 46732.0 / 5247 * k3 +
                               49.0 / 176 * k4 - 5103.0 / 18656 * k5));
  const double y5 = y + h * (35.0 / 384 * k1 + 500.0 / 1113 * k3 + 125.0 / 192 * k4 -
                             2187.0 / 6784 * k5 + 11.0 / 84 * k6);
  const double k7 = f(y5);
  err = h * (71.0 / 57600 * k1 - 71.0 / 16695 * k3 + 71.0 / 1920 * k4 - 17253.0 / 339200 * k5 +
             22.0 / 525 * k6 - 1.0 / 40 * k7);
  return y5;
}

// Integrates y' = sigma(y) across [z, z + span] with adaptive substeps.
inline double integrate_cell(const SigmaModel& sigma, double y, double z, double span,
                             double tol) {
  double done = 0.0;
  double h = span;
  int guard = 0;
  while (std::abs(done) < std::abs(span)) {
    if (++guard > 100000) throw FlowEscapeError("flow step size underflow", z + done);
    if (std::abs(done + h) > std::abs(span)) h = span - done;
    double err = 0.0;
    double next;
    try {
      next = dopri5_step(sigma, y, h, err);
    } catch (const DomainError&) {
      throw FlowEscapeError("flow left the working domain of sigma", z + done + h);
    }
    const double scale = tol * (1.0 + std::max(std::abs(y), std::abs(next)));
    const double ratio = std::abs(err) / scale;
    if (ratio <= 1.0) {
      y = next;
      done += h;
      if (!sigma.domain().contains(y)) {
        throw FlowEscapeError("flow left the working domain of sigma", z + done);
      }
      const double grow = ratio > 0.0 ? std::min(2.0, 0.9 * std::pow(ratio, -0.2)) : 2.0;
      h = std::copysign(std::min(std::abs(h) * grow, std::abs(span)), span);
    } else {
      h *= std::max(0.2, 0.9 * std::pow(ratio, -0.2));
    }
  }
  return y;
}

// Cell width such that the cubic Hermite slope error stays well inside the
// ODE tolerance (error ~ 8e-3 h^3 |phi''''|, relative for sinh-like flows).
inline double table_spacing(double tol) {
  return std::clamp(std::cbrt(tol / 8e-3), 1e-4, 1e-3);
}

}  // namespace detail

/// Solves phi' = sigma(phi), phi(0) = x0 on z_domain (which must contain 0)
/// and tabulates the result. Local error per step is controlled to
/// tol * (1 + |phi|).
inline PhiSolution solve_phi(const SigmaModel& sigma, double x0, Interval z_domain,
                             double tol = 1e-10) {
  if (!(tol > 0.0)) throw DomainError("ODE tolerance must be positive");
  if (!(z_domain.lo <= 0.0 && z_domain.hi >= 0.0 && z_domain.hi > z_domain.lo))
    throw DomainError("z_domain must contain 0 and have positive width");
  if (!sigma.domain().contains(x0)) throw FlowEscapeError("x0 outside sigma domain", 0.0);

  PhiSolution sol(sigma, x0, z_domain, tol);
  const double spacing = detail::table_spacing(tol);
  const auto n_neg = static_cast<std::size_t>(std::ceil(-z_domain.lo / spacing));
  const auto n_pos = static_cast<std::size_t>(std::ceil(z_domain.hi / spacing));
  sol.h_neg_ = n_neg ? -z_domain.lo / static_cast<double>(n_neg) : spacing;
  sol.h_pos_ = n_pos ? z_domain.hi / static_cast<double>(n_pos) : spacing;
  sol.zero_index_ = n_neg;

  const std::size_t n = n_neg + n_pos + 1;
  sol.z_.resize(n);
  sol.phi_.resize(n);
  sol.slope_.resize(n);
  for (std::size_t i = 0; i < n_neg; ++i)
    sol.z_[i] = -static_cast<double>(n_neg - i) * sol.h_neg_;
  sol.z_[n_neg] = 0.0;
  for (std::size_t i = 1; i <= n_pos; ++i)
    sol.z_[n_neg + i] = static_cast<double>(i) * sol.h_pos_;
  sol.z_.front() = z_domain.lo;
  sol.z_.back() = z_domain.hi;

  sol.phi_[n_neg] = x0;
  for (std::size_t i = n_neg; i + 1 < n; ++i) {
    sol.phi_[i + 1] = detail::integrate_cell(sigma, sol.phi_[i], sol.z_[i],
                                             sol.z_[i + 1] - sol.z_[i], tol);
  }
  for (std::size_t i = n_neg; i > 0; --i) {
    sol.phi_[i - 1] = detail::integrate_cell(sigma, sol.phi_[i], sol.z_[i],
                                             sol.z_[i - 1] - sol.z_[i], tol);
  }
  for (std::size_t i = 0; i < n; ++i) sol.slope_[i] = sigma.value_unchecked(sol.phi_[i]);

  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (!(sol.phi_[i + 1] > sol.phi_[i]))
      throw FlowEscapeError("flow table lost strict monotonicity", sol.z_[i + 1]);
    const double h = sol.z_[i + 1] - sol.z_[i];
    const double secant = (sol.phi_[i + 1] - sol.phi_[i]) / h;
    const double a = sol.slope_[i] / secant, b = sol.slope_[i + 1] / secant;
    const double r2 = a * a + b * b;
    if (r2 > 9.0) {
      const double tau = 3.0 / std::sqrt(r2);
      sol.slope_[i] *= tau;
      sol.slope_[i + 1] *= tau;
    }
  }
  if (const double r = sol.max_ode_residual(); !(r <= 10.0 * tol)) {
    std::ostringstream os;
    os << "flow table residual " << r << " exceeds 10*tol = " << 10.0 * tol;
    throw NumericalError(os.str());
  }
  return sol;
}

/// z with phi(z) = x; |phi(z) - x| <= 1e-12 (1 + |x|).
inline double invert_phi(const PhiSolution& phi, double x) { return phi.invert(x); }

namespace detail {

inline double log_normal_pdf(double z, double variance) {
  return -0.5 * z * z / variance - 0.5 * std::log(2.0 * std::numbers::pi * variance);
}

inline double check_time(double t) {
  if (t == 0.0) throw DegenerateTimeError("X_0 is a point mass; density undefined at t = 0");
  if (!(t > 0.0)) throw DomainError("time must be positive");
  return t;
}

}  // namespace detail

/// log P_t(x) for X_t = phi(B_t): log N(phi^{-1}(x); 0, t^{2H}) - log sigma(x).
inline double pushforward_log_density(const PhiSolution& phi, double t, HurstParameter hurst,
                                      double x) {
  const double v = std::pow(detail::check_time(t), 2.0 * hurst.value());
  const double z = phi.invert(x);
  return detail::log_normal_pdf(z, v) - std::log(phi.sigma().eval(x, 0));
}

/// P_t(x) by change of variables; the Jacobian uses sigma(x) analytically.
inline double pushforward_density(const PhiSolution& phi, double t, HurstParameter hurst,
                                  double x) {
  return std::exp(pushforward_log_density(phi, t, hurst, x));
}

/// d/dx log P_t(x) = -z / (t^{2H} sigma(x)) - sigma'(x) / sigma(x).
inline double pushforward_score(const PhiSolution& phi, double t, HurstParameter hurst,
                                double x) {
  const double v = std::pow(detail::check_time(t), 2.0 * hurst.value());
  const double z = phi.invert(x);
  const double s = phi.sigma().eval(x, 0);
  return -z / (v * s) - phi.sigma().eval(x, 1) / s;
}

}  // namespace fbm_infoflow
