#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <utility>

#include "fbm_infoflow/errors.hpp"

namespace fbm_infoflow {

/// Closed interval [lo, hi] of reals.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
  double width() const noexcept { return hi - lo; }
  double mid() const noexcept { return 0.5 * (lo + hi); }
};

enum class SigmaKind { Constant, SqrtOnePlusSquare, Identity, Custom };

inline const char* to_string(SigmaKind k) {
  switch (k) {
    case SigmaKind::Constant: return "constant";
    case SigmaKind::SqrtOnePlusSquare: return "sqrt1p";
    case SigmaKind::Identity: return "identity";
    case SigmaKind::Custom: return "custom";
  }
  return "?";
}

/// Diffusion coefficient sigma(x) of the channel together with its first two
/// derivatives, restricted to a declared working domain.
///
/// Built-in families:
///   Constant(c)        sigma = c
///   SqrtOnePlusSquare  sigma = sqrt(1 + x^2)   (flow phi = x0-shifted sinh)
///   Identity           sigma = 1               (flow phi(z) = x0 + z)
/// Custom models must supply analytic derivatives.
///
/// The constructor scans the domain for positivity and checks the derivative
/// callbacks against finite differences at 64 probe points, so a model that
/// exists is a valid one. Instances are immutable.
class SigmaModel {
 public:
  using Fn = std::function<double(double)>;

  static constexpr int kProbeCount = 64;
  static constexpr int kScanPoints = 4097;
  static constexpr double kDerivativeRelTol = 1e-6;

  static SigmaModel constant(double c, Interval domain, double positivity_floor = 1e-6) {
    if (!(c > 0.0)) throw DomainError("constant sigma must be positive");
    return SigmaModel(SigmaKind::Constant, c, [c](double) { return c; },
                      [](double) { return 0.0; }, [](double) { return 0.0; }, domain,
                      positivity_floor);
  }

  static SigmaModel sqrt_one_plus_square(Interval domain, double positivity_floor = 1e-6) {
    return SigmaModel(
        SigmaKind::SqrtOnePlusSquare, 0.0, [](double x) { return std::hypot(1.0, x); },
        [](double x) { return x / std::hypot(1.0, x); },
        [](double x) {
          const double s = std::hypot(1.0, x);
          return 1.0 / (s * s * s);
        },
        domain, positivity_floor);
  }

  static SigmaModel identity(Interval domain, double positivity_floor = 1e-6) {
    return SigmaModel(SigmaKind::Identity, 1.0, [](double) { return 1.0; },
                      [](double) { return 0.0; }, [](double) { return 0.0; }, domain,
                      positivity_floor);
  }

  static SigmaModel custom(Fn value, Fn first, Fn second, Interval domain,
                           double positivity_floor = 1e-6) {
    if (!value || !first || !second)
      throw DomainError("custom sigma requires value and both derivative callbacks");
    return SigmaModel(SigmaKind::Custom, 0.0, std::move(value), std::move(first),
                      std::move(second), domain, positivity_floor);
  }

  /// sigma (order 0), sigma' (order 1) or sigma'' (order 2) at x.
  double eval(double x, int order) const {
    if (order < 0 || order > 2) {
      throw UnsupportedOrder("sigma derivative order " + std::to_string(order) +
                             " not supported (max 2)");
    }
    if (!domain_.contains(x)) {
      std::ostringstream os;
      os << "sigma evaluated at x=" << x << " outside working domain [" << domain_.lo << ", "
         << domain_.hi << "]";
      throw DomainError(os.str());
    }
    switch (order) {
      case 0: return f_(x);
      case 1: return d1_(x);
      default: return d2_(x);
    }
  }

  double operator()(double x) const { return eval(x, 0); }

  // Unchecked accessors for hot loops where the caller already guarantees
  // x lies in the domain.
  double value_unchecked(double x) const { return f_(x); }
  double first_unchecked(double x) const { return d1_(x); }
  double second_unchecked(double x) const { return d2_(x); }

  SigmaKind kind() const noexcept { return kind_; }
  const Interval& domain() const noexcept { return domain_; }
  double positivity_floor() const noexcept { return floor_; }
  /// The constant c for Constant and Identity models, 0 otherwise.
  double constant_value() const noexcept { return c_; }
  bool is_constant() const noexcept {
    return kind_ == SigmaKind::Constant || kind_ == SigmaKind::Identity;
  }

 private:
  SigmaModel(SigmaKind kind, double c, Fn f, Fn d1, Fn d2, Interval domain, double floor)
      : kind_(kind), c_(c), f_(std::move(f)), d1_(std::move(d1)), d2_(std::move(d2)),
        domain_(domain), floor_(floor) {
    if (!(domain_.hi > domain_.lo) || !std::isfinite(domain_.lo) || !std::isfinite(domain_.hi))
      throw DomainError("sigma working domain must be a finite interval with lo < hi");
    if (!(floor_ > 0.0)) throw DomainError("positivity_floor must be > 0");
    validate();
  }

  void validate() const {
    for (int i = 0; i < kScanPoints; ++i) {
      const double x = domain_.lo + domain_.width() * i / (kScanPoints - 1);
      const double s = f_(x);
      if (!(s >= floor_)) {
        std::ostringstream os;
        os << "sigma(" << x << ") = " << s << " below positivity floor " << floor_;
        throw DomainError(os.str());
      }
    }
    for (int i = 0; i < kProbeCount; ++i) {
      const double x = domain_.lo + domain_.width() * (i + 0.5) / kProbeCount;
      check_derivative(f_, d1_, x, "sigma'");
      check_derivative(d1_, d2_, x, "sigma''");
    }
  }

  // Fourth-order central difference of `g` against its claimed derivative.
  void check_derivative(const Fn& g, const Fn& dg, double x, const char* name) const {
    double h = 1e-3 * std::max(1.0, std::abs(x));
    h = std::min(h, domain_.width() / 512.0);
    const double fd =
        (-g(x + 2 * h) + 8 * g(x + h) - 8 * g(x - h) + g(x - 2 * h)) / (12.0 * h);
    const double d = dg(x);
    if (!(std::abs(d - fd) <= kDerivativeRelTol * (1.0 + std::abs(d)))) {
      std::ostringstream os;
      os << name << " callback disagrees with finite differences at x=" << x << ": analytic "
         << d << " vs fd " << fd;
      throw DomainError(os.str());
    }
  }

  SigmaKind kind_;
  double c_;
  Fn f_, d1_, d2_;
  Interval domain_;
  double floor_;
};

}  // namespace fbm_infoflow
