#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>

#include "fbm_infoflow/channels.hpp"
#include "fbm_infoflow/errors.hpp"
#include "fbm_infoflow/quadrature.hpp"
#include "fbm_infoflow/sigma_model.hpp"

namespace fbm_infoflow {

/// The positive weight b(x) of a generalized Fisher information J_b.
class WeightFunction {
 public:
  enum class Kind { One, SigmaSquared, Custom };

  static WeightFunction one() { return WeightFunction(Kind::One, {}); }
  static WeightFunction sigma_squared(const SigmaModel& sigma) {
    return WeightFunction(Kind::SigmaSquared, [sigma](double x) {
      const double s = sigma.eval(x, 0);
      return s * s;
    });
  }
  static WeightFunction custom(std::function<double(double)> b) {
    if (!b) throw DomainError("custom weight needs a callback");
    return WeightFunction(Kind::Custom, std::move(b));
  }
  static WeightFunction constant(double c) {
    if (!(c > 0.0)) throw DomainError("weight must be positive");
    return custom([c](double) { return c; });
  }

  Kind kind() const noexcept { return kind_; }

  double operator()(double x) const {
    if (kind_ == Kind::One) return 1.0;
    const double b = fn_(x);
    if (!(b > 0.0)) {
      std::ostringstream os;
      os << "weight b(" << x << ") = " << b << " is not positive";
      throw DomainError(os.str());
    }
    return b;
  }

 private:
  WeightFunction(Kind k, std::function<double(double)> fn) : kind_(k), fn_(std::move(fn)) {}
  Kind kind_;
  std::function<double(double)> fn_;
};

/// Integral over the field's integration coordinate of weight * g(point),
/// i.e. E[g(X)] when g only looks at the point. Points whose density
/// underflows contribute nothing.
template <class G>
QuadratureResult integrate_field(const DensityField& field, G&& g, const QuadratureSpec& quad) {
  const Interval r = field.coordinate_range();
  return integrate(
      [&](double u) {
        const FieldPoint p = field.at_coordinate(u);
        if (!(p.weight > kDensityFloor) || !(p.density > kDensityFloor)) return 0.0;
        return p.weight * g(p);
      },
      r.lo, r.hi, quad);
}

namespace detail {

// Sub-range of p's integration coordinate whose x lies in `xs`; x(u) is
// increasing for every field.
inline Interval coordinate_window(const DensityField& p, Interval xs) {
  Interval r = p.coordinate_range();
  const auto x_of = [&](double u) { return p.at_coordinate(u).x; };
  const auto solve = [&](double target, double lo, double hi) {
    for (int i = 0; i < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo)); ++i) {
      const double mid = 0.5 * (lo + hi);
      (x_of(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  };
  if (x_of(r.lo) < xs.lo) r.lo = solve(xs.lo, r.lo, r.hi);
  if (x_of(r.hi) > xs.hi) r.hi = solve(xs.hi, r.lo, r.hi);
  return r;
}

// Integrates in p's coordinate over the part of p's range where q is
// represented; outside a truncated q the integrand would jump to zero.
template <class G>
QuadratureResult integrate_against(const DensityField& p, const DensityField& q, G&& g,
                                   const QuadratureSpec& quad) {
  Interval r = p.coordinate_range();
  if (q.positive_everywhere()) r = coordinate_window(p, q.domain());
  if (!(r.hi > r.lo)) throw SupportError("fields do not overlap");
  return integrate(
      [&](double u) {
        const FieldPoint pp = p.at_coordinate(u);
        if (!(pp.weight > kDensityFloor) || !(pp.density > kDensityFloor)) return 0.0;
        const FieldPoint qq = q.at(pp.x);
        if (!(qq.density > kDensityFloor)) return 0.0;
        return pp.weight * g(pp, qq);
      },
      r.lo, r.hi, quad);
}

}  // namespace detail

/// E[g(X)] by quadrature against the field.
inline double expectation(const DensityField& field, const std::function<double(double)>& g,
                          const QuadratureSpec& quad = {}) {
  return integrate_field(field, [&](const FieldPoint& p) { return g(p.x); }, quad).value;
}

/// Total mass; 1 within the field's mass tolerance for a valid field.
inline double mass(const DensityField& field, const QuadratureSpec& quad = {}) {
  return integrate_field(field, [](const FieldPoint&) { return 1.0; }, quad).value;
}

/// Shannon entropy h = -int f ln f.
inline double entropy(const DensityField& field, const QuadratureSpec& quad = {}) {
  if (const auto& g = field.gaussian()) {
    return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * g->variance);
  }
  return -integrate_field(field, [](const FieldPoint& p) { return p.log_density; }, quad).value;
}

/// J_b = E[b(X) (d/dx ln f(X))^2].
inline double generalized_fisher(const DensityField& field, const WeightFunction& b,
                                 const QuadratureSpec& quad = {}) {
  if (const auto& g = field.gaussian(); g && b.kind() == WeightFunction::Kind::One) {
    return 1.0 / g->variance;
  }
  return integrate_field(
             field, [&](const FieldPoint& p) { return b(p.x) * p.score * p.score; }, quad)
      .value;
}

namespace detail {

inline constexpr double kSupportDensity = 1e-12;

// q must not vanish where p carries density >= 1e-12. Beyond a truncated
// domain of q the zero is numerical, not a support violation.
inline void check_support(const DensityField& p, const DensityField& q) {
  const Interval r = p.coordinate_range();
  constexpr int probes = 1001;
  for (int i = 0; i < probes; ++i) {
    const double u = std::min(r.hi, r.lo + r.width() * i / (probes - 1));
    const FieldPoint pp = p.at_coordinate(u);
    if (pp.density < kSupportDensity) continue;
    if (q.positive_everywhere() && !q.domain().contains(pp.x)) continue;
    const double qd = q.density(pp.x);
    if (!(qd >= kDensityFloor)) {
      std::ostringstream os;
      os << "support violation at x=" << pp.x << ": p=" << pp.density << " but q=" << qd;
      throw SupportError(os.str());
    }
  }
}

}  // namespace detail

/// K(p || q) = int p ln(p/q). Integrated in p's coordinate over the part of
/// p's range inside q's truncation window.
inline double kl_divergence(const DensityField& p, const DensityField& q,
                            const QuadratureSpec& quad = {}) {
  if (p.is_gaussian() && q.is_gaussian()) {
    const auto& a = *p.gaussian();
    const auto& b = *q.gaussian();
    const double d = a.mean - b.mean;
    return 0.5 * (a.variance / b.variance + d * d / b.variance - 1.0 +
                  std::log(b.variance / a.variance));
  }
  if (&p == &q) return 0.0;
  detail::check_support(p, q);
  return detail::integrate_against(
             p, q,
             [](const FieldPoint& pp, const FieldPoint& qq) {
               return pp.log_density - qq.log_density;
             },
             quad)
      .value;
}

/// J_b(p || q) = E_p[b (d/dx ln(p/q))^2].
inline double relative_fisher(const DensityField& p, const DensityField& q,
                              const WeightFunction& b, const QuadratureSpec& quad = {}) {
  if (p.is_gaussian() && q.is_gaussian() && b.kind() == WeightFunction::Kind::One) {
    // score difference is affine: a x + c
    const auto& gp = *p.gaussian();
    const auto& gq = *q.gaussian();
    const double a = 1.0 / gq.variance - 1.0 / gp.variance;
    const double c = gp.mean / gp.variance - gq.mean / gq.variance;
    return a * a * (gp.variance + gp.mean * gp.mean) + 2.0 * a * c * gp.mean + c * c;
  }
  if (&p == &q) return 0.0;
  detail::check_support(p, q);
  return detail::integrate_against(
             p, q,
             [&](const FieldPoint& pp, const FieldPoint& qq) {
               const double d = pp.score - qq.score;
               return b(pp.x) * d * d;
             },
             quad)
      .value;
}

/// N(X) = exp(2 h(X)) / (2 pi e).
inline double entropy_power(const DensityField& field, const QuadratureSpec& quad = {}) {
  return std::exp(2.0 * entropy(field, quad)) / (2.0 * std::numbers::pi * std::numbers::e);
}

}  // namespace fbm_infoflow
