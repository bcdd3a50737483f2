#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fbm_infoflow/channels.hpp"
#include "fbm_infoflow/errors.hpp"
#include "fbm_infoflow/infofunc.hpp"
#include "fbm_infoflow/quadrature.hpp"

namespace fbm_infoflow {

/// LHS/RHS of one identity at one (t, H).
struct IdentityReport {
  std::string identity_name;
  double t = 0.0;
  double hurst = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double abs_discrepancy = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string method_notes;
};

inline IdentityReport make_report(std::string name, double t, double hurst, double lhs,
                                  double rhs, double tolerance, std::string notes) {
  IdentityReport r;
  r.identity_name = std::move(name);
  r.t = t;
  r.hurst = hurst;
  r.lhs = lhs;
  r.rhs = rhs;
  r.abs_discrepancy = std::abs(lhs - rhs);
  r.tolerance = tolerance;
  r.passed = r.abs_discrepancy <= tolerance;
  r.method_notes = std::move(notes);
  return r;
}

/// Default time step for the finite differences in t.
inline double default_fd_step(double t) { return 1e-3 * std::max(t, 1.0); }

/// Central difference with one Richardson extrapolation (steps h, h/2).
inline double richardson_derivative(const std::function<double(double)>& f, double t, double h) {
  const auto central = [&](double s) { return (f(t + s) - f(t - s)) / (2.0 * s); };
  return (4.0 * central(0.5 * h) - central(h)) / 3.0;
}

/// Second central difference with one Richardson extrapolation.
inline double richardson_second_derivative(const std::function<double(double)>& f, double t,
                                           double h) {
  const double f0 = f(t);
  const auto second = [&](double s) { return (f(t + s) - 2.0 * f0 + f(t - s)) / (s * s); };
  return (4.0 * second(0.5 * h) - second(h)) / 3.0;
}

namespace detail {

inline void check_step(double t, double fd_step) {
  if (!(fd_step > 0.0) || !(fd_step < t)) {
    std::ostringstream os;
    os << "finite-difference step " << fd_step << " must satisfy 0 < step < t = " << t;
    throw StepError(os.str());
  }
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline double prefactor(double t, double hurst) {
  return hurst * std::pow(t, 2.0 * hurst - 1.0);
}

}  // namespace detail

/// Channel whose time window covers the stencil t +- fd_step.
inline Channel stencil_channel(const ChannelSpec& spec, double t, double fd_step) {
  detail::check_step(t, fd_step);
  return Channel(spec, t - fd_step, t + fd_step);
}

// ---------------------------------------------------------------------------
// Entropy flow of the multiplicative channel
// ---------------------------------------------------------------------------

/// Both algebraic forms of the right-hand side of the multiplicative entropy
/// flow, without the H t^{2H-1} prefactor.
struct MultRhsTerms {
  double fisher_sigma2 = 0.0;     // J_{sigma^2}(X_t)
  double e_sigma2_second = 0.0;   // E[(sigma^2)''(X_t)]
  double e_sigma_terms = 0.0;     // E[sigma'' sigma + sigma'^2]
  double raw() const { return fisher_sigma2 - e_sigma2_second + e_sigma_terms; }
  double simplified() const { return fisher_sigma2 - e_sigma_terms; }
};

inline MultRhsTerms mult_rhs_terms(const DensityField& field, const SigmaModel& sigma,
                                   const QuadratureSpec& quad) {
  MultRhsTerms r;
  r.fisher_sigma2 = generalized_fisher(field, WeightFunction::sigma_squared(sigma), quad);
  r.e_sigma2_second = expectation(
      field,
      [&](double x) {
        const double s = sigma.eval(x, 0), d1 = sigma.eval(x, 1), d2 = sigma.eval(x, 2);
        return 2.0 * d1 * d1 + 2.0 * s * d2;
      },
      quad);
  r.e_sigma_terms = expectation(
      field,
      [&](double x) {
        const double s = sigma.eval(x, 0), d1 = sigma.eval(x, 1), d2 = sigma.eval(x, 2);
        return d2 * s + d1 * d1;
      },
      quad);
  return r;
}

inline constexpr double kRhsFormAgreement = 1e-9;

/// d/dt h(X_t) by Richardson-extrapolated central differences of the
/// quadrature entropy, against
/// H t^{2H-1} { J_{sigma^2} - E[(sigma^2)''] + E[sigma'' sigma + sigma'^2] }.
inline IdentityReport debruijn_check_mult(const Channel& channel, double t, double fd_step,
                                          double tol,
                                          const QuadratureSpec& quad = QuadratureSpec::tight()) {
  if (!channel.spec().is_multiplicative())
    throw DomainError("debruijn_check_mult needs a multiplicative channel");
  detail::check_step(t, fd_step);
  const double H = channel.hurst().value();
  const SigmaModel& sigma = channel.spec().mult().sigma;

  const double lhs = richardson_derivative(
      [&](double s) { return entropy(channel.density_at(s), quad); }, t, fd_step);
  const MultRhsTerms terms = mult_rhs_terms(channel.density_at(t), sigma, quad);
  const double gap = std::abs(terms.raw() - terms.simplified());
  if (!(gap <= kRhsFormAgreement * std::max(1.0, std::abs(terms.fisher_sigma2)))) {
    throw NumericalError("entropy-flow rhs forms disagree by " + detail::fmt(gap));
  }
  const double rhs = detail::prefactor(t, H) * terms.raw();
  return make_report("debruijn-mult", t, H, lhs, rhs, tol,
                     "fd_step=" + detail::fmt(fd_step) + " richardson; J_sigma2=" +
                         detail::fmt(terms.fisher_sigma2) +
                         " rhs_form_gap=" + detail::fmt(gap));
}

inline IdentityReport debruijn_check_mult(const ChannelSpec& spec, double t, double fd_step,
                                          double tol,
                                          const QuadratureSpec& quad = QuadratureSpec::tight()) {
  return debruijn_check_mult(stencil_channel(spec, t, fd_step), t, fd_step, tol, quad);
}

// ---------------------------------------------------------------------------
// Entropy flow of the additive channel
// ---------------------------------------------------------------------------

/// d/dt h(X_t) against H t^{2H-1} J_1(X_t). The Gaussian initial law uses
/// J_1 = 1 / (sigma0^2 + t^{2H}).
inline IdentityReport debruijn_check_additive(
    const Channel& channel, double t, double fd_step, double tol,
    const QuadratureSpec& quad = QuadratureSpec::tight()) {
  if (channel.spec().is_multiplicative())
    throw DomainError("debruijn_check_additive needs an additive channel");
  detail::check_step(t, fd_step);
  const double H = channel.hurst().value();
  const InitialLaw& law = channel.spec().add().initial;

  const double lhs = richardson_derivative(
      [&](double s) { return entropy(channel.density_at(s), quad); }, t, fd_step);
  double fisher;
  std::string notes = "fd_step=" + detail::fmt(fd_step) + " richardson; ";
  if (law.is_gaussian()) {
    fisher = 1.0 / (law.as_gaussian().variance + std::pow(t, 2.0 * H));
    notes += "J_1 closed form";
  } else {
    fisher = generalized_fisher(channel.density_at(t), WeightFunction::one(), quad);
    notes += "J_1 quadrature, grid step " + detail::fmt(channel.mixture_step());
  }
  const double rhs = detail::prefactor(t, H) * fisher;
  return make_report("debruijn-additive", t, H, lhs, rhs, tol, notes);
}

inline IdentityReport debruijn_check_additive(
    const ChannelSpec& spec, double t, double fd_step, double tol,
    const QuadratureSpec& quad = QuadratureSpec::tight()) {
  return debruijn_check_additive(stencil_channel(spec, t, fd_step), t, fd_step, tol, quad);
}

// ---------------------------------------------------------------------------
// KL flow between two multiplicative channels
// ---------------------------------------------------------------------------

struct KlFlowDetail {
  double kl_before = 0.0;  // K at t - fd_step
  double kl_at = 0.0;
  double kl_after = 0.0;   // K at t + fd_step
  bool monotone() const { return kl_before >= kl_at && kl_at >= kl_after; }
};

/// d/dt K(X_t || Y_t) against -H t^{2H-1} J_{sigma^2}(X_t || Y_t). Also
/// evaluates K at t - fd_step, t, t + fd_step for the monotonicity corollary.
inline IdentityReport kl_flow_check(const Channel& x_channel, const Channel& y_channel, double t,
                                    double fd_step, double tol,
                                    const QuadratureSpec& quad = QuadratureSpec::tight(),
                                    KlFlowDetail* detail_out = nullptr) {
  const auto& xs = x_channel.spec();
  const auto& ys = y_channel.spec();
  if (!xs.is_multiplicative() || !ys.is_multiplicative())
    throw DomainError("kl_flow_check needs two multiplicative channels");
  if (xs.hurst.value() != ys.hurst.value())
    throw DomainError("kl_flow_check needs channels with the same Hurst parameter");
  const SigmaModel& sx = xs.mult().sigma;
  const SigmaModel& sy = ys.mult().sigma;
  if (sx.kind() != sy.kind() || sx.constant_value() != sy.constant_value() ||
      sx.kind() == SigmaKind::Custom)
    throw DomainError("kl_flow_check needs the same built-in sigma for both channels");
  detail::check_step(t, fd_step);
  const double H = xs.hurst.value();

  const auto kl = [&](double s) {
    const DensityField p = x_channel.density_at(s);
    const DensityField q = y_channel.density_at(s);
    return kl_divergence(p, q, quad);
  };
  const double lhs = richardson_derivative(kl, t, fd_step);
  const DensityField p = x_channel.density_at(t);
  const DensityField q = y_channel.density_at(t);
  const double rel = relative_fisher(p, q, WeightFunction::sigma_squared(sx), quad);
  const double rhs = -detail::prefactor(t, H) * rel;

  KlFlowDetail d{kl(t - fd_step), kl(t), kl(t + fd_step)};
  if (detail_out) *detail_out = d;
  return make_report("kl-flow", t, H, lhs, rhs, tol,
                     "fd_step=" + detail::fmt(fd_step) + " richardson; KL=" +
                         detail::fmt(d.kl_at) + " J_sigma2(X||Y)=" + detail::fmt(rel) +
                         " kl_monotone=" + (d.monotone() ? "yes" : "no"));
}

inline IdentityReport kl_flow_check(const ChannelSpec& x_spec, const ChannelSpec& y_spec, double t,
                                    double fd_step, double tol,
                                    const QuadratureSpec& quad = QuadratureSpec::tight(),
                                    KlFlowDetail* detail_out = nullptr) {
  return kl_flow_check(stencil_channel(x_spec, t, fd_step), stencil_channel(y_spec, t, fd_step),
                       t, fd_step, tol, quad, detail_out);
}

// ---------------------------------------------------------------------------
// Fokker-Planck residual
// ---------------------------------------------------------------------------

struct FokkerPlanckOptions {
  /// Spatial step for the P', P'' differences (Richardson with h, h/2).
  double spatial_step = 1e-3;
  /// Largest tolerated estimate of the spatial difference error.
  double spatial_error_bound = 1e-6;
};

/// residual(x) = dP/dt - H t^{2H-1} ( -d/dx[sigma' sigma P] + d2/dx2[sigma^2 P] )
/// with the x-derivatives expanded by the product rule (analytic sigma
/// derivatives, differenced P).
inline std::vector<double> fokker_planck_residual(const Channel& channel, double t,
                                                  const std::vector<double>& x_grid,
                                                  double fd_step_t,
                                                  const FokkerPlanckOptions& opt = {}) {
  if (!channel.spec().is_multiplicative())
    throw DomainError("fokker_planck_residual needs a multiplicative channel");
  detail::check_step(t, fd_step_t);
  const double H = channel.hurst().value();
  const SigmaModel& sigma = channel.spec().mult().sigma;
  const DensityField now = channel.density_at(t);
  const DensityField p_hi = channel.density_at(t + fd_step_t);
  const DensityField p_lo = channel.density_at(t - fd_step_t);
  const DensityField p_hi2 = channel.density_at(t + 0.5 * fd_step_t);
  const DensityField p_lo2 = channel.density_at(t - 0.5 * fd_step_t);

  const double hx = opt.spatial_step;
  std::vector<double> out(x_grid.size());
  for (std::size_t i = 0; i < x_grid.size(); ++i) {
    const double x = x_grid[i];
    if (!now.domain().contains(x - hx) || !now.domain().contains(x + hx)) {
      throw RangeError("x=" + detail::fmt(x) + " outside the density support");
    }
    const double dt_coarse = (p_hi.density(x) - p_lo.density(x)) / (2.0 * fd_step_t);
    const double dt_fine = (p_hi2.density(x) - p_lo2.density(x)) / fd_step_t;
    const double dp_dt = (4.0 * dt_fine - dt_coarse) / 3.0;

    const double p0 = now.density(x);
    const double pp1 = now.density(x + hx), pm1 = now.density(x - hx);
    const double pp2 = now.density(x + 0.5 * hx), pm2 = now.density(x - 0.5 * hx);
    const double d1_coarse = (pp1 - pm1) / (2.0 * hx), d1_fine = (pp2 - pm2) / hx;
    const double d2_coarse = (pp1 - 2.0 * p0 + pm1) / (hx * hx);
    const double d2_fine = (pp2 - 2.0 * p0 + pm2) / (0.25 * hx * hx);
    const double err1 = std::abs(d1_fine - d1_coarse) / 3.0;
    const double err2 = std::abs(d2_fine - d2_coarse) / 3.0;
    if (err1 > opt.spatial_error_bound || err2 > opt.spatial_error_bound) {
      throw ResolutionError("spatial difference error estimate " +
                            detail::fmt(std::max(err1, err2)) + " at x=" + detail::fmt(x) +
                            " exceeds bound " + detail::fmt(opt.spatial_error_bound));
    }
    const double dp = (4.0 * d1_fine - d1_coarse) / 3.0;
    const double d2p = (4.0 * d2_fine - d2_coarse) / 3.0;

    const double s = sigma.eval(x, 0), s1 = sigma.eval(x, 1), s2 = sigma.eval(x, 2);
    // d/dx[s s' P] and d2/dx2[s^2 P]
    const double drift = (s1 * s1 + s * s2) * p0 + s * s1 * dp;
    const double diffusion = (2.0 * s1 * s1 + 2.0 * s * s2) * p0 + 4.0 * s * s1 * dp + s * s * d2p;
    out[i] = dp_dt - detail::prefactor(t, H) * (-drift + diffusion);
  }
  return out;
}

inline std::vector<double> fokker_planck_residual(const ChannelSpec& spec, double t,
                                                  const std::vector<double>& x_grid,
                                                  double fd_step_t,
                                                  const FokkerPlanckOptions& opt = {}) {
  return fokker_planck_residual(stencil_channel(spec, t, fd_step_t), t, x_grid, fd_step_t, opt);
}

/// Evenly spaced points on [lo, hi].
inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

// ---------------------------------------------------------------------------
// Stein's identity
// ---------------------------------------------------------------------------

/// A differentiable test function r with its derivative.
struct TestFunction {
  std::string name;
  std::function<double(double)> r;
  std::function<double(double)> dr;

  static TestFunction linear() { return {"y", [](double y) { return y; }, [](double) { return 1.0; }}; }
  static TestFunction square() {
    return {"y2", [](double y) { return y * y; }, [](double y) { return 2.0 * y; }};
  }
  static TestFunction cube() {
    return {"y3", [](double y) { return y * y * y; }, [](double y) { return 3.0 * y * y; }};
  }
  static TestFunction sine() {
    return {"sin", [](double y) { return std::sin(y); }, [](double y) { return std::cos(y); }};
  }
  static std::optional<TestFunction> by_name(const std::string& name) {
    for (auto f : {linear(), square(), cube(), sine()})
      if (f.name == name) return f;
    return std::nullopt;
  }
};

/// E[r(Y)(Y - mu)] against variance * E[r'(Y)] for Y ~ N(mu, variance), both
/// by Gauss-Hermite quadrature.
inline IdentityReport stein_check(double mu, double variance, const TestFunction& r,
                                  const QuadratureSpec& quad, double tol) {
  if (!(variance > 0.0)) throw DomainError("Stein check needs variance > 0");
  const auto lhs = gaussian_expectation([&](double y) { return r.r(y) * (y - mu); }, mu,
                                        variance, quad);
  const auto rhs = gaussian_expectation(r.dr, mu, variance, quad);
  return make_report("stein", 0.0, 0.0, lhs.value, variance * rhs.value, tol,
                     "r=" + r.name + " mu=" + detail::fmt(mu) + " var=" + detail::fmt(variance) +
                         " gauss-hermite n=" + std::to_string(2 * quad.hermite_points));
}

// ---------------------------------------------------------------------------
// Entropy power curvature
// ---------------------------------------------------------------------------

enum class Curvature { Convex, Concave };

inline const char* to_string(Curvature c) { return c == Curvature::Convex ? "convex" : "concave"; }

/// g > 0 is convex; g <= 0 (including g = 0) is concave.
inline Curvature classify(double g) { return g > 0.0 ? Curvature::Convex : Curvature::Concave; }

struct ConvexityProfile {
  double hurst = 0.0;
  std::vector<double> t_grid;
  std::vector<double> g_values;
  std::vector<Curvature> classification;
  std::vector<double> entropy_power;   // N(X_t)
  std::vector<double> fisher;          // J_1(X_t)
  std::vector<double> fisher_rate;     // dJ_1/dt
  std::vector<double> d2n_direct;      // second difference of N
  std::vector<double> d2n_predicted;   // 2 N g
};

/// g(t,H,X_t) = 2H^2 t^{4H-2} J^2 + H(2H-1) t^{2H-2} J + H t^{2H-1} dJ/dt.
inline double convexity_g(double t, double hurst, double fisher, double fisher_rate) {
  const double H = hurst;
  return 2.0 * H * H * std::pow(t, 4.0 * H - 2.0) * fisher * fisher +
         H * (2.0 * H - 1.0) * std::pow(t, 2.0 * H - 2.0) * fisher +
         H * std::pow(t, 2.0 * H - 1.0) * fisher_rate;
}

/// Evaluates g along t_grid for an additive channel and checks
/// d^2N/dt^2 = 2 N g against a direct Richardson second difference of N.
/// The channel's window must cover every t +- fd_step.
inline ConvexityProfile entropy_power_profile(const Channel& channel,
                                              const std::vector<double>& t_grid, double fd_step,
                                              const QuadratureSpec& quad = QuadratureSpec::tight()) {
  if (channel.spec().is_multiplicative())
    throw DomainError("entropy_power_profile needs an additive channel");
  const double H = channel.hurst().value();
  const bool gaussian = channel.spec().add().initial.is_gaussian();
  ConvexityProfile prof;
  prof.hurst = H;
  const auto n_of = [&](double s) { return fbm_infoflow::entropy_power(channel.density_at(s), quad); };
  const auto j_of = [&](double s) {
    return generalized_fisher(channel.density_at(s), WeightFunction::one(), quad);
  };
  for (double t : t_grid) {
    detail::check_step(t, fd_step);
    const double J = j_of(t);
    const double dJ = gaussian ? -2.0 * H * std::pow(t, 2.0 * H - 1.0) * J * J
                               : richardson_derivative(j_of, t, fd_step);
    const double g = convexity_g(t, H, J, dJ);
    const double N = n_of(t);
    prof.t_grid.push_back(t);
    prof.g_values.push_back(g);
    prof.classification.push_back(classify(g));
    prof.entropy_power.push_back(N);
    prof.fisher.push_back(J);
    prof.fisher_rate.push_back(dJ);
    prof.d2n_direct.push_back(richardson_second_derivative(n_of, t, fd_step));
    prof.d2n_predicted.push_back(2.0 * N * g);
  }
  return prof;
}

inline ConvexityProfile entropy_power_profile(const ChannelSpec& spec,
                                              const std::vector<double>& t_grid, double fd_step,
                                              const QuadratureSpec& quad = QuadratureSpec::tight()) {
  if (t_grid.empty()) throw DomainError("empty t grid");
  const auto [lo, hi] = std::minmax_element(t_grid.begin(), t_grid.end());
  detail::check_step(*lo, fd_step);
  return entropy_power_profile(Channel(spec, *lo - fd_step, *hi + fd_step), t_grid, fd_step, quad);
}

/// Report row for point i: lhs = direct d2N/dt2, rhs = 2 N g, tolerance
/// rel_tol * |2 N g| + abs_tol.
inline IdentityReport entropy_power_report(const ConvexityProfile& prof, std::size_t i,
                                           double rel_tol, double abs_tol) {
  const double rhs = prof.d2n_predicted[i];
  return make_report("entropy-power", prof.t_grid[i], prof.hurst, prof.d2n_direct[i], rhs,
                     rel_tol * std::abs(rhs) + abs_tol,
                     std::string("N=") + detail::fmt(prof.entropy_power[i]) +
                         " g=" + detail::fmt(prof.g_values[i]) + " " +
                         to_string(prof.classification[i]));
}

}  // namespace fbm_infoflow
