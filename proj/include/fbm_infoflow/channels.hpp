#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "fbm_infoflow/doss.hpp"
#include "fbm_infoflow/errors.hpp"
#include "fbm_infoflow/fbm.hpp"
#include "fbm_infoflow/sigma_model.hpp"

namespace fbm_infoflow {

/// Densities below this are treated as zero (f ln f = 0, no score).
inline constexpr double kDensityFloor = 1e-300;

// ---------------------------------------------------------------------------
// Initial laws of the additive channel X_t = X_0 + B_t
// ---------------------------------------------------------------------------

/// Law of X_0: either Gaussian or a density tabulated on a uniform grid
/// (piecewise linear between nodes, zero outside).
class InitialLaw {
 public:
  struct Gaussian {
    double mean;
    double variance;
  };
  struct Grid {
    Interval domain;
    std::vector<double> values;

    double step() const { return domain.width() / static_cast<double>(values.size() - 1); }
    double node(std::size_t i) const { return domain.lo + step() * static_cast<double>(i); }
  };

  static InitialLaw gaussian(double mean, double variance) {
    if (!(variance > 0.0)) throw DomainError("initial Gaussian variance must be > 0");
    return InitialLaw(Gaussian{mean, variance});
  }

  static InitialLaw grid(Interval domain, std::vector<double> values) {
    if (values.size() < 3) throw GridError("grid density needs at least 3 nodes");
    if (!(domain.hi > domain.lo)) throw GridError("grid density domain must have lo < hi");
    Grid g{domain, std::move(values)};
    double mass = 0.0;
    const double h = g.step();
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      if (!(g.values[i] >= 0.0) || !std::isfinite(g.values[i]))
        throw DomainError("grid density values must be finite and non-negative");
      const double w = (i == 0 || i + 1 == g.values.size()) ? 0.5 : 1.0;
      mass += w * h * g.values[i];
    }
    if (std::abs(mass - 1.0) > 1e-8) {
      std::ostringstream os;
      os << "grid density integrates to " << mass << ", not 1 within 1e-8";
      throw DomainError(os.str());
    }
    return InitialLaw(std::move(g));
  }

  /// Uniform density on [a, b] tabulated with n nodes.
  static InitialLaw uniform(double a, double b, std::size_t n = 2001) {
    return grid({a, b}, std::vector<double>(n, 1.0 / (b - a)));
  }

  /// N(mean, variance) sampled on mean +- 10 sd with n nodes; the trapezoid
  /// mass is renormalized away from 1 only by rounding.
  static InitialLaw sampled_gaussian(double mean, double variance, std::size_t n = 4001) {
    const double sd = std::sqrt(variance);
    Interval dom{mean - 10 * sd, mean + 10 * sd};
    std::vector<double> v(n);
    const double h = dom.width() / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = dom.lo + h * static_cast<double>(i);
      v[i] = std::exp(-0.5 * (x - mean) * (x - mean) / variance) /
             std::sqrt(2 * std::numbers::pi * variance);
    }
    return grid(dom, std::move(v));
  }

  bool is_gaussian() const noexcept { return std::holds_alternative<Gaussian>(law_); }
  const Gaussian& as_gaussian() const { return std::get<Gaussian>(law_); }
  const Grid& as_grid() const { return std::get<Grid>(law_); }

  double mean() const {
    if (is_gaussian()) return as_gaussian().mean;
    return grid_moment(1);
  }
  double second_moment() const {
    if (is_gaussian()) {
      const auto& g = as_gaussian();
      return g.variance + g.mean * g.mean;
    }
    return grid_moment(2);
  }

 private:
  explicit InitialLaw(Gaussian g) : law_(g) {}
  explicit InitialLaw(Grid g) : law_(std::move(g)) {}

  // Exact moments of the piecewise-linear density.
  double grid_moment(int order) const {
    const auto& g = as_grid();
    const double h = g.step();
    double m = 0.0;
    for (std::size_t i = 0; i + 1 < g.values.size(); ++i) {
      const double a = g.node(i), f0 = g.values[i], f1 = g.values[i + 1];
      // integral of x^order * (f0 + (f1 - f0) s) over x = a + h s, s in [0,1]
      if (order == 1) {
        m += h * (f0 * (a + h / 3) + f1 * (a + 2 * h / 3)) / 2;
      } else {
        m += h * (f0 * (a * a / 2 + a * h / 3 + h * h / 12) +
                  f1 * (a * a / 2 + 2 * a * h / 3 + h * h / 4));
      }
    }
    return m;
  }

  std::variant<Gaussian, Grid> law_;
};

// ---------------------------------------------------------------------------
// Channel specification
// ---------------------------------------------------------------------------

struct MultiplicativeChannel {
  SigmaModel sigma;
  double x0;
};

struct AdditiveChannel {
  InitialLaw initial;
};

/// dX = sigma(X) o dB^H, X_0 = x0   or   X_t = X_0 + B^H_t.
struct ChannelSpec {
  std::variant<MultiplicativeChannel, AdditiveChannel> variant;
  HurstParameter hurst;

  static ChannelSpec multiplicative(SigmaModel sigma, double x0, HurstParameter hurst) {
    return {MultiplicativeChannel{std::move(sigma), x0}, hurst};
  }
  static ChannelSpec additive(InitialLaw initial, HurstParameter hurst) {
    return {AdditiveChannel{std::move(initial)}, hurst};
  }

  bool is_multiplicative() const noexcept {
    return std::holds_alternative<MultiplicativeChannel>(variant);
  }
  const MultiplicativeChannel& mult() const { return std::get<MultiplicativeChannel>(variant); }
  const AdditiveChannel& add() const { return std::get<AdditiveChannel>(variant); }

  ChannelSpec with_hurst(HurstParameter h) const { return {variant, h}; }
};

// ---------------------------------------------------------------------------
// Density fields
// ---------------------------------------------------------------------------

/// Density, log-density and score at one point. `weight` is the density
/// expressed in the field's integration coordinate (p(x) dx/du), equal to
/// `density` when the coordinate is x itself.
struct FieldPoint {
  double x = 0.0;
  double weight = 0.0;
  double density = 0.0;
  double log_density = -std::numeric_limits<double>::infinity();
  double score = 0.0;
};

/// A one-dimensional probability density.
///
/// Besides pointwise evaluation in x, a field exposes an integration
/// coordinate u with x = x(u): identity for most fields, the flow variable z
/// for push-forward fields (where the density in z is an exact Gaussian).
/// Functionals integrate in u. Gaussian fields carry their parameters so
/// functionals can take closed-form branches.
class DensityField {
 public:
  using PointFn = std::function<FieldPoint(double)>;

  struct GaussianParams {
    double mean;
    double variance;
  };

  DensityField(std::string description, Interval domain, PointFn at_x, Interval coord_range,
               PointFn at_coord, std::optional<GaussianParams> gaussian,
               double mass_tolerance = 1e-8, bool positive_everywhere = false)
      : description_(std::move(description)), domain_(domain), at_x_(std::move(at_x)),
        coord_range_(coord_range), at_coord_(std::move(at_coord)), gaussian_(gaussian),
        mass_tolerance_(mass_tolerance), positive_everywhere_(positive_everywhere) {}

  const std::string& description() const noexcept { return description_; }
  const Interval& domain() const noexcept { return domain_; }
  const Interval& coordinate_range() const noexcept { return coord_range_; }
  double mass_tolerance() const noexcept { return mass_tolerance_; }
  /// True when `domain` is a numerical truncation (Gaussian tails, flow-table
  /// window) rather than the edge of the true support.
  bool positive_everywhere() const noexcept { return positive_everywhere_; }
  const std::optional<GaussianParams>& gaussian() const noexcept { return gaussian_; }
  bool is_gaussian() const noexcept { return gaussian_.has_value(); }

  FieldPoint at(double x) const { return at_x_(x); }
  FieldPoint at_coordinate(double u) const { return at_coord_(u); }

  double density(double x) const { return at_x_(x).density; }
  double log_density(double x) const { return at_x_(x).log_density; }
  double operator()(double x) const { return density(x); }

  /// Same density with the Gaussian tag removed, so functionals use
  /// quadrature. Used to cross-check the closed-form branches.
  DensityField without_closed_form() const {
    DensityField f = *this;
    f.gaussian_.reset();
    f.description_ += " [quadrature]";
    return f;
  }

 private:
  std::string description_;
  Interval domain_;
  PointFn at_x_;
  Interval coord_range_;
  PointFn at_coord_;
  std::optional<GaussianParams> gaussian_;
  double mass_tolerance_;
  bool positive_everywhere_;
};

/// d/dx ln density(x). Throws TailError where the density underflows.
inline double score_at(const DensityField& field, double x) {
  const FieldPoint p = field.at(x);
  if (!(p.density > kDensityFloor)) {
    std::ostringstream os;
    os << "density " << p.density << " at x=" << x << " underflows; truncate the domain";
    throw TailError(os.str());
  }
  return p.score;
}

namespace detail {

inline constexpr double kGaussianWindowStdDevs = 10.0;

inline FieldPoint gaussian_point(double x, double mean, double variance) {
  FieldPoint p;
  p.x = x;
  const double d = x - mean;
  p.log_density = -0.5 * d * d / variance - 0.5 * std::log(2.0 * std::numbers::pi * variance);
  p.density = std::exp(p.log_density);
  p.weight = p.density;
  p.score = -d / variance;
  return p;
}

}  // namespace detail

/// N(mean, variance), integrated over mean +- 10 sd.
inline DensityField gaussian_field(double mean, double variance) {
  if (!(variance > 0.0)) throw DomainError("Gaussian field needs variance > 0");
  const double half = detail::kGaussianWindowStdDevs * std::sqrt(variance);
  const Interval dom{mean - half, mean + half};
  auto fn = [mean, variance](double x) { return detail::gaussian_point(x, mean, variance); };
  std::ostringstream os;
  os << "Gaussian(" << mean << ", " << variance << ")";
  return DensityField(os.str(), dom, fn, dom, fn, DensityField::GaussianParams{mean, variance},
                      1e-15, true);
}

/// Density of X_t = phi(B_t). The integration coordinate is z = phi^{-1}(x),
/// restricted to the flow table and to +-10 sd of B_t.
inline DensityField pushforward_field(std::shared_ptr<const PhiSolution> phi, double t,
                                      HurstParameter hurst) {
  detail::check_time(t);
  const double v = std::pow(t, 2.0 * hurst.value());
  const double sd = std::sqrt(v);
  const Interval zt = phi->z_domain();
  const Interval zr{std::max(zt.lo, -detail::kGaussianWindowStdDevs * sd),
                    std::min(zt.hi, detail::kGaussianWindowStdDevs * sd)};
  const Interval dom{(*phi)(zr.lo), (*phi)(zr.hi)};

  auto from_z = [phi, v](double z, double x) {
    FieldPoint p;
    p.x = x;
    const SigmaModel& s = phi->sigma();
    const double sig = s.value_unchecked(x);
    const double log_phi = detail::log_normal_pdf(z, v);
    p.log_density = log_phi - std::log(sig);
    p.density = std::exp(p.log_density);
    p.score = -z / (v * sig) - s.first_unchecked(x) / sig;
    return p;
  };
  auto at_x = [phi, from_z](double x) {
    const Interval r = phi->range();
    if (!(x >= r.lo && x <= r.hi)) {
      FieldPoint p;
      p.x = x;
      return p;
    }
    FieldPoint p = from_z(phi->invert(x), x);
    p.weight = p.density;
    return p;
  };
  auto at_z = [phi, v, from_z](double z) {
    FieldPoint p = from_z(z, (*phi)(z));
    p.weight = std::exp(detail::log_normal_pdf(z, v));
    return p;
  };
  std::ostringstream os;
  os << "pushforward(sigma=" << to_string(phi->sigma().kind()) << ", x0=" << phi->x0()
     << ", t=" << t << ", H=" << hurst.value() << ")";
  return DensityField(os.str(), dom, at_x, zr, at_z, std::nullopt, 1e-8, true);
}

/// The tabulated initial density itself (piecewise linear, zero outside).
inline DensityField grid_field(const InitialLaw& law) {
  const auto grid = std::make_shared<const InitialLaw::Grid>(law.as_grid());
  auto fn = [grid](double x) {
    FieldPoint p;
    p.x = x;
    const Interval& d = grid->domain;
    if (!(x >= d.lo && x <= d.hi)) return p;
    const double h = grid->step();
    auto k = static_cast<std::size_t>((x - d.lo) / h);
    k = std::min(k, grid->values.size() - 2);
    const double s = (x - grid->node(k)) / h;
    const double f0 = grid->values[k], f1 = grid->values[k + 1];
    p.density = f0 + (f1 - f0) * s;
    p.weight = p.density;
    if (p.density > 0.0) {
      p.log_density = std::log(p.density);
      p.score = (f1 - f0) / h / p.density;
    }
    return p;
  };
  return DensityField("grid density", grid->domain, fn, grid->domain, fn, std::nullopt, 1e-8);
}

namespace detail {

/// Point masses w_j at y_j (from trapezoid weights of a grid density) smoothed
/// by a N(0, v) kernel. Exactly a Gaussian mixture, so it is itself the law
/// of (discretized X_0) + B_t.
struct GaussianMixture {
  std::vector<double> centers;
  std::vector<double> log_weights;
};

inline GaussianMixture mixture_from_grid(const InitialLaw::Grid& g) {
  GaussianMixture m;
  const double h = g.step();
  double total = 0.0;
  std::vector<double> w(g.values.size());
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const double end = (i == 0 || i + 1 == g.values.size()) ? 0.5 : 1.0;
    w[i] = end * h * g.values[i];
    total += w[i];
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    m.centers.push_back(g.node(i));
    m.log_weights.push_back(std::log(w[i] / total));
  }
  return m;
}

inline FieldPoint mixture_point(const GaussianMixture& m, double variance, double x) {
  FieldPoint p;
  p.x = x;
  const std::size_t n = m.centers.size();
  double top = -std::numeric_limits<double>::infinity();
  thread_local std::vector<double> expo;
  expo.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double d = x - m.centers[j];
    expo[j] = m.log_weights[j] - 0.5 * d * d / variance;
    top = std::max(top, expo[j]);
  }
  double sum = 0.0, dsum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double e = std::exp(expo[j] - top);
    sum += e;
    dsum += e * (m.centers[j] - x);
  }
  p.log_density = top + std::log(sum) - 0.5 * std::log(2.0 * std::numbers::pi * variance);
  p.density = std::exp(p.log_density);
  p.weight = p.density;
  p.score = dsum / (sum * variance);
  return p;
}

}  // namespace detail

/// Builds the law of X_t for a channel over a time window [t_min, t_max].
///
/// Multiplicative channels share one flow table sized for t_max; additive
/// grid laws are refined once so the smoothing kernel at t_min spans at least
/// 16 grid steps (2 sd >= 16 h), keeping every field in the window on the same
/// discretized X_0.
class Channel {
 public:
  Channel(ChannelSpec spec, double t_min, double t_max, double ode_tol = 1e-10)
      : spec_(std::move(spec)), t_min_(t_min), t_max_(t_max) {
    if (!(t_max > 0.0) || !(t_min > 0.0) || t_min > t_max)
      throw DomainError("channel time window must satisfy 0 < t_min <= t_max");
    if (spec_.is_multiplicative()) {
      const auto& m = spec_.mult();
      phi_ = std::make_shared<const PhiSolution>(
          solve_phi(m.sigma, m.x0, default_z_domain(t_max, spec_.hurst), ode_tol));
    } else if (!spec_.add().initial.is_gaussian()) {
      build_mixture();
    }
  }

  const ChannelSpec& spec() const noexcept { return spec_; }
  HurstParameter hurst() const noexcept { return spec_.hurst; }
  double t_min() const noexcept { return t_min_; }
  double t_max() const noexcept { return t_max_; }
  /// Flow table (multiplicative channels only).
  const std::shared_ptr<const PhiSolution>& phi() const noexcept { return phi_; }
  /// Grid spacing of the discretized X_0 (grid laws only).
  double mixture_step() const noexcept { return mixture_step_; }

  DensityField density_at(double t) const {
    if (t > t_max_ * (1.0 + 1e-12)) {
      std::ostringstream os;
      os << "t=" << t << " beyond the channel window t_max=" << t_max_;
      throw RangeError(os.str());
    }
    const double H = spec_.hurst.value();
    if (spec_.is_multiplicative()) {
      detail::check_time(t);
      return pushforward_field(phi_, t, spec_.hurst);
    }
    if (t < 0.0) throw DomainError("time must be non-negative");
    const InitialLaw& law = spec_.add().initial;
    const double vt = t > 0.0 ? std::pow(t, 2.0 * H) : 0.0;
    if (law.is_gaussian()) {
      const auto& g = law.as_gaussian();
      return gaussian_field(g.mean, g.variance + vt);
    }
    if (t == 0.0) return grid_field(law);
    if (std::sqrt(vt) < 2.0 * mixture_step_) {
      std::ostringstream os;
      os << "kernel sd " << std::sqrt(vt) << " below two grid steps (" << mixture_step_
         << "); widen t_min or refine the initial grid";
      throw ResolutionError(os.str());
    }
    const double half = detail::kGaussianWindowStdDevs * std::sqrt(vt);
    const Interval dom{law.as_grid().domain.lo - half, law.as_grid().domain.hi + half};
    auto mix = mixture_;
    auto fn = [mix, vt](double x) { return detail::mixture_point(*mix, vt, x); };
    std::ostringstream os;
    os << "grid(X_0) + B_t (t=" << t << ", H=" << H << ")";
    return DensityField(os.str(), dom, fn, dom, fn, std::nullopt, 1e-8, true);
  }

 private:
  void build_mixture() {
    InitialLaw::Grid g = spec_.add().initial.as_grid();
    const double sd_min = std::pow(t_min_, spec_.hurst.value());
    const double h = g.step();
    const double target = sd_min / 8.0;
    if (h > target) {
      const auto factor = static_cast<std::size_t>(std::ceil(h / target));
      const std::size_t n = (g.values.size() - 1) * factor + 1;
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = std::min(i / factor, g.values.size() - 2);
        const double s = static_cast<double>(i - k * factor) / static_cast<double>(factor);
        v[i] = g.values[k] + (g.values[k + 1] - g.values[k]) * s;
      }
      g.values = std::move(v);
    }
    mixture_step_ = g.step();
    mixture_ = std::make_shared<const detail::GaussianMixture>(detail::mixture_from_grid(g));
  }

  ChannelSpec spec_;
  double t_min_;
  double t_max_;
  std::shared_ptr<const PhiSolution> phi_;
  std::shared_ptr<const detail::GaussianMixture> mixture_;
  double mixture_step_ = 0.0;
};

/// Law of X_t as a DensityField.
inline DensityField density_at(const Channel& channel, double t) { return channel.density_at(t); }

}  // namespace fbm_infoflow
