#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbm_infoflow/fbm_infoflow.hpp"

namespace fbm_infoflow::cli {

using Json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

/// Invalid or unparsable configuration (exit 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Suite { DebruijnMult, DebruijnAdditive, KlFlow, FokkerPlanck, Stein, EntropyPower, FbmStats };

inline constexpr std::pair<Suite, const char*> kSuiteNames[] = {
    {Suite::DebruijnMult, "debruijn-mult"},   {Suite::DebruijnAdditive, "debruijn-additive"},
    {Suite::KlFlow, "kl-flow"},               {Suite::FokkerPlanck, "fokker-planck"},
    {Suite::Stein, "stein"},                  {Suite::EntropyPower, "entropy-power"},
    {Suite::FbmStats, "fbm-stats"},
};

inline const char* to_string(Suite s) {
  for (const auto& [k, name] : kSuiteNames)
    if (k == s) return name;
  return "?";
}

inline std::optional<Suite> parse_suite(const std::string& name) {
  for (const auto& [k, n] : kSuiteNames)
    if (name == n) return k;
  return std::nullopt;
}

/// Report-level tolerance used when the config does not set one.
inline double default_tolerance(Suite s) {
  switch (s) {
    case Suite::DebruijnMult: return 1e-4;
    case Suite::DebruijnAdditive: return 1e-4;
    case Suite::KlFlow: return 1e-5;
    case Suite::FokkerPlanck: return 1e-3;
    case Suite::Stein: return 1e-10;
    case Suite::EntropyPower: return 1e-4;  // relative
    case Suite::FbmStats: return 5.0;       // standard errors
  }
  return 0.0;
}

struct SuiteOptions {
  double tolerance = 0.0;
  std::optional<double> fd_step;     // default: 1e-3 max(t, 1)
  double abs_tolerance = 1e-6;       // entropy-power floor added to rel * |2 N g|
  QuadratureSpec quad = QuadratureSpec::tight();
};

struct ChannelConfig {
  std::string label;
  ChannelSpec spec;      // hurst is replaced per grid point
  double y0 = 0.0;       // reference start for kl-flow (multiplicative only)
};

struct OracleConfig {
  std::uint64_t samples = 1000000;
  std::uint64_t seed = 1;
};

struct FokkerPlanckGrid {
  double lo = -4.0;
  double hi = 4.0;
  std::size_t points = 81;
  FokkerPlanckOptions options;
};

struct FbmStatsConfig {
  std::size_t points = 32;
  std::size_t paths = 20000;
  std::uint64_t seed = 1;
  FbmMethod method = FbmMethod::Circulant;
};

struct SuiteConfig {
  std::vector<Suite> suites;
  std::vector<ChannelConfig> channels;
  std::vector<double> t_grid;
  std::vector<double> hurst_grid;
  double t_min = 0.05;
  std::map<Suite, SuiteOptions> options;
  std::optional<std::string> output;
  std::optional<OracleConfig> oracle;
  std::vector<TestFunction> stein_functions{TestFunction::cube()};
  FokkerPlanckGrid fokker_planck;
  FbmStatsConfig fbm_stats;

  const SuiteOptions& opts(Suite s) const { return options.at(s); }
};

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void check_keys(const Json& obj, const std::string& where, std::set<std::string> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

inline double get_number(const Json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  const Json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError(where + "." + key + ": not finite");
  return d;
}

inline double get_number(const Json& obj, const std::string& key, const std::string& where,
                         double fallback) {
  return obj.contains(key) ? get_number(obj, key, where) : fallback;
}

inline std::uint64_t get_count(const Json& obj, const std::string& key, const std::string& where,
                               std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d >= 0 && d == std::floor(d) && d < 1.8e19) return static_cast<std::uint64_t>(d);
  }
  throw ConfigError(where + "." + key + ": expected a non-negative integer");
}

inline std::string get_string(const Json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  if (!obj.at(key).is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return obj.at(key).get<std::string>();
}

inline std::vector<double> get_grid(const Json& cfg, const std::string& key) {
  if (!cfg.contains(key)) throw ConfigError("missing '" + key + "'");
  const Json& a = cfg.at(key);
  if (!a.is_array() || a.empty()) throw ConfigError(key + ": expected a non-empty array");
  std::vector<double> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw ConfigError(key + "[" + std::to_string(i) + "]: expected a number");
    out.push_back(a[i].get<double>());
  }
  return out;
}

constexpr Interval kSigmaDomain{-1e8, 1e8};

inline SigmaModel parse_sigma(const Json& j, const std::string& where) {
  if (j.is_string()) return parse_sigma(Json{{"kind", j}}, where);
  check_keys(j, where, {"kind", "c"});
  const std::string kind = get_string(j, "kind", where);
  try {
    if (kind == "constant") return SigmaModel::constant(get_number(j, "c", where), kSigmaDomain);
    if (kind == "sqrt1p") return SigmaModel::sqrt_one_plus_square(kSigmaDomain);
    if (kind == "identity") return SigmaModel::identity(kSigmaDomain);
  } catch (const NumericalError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  throw ConfigError(where + ".kind: unknown sigma '" + kind +
                    "' (expected constant, sqrt1p or identity)");
}

inline InitialLaw parse_initial(const Json& j, const std::string& where) {
  check_keys(j, where, {"kind", "mean", "variance", "a", "b", "lo", "hi", "values", "points"});
  const std::string kind = get_string(j, "kind", where);
  try {
    if (kind == "gaussian")
      return InitialLaw::gaussian(get_number(j, "mean", where, 0.0), get_number(j, "variance", where));
    if (kind == "uniform")
      return InitialLaw::uniform(get_number(j, "a", where), get_number(j, "b", where),
                                 get_count(j, "points", where, 2001));
    if (kind == "sampled-gaussian")
      return InitialLaw::sampled_gaussian(get_number(j, "mean", where, 0.0),
                                          get_number(j, "variance", where),
                                          get_count(j, "points", where, 4001));
    if (kind == "grid") {
      if (!j.contains("values") || !j.at("values").is_array())
        throw ConfigError(where + ".values: expected an array");
      std::vector<double> v;
      for (const auto& x : j.at("values")) {
        if (!x.is_number()) throw ConfigError(where + ".values: expected numbers");
        v.push_back(x.get<double>());
      }
      return InitialLaw::grid({get_number(j, "lo", where), get_number(j, "hi", where)}, std::move(v));
    }
  } catch (const NumericalError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  throw ConfigError(where + ".kind: unknown initial law '" + kind +
                    "' (expected gaussian, uniform, sampled-gaussian or grid)");
}

inline ChannelConfig parse_channel(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::string type = get_string(j, "type", where);
  ChannelConfig c{.label = "", .spec = ChannelSpec::additive(InitialLaw::gaussian(0, 1), HurstParameter(0.5))};
  if (type == "multiplicative") {
    check_keys(j, where, {"type", "label", "sigma", "x0", "y0"});
    if (!j.contains("sigma")) throw ConfigError(where + ": missing 'sigma'");
    const double x0 = get_number(j, "x0", where, 0.0);
    c.spec = ChannelSpec::multiplicative(parse_sigma(j.at("sigma"), where + ".sigma"), x0,
                                         HurstParameter(0.5));
    c.y0 = get_number(j, "y0", where, x0 + 1.0);
    std::ostringstream os;
    os << "mult:" << to_string(c.spec.mult().sigma.kind());
    if (c.spec.mult().sigma.kind() == SigmaKind::Constant) os << "(" << c.spec.mult().sigma.constant_value() << ")";
    os << ":x0=" << x0;
    c.label = os.str();
  } else if (type == "additive") {
    check_keys(j, where, {"type", "label", "initial"});
    if (!j.contains("initial")) throw ConfigError(where + ": missing 'initial'");
    c.spec = ChannelSpec::additive(parse_initial(j.at("initial"), where + ".initial"), HurstParameter(0.5));
    c.label = "add:" + get_string(j.at("initial"), "kind", where + ".initial");
  } else {
    throw ConfigError(where + ".type: unknown channel type '" + type +
                      "' (expected multiplicative or additive)");
  }
  if (j.contains("label")) c.label = get_string(j, "label", where);
  return c;
}

inline QuadratureSpec parse_quadrature(const Json& j, const std::string& where, QuadratureSpec q) {
  check_keys(j, where, {"rule", "abs_tol", "rel_tol", "max_subdivisions", "hermite_points"});
  if (j.contains("rule")) {
    const std::string r = get_string(j, "rule", where);
    if (r == "gk15") q.rule = QuadratureRule::GaussKronrod15;
    else if (r == "gk31") q.rule = QuadratureRule::GaussKronrod31;
    else if (r == "gk61") q.rule = QuadratureRule::GaussKronrod61;
    else throw ConfigError(where + ".rule: unknown rule '" + r + "' (expected gk15, gk31 or gk61)");
  }
  q.abs_tol = get_number(j, "abs_tol", where, q.abs_tol);
  q.rel_tol = get_number(j, "rel_tol", where, q.rel_tol);
  q.max_subdivisions = static_cast<int>(get_count(j, "max_subdivisions", where, q.max_subdivisions));
  q.hermite_points = static_cast<int>(get_count(j, "hermite_points", where, q.hermite_points));
  try {
    q.validate();
  } catch (const NumericalError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return q;
}

}  // namespace detail

/// Builds a SuiteConfig from a parsed JSON document. Every problem is
/// reported as ConfigError naming the offending entry.
inline SuiteConfig parse_config(const Json& cfg) {
  using namespace detail;
  check_keys(cfg, "config",
             {"suites", "channel", "t_grid", "hurst_grid", "t_min", "tolerances", "overrides",
              "output", "oracle", "stein", "fokker_planck", "fbm_stats"});
  SuiteConfig c;

  if (!cfg.contains("suites") || !cfg.at("suites").is_array() || cfg.at("suites").empty())
    throw ConfigError("suites: expected a non-empty array");
  for (const auto& s : cfg.at("suites")) {
    if (!s.is_string()) throw ConfigError("suites: entries must be strings");
    const auto suite = parse_suite(s.get<std::string>());
    if (!suite) throw ConfigError("suites: unknown suite \"" + s.get<std::string>() + "\"");
    if (std::find(c.suites.begin(), c.suites.end(), *suite) != c.suites.end())
      throw ConfigError("suites: \"" + s.get<std::string>() + "\" listed twice");
    c.suites.push_back(*suite);
  }

  if (cfg.contains("channel")) {
    const Json& ch = cfg.at("channel");
    if (ch.is_array()) {
      for (std::size_t i = 0; i < ch.size(); ++i)
        c.channels.push_back(parse_channel(ch[i], "channel[" + std::to_string(i) + "]"));
    } else {
      c.channels.push_back(parse_channel(ch, "channel"));
    }
  }

  c.t_grid = get_grid(cfg, "t_grid");
  for (double t : c.t_grid)
    if (!(t > 0.0)) throw ConfigError("t_grid: times must be strictly positive");
  c.hurst_grid = get_grid(cfg, "hurst_grid");
  for (double h : c.hurst_grid)
    if (!(h > 0.0 && h < 1.0)) throw ConfigError("hurst_grid: values must lie in (0, 1)");
  c.t_min = get_number(cfg, "t_min", "config", c.t_min);
  if (!(c.t_min > 0.0)) throw ConfigError("t_min: must be positive");

  for (Suite s : c.suites) {
    SuiteOptions o;
    o.tolerance = default_tolerance(s);
    c.options[s] = o;
  }
  if (cfg.contains("tolerances")) {
    const Json& tol = cfg.at("tolerances");
    if (!tol.is_object()) throw ConfigError("tolerances: expected an object");
    for (const auto& [name, v] : tol.items()) {
      const auto s = parse_suite(name);
      if (!s) throw ConfigError("tolerances: unknown suite \"" + name + "\"");
      if (!c.options.contains(*s)) throw ConfigError("tolerances: suite \"" + name + "\" is not enabled");
      if (!v.is_number() || !(v.get<double>() >= 0.0))
        throw ConfigError("tolerances." + name + ": expected a non-negative number");
      c.options[*s].tolerance = v.get<double>();
    }
  }
  if (cfg.contains("overrides")) {
    const Json& ov = cfg.at("overrides");
    if (!ov.is_object()) throw ConfigError("overrides: expected an object");
    for (const auto& [name, v] : ov.items()) {
      const auto s = parse_suite(name);
      const std::string where = "overrides." + name;
      if (!s) throw ConfigError("overrides: unknown suite \"" + name + "\"");
      if (!c.options.contains(*s)) throw ConfigError(where + ": suite is not enabled");
      check_keys(v, where, {"fd_step", "abs_tolerance", "quadrature"});
      SuiteOptions& o = c.options[*s];
      if (v.contains("fd_step")) {
        o.fd_step = get_number(v, "fd_step", where);
        if (!(*o.fd_step > 0.0)) throw ConfigError(where + ".fd_step: must be positive");
      }
      o.abs_tolerance = get_number(v, "abs_tolerance", where, o.abs_tolerance);
      if (v.contains("quadrature")) o.quad = parse_quadrature(v.at("quadrature"), where + ".quadrature", o.quad);
    }
  }

  if (cfg.contains("output")) {
    if (!cfg.at("output").is_string()) throw ConfigError("output: expected a path string");
    c.output = cfg.at("output").get<std::string>();
  }
  if (cfg.contains("oracle") && !cfg.at("oracle").is_null()) {
    const Json& o = cfg.at("oracle");
    check_keys(o, "oracle", {"kind", "samples", "seed"});
    if (o.contains("kind") && get_string(o, "kind", "oracle") != "mc")
      throw ConfigError("oracle.kind: only \"mc\" is supported");
    OracleConfig oc;
    oc.samples = get_count(o, "samples", "oracle", oc.samples);
    oc.seed = get_count(o, "seed", "oracle", oc.seed);
    if (oc.samples < 100) throw ConfigError("oracle.samples: need at least 100");
    c.oracle = oc;
  }
  if (cfg.contains("stein")) {
    const Json& s = cfg.at("stein");
    check_keys(s, "stein", {"test_functions"});
    if (s.contains("test_functions")) {
      const Json& fs = s.at("test_functions");
      if (!fs.is_array() || fs.empty()) throw ConfigError("stein.test_functions: expected a non-empty array");
      c.stein_functions.clear();
      for (const auto& f : fs) {
        const auto tf = f.is_string() ? TestFunction::by_name(f.get<std::string>()) : std::nullopt;
        if (!tf) throw ConfigError("stein.test_functions: unknown test function " + f.dump() +
                                   " (expected y, y2, y3 or sin)");
        c.stein_functions.push_back(*tf);
      }
    }
  }
  if (cfg.contains("fokker_planck")) {
    const Json& f = cfg.at("fokker_planck");
    check_keys(f, "fokker_planck", {"x_lo", "x_hi", "points", "spatial_step", "spatial_error_bound"});
    auto& g = c.fokker_planck;
    g.lo = get_number(f, "x_lo", "fokker_planck", g.lo);
    g.hi = get_number(f, "x_hi", "fokker_planck", g.hi);
    g.points = get_count(f, "points", "fokker_planck", g.points);
    g.options.spatial_step = get_number(f, "spatial_step", "fokker_planck", g.options.spatial_step);
    g.options.spatial_error_bound =
        get_number(f, "spatial_error_bound", "fokker_planck", g.options.spatial_error_bound);
    if (!(g.hi > g.lo) || g.points < 2 || !(g.options.spatial_step > 0.0))
      throw ConfigError("fokker_planck: need x_lo < x_hi, points >= 2, spatial_step > 0");
  }
  if (cfg.contains("fbm_stats")) {
    const Json& f = cfg.at("fbm_stats");
    check_keys(f, "fbm_stats", {"points", "paths", "seed", "method"});
    auto& s = c.fbm_stats;
    s.points = get_count(f, "points", "fbm_stats", s.points);
    s.paths = get_count(f, "paths", "fbm_stats", s.paths);
    s.seed = get_count(f, "seed", "fbm_stats", s.seed);
    if (f.contains("method")) {
      const std::string m = get_string(f, "method", "fbm_stats");
      if (m == "cholesky") s.method = FbmMethod::Cholesky;
      else if (m == "circulant") s.method = FbmMethod::Circulant;
      else throw ConfigError("fbm_stats.method: unknown method '" + m + "'");
    }
    if (s.points < 1 || s.paths < 2) throw ConfigError("fbm_stats: need points >= 1 and paths >= 2");
  }

  // Each channel-bound suite needs a channel of the right kind.
  const auto has = [&](bool mult) {
    return std::any_of(c.channels.begin(), c.channels.end(),
                       [&](const ChannelConfig& ch) { return ch.spec.is_multiplicative() == mult; });
  };
  for (Suite s : c.suites) {
    const bool needs_mult = s == Suite::DebruijnMult || s == Suite::KlFlow || s == Suite::FokkerPlanck;
    const bool needs_add = s == Suite::DebruijnAdditive || s == Suite::EntropyPower;
    if ((needs_mult && !has(true)) || (needs_add && !has(false)))
      throw ConfigError(std::string("suites: \"") + to_string(s) + "\" needs a" +
                        (needs_mult ? " multiplicative" : "n additive") + " channel");
  }
  return c;
}

inline SuiteConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct McColumns {
  double value = 0.0;
  double std_error = 0.0;
  double z = 0.0;
};

struct ReportRow {
  IdentityReport report;
  std::optional<McColumns> mc;
};

struct EntropyPowerRow {
  std::string channel;
  double t;
  double hurst;
  double entropy_power;
  double g;
  Curvature classification;
};

/// Raised for an internal numerical failure in one (suite, t, H) task.
class RunError : public std::runtime_error {
 public:
  RunError(Suite suite, double t, double hurst, const std::string& what)
      : std::runtime_error(std::string(to_string(suite)) + " at t=" + fbm_infoflow::detail::fmt(t) +
                           " H=" + fbm_infoflow::detail::fmt(hurst) + ": " + what) {}
};

struct RunResult {
  std::vector<ReportRow> rows;
  std::vector<EntropyPowerRow> entropy_power;
  std::size_t excluded = 0;  // (suite, t, H) tuples skipped for t < t_min

  bool all_passed() const {
    return std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.report.passed; });
  }
};

namespace detail {

struct Task {
  Suite suite;
  std::size_t channel = 0;   // index into config.channels (unused for stein without channel / fbm-stats)
  double t = 0.0;
  double hurst = 0.0;
  std::size_t variant = 0;   // stein test function
};

// z uses the std error floored at 1e-10 (1 + |reference|): an a.s. constant
// integrand has zero sample variance, and then only rounding separates the
// two methods.
inline McColumns mc_columns(const McEstimate& e, double reference) {
  McColumns m{e.mean, e.std_error, 0.0};
  const double se = std::max(e.std_error, 1e-10 * (1.0 + std::abs(reference)));
  m.z = (e.mean - reference) / se;
  return m;
}

inline std::string with_channel(const ChannelConfig* ch, const std::string& notes) {
  return ch ? "channel=" + ch->label + "; " + notes : notes;
}

inline ReportRow run_task(const SuiteConfig& cfg, const Task& task, std::uint64_t task_index,
                          std::vector<EntropyPowerRow>& ep_out) {
  const SuiteOptions& o = cfg.opts(task.suite);
  const double t = task.t;
  const HurstParameter H(task.hurst);
  const double fd = o.fd_step.value_or(default_fd_step(t));
  const ChannelConfig* ch = task.channel < cfg.channels.size() ? &cfg.channels[task.channel] : nullptr;
  const std::uint64_t mc_seed = cfg.oracle ? derive_seed(cfg.oracle->seed, task_index) : 0;
  ReportRow row;

  switch (task.suite) {
    case Suite::DebruijnMult: {
      const Channel channel = stencil_channel(ch->spec.with_hurst(H), t, fd);
      row.report = debruijn_check_mult(channel, t, fd, o.tolerance, o.quad);
      if (cfg.oracle) {
        const SigmaModel& sigma = ch->spec.mult().sigma;
        const DensityField field = channel.density_at(t);
        const double pre = H.value() * std::pow(t, 2.0 * H.value() - 1.0);
        const auto est = mc_expectation(
            channel, t,
            [&](double x) {
              const double s = sigma.eval(x, 0), s1 = sigma.eval(x, 1), s2 = sigma.eval(x, 2);
              const double sc = score_at(field, x);
              return pre * (s * s * sc * sc - (s2 * s + s1 * s1));
            },
            cfg.oracle->samples, mc_seed, 1);
        row.mc = mc_columns(est, row.report.rhs);
      }
      break;
    }
    case Suite::DebruijnAdditive: {
      const Channel channel = stencil_channel(ch->spec.with_hurst(H), t, fd);
      row.report = debruijn_check_additive(channel, t, fd, o.tolerance, o.quad);
      if (cfg.oracle) {
        const DensityField field = channel.density_at(t);
        const double pre = H.value() * std::pow(t, 2.0 * H.value() - 1.0);
        const auto est = mc_expectation(
            channel, t,
            [&](double x) {
              const double sc = score_at(field, x);
              return pre * sc * sc;
            },
            cfg.oracle->samples, mc_seed, 1);
        row.mc = mc_columns(est, row.report.rhs);
      }
      break;
    }
    case Suite::KlFlow: {
      const ChannelSpec xs = ch->spec.with_hurst(H);
      const ChannelSpec ys = ChannelSpec::multiplicative(xs.mult().sigma, ch->y0, H);
      const Channel xc = stencil_channel(xs, t, fd);
      const Channel yc = stencil_channel(ys, t, fd);
      row.report = kl_flow_check(xc, yc, t, fd, o.tolerance, o.quad);
      if (cfg.oracle) {
        const DensityField p = xc.density_at(t);
        const DensityField q = yc.density_at(t);
        const SigmaModel& sigma = xs.mult().sigma;
        const double pre = H.value() * std::pow(t, 2.0 * H.value() - 1.0);
        const auto est = mc_expectation(
            xc, t,
            [&](double x) {
              const FieldPoint qq = q.at(x);
              if (!(qq.density > kDensityFloor)) return 0.0;  // outside the reference window
              const double d = score_at(p, x) - qq.score;
              const double s = sigma.eval(x, 0);
              return -pre * s * s * d * d;
            },
            cfg.oracle->samples, mc_seed, 1);
        row.mc = mc_columns(est, row.report.rhs);
      }
      break;
    }
    case Suite::FokkerPlanck: {
      const auto& g = cfg.fokker_planck;
      const auto residual = fokker_planck_residual(ch->spec.with_hurst(H), t,
                                                   linspace(g.lo, g.hi, g.points), fd, g.options);
      double worst = 0.0, at = g.lo;
      const auto xs = linspace(g.lo, g.hi, g.points);
      for (std::size_t i = 0; i < residual.size(); ++i) {
        if (std::abs(residual[i]) > worst) {
          worst = std::abs(residual[i]);
          at = xs[i];
        }
      }
      row.report = make_report("fokker-planck", t, H.value(), worst, 0.0, o.tolerance,
                               "lhs=max|residual| over " + std::to_string(g.points) + " points on [" +
                                   fbm_infoflow::detail::fmt(g.lo) + ", " + fbm_infoflow::detail::fmt(g.hi) + "], worst at x=" + fbm_infoflow::detail::fmt(at) +
                                   "; fd_step=" + fbm_infoflow::detail::fmt(fd));
      break;
    }
    case Suite::Stein: {
      // Law of X_t for an additive Gaussian channel, otherwise of B_t itself.
      double mu = 0.0, var = std::pow(t, 2.0 * H.value());
      if (ch) {
        const auto& g = ch->spec.add().initial.as_gaussian();
        mu = g.mean;
        var += g.variance;
      }
      const TestFunction& r = cfg.stein_functions[task.variant];
      row.report = stein_check(mu, var, r, o.quad, o.tolerance);
      row.report.t = t;
      row.report.hurst = H.value();
      if (cfg.oracle) {
        // N(mu, var) as mu + N(0, var/2) + B_{var/2} with H = 1/2
        const double s = 0.5 * var;
        const Channel normal(ChannelSpec::additive(InitialLaw::gaussian(mu, s), HurstParameter(0.5)), s, s);
        const auto est = mc_expectation(normal, s, [&](double y) { return r.r(y) * (y - mu); },
                                        cfg.oracle->samples, mc_seed, 1);
        row.mc = mc_columns(est, row.report.lhs);
      }
      break;
    }
    case Suite::EntropyPower: {
      const auto prof = entropy_power_profile(ch->spec.with_hurst(H), {t}, fd, o.quad);
      row.report = entropy_power_report(prof, 0, o.tolerance, o.abs_tolerance);
      ep_out.push_back({ch->label, t, H.value(), prof.entropy_power[0], prof.g_values[0],
                        prof.classification[0]});
      break;
    }
    case Suite::FbmStats: {
      const auto& f = cfg.fbm_stats;
      const FbmSampler sampler(uniform_grid(f.points, t / static_cast<double>(f.points)), H, f.method);
      const auto stats = empirical_covariance(sampler, f.paths, f.seed, 1);
      row.report = make_report("fbm-stats", t, H.value(), stats.max_z(), 0.0, o.tolerance,
                               "lhs=max |empirical-exact|/std_error; paths=" + std::to_string(f.paths) +
                                   " points=" + std::to_string(f.points) + " horizon=t method=" +
                                   to_string(f.method) +
                                   (sampler.fell_back_to_cholesky() ? " (fell back to cholesky)" : ""));
      break;
    }
  }
  row.report.method_notes = with_channel(ch, row.report.method_notes);
  return row;
}

}  // namespace detail

/// Executes every (suite, channel, t, H) combination on a work pool. Rows
/// come back in config order regardless of scheduling. Times below t_min
/// are excluded and counted.
inline RunResult run_suite(const SuiteConfig& cfg, unsigned threads = worker_count()) {
  std::vector<detail::Task> tasks;
  RunResult result;
  for (Suite s : cfg.suites) {
    std::vector<std::size_t> chans;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      const auto& spec = cfg.channels[i].spec;
      const bool mult = spec.is_multiplicative();
      switch (s) {
        case Suite::DebruijnMult:
        case Suite::KlFlow:
        case Suite::FokkerPlanck:
          if (mult) chans.push_back(i);
          break;
        case Suite::DebruijnAdditive:
        case Suite::EntropyPower:
          if (!mult) chans.push_back(i);
          break;
        case Suite::Stein:
          if (!mult && spec.add().initial.is_gaussian()) chans.push_back(i);
          break;
        case Suite::FbmStats:
          break;
      }
    }
    if (chans.empty()) chans.push_back(cfg.channels.size());  // channel-free run
    const std::size_t variants = s == Suite::Stein ? cfg.stein_functions.size() : 1;
    for (std::size_t c : chans)
      for (double t : cfg.t_grid)
        for (double h : cfg.hurst_grid) {
          if (t < cfg.t_min) {
            result.excluded += variants;
            continue;
          }
          for (std::size_t v = 0; v < variants; ++v) tasks.push_back({s, c, t, h, v});
        }
  }

  std::vector<ReportRow> rows(tasks.size());
  std::vector<std::vector<EntropyPowerRow>> ep(tasks.size());
  std::vector<std::string> errors(tasks.size());
  parallel_for(
      tasks.size(),
      [&](std::size_t i) {
        try {
          rows[i] = detail::run_task(cfg, tasks[i], i, ep[i]);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      },
      threads);
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (!errors[i].empty()) throw RunError(tasks[i].suite, tasks[i].t, tasks[i].hurst, errors[i]);
  result.rows = std::move(rows);
  for (auto& e : ep)
    for (auto& r : e) result.entropy_power.push_back(std::move(r));
  return result;
}

// ---------------------------------------------------------------------------
// Report writing
// ---------------------------------------------------------------------------

inline std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

/// CSV report. Only the first line (a comment) carries the timestamp.
inline void write_csv(std::ostream& out, const RunResult& r, bool with_mc,
                      const std::string& stamp) {
  using detail::fmt_num;
  out << "# fbm-infoflow report " << stamp << "\n";
  out << "identity,t,hurst,lhs,rhs,abs_discrepancy,tolerance,passed,method_notes";
  if (with_mc) out << ",mc_value,mc_std_error,mc_z";
  out << "\n";
  for (const auto& row : r.rows) {
    const auto& x = row.report;
    out << x.identity_name << ',' << fmt_num(x.t) << ',' << fmt_num(x.hurst) << ',' << fmt_num(x.lhs)
        << ',' << fmt_num(x.rhs) << ',' << fmt_num(x.abs_discrepancy) << ',' << fmt_num(x.tolerance)
        << ',' << (x.passed ? "true" : "false") << ',' << detail::csv_field(x.method_notes);
    if (with_mc) {
      if (row.mc) out << ',' << fmt_num(row.mc->value) << ',' << fmt_num(row.mc->std_error) << ',' << fmt_num(row.mc->z);
      else out << ",,,";
    }
    out << "\n";
  }
}

inline void write_entropy_power_csv(std::ostream& out, const RunResult& r, const std::string& stamp) {
  using detail::fmt_num;
  out << "# fbm-infoflow entropy-power profile " << stamp << "\n";
  out << "channel,t,hurst,N,g,classification\n";
  for (const auto& e : r.entropy_power)
    out << detail::csv_field(e.channel) << ',' << fmt_num(e.t) << ',' << fmt_num(e.hurst) << ','
        << fmt_num(e.entropy_power) << ',' << fmt_num(e.g) << ',' << to_string(e.classification) << "\n";
}

inline Json to_json(const RunResult& r, const std::string& stamp) {
  Json rows = Json::array();
  std::size_t passed = 0;
  for (const auto& row : r.rows) {
    const auto& x = row.report;
    Json j{{"identity", x.identity_name}, {"t", x.t},         {"hurst", x.hurst},
           {"lhs", x.lhs},                {"rhs", x.rhs},     {"abs_discrepancy", x.abs_discrepancy},
           {"tolerance", x.tolerance},    {"passed", x.passed}, {"method_notes", x.method_notes}};
    if (row.mc) j["mc"] = {{"value", row.mc->value}, {"std_error", row.mc->std_error}, {"z", row.mc->z}};
    rows.push_back(std::move(j));
    passed += x.passed;
  }
  Json ep = Json::array();
  for (const auto& e : r.entropy_power)
    ep.push_back({{"channel", e.channel}, {"t", e.t}, {"hurst", e.hurst}, {"N", e.entropy_power},
                  {"g", e.g}, {"classification", to_string(e.classification)}});
  return Json{{"generated", stamp},
              {"summary", {{"rows", r.rows.size()}, {"passed", passed},
                           {"failed", r.rows.size() - passed}, {"excluded", r.excluded}}},
              {"rows", std::move(rows)},
              {"entropy_power", std::move(ep)}};
}

/// Runs the config and writes reports; returns the process exit code.
inline int run_and_report(const SuiteConfig& cfg, std::ostream& out, std::ostream& err) {
  RunResult result;
  try {
    result = run_suite(cfg);
  } catch (const RunError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  }
  const std::string stamp = timestamp_utc();
  const bool with_mc = cfg.oracle.has_value();
  if (cfg.output) {
    const std::filesystem::path csv(*cfg.output);
    if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
    std::ofstream f(csv);
    if (!f) {
      err << "cannot write " << csv << "\n";
      return kExitConfig;
    }
    write_csv(f, result, with_mc, stamp);
    std::filesystem::path json = csv;
    json.replace_extension(".json");
    std::ofstream(json) << to_json(result, stamp).dump(2) << "\n";
    if (!result.entropy_power.empty()) {
      std::filesystem::path ep = csv;
      ep.replace_filename(csv.stem().string() + "_entropy_power.csv");
      std::ofstream e(ep);
      write_entropy_power_csv(e, result, stamp);
    }
  } else {
    write_csv(out, result, with_mc, stamp);
  }
  std::size_t failed = 0;
  for (const auto& r : result.rows) failed += !r.report.passed;
  err << result.rows.size() << " checks, " << failed << " failed";
  if (result.excluded) err << ", " << result.excluded << " excluded (t < t_min=" << cfg.t_min << ")";
  err << "\n";
  return failed ? kExitFailed : kExitOk;
}

}  // namespace fbm_infoflow::cli
