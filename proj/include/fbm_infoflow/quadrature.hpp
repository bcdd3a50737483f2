#pragma once

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <vector>

#include "fbm_infoflow/errors.hpp"

namespace fbm_infoflow {

enum class QuadratureRule { GaussKronrod15, GaussKronrod31, GaussKronrod61, GaussHermite };

struct QuadratureSpec {
  QuadratureRule rule = QuadratureRule::GaussKronrod31;
  double abs_tol = 1e-10;
  double rel_tol = 1e-8;
  int max_subdivisions = 4096;
  /// Node count for Gauss-Hermite expectations.
  int hermite_points = 64;

  void validate() const {
    if (!(abs_tol > 0.0) || !(rel_tol > 0.0))
      throw DomainError("quadrature tolerances must be positive");
    if (max_subdivisions < 1) throw DomainError("max_subdivisions must be >= 1");
    if (hermite_points < 2) throw DomainError("hermite_points must be >= 2");
  }

  /// Tolerances used by the identity checks, where quadrature output is
  /// differentiated numerically in t.
  static QuadratureSpec tight() {
    QuadratureSpec q;
    q.abs_tol = 1e-13;
    q.rel_tol = 1e-12;
    q.max_subdivisions = 1 << 14;
    return q;
  }
};

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  double l1 = 0.0;
};

/// Adaptive Gauss-Kronrod integral of f over [a, b]. Throws QuadratureError
/// when the estimate misses max(abs_tol, rel_tol * L1).
template <class F>
QuadratureResult integrate(F&& f, double a, double b, const QuadratureSpec& spec) {
  using boost::math::quadrature::gauss_kronrod;
  spec.validate();
  QuadratureResult r;
  if (a == b) return r;
  const auto depth = static_cast<unsigned>(
      std::ceil(std::log2(static_cast<double>(std::max(2, spec.max_subdivisions)))));
  switch (spec.rule) {
    case QuadratureRule::GaussKronrod15:
      r.value = gauss_kronrod<double, 15>::integrate(f, a, b, depth, spec.rel_tol, &r.error, &r.l1);
      break;
    case QuadratureRule::GaussKronrod61:
      r.value = gauss_kronrod<double, 61>::integrate(f, a, b, depth, spec.rel_tol, &r.error, &r.l1);
      break;
    default:
      r.value = gauss_kronrod<double, 31>::integrate(f, a, b, depth, spec.rel_tol, &r.error, &r.l1);
      break;
  }
  if (!std::isfinite(r.value)) throw QuadratureError("integrand produced a non-finite value", r.error);
  if (!(r.error <= std::max(spec.abs_tol, spec.rel_tol * r.l1))) {
    std::ostringstream os;
    os << "adaptive quadrature on [" << a << ", " << b << "] did not converge: error estimate "
       << r.error << " vs abs_tol " << spec.abs_tol << " / rel_tol " << spec.rel_tol;
    throw QuadratureError(os.str(), r.error);
  }
  return r;
}

/// Nodes and weights for E[f(Z)], Z ~ N(0,1) (probabilists' Hermite).
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Golub-Welsch: eigen-decomposition of the Jacobi matrix of the He_n
/// recurrence. Weights sum to one. Cached per n.
inline const GaussHermiteRule& gauss_hermite(int n) {
  static std::mutex mutex;
  static std::map<int, GaussHermiteRule> cache;
  std::lock_guard lock(mutex);
  if (auto it = cache.find(n); it != cache.end()) return it->second;

  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd off(n - 1);
  for (int k = 1; k < n; ++k) off[k - 1] = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, off, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw NumericalError("Gauss-Hermite eigensolve failed");
  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = solver.eigenvalues()[i];
    const double v0 = solver.eigenvectors()(0, i);
    rule.weights[i] = v0 * v0;
  }
  // Symmetrize: the exact rule is symmetric about 0.
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    rule.weights[i] = rule.weights[j] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return cache.emplace(n, std::move(rule)).first->second;
}

/// E[f(Y)] for Y ~ N(mean, variance), checked by comparing n and 2n nodes.
template <class F>
QuadratureResult gaussian_expectation(F&& f, double mean, double variance,
                                      const QuadratureSpec& spec) {
  spec.validate();
  if (!(variance > 0.0)) throw DomainError("Gaussian variance must be positive");
  const double sd = std::sqrt(variance);
  const auto apply = [&](int n) {
    const auto& rule = gauss_hermite(n);
    double sum = 0.0, l1 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = f(mean + sd * rule.nodes[i]);
      sum += rule.weights[i] * v;
      l1 += rule.weights[i] * std::abs(v);
    }
    return std::pair{sum, l1};
  };
  const auto [coarse, l1c] = apply(spec.hermite_points);
  const auto [fine, l1f] = apply(2 * spec.hermite_points);
  QuadratureResult r{fine, std::abs(fine - coarse), l1f};
  if (!std::isfinite(r.value)) throw QuadratureError("non-finite Gauss-Hermite value", r.error);
  if (!(r.error <= std::max(spec.abs_tol, spec.rel_tol * r.l1))) {
    std::ostringstream os;
    os << "Gauss-Hermite expectation not converged: |Q_2n - Q_n| = " << r.error;
    throw QuadratureError(os.str(), r.error);
  }
  return r;
}

}  // namespace fbm_infoflow
