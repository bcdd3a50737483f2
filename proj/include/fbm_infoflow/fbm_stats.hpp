#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "fbm_infoflow/fbm.hpp"
#include "fbm_infoflow/parallel.hpp"
#include "fbm_infoflow/rng.hpp"

namespace fbm_infoflow {

/// Empirical second moments of many sampled paths against the exact fBm
/// covariance on the sampler's positive grid points.
struct CovarianceStats {
  std::size_t paths = 0;
  Eigen::MatrixXd empirical;   // (1/N) sum B_i B_j  (mean is known to be 0)
  Eigen::MatrixXd exact;
  Eigen::MatrixXd std_error;   // sqrt((C_ii C_jj + C_ij^2) / N) under Gaussianity
  /// max over entries of |empirical - exact| / std_error
  double max_z() const {
    return ((empirical - exact).cwiseAbs().array() / std_error.array()).maxCoeff();
  }
};

/// Samples `paths` paths (path p uses stream p of `seed`) and accumulates the
/// empirical covariance. Accumulation is done in fixed path blocks merged in
/// order, so results do not depend on the worker count.
inline CovarianceStats empirical_covariance(const FbmSampler& sampler, std::size_t paths,
                                            std::uint64_t seed,
                                            unsigned threads = worker_count()) {
  std::vector<double> times;
  for (double t : sampler.grid())
    if (t > 0.0) times.push_back(t);
  const auto n = static_cast<Eigen::Index>(times.size());
  constexpr std::size_t kBlock = 4096;
  const std::size_t blocks = (paths + kBlock - 1) / kBlock;
  std::vector<Eigen::MatrixXd> partial(blocks);
  parallel_for(
      blocks,
      [&](std::size_t b) {
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
        Eigen::VectorXd v(n);
        const std::size_t end = std::min(paths, (b + 1) * kBlock);
        for (std::size_t p = b * kBlock; p < end; ++p) {
          Rng rng = make_rng(seed, p);
          sampler.sample_into(rng, std::span<double>(v.data(), static_cast<std::size_t>(n)));
          acc.selfadjointView<Eigen::Lower>().rankUpdate(v);
        }
        partial[b] = acc;
      },
      threads);
  CovarianceStats s;
  s.paths = paths;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
  for (const auto& m : partial) sum += m;
  s.empirical = sum.selfadjointView<Eigen::Lower>();
  s.empirical /= static_cast<double>(paths);
  s.exact.resize(n, n);
  s.std_error.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      s.exact(i, j) = covariance(times[i], times[j], sampler.hurst());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      s.std_error(i, j) = std::sqrt((s.exact(i, i) * s.exact(j, j) + s.exact(i, j) * s.exact(i, j)) /
                                    static_cast<double>(paths));
  return s;
}

}  // namespace fbm_infoflow
